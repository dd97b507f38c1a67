//! Kernel bandwidth selection and distribution-shape diagnostics: NLL grid
//! search for the smoothing bandwidth, the weighted Scott's-rule baseline,
//! a chi-square test of Gaussian shape for discrete priors, and the null
//! sampling distribution of the sample correlation coefficient.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};
use thiserror::Error;

use crate::decode::DiscretePrior;
use crate::math::normal_pdf;
use crate::prior::PriorDensity;

/// Shipped default kernel bandwidth for smoothed logit priors. Retune when
/// the model, the prompt, or the target metric changes.
pub const DEFAULT_SIGMA: f64 = 0.4;

/// Nominal pseudo-sample size used to convert probability masses into counts
/// for the chi-square test.
pub const PSEUDO_SAMPLE_SIZE: f64 = 1000.0;

/// Bandwidth grid 0.05, 0.10, ..., 1.00.
pub fn default_sigma_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("sigma grid is empty or contains non-positive values")]
    InvalidGrid,
    #[error("observed correlation {0} outside [-1, 1]")]
    InvalidObservation(f64),
    #[error("support size {0} too small for the chi-square test (need >= 4)")]
    UnderDetermined(usize),
    #[error("fitted variance {0} too small to define expected counts")]
    DegenerateVariance(f64),
    #[error(transparent)]
    Prior(#[from] crate::prior::PriorError),
}

/// Outcome of the bandwidth grid search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub sigma_star: f64,
    /// (sigma, mean negative log-likelihood) pairs, sorted by sigma.
    pub grid: Vec<(f64, f64)>,
    pub n_validation: usize,
}

/// Picks the bandwidth minimizing the average negative log-likelihood of the
/// observed correlations under the smoothed priors. Ties break toward the
/// larger (less confident) sigma.
pub fn tune_sigma(
    validation: &[(DiscretePrior, f64)],
    sigma_grid: &[f64],
) -> Result<CalibrationResult, CalibrationError> {
    if validation.is_empty() {
        return Err(CalibrationError::EmptyValidation);
    }
    if sigma_grid.is_empty() || sigma_grid.iter().any(|&s| !(s > 0.0)) {
        return Err(CalibrationError::InvalidGrid);
    }
    for &(_, r_obs) in validation {
        if !(-1.0..=1.0).contains(&r_obs) {
            return Err(CalibrationError::InvalidObservation(r_obs));
        }
    }
    let mut sigmas: Vec<f64> = sigma_grid.to_vec();
    sigmas.sort_by(f64::total_cmp);

    let mut grid = Vec::with_capacity(sigmas.len());
    let mut best: Option<(f64, f64)> = None;
    for &sigma in &sigmas {
        let mut total = 0.0;
        for (discrete, r_obs) in validation {
            let prior = PriorDensity::lcp(discrete.clone(), sigma)?;
            total -= prior.log_density(*r_obs)?;
        }
        let mean_nll = total / validation.len() as f64;
        grid.push((sigma, mean_nll));
        // <= so a later (larger) sigma takes exact ties
        if best.map_or(true, |(_, b)| mean_nll <= b) {
            best = Some((sigma, mean_nll));
        }
    }
    Ok(CalibrationResult {
        sigma_star: best.expect("non-empty grid").0,
        grid,
        n_validation: validation.len(),
    })
}

/// Weighted Scott's rule: `1.06 * sigma_hat * n_eff^(-1/5)` with the weighted
/// standard deviation and effective sample size `1 / Σ p_j^2`. Floored at
/// 1e-3, where a single atom would otherwise give zero dispersion.
pub fn scotts_sigma(discrete: &DiscretePrior) -> f64 {
    let sigma_hat = discrete.variance().sqrt();
    let n_eff = 1.0
        / discrete
            .support
            .iter()
            .map(|&(_, p)| p * p)
            .sum::<f64>();
    (1.06 * sigma_hat * n_eff.powf(-0.2)).max(1e-3)
}

/// Effective sample size of the weights: `1 / Σ p_j^2`.
pub fn effective_sample_size(discrete: &DiscretePrior) -> f64 {
    1.0 / discrete
        .support
        .iter()
        .map(|&(_, p)| p * p)
        .sum::<f64>()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalityTestResult {
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    pub reject_at_5pct: bool,
    pub fitted_mu: f64,
    pub fitted_sigma2: f64,
}

/// Chi-square goodness-of-fit of a discrete prior against a Gaussian with
/// moments fitted from the same distribution. Masses become pseudo-counts at
/// nominal sample size `m`; two fitted parameters cost two degrees of
/// freedom, so dof = N - 3.
pub fn chi_square_normality(
    discrete: &DiscretePrior,
    m: f64,
) -> Result<NormalityTestResult, CalibrationError> {
    let n = discrete.len();
    if n < 4 {
        return Err(CalibrationError::UnderDetermined(n));
    }
    let mu = discrete.mean();
    let sigma2 = discrete.variance();
    if sigma2 < 1e-12 {
        return Err(CalibrationError::DegenerateVariance(sigma2));
    }
    let sigma = sigma2.sqrt();
    let q: Vec<f64> = discrete
        .support
        .iter()
        .map(|&(r, _)| normal_pdf((r - mu) / sigma) / sigma)
        .collect();
    let q_total: f64 = q.iter().sum();
    let chi2: f64 = discrete
        .support
        .iter()
        .zip(&q)
        .map(|(&(_, p), &qj)| {
            let observed = m * p;
            let expected = m * qj / q_total;
            (observed - expected) * (observed - expected) / expected
        })
        .sum();
    let dof = n - 3;
    let p_value = gamma_ur(dof as f64 / 2.0, chi2 / 2.0).clamp(0.0, 1.0);
    Ok(NormalityTestResult {
        chi2,
        dof,
        p_value,
        reject_at_5pct: p_value < 0.05,
        fitted_mu: mu,
        fitted_sigma2: sigma2,
    })
}

/// Density of the sample correlation coefficient under a true correlation of
/// zero and bivariate normal sampling with `n` observations:
/// `Γ((n-1)/2) / (√π Γ((n-2)/2)) * (1 - r^2)^((n-4)/2)`.
pub fn pearson_null_density(r: f64, n: usize) -> f64 {
    assert!(r.abs() < 1.0, "null density defined on |r| < 1, got {r}");
    assert!(n >= 5, "need sample size >= 5, got {n}");
    let nf = n as f64;
    let log_coeff = ln_gamma((nf - 1.0) / 2.0)
        - ln_gamma((nf - 2.0) / 2.0)
        - 0.5 * std::f64::consts::PI.ln();
    (log_coeff + (nf - 4.0) / 2.0 * (1.0 - r * r).ln()).exp()
}

/// Standard deviation of the null sampling distribution: `1 / sqrt(n - 1)`.
pub fn pearson_null_sd(n: usize) -> f64 {
    assert!(n >= 2, "need sample size >= 2, got {n}");
    1.0 / ((n as f64) - 1.0).sqrt()
}

/// On-disk calibration report. `model_id` and `prompt_id` tag the setting the
/// bandwidth was tuned for; loads under a different setting log a warning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub sigma_star: f64,
    pub grid: Vec<(f64, f64)>,
    pub model_id: String,
    pub prompt_id: String,
    pub n_validation: usize,
}

impl CalibrationReport {
    pub fn from_result(result: &CalibrationResult, model_id: &str, prompt_id: &str) -> Self {
        Self {
            sigma_star: result.sigma_star,
            grid: result.grid.clone(),
            model_id: model_id.to_string(),
            prompt_id: prompt_id.to_string(),
            n_validation: result.n_validation,
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json + "\n")
    }

    /// Loads a report and warns when it was tuned for a different model or
    /// prompt than the one about to use it.
    pub fn load(
        path: impl AsRef<std::path::Path>,
        expected_model: Option<&str>,
        expected_prompt: Option<&str>,
    ) -> std::io::Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let report: Self = serde_json::from_str(&content)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        if let Some(model) = expected_model {
            if model != report.model_id {
                log::warn!(
                    "calibration was tuned for model {:?} but running with {:?}; consider retuning",
                    report.model_id,
                    model
                );
            }
        }
        if let Some(prompt) = expected_prompt {
            if prompt != report.prompt_id {
                log::warn!(
                    "calibration was tuned for prompt {:?} but running with {:?}; consider retuning",
                    report.prompt_id,
                    prompt
                );
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::Provenance;

    #[test]
    fn empty_validation_rejected() {
        assert!(matches!(
            tune_sigma(&[], &[0.1]),
            Err(CalibrationError::EmptyValidation)
        ));
    }

    #[test]
    fn bad_grid_rejected() {
        let v = vec![(DiscretePrior::singleton(0.0), 0.0)];
        assert!(matches!(
            tune_sigma(&v, &[]),
            Err(CalibrationError::InvalidGrid)
        ));
        assert!(matches!(
            tune_sigma(&v, &[0.1, -0.2]),
            Err(CalibrationError::InvalidGrid)
        ));
    }

    #[test]
    fn out_of_range_observation_rejected() {
        let v = vec![(DiscretePrior::singleton(0.0), 1.5)];
        assert!(matches!(
            tune_sigma(&v, &[0.1]),
            Err(CalibrationError::InvalidObservation(_))
        ));
    }

    #[test]
    fn zero_dispersion_prefers_smallest_sigma() {
        // Observations sit exactly on the atoms, so NLL decreases as the
        // kernel tightens; the minimizer is the smallest grid sigma.
        let validation: Vec<(DiscretePrior, f64)> = [-0.6, -0.1, 0.3, 0.8]
            .iter()
            .map(|&r| (DiscretePrior::singleton(r), r))
            .collect();
        let grid = default_sigma_grid();
        let result = tune_sigma(&validation, &grid).unwrap();
        assert_eq!(result.sigma_star, grid[0]);
        for w in result.grid.windows(2) {
            assert!(w[0].1 < w[1].1, "mean NLL should increase with sigma");
        }
    }

    #[test]
    fn duplicated_validation_leaves_sigma_unchanged() {
        let mut validation: Vec<(DiscretePrior, f64)> = vec![
            (DiscretePrior::singleton(0.0), 0.21),
            (DiscretePrior::singleton(0.4), 0.13),
            (DiscretePrior::singleton(-0.3), -0.52),
        ];
        let grid = default_sigma_grid();
        let once = tune_sigma(&validation, &grid).unwrap();
        let doubled: Vec<_> = validation
            .iter()
            .cloned()
            .chain(validation.iter().cloned())
            .collect();
        let twice = tune_sigma(&doubled, &grid).unwrap();
        assert_eq!(once.sigma_star, twice.sigma_star);
        for (a, b) in once.grid.iter().zip(&twice.grid) {
            assert!((a.1 - b.1).abs() < 1e-12);
        }
        // permutation invariance
        validation.reverse();
        let rev = tune_sigma(&validation, &grid).unwrap();
        assert_eq!(once.sigma_star, rev.sigma_star);
    }

    #[test]
    fn scott_uniform_weights_effective_size() {
        let m = 5;
        let p = 1.0 / m as f64;
        let support: Vec<(f64, f64)> = (0..m).map(|i| (-0.4 + 0.2 * i as f64, p)).collect();
        let prior = DiscretePrior::new(support, Provenance::default()).unwrap();
        assert!((effective_sample_size(&prior) - m as f64).abs() < 1e-12);
    }

    #[test]
    fn scott_two_atom_value() {
        let prior = DiscretePrior::new(
            vec![(-0.5, 0.5), (0.5, 0.5)],
            Provenance::default(),
        )
        .unwrap();
        assert!((scotts_sigma(&prior) - 0.4613917985469458).abs() < 1e-12);
    }

    #[test]
    fn scott_singleton_floor() {
        assert_eq!(scotts_sigma(&DiscretePrior::singleton(0.3)), 1e-3);
    }

    #[test]
    fn scott_three_atom_hand_formula() {
        let prior = DiscretePrior::new(
            vec![(-0.5, 0.25), (0.0, 0.5), (0.5, 0.25)],
            Provenance::default(),
        )
        .unwrap();
        // mu = 0, var = 0.25*0.25*2 = 0.125, n_eff = 1/(0.0625+0.25+0.0625)
        let sigma_hat = 0.125f64.sqrt();
        let n_eff = 1.0f64 / 0.375;
        let expected = 1.06 * sigma_hat * n_eff.powf(-0.2);
        assert!((scotts_sigma(&prior) - expected).abs() < 1e-12);
    }

    #[test]
    fn chi_square_needs_four_points() {
        let prior = DiscretePrior::new(
            vec![(-0.1, 0.4), (0.0, 0.3), (0.1, 0.3)],
            Provenance::default(),
        )
        .unwrap();
        assert!(matches!(
            chi_square_normality(&prior, PSEUDO_SAMPLE_SIZE),
            Err(CalibrationError::UnderDetermined(3))
        ));
    }

    #[test]
    fn discretized_gaussian_not_rejected() {
        // p_j proportional to a N(0, 0.2^2) pdf over 21 points on [-0.5, 0.5]
        let n = 21;
        let sigma0 = 0.2;
        let mut support = Vec::new();
        let mut total = 0.0;
        let raw: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let r = -0.5 + i as f64 / (n - 1) as f64;
                let w = normal_pdf(r / sigma0);
                (r, w)
            })
            .collect();
        for &(_, w) in &raw {
            total += w;
        }
        for &(r, w) in &raw {
            support.push((r, w / total));
        }
        let prior = DiscretePrior::new(support, Provenance::default()).unwrap();
        let result = chi_square_normality(&prior, PSEUDO_SAMPLE_SIZE).unwrap();
        assert_eq!(result.dof, 18);
        assert!((result.chi2 - 1.8736789443584) .abs() < 1e-9);
        assert!(result.p_value >= 0.05);
        assert!(!result.reject_at_5pct);
    }

    #[test]
    fn bimodal_rejected() {
        let prior = DiscretePrior::new(
            vec![(-0.8, 0.45), (-0.1, 0.05), (0.1, 0.05), (0.8, 0.45)],
            Provenance::default(),
        )
        .unwrap();
        let result = chi_square_normality(&prior, PSEUDO_SAMPLE_SIZE).unwrap();
        assert_eq!(result.dof, 1);
        assert!((result.chi2 - 1224.0216840107912).abs() < 1e-6);
        assert!(result.p_value < 1e-6);
        assert!(result.reject_at_5pct);
    }

    #[test]
    fn null_sd_reference() {
        assert!((pearson_null_sd(100) - 0.10050378152592121).abs() < 1e-15);
    }

    #[test]
    fn null_density_reference_and_symmetry() {
        assert!((pearson_null_density(0.0, 100) - 3.9392652848200855).abs() < 1e-10);
        for r in [0.1, 0.35, 0.9] {
            assert_eq!(
                pearson_null_density(r, 50),
                pearson_null_density(-r, 50)
            );
        }
    }

    #[test]
    fn report_round_trip_and_mismatch_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calibration.json");
        let result = CalibrationResult {
            sigma_star: 0.4,
            grid: vec![(0.35, 0.51), (0.4, 0.5), (0.45, 0.502)],
            n_validation: 300,
        };
        let report = CalibrationReport::from_result(&result, "model-a", "lcp_predict");
        report.save(&path).unwrap();
        let loaded = CalibrationReport::load(&path, Some("model-b"), None).unwrap();
        assert_eq!(loaded.sigma_star, 0.4);
        assert_eq!(loaded.n_validation, 300);
    }
}
