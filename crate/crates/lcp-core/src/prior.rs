//! Continuous prior densities over [-1, 1] behind one evaluation contract:
//! a truncated Gaussian mixture smoothed from a discrete distribution, a
//! truncated Gaussian from verbalized parameters, and the uniform baseline.
//!
//! All densities are reported in natural-log units; the uniform baseline has
//! information content ln 2 at every point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{DiscretePrior, Provenance};
use crate::math::{logsumexp, normal_cdf, normal_log_pdf, normal_pdf};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("kernel standard deviation must be > 0 (got {0})")]
    InvalidSigma(f64),
    #[error("query point {0} outside the support [-1, 1]")]
    OutOfSupport(f64),
    #[error("stored normalizer {stored} disagrees with recomputed {recomputed}")]
    NormalizerMismatch { stored: f64, recomputed: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid prior record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Truncated Gaussian mixture: one kernel of width `sigma` per support point,
/// renormalized to integrate to one over [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Lcp {
    pub discrete: DiscretePrior,
    pub sigma: f64,
    pub z: f64,
}

/// Gaussian with mean `mu` and deviation `sigma`, truncated to [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian {
    pub mu: f64,
    pub sigma: f64,
}

impl TruncatedGaussian {
    fn mass(&self) -> f64 {
        normal_cdf((1.0 - self.mu) / self.sigma) - normal_cdf((-1.0 - self.mu) / self.sigma)
    }
}

/// Constant density 1/2 on [-1, 1].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UniformPrior;

/// Sum of truncated-kernel masses: `Σ p_j (Φ((1-r_j)/σ) - Φ((-1-r_j)/σ))`.
pub fn lcp_normalizer(discrete: &DiscretePrior, sigma: f64) -> f64 {
    discrete
        .support
        .iter()
        .map(|&(r, p)| p * (normal_cdf((1.0 - r) / sigma) - normal_cdf((-1.0 - r) / sigma)))
        .sum()
}

/// A prior density over [-1, 1], evaluated through one shared contract.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorDensity {
    Lcp(Lcp),
    Gaussian(TruncatedGaussian),
    Uniform(UniformPrior),
}

impl PriorDensity {
    /// Smooths a discrete prior with Gaussian kernels of width `sigma`,
    /// truncated and renormalized to [-1, 1].
    pub fn lcp(discrete: DiscretePrior, sigma: f64) -> Result<Self, PriorError> {
        if !(sigma > 0.0) {
            return Err(PriorError::InvalidSigma(sigma));
        }
        let z = lcp_normalizer(&discrete, sigma);
        Ok(Self::Lcp(Lcp { discrete, sigma, z }))
    }

    pub fn truncated_gaussian(mu: f64, sigma: f64) -> Result<Self, PriorError> {
        if !(sigma > 0.0) {
            return Err(PriorError::InvalidSigma(sigma));
        }
        Ok(Self::Gaussian(TruncatedGaussian { mu, sigma }))
    }

    pub fn uniform() -> Self {
        Self::Uniform(UniformPrior)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Lcp(_) => "lcp",
            Self::Gaussian(_) => "gaussian",
            Self::Uniform(_) => "uniform",
        }
    }

    /// Probability density at `r`. Queries outside [-1, 1] are errors rather
    /// than zero, to catch data bugs.
    pub fn density(&self, r: f64) -> Result<f64, PriorError> {
        check_support(r)?;
        Ok(match self {
            Self::Uniform(_) => 0.5,
            Self::Gaussian(g) => normal_pdf((r - g.mu) / g.sigma) / g.sigma / g.mass(),
            Self::Lcp(lcp) => {
                let sum: f64 = lcp
                    .discrete
                    .support
                    .iter()
                    .map(|&(rj, pj)| pj * normal_pdf((r - rj) / lcp.sigma) / lcp.sigma)
                    .sum();
                sum / lcp.z
            }
        })
    }

    /// `ln density(r)`, computed with log-sum-exp over mixture components so
    /// points far from every atom stay finite.
    pub fn log_density(&self, r: f64) -> Result<f64, PriorError> {
        check_support(r)?;
        Ok(match self {
            Self::Uniform(_) => -std::f64::consts::LN_2,
            Self::Gaussian(g) => {
                normal_log_pdf((r - g.mu) / g.sigma) - g.sigma.ln() - g.mass().ln()
            }
            Self::Lcp(lcp) => {
                let terms: Vec<f64> = lcp
                    .discrete
                    .support
                    .iter()
                    .map(|&(rj, pj)| {
                        pj.ln() + normal_log_pdf((r - rj) / lcp.sigma) - lcp.sigma.ln()
                    })
                    .collect();
                logsumexp(&terms) - lcp.z.ln()
            }
        })
    }

    /// Cumulative distribution on [-1, 1]; clamped outside.
    pub fn cdf(&self, r: f64) -> f64 {
        if r <= -1.0 {
            return 0.0;
        }
        if r >= 1.0 {
            return 1.0;
        }
        match self {
            Self::Uniform(_) => (r + 1.0) / 2.0,
            Self::Gaussian(g) => {
                let lo = normal_cdf((-1.0 - g.mu) / g.sigma);
                ((normal_cdf((r - g.mu) / g.sigma) - lo) / g.mass()).clamp(0.0, 1.0)
            }
            Self::Lcp(lcp) => {
                let sum: f64 = lcp
                    .discrete
                    .support
                    .iter()
                    .map(|&(rj, pj)| {
                        pj * (normal_cdf((r - rj) / lcp.sigma)
                            - normal_cdf((-1.0 - rj) / lcp.sigma))
                    })
                    .sum();
                (sum / lcp.z).clamp(0.0, 1.0)
            }
        }
    }

    /// Inverse CDF. Analytic for the uniform prior; bisection elsewhere,
    /// tight enough that `quantile(cdf(r))` returns `r` within 1e-8 wherever
    /// the density is positive.
    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        if let Self::Uniform(_) = self {
            return 2.0 * q - 1.0;
        }
        if q == 0.0 {
            return -1.0;
        }
        if q == 1.0 {
            return 1.0;
        }
        let mut lo = -1.0;
        let mut hi = 1.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Global maximizer of the density over [-1, 1]: a 2001-point grid scan
    /// refined by golden-section search within the best cell. Ties break
    /// toward smaller |r|, then toward negative r.
    pub fn mode(&self) -> f64 {
        const GRID: usize = 2001;
        let dens = |r: f64| self.density(r).expect("grid point inside support");
        let mut best_idx = 0;
        let mut best_val = f64::NEG_INFINITY;
        let mut best_r = -1.0;
        for i in 0..GRID {
            let r = -1.0 + 2.0 * i as f64 / (GRID - 1) as f64;
            let d = dens(r);
            if d > best_val || (d == best_val && tie_break_before(r, best_r)) {
                best_val = d;
                best_idx = i;
                best_r = r;
            }
        }
        let lo = -1.0 + 2.0 * best_idx.saturating_sub(1) as f64 / (GRID - 1) as f64;
        let hi = -1.0 + 2.0 * (best_idx + 1).min(GRID - 1) as f64 / (GRID - 1) as f64;
        let refined = golden_section_max(&dens, lo, hi);
        // Keep the grid point unless refinement strictly improves on it, so
        // flat regions resolve by the tie-break rule, not search jitter.
        if dens(refined) > best_val {
            refined
        } else {
            best_r
        }
    }

    /// Equal-tailed credible interval at the given level.
    pub fn credible_interval(&self, level: f64) -> (f64, f64) {
        assert!(
            level > 0.0 && level < 1.0,
            "credible level must lie in (0, 1), got {level}"
        );
        let tail = (1.0 - level) / 2.0;
        (self.quantile(tail), self.quantile(1.0 - tail))
    }
}

fn check_support(r: f64) -> Result<(), PriorError> {
    if !(-1.0..=1.0).contains(&r) {
        return Err(PriorError::OutOfSupport(r));
    }
    Ok(())
}

/// True when `a` wins the mode tie-break against `b`: smaller |r| first,
/// then the negative one.
fn tie_break_before(a: f64, b: f64) -> bool {
    if a.abs() != b.abs() {
        a.abs() < b.abs()
    } else {
        a < b
    }
}

fn golden_section_max(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..80 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Flat on-disk form: `{kind, support, sigma, z, mu}`, one JSON object per
/// line. Optional fields are omitted for kinds that do not use them.
#[derive(Debug, Serialize, Deserialize)]
struct PriorRecord {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    support: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
}

impl From<&PriorDensity> for PriorRecord {
    fn from(prior: &PriorDensity) -> Self {
        match prior {
            PriorDensity::Lcp(lcp) => Self {
                kind: "lcp".to_string(),
                support: Some(lcp.discrete.support.clone()),
                sigma: Some(lcp.sigma),
                z: Some(lcp.z),
                mu: None,
            },
            PriorDensity::Gaussian(g) => Self {
                kind: "gaussian".to_string(),
                support: None,
                sigma: Some(g.sigma),
                z: None,
                mu: Some(g.mu),
            },
            PriorDensity::Uniform(_) => Self {
                kind: "uniform".to_string(),
                support: None,
                sigma: None,
                z: None,
                mu: None,
            },
        }
    }
}

impl TryFrom<PriorRecord> for PriorDensity {
    type Error = PriorError;

    fn try_from(rec: PriorRecord) -> Result<Self, PriorError> {
        match rec.kind.as_str() {
            "lcp" => {
                let support = rec
                    .support
                    .ok_or_else(|| PriorError::InvalidRecord("lcp requires support".into()))?;
                let sigma = rec
                    .sigma
                    .ok_or_else(|| PriorError::InvalidRecord("lcp requires sigma".into()))?;
                let discrete = DiscretePrior::new(support, Provenance::default())
                    .map_err(|e| PriorError::InvalidRecord(e.to_string()))?;
                let prior = PriorDensity::lcp(discrete, sigma)?;
                if let (Some(stored), PriorDensity::Lcp(lcp)) = (rec.z, &prior) {
                    if (stored - lcp.z).abs() > 1e-12 {
                        return Err(PriorError::NormalizerMismatch {
                            stored,
                            recomputed: lcp.z,
                        });
                    }
                }
                Ok(prior)
            }
            "gaussian" => {
                let mu = rec
                    .mu
                    .ok_or_else(|| PriorError::InvalidRecord("gaussian requires mu".into()))?;
                let sigma = rec
                    .sigma
                    .ok_or_else(|| PriorError::InvalidRecord("gaussian requires sigma".into()))?;
                PriorDensity::truncated_gaussian(mu, sigma)
            }
            "uniform" => Ok(PriorDensity::uniform()),
            other => Err(PriorError::InvalidRecord(format!("unknown kind {other:?}"))),
        }
    }
}

/// Writes priors one JSON object per line.
pub fn save_priors(
    path: impl AsRef<std::path::Path>,
    priors: &[PriorDensity],
) -> Result<(), PriorError> {
    let mut out = String::new();
    for prior in priors {
        let rec = PriorRecord::from(prior);
        out.push_str(&serde_json::to_string(&rec).expect("prior record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads priors written by [`save_priors`], re-checking each stored
/// normalizer against a recomputation.
pub fn load_priors(path: impl AsRef<std::path::Path>) -> Result<Vec<PriorDensity>, PriorError> {
    let content = std::fs::read_to_string(path)?;
    let mut priors = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PriorRecord = serde_json::from_str(line).map_err(|e| PriorError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        priors.push(PriorDensity::try_from(rec)?);
    }
    Ok(priors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singleton_lcp(r: f64, sigma: f64) -> PriorDensity {
        PriorDensity::lcp(DiscretePrior::singleton(r), sigma).unwrap()
    }

    #[test]
    fn invalid_sigma_rejected() {
        assert!(matches!(
            PriorDensity::lcp(DiscretePrior::singleton(0.0), 0.0),
            Err(PriorError::InvalidSigma(_))
        ));
        assert!(matches!(
            PriorDensity::truncated_gaussian(0.0, -1.0),
            Err(PriorError::InvalidSigma(_))
        ));
    }

    #[test]
    fn singleton_normalizer_and_density() {
        // z = 2 Phi(2.5) - 1, density(0) = phi(0)/sigma / z
        let prior = singleton_lcp(0.0, 0.4);
        if let PriorDensity::Lcp(lcp) = &prior {
            assert!((lcp.z - 0.9875806693484477).abs() < 1e-12);
        } else {
            panic!("expected lcp");
        }
        assert!((prior.density(0.0).unwrap() - 1.00989795766414).abs() < 1e-10);
    }

    #[test]
    fn tight_kernel_density() {
        let prior = singleton_lcp(0.0, 0.01);
        assert!((prior.density(0.0).unwrap() - 39.89422804014327).abs() < 1e-8);
    }

    #[test]
    fn two_atom_symmetry() {
        let discrete = DiscretePrior::new(
            vec![(-0.5, 0.5), (0.5, 0.5)],
            Provenance::default(),
        )
        .unwrap();
        let prior = PriorDensity::lcp(discrete, 0.3).unwrap();
        for x in [0.1, 0.25, 0.7, 0.99] {
            let a = prior.density(x).unwrap();
            let b = prior.density(-x).unwrap();
            assert_eq!(a, b);
        }
        assert!((prior.quantile(0.5)).abs() < 1e-9);
    }

    #[test]
    fn uniform_contract() {
        let prior = PriorDensity::uniform();
        assert_eq!(prior.density(0.3).unwrap(), 0.5);
        assert_eq!(prior.density(-1.0).unwrap(), 0.5);
        assert!((prior.log_density(0.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(prior.cdf(0.0), 0.5);
        assert_eq!(prior.quantile(0.975), 0.95);
        assert_eq!(prior.credible_interval(0.95), (-0.95, 0.95));
        assert_eq!(prior.mode(), 0.0);
    }

    #[test]
    fn out_of_support_is_error() {
        let prior = PriorDensity::uniform();
        assert!(matches!(
            prior.density(1.2),
            Err(PriorError::OutOfSupport(_))
        ));
        assert!(matches!(
            singleton_lcp(0.0, 0.4).log_density(-1.0001),
            Err(PriorError::OutOfSupport(_))
        ));
    }

    #[test]
    fn log_density_far_from_atoms_is_finite() {
        let prior = singleton_lcp(-0.9, 0.05);
        // 10+ kernel widths away from the only atom
        let ld = prior.log_density(0.9).unwrap();
        assert!(ld.is_finite());
        // matches the component-wise closed form
        if let PriorDensity::Lcp(lcp) = &prior {
            let expect =
                normal_log_pdf((0.9 - -0.9) / lcp.sigma) - lcp.sigma.ln() - lcp.z.ln();
            assert!((ld - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn cdf_midpoint_of_symmetric_singleton() {
        let prior = singleton_lcp(0.0, 0.4);
        assert!((prior.cdf(0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let discrete = DiscretePrior::new(
            vec![(-0.7, 0.2), (0.1, 0.5), (0.6, 0.3)],
            Provenance::default(),
        )
        .unwrap();
        let prior = PriorDensity::lcp(discrete, 0.2).unwrap();
        for r in [-0.9, -0.5, 0.0, 0.3, 0.8] {
            let q = prior.cdf(r);
            assert!((prior.quantile(q) - r).abs() < 1e-8);
        }
    }

    #[test]
    fn singleton_credible_interval_symmetric() {
        let prior = singleton_lcp(0.0, 0.4);
        let (lo, hi) = prior.credible_interval(0.95);
        assert!((lo + hi).abs() < 1e-8);
        // bisection against an independently root-solved value
        assert!((hi - 0.7470958742173328).abs() < 1e-8);
        assert!((prior.cdf(hi) - 0.975).abs() < 1e-9);
    }

    #[test]
    fn wide_truncated_gaussian_near_uniform() {
        let prior = PriorDensity::truncated_gaussian(0.0, 10.0).unwrap();
        let (lo, hi) = prior.credible_interval(0.95);
        assert!((lo + 0.95).abs() < 0.01);
        assert!((hi - 0.95).abs() < 0.01);
    }

    #[test]
    fn interior_mode_of_singleton() {
        let prior = singleton_lcp(0.7, 0.4);
        assert!((prior.mode() - 0.7).abs() < 1e-6);
    }

    #[test]
    fn boundary_mode_of_shifted_gaussian() {
        let prior = PriorDensity::truncated_gaussian(2.0, 0.5).unwrap();
        assert_eq!(prior.mode(), 1.0);
    }

    #[test]
    fn symmetric_bimodal_mode_breaks_negative() {
        let discrete = DiscretePrior::new(
            vec![(-0.8, 0.5), (0.8, 0.5)],
            Provenance::default(),
        )
        .unwrap();
        let prior = PriorDensity::lcp(discrete, 0.1).unwrap();
        assert!((prior.mode() + 0.8).abs() < 1e-6);
        assert!(prior.mode() < 0.0);
    }

    #[test]
    fn serialization_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("priors.jsonl");
        let discrete = DiscretePrior::new(
            vec![(-0.25, 0.125), (0.5, 0.875)],
            Provenance::default(),
        )
        .unwrap();
        let priors = vec![
            PriorDensity::lcp(discrete, 0.4).unwrap(),
            PriorDensity::truncated_gaussian(0.7, 0.1).unwrap(),
            PriorDensity::uniform(),
        ];
        save_priors(&path, &priors).unwrap();
        let loaded = load_priors(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in priors.iter().zip(&loaded) {
            match (a, b) {
                (PriorDensity::Lcp(x), PriorDensity::Lcp(y)) => {
                    assert_eq!(x.discrete.support, y.discrete.support);
                    assert_eq!(x.sigma, y.sigma);
                    assert_eq!(x.z, y.z);
                }
                (PriorDensity::Gaussian(x), PriorDensity::Gaussian(y)) => {
                    assert_eq!((x.mu, x.sigma), (y.mu, y.sigma));
                }
                (PriorDensity::Uniform(_), PriorDensity::Uniform(_)) => {}
                _ => panic!("kind changed in round trip"),
            }
        }
    }

    #[test]
    fn tampered_normalizer_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prior.jsonl");
        std::fs::write(
            &path,
            "{\"kind\":\"lcp\",\"support\":[[0.0,1.0]],\"sigma\":0.4,\"z\":0.5}\n",
        )
        .unwrap();
        assert!(matches!(
            load_priors(&path),
            Err(PriorError::NormalizerMismatch { .. })
        ));
    }
}
