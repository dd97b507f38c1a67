//! Bandwidth recovery against a scale-MLE oracle, self-consistent Gaussian
//! fixtures for the shape test, and quadrature of the null density.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use lcp_core::calibrate::{
    chi_square_normality, default_sigma_grid, pearson_null_density, pearson_null_sd,
    scotts_sigma, tune_sigma, PSEUDO_SAMPLE_SIZE,
};
use lcp_core::decode::{aggregate, normalize, CandidateValue, DiscretePrior, Provenance};
use lcp_core::math::normal_pdf;

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, points: usize) -> f64 {
    assert!(points >= 3 && points % 2 == 1);
    let h = (b - a) / (points - 1) as f64;
    let mut total = f(a) + f(b);
    for i in 1..points - 1 {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        total += weight * f(a + h * i as f64);
    }
    total * h / 3.0
}

/// Planted-noise fixture: singleton priors with observations scattered at a
/// known scale; the tuned bandwidth must land within one grid step of the
/// maximum-likelihood scale estimate computed on the same draws.
#[test]
fn sigma_recovery_matches_mle_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let noise_sd = 0.3;
    let mut validation = Vec::with_capacity(500);
    let mut squared_residuals = Vec::with_capacity(500);
    while validation.len() < 500 {
        let atom: f64 = rng.random_range(-0.4..=0.4);
        let noise: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            * noise_sd;
        let r_obs = atom + noise;
        if !(-1.0..=1.0).contains(&r_obs) {
            continue;
        }
        squared_residuals.push(noise * noise);
        validation.push((DiscretePrior::singleton(atom), r_obs));
    }
    let mle_sigma =
        (squared_residuals.iter().sum::<f64>() / squared_residuals.len() as f64).sqrt();

    let result = tune_sigma(&validation, &default_sigma_grid()).unwrap();
    assert!(
        (result.sigma_star - mle_sigma).abs() <= 0.05,
        "sigma* {} vs scale MLE {mle_sigma}",
        result.sigma_star
    );
    assert!(
        (0.25..=0.35).contains(&result.sigma_star),
        "sigma* {} outside [0.25, 0.35]",
        result.sigma_star
    );
    assert_eq!(result.n_validation, 500);
    let min_nll = result
        .grid
        .iter()
        .map(|&(_, nll)| nll)
        .fold(f64::INFINITY, f64::min);
    let at_star = result
        .grid
        .iter()
        .find(|&&(s, _)| s == result.sigma_star)
        .unwrap()
        .1;
    assert_eq!(at_star, min_nll);
}

/// Discretizing a Gaussian on a grid that resolves it well (spacing below
/// ~0.7 kernel widths, span past ~7) makes the refitted moments reproduce
/// the weights, so the shape statistic collapses to rounding noise.
#[test]
fn self_consistent_discretized_gaussians_pass() {
    let cases: &[(usize, f64, f64, f64, f64)] = &[
        // (points, lo, hi, mu0, sd0)
        (21, -0.5, 0.5, 0.0, 0.070710678118654752),
        (41, -0.8, 0.8, 0.0, 0.1),
        (41, -0.8, 0.8, 0.1, 0.1),
        (81, -0.9, 0.9, -0.2, 0.08),
        (31, -0.6, 0.6, 0.05, 0.07),
    ];
    for &(points, lo, hi, mu0, sd0) in cases {
        let raw: Vec<(f64, f64)> = (0..points)
            .map(|i| {
                let r = lo + (hi - lo) * i as f64 / (points - 1) as f64;
                (r, normal_pdf((r - mu0) / sd0))
            })
            .collect();
        let total: f64 = raw.iter().map(|&(_, w)| w).sum();
        let support: Vec<(f64, f64)> = raw.into_iter().map(|(r, w)| (r, w / total)).collect();
        let prior = DiscretePrior::new(support, Provenance::default()).unwrap();
        let result = chi_square_normality(&prior, PSEUDO_SAMPLE_SIZE).unwrap();
        assert!(
            result.chi2 < 1e-6,
            "chi2 {} for mu0={mu0} sd0={sd0}",
            result.chi2
        );
        assert!(!result.reject_at_5pct);
    }
}

#[test]
fn null_density_integrates_to_one() {
    for n in [5usize, 10, 100, 1000] {
        // substitute r = sin(theta) so the endpoints are smooth
        let integrand =
            |theta: f64| pearson_null_density(theta.sin().clamp(-0.9999999999999999, 0.9999999999999999), n) * theta.cos();
        let mass = simpson(
            &integrand,
            -std::f64::consts::FRAC_PI_2,
            std::f64::consts::FRAC_PI_2,
            4001,
        );
        assert!(
            (mass - 1.0).abs() <= 1e-8,
            "n={n}: null density mass {mass}"
        );
    }
}

#[test]
fn null_sd_follows_inverse_root() {
    for n in [5usize, 10, 100, 1000] {
        assert_eq!(pearson_null_sd(n), 1.0 / ((n as f64) - 1.0).sqrt());
    }
    assert!((pearson_null_sd(100) - 0.10050).abs() <= 1e-5);
}

/// Scott's bandwidth must not care whether duplicate decoded values were
/// merged upstream or arrive pre-merged.
#[test]
fn scott_invariant_under_duplicate_merging() {
    let split = vec![
        CandidateValue {
            value: 0.65,
            joint_logprob: 0.4f64.ln(),
            source_strings: vec!["0.65".to_string()],
        },
        CandidateValue {
            value: 0.65,
            joint_logprob: 0.2f64.ln(),
            source_strings: vec![".65".to_string()],
        },
        CandidateValue {
            value: -0.2,
            joint_logprob: 0.4f64.ln(),
            source_strings: vec!["-0.2".to_string()],
        },
    ];
    let merged = vec![
        CandidateValue {
            value: 0.65,
            joint_logprob: 0.6f64.ln(),
            source_strings: vec!["0.65".to_string()],
        },
        CandidateValue {
            value: -0.2,
            joint_logprob: 0.4f64.ln(),
            source_strings: vec!["-0.2".to_string()],
        },
    ];
    let a = normalize(&aggregate(&split).unwrap(), Provenance::default()).unwrap();
    let b = normalize(&aggregate(&merged).unwrap(), Provenance::default()).unwrap();
    assert!((scotts_sigma(&a) - scotts_sigma(&b)).abs() < 1e-12);
}
