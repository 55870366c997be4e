//! Cross-module integration checks: the full generate → impute → fit → pool
//! chain, exercised the way downstream callers use it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use misfit::dataset::make_grid;
use misfit::experiment::{fit_imputed, fit_with_params, Estimator};
use misfit::impute::ImputationMode;
use misfit::numerics::mix_seed;
use misfit::simulate::{gen_linear, LinearSimConfig};
use misfit::smooth::true_linear_params;

/// Kolmogorov–Smirnov distance between a sample and the uniform law on [0, 1].
fn ks_uniform(mut sample: Vec<f64>) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let mut d = 0.0f64;
    for (i, &p) in sample.iter().enumerate() {
        let hi = (i + 1) as f64 / n - p;
        let lo = p - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Under a zero coefficient curve with exactly known moments and densely
/// observed subjects, the pooled test's p-values must be close to uniform:
/// the tail probability calibration survives the whole pipeline, not just
/// the inference module in isolation.
#[test]
fn null_p_values_are_uniform_under_dense_sampling() {
    let cfg = LinearSimConfig::new(100, 40, 4, 0.0, 0).with_grid_size(50);
    let params = true_linear_params(&cfg).expect("exact moments for the null design");

    let replications = 500usize;
    let mut p_values = Vec::with_capacity(replications);
    for rep in 0..replications {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[9090, rep as u64]));
        let (data, _) = gen_linear(&cfg, &mut rng).expect("null dataset");
        let fit = fit_with_params(
            &data,
            &params,
            cfg.ncomp,
            ImputationMode::MeU,
            1,
            mix_seed(&[9090, rep as u64, 1]),
            Estimator::Scores,
        )
        .expect("dense null fit");
        p_values.push(fit.p_value);
    }

    let d = ks_uniform(p_values);
    assert!(
        d < 0.1,
        "Kolmogorov–Smirnov distance to uniform over {replications} null \
         replications: {d:.4} (limit 0.1)"
    );
}

/// A strong signal at a decent sample size must be detected end to end with
/// everything estimated from the data: mean structure, covariance surface,
/// noise variance, eigensystem, imputation, pooling, and the tail test.
#[test]
fn strong_signal_is_detected_with_estimated_parameters() {
    let cfg = LinearSimConfig::new(400, 10, 2, 5.0, 0).with_grid_size(60);
    let grid = make_grid(60).unwrap();
    let mut rejections = 0usize;
    let trials = 5usize;
    for rep in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[7070, rep as u64]));
        let (data, _) = gen_linear(&cfg, &mut rng).unwrap();
        let fit = fit_imputed(
            &data,
            &grid,
            ImputationMode::MuC,
            10,
            2,
            mix_seed(&[7070, rep as u64, 1]),
        )
        .unwrap();
        if fit.p_value < 0.05 {
            rejections += 1;
        }
    }
    assert!(
        rejections >= 4,
        "w=5 signal at N=400, m=10 rejected in only {rejections}/{trials} trials"
    );
}
