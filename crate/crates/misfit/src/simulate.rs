//! Synthetic sparse functional regression data.
//!
//! Latent curves are Gaussian processes (or multivariate-t curves for a
//! heavy-tailed stress design) with a Matérn covariance on a uniform grid.
//! Each subject reveals the curve at a few grid points, contaminated with
//! measurement noise, together with a scalar outcome generated from the
//! curve:
//!
//! - continuous outcomes follow `y = α + ∫ X(t) β(t) dt + ε` with
//!   `β(t) = w sin(2πt)`, so `w = 0` is the exact null;
//! - binary outcomes flip a fair-ish coin first and then shift the curve
//!   mean by class, which corresponds to a logistic model whose coefficient
//!   function is known in closed form from the covariance eigenpairs.
//!
//! All draws consume the supplied RNG in a fixed documented order (curves,
//! then per-subject auxiliaries), so a seeded generator reproduces datasets
//! bit-for-bit.

use nalgebra::{Cholesky, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    inner_product, make_grid, Grid, GridFunction, GridKernel, OutcomeKind,
    SparseFunctionalDataset, Subject,
};
use crate::error::{Error, Result};
use crate::fpca::eigendecompose;

/// Stationary Matérn covariance `σ² c_ν(|t-s|/ρ)` with half-integer
/// smoothness `ν ∈ {0.5, 1.5, 2.5}` (the closed-form cases).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternSpec {
    pub sigma_sq: f64,
    pub rho: f64,
    pub nu: f64,
}

impl Default for MaternSpec {
    fn default() -> Self {
        Self { sigma_sq: 1.0, rho: 0.5, nu: 2.5 }
    }
}

/// Evaluates the Matérn covariance on `grid × grid`.
pub fn matern_kernel(spec: &MaternSpec, grid: &Grid) -> Result<GridKernel> {
    if !(spec.sigma_sq > 0.0) || !(spec.rho > 0.0) {
        return Err(Error::InvalidInput(format!(
            "Matérn needs positive variance and range, got sigma_sq={}, rho={}",
            spec.sigma_sq, spec.rho
        )));
    }
    let (sigma_sq, rho) = (spec.sigma_sq, spec.rho);
    let cov: Box<dyn Fn(f64) -> f64> = if spec.nu == 0.5 {
        Box::new(move |d: f64| sigma_sq * (-d / rho).exp())
    } else if spec.nu == 1.5 {
        Box::new(move |d: f64| {
            let a = 3f64.sqrt() * d / rho;
            sigma_sq * (1.0 + a) * (-a).exp()
        })
    } else if spec.nu == 2.5 {
        Box::new(move |d: f64| {
            let a = 5f64.sqrt() * d / rho;
            sigma_sq * (1.0 + a + a * a / 3.0) * (-a).exp()
        })
    } else {
        return Err(Error::UnsupportedSmoothness(format!(
            "nu must be 0.5, 1.5 or 2.5, got {}",
            spec.nu
        )));
    };
    Ok(GridKernel::from_fn(grid.clone(), |t, s| cov((t - s).abs())))
}

/// Cholesky factor of a covariance surface with a relative diagonal jitter
/// of `1e-10 · tr(C)/M` to absorb roundoff-level indefiniteness.
fn factor(kernel: &GridKernel) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let m = kernel.grid().len();
    let mut a = kernel.values().clone();
    let jitter = 1e-10 * a.trace() / m as f64;
    for i in 0..m {
        a[(i, i)] += jitter;
    }
    Cholesky::new(a).ok_or_else(|| {
        Error::NotPSD("covariance surface is not factorizable even with jitter".into())
    })
}

fn gaussian_vector(m: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.sample(StandardNormal))
}

/// Draws `n` Gaussian-process paths with the given mean and covariance.
pub fn sample_gp(
    kernel: &GridKernel,
    mean: &GridFunction,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<GridFunction>> {
    if mean.grid() != kernel.grid() {
        return Err(Error::GridMismatch("mean and covariance on different grids".into()));
    }
    let chol = factor(kernel)?;
    let m = kernel.grid().len();
    let mu = DVector::from_column_slice(mean.values());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x = &mu + chol.l() * gaussian_vector(m, rng);
        out.push(GridFunction::new(kernel.grid().clone(), x.as_slice().to_vec())?);
    }
    Ok(out)
}

/// Draws `n` centered multivariate-t paths with scale matrix `kernel` and
/// `df` degrees of freedom (`X = Z / sqrt(S/df)`, `S ~ χ²_df`), so the path
/// covariance is `df/(df-2)` times the scale for `df > 2`.
pub fn sample_mvt(
    kernel: &GridKernel,
    df: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<GridFunction>> {
    if !(df > 0.0) {
        return Err(Error::InvalidInput(format!("degrees of freedom must be positive, got {df}")));
    }
    let chol = factor(kernel)?;
    let chi = ChiSquared::new(df)
        .map_err(|e| Error::InvalidInput(format!("chi-squared({df}): {e}")))?;
    let m = kernel.grid().len();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z = chol.l() * gaussian_vector(m, rng);
        let s: f64 = chi.sample(rng);
        let x = z / (s / df).sqrt();
        out.push(GridFunction::new(kernel.grid().clone(), x.as_slice().to_vec())?);
    }
    Ok(out)
}

/// Whether a pipeline run uses exact generating-model moments or estimates
/// them from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamMode {
    True,
    Estimated,
}

/// The continuous-outcome design: `β(t) = w sin(2πt)`.
pub fn beta_sine(w: f64, grid: &Grid) -> GridFunction {
    GridFunction::from_fn(grid.clone(), |t| w * (std::f64::consts::TAU * t).sin())
}

fn default_grid_size() -> usize {
    100
}
fn default_sigma_delta_sq() -> f64 {
    0.5
}
fn default_sigma_eps_sq() -> f64 {
    1.0
}
fn default_p0() -> f64 {
    0.5
}

/// Settings for the continuous-outcome generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSimConfig {
    /// Number of subjects.
    #[serde(rename = "N")]
    pub n: usize,
    /// Observations per subject.
    pub m: usize,
    /// Grid resolution.
    #[serde(rename = "M", default = "default_grid_size")]
    pub grid_size: usize,
    /// Number of principal components used by downstream fits.
    #[serde(rename = "J")]
    pub ncomp: usize,
    /// Signal strength in `β(t) = w sin(2πt)`.
    pub w: f64,
    #[serde(default = "default_sigma_delta_sq")]
    pub sigma_delta_sq: f64,
    #[serde(default = "default_sigma_eps_sq")]
    pub sigma_eps_sq: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub matern: MaternSpec,
    /// Draw curves from a multivariate t with this df instead of a GP.
    #[serde(default)]
    pub curve_df: Option<f64>,
    #[serde(default = "LinearSimConfig::default_param_mode")]
    pub param_mode: ParamMode,
    #[serde(default)]
    pub seed: u64,
}

impl LinearSimConfig {
    fn default_param_mode() -> ParamMode {
        ParamMode::True
    }

    pub fn new(n: usize, m: usize, ncomp: usize, w: f64, seed: u64) -> Self {
        Self {
            n,
            m,
            grid_size: default_grid_size(),
            ncomp,
            w,
            sigma_delta_sq: default_sigma_delta_sq(),
            sigma_eps_sq: default_sigma_eps_sq(),
            alpha: 0.0,
            matern: MaternSpec::default(),
            curve_df: None,
            param_mode: ParamMode::True,
            seed,
        }
    }

    pub fn with_grid_size(mut self, grid_size: usize) -> Self {
        self.grid_size = grid_size;
        self
    }

    pub fn with_curve_df(mut self, df: f64) -> Self {
        self.curve_df = Some(df);
        self
    }

    pub fn with_param_mode(mut self, mode: ParamMode) -> Self {
        self.param_mode = mode;
        self
    }

    pub fn with_noise(mut self, sigma_delta_sq: f64, sigma_eps_sq: f64) -> Self {
        self.sigma_delta_sq = sigma_delta_sq;
        self.sigma_eps_sq = sigma_eps_sq;
        self
    }
}

/// Settings for the binary-outcome generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticSimConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    #[serde(rename = "M", default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(rename = "J")]
    pub ncomp: usize,
    /// Class-1 probability.
    #[serde(default = "default_p0")]
    pub p0: f64,
    #[serde(default = "default_sigma_delta_sq")]
    pub sigma_delta_sq: f64,
    #[serde(default)]
    pub matern: MaternSpec,
    #[serde(default)]
    pub seed: u64,
}

impl LogisticSimConfig {
    pub fn new(n: usize, m: usize, ncomp: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            grid_size: default_grid_size(),
            ncomp,
            p0: default_p0(),
            sigma_delta_sq: default_sigma_delta_sq(),
            matern: MaternSpec::default(),
            seed,
        }
    }

    pub fn with_grid_size(mut self, grid_size: usize) -> Self {
        self.grid_size = grid_size;
        self
    }
}

/// The generating model a dataset came from, kept alongside the truth so
/// downstream evaluation can rebuild exact moments.
#[derive(Debug, Clone)]
pub enum GeneratingModel {
    Linear(LinearSimConfig),
    Logistic(LogisticSimConfig),
}

/// What the generator knows and the estimators are judged against.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    /// True coefficient function on the generator's grid.
    pub beta: GridFunction,
    /// True intercept.
    pub alpha: f64,
    pub model: GeneratingModel,
}

fn subject_id(i: usize) -> String {
    format!("s{:05}", i + 1)
}

/// `m` distinct indices in `0..upper`, ascending (partial Fisher–Yates).
fn sample_indices(m: usize, upper: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..upper).collect();
    for i in 0..m {
        let j = rng.random_range(i..upper);
        pool.swap(i, j);
    }
    let mut out = pool[..m].to_vec();
    out.sort_unstable();
    out
}

fn check_design(n: usize, m: usize, grid_size: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 subjects, got {n}")));
    }
    if m == 0 || m > grid_size {
        return Err(Error::InvalidInput(format!(
            "observations per subject must be in 1..={grid_size}, got {m}"
        )));
    }
    Ok(())
}

/// Generates a continuous-outcome dataset together with its truth record.
pub fn gen_linear(
    cfg: &LinearSimConfig,
    rng: &mut impl Rng,
) -> Result<(SparseFunctionalDataset, TruthRecord)> {
    check_design(cfg.n, cfg.m, cfg.grid_size)?;
    let grid = make_grid(cfg.grid_size)?;
    let kernel = matern_kernel(&cfg.matern, &grid)?;
    let beta = beta_sine(cfg.w, &grid);
    let zero = GridFunction::zero(grid.clone());
    let curves = match cfg.curve_df {
        None => sample_gp(&kernel, &zero, cfg.n, rng)?,
        Some(df) => sample_mvt(&kernel, df, cfg.n, rng)?,
    };

    let sd_eps = cfg.sigma_eps_sq.sqrt();
    let sd_delta = cfg.sigma_delta_sq.sqrt();
    let mut subjects = Vec::with_capacity(cfg.n);
    for (i, x) in curves.iter().enumerate() {
        let eps: f64 = rng.sample(StandardNormal);
        let y = cfg.alpha + inner_product(&beta, x)? + sd_eps * eps;
        let idx = sample_indices(cfg.m, cfg.grid_size, rng);
        let times: Vec<f64> = idx.iter().map(|&k| grid.points()[k]).collect();
        let values: Vec<f64> = idx
            .iter()
            .map(|&k| {
                let noise: f64 = rng.sample(StandardNormal);
                x.values()[k] + sd_delta * noise
            })
            .collect();
        subjects.push(Subject::new(subject_id(i), times, values, y)?);
    }
    let data = SparseFunctionalDataset::new(subjects, OutcomeKind::Continuous)?;
    let truth = TruthRecord {
        beta,
        alpha: cfg.alpha,
        model: GeneratingModel::Linear(cfg.clone()),
    };
    Ok((data, truth))
}

/// Class means and true coefficient function implied by a logistic design:
/// class 1 shifts the curve mean by `v₁ + v₂`, and the matching coefficient
/// function is `v₁/λ₁ + v₂/λ₂`.
pub(crate) fn logistic_design(
    grid: &Grid,
    kernel: &GridKernel,
) -> Result<(GridFunction, GridFunction, GridFunction)> {
    let eig = eigendecompose(kernel, 2)?;
    let v = eig.functions();
    let l = eig.lambda();
    let mu1 = GridFunction::new(
        grid.clone(),
        v[0].values().iter().zip(v[1].values()).map(|(a, b)| a + b).collect(),
    )?;
    let beta = GridFunction::new(
        grid.clone(),
        v[0].values()
            .iter()
            .zip(v[1].values())
            .map(|(a, b)| a / l[0] + b / l[1])
            .collect(),
    )?;
    Ok((GridFunction::zero(grid.clone()), mu1, beta))
}

/// Generates a binary-outcome dataset together with its truth record.
pub fn gen_logistic(
    cfg: &LogisticSimConfig,
    rng: &mut impl Rng,
) -> Result<(SparseFunctionalDataset, TruthRecord)> {
    check_design(cfg.n, cfg.m, cfg.grid_size)?;
    if !(cfg.p0 > 0.0 && cfg.p0 < 1.0) {
        return Err(Error::InvalidInput(format!("class balance must be in (0,1), got {}", cfg.p0)));
    }
    let grid = make_grid(cfg.grid_size)?;
    let kernel = matern_kernel(&cfg.matern, &grid)?;
    let (mu0, mu1, beta) = logistic_design(&grid, &kernel)?;
    let chol = factor(&kernel)?;
    let sd_delta = cfg.sigma_delta_sq.sqrt();

    let mut subjects = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let y = if rng.random::<f64>() < cfg.p0 { 1.0 } else { 0.0 };
        let mu = if y == 1.0 { &mu1 } else { &mu0 };
        let z = chol.l() * gaussian_vector(grid.len(), rng);
        let idx = sample_indices(cfg.m, cfg.grid_size, rng);
        let times: Vec<f64> = idx.iter().map(|&k| grid.points()[k]).collect();
        let values: Vec<f64> = idx
            .iter()
            .map(|&k| {
                let noise: f64 = rng.sample(StandardNormal);
                mu.values()[k] + z[k] + sd_delta * noise
            })
            .collect();
        subjects.push(Subject::new(subject_id(i), times, values, y)?);
    }
    let data = SparseFunctionalDataset::new(subjects, OutcomeKind::Binary)?;
    let truth = TruthRecord { beta, alpha: 0.0, model: GeneratingModel::Logistic(cfg.clone()) };
    Ok((data, truth))
}

/// Integrated squared error `∫ (β̂ - β)² dt` between two curves on one grid.
pub fn ise(estimate: &GridFunction, truth: &GridFunction) -> Result<f64> {
    if estimate.grid() != truth.grid() {
        return Err(Error::GridMismatch("ISE of curves on different grids".into()));
    }
    let diff = GridFunction::new(
        estimate.grid().clone(),
        estimate.values().iter().zip(truth.values()).map(|(a, b)| a - b).collect(),
    )?;
    inner_product(&diff, &diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matern_half_is_exponential() {
        let grid = make_grid(11).unwrap();
        let spec = MaternSpec { sigma_sq: 2.0, rho: 0.3, nu: 0.5 };
        let k = matern_kernel(&spec, &grid).unwrap();
        for (j, &t) in grid.points().iter().enumerate() {
            for (l, &s) in grid.points().iter().enumerate() {
                let want = 2.0 * (-(t - s).abs() / 0.3).exp();
                assert!((k.values()[(j, l)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matern_smooth_cases_match_closed_forms() {
        let grid = make_grid(5).unwrap();
        let d: f64 = 0.25;
        let k32 = matern_kernel(&MaternSpec { sigma_sq: 1.5, rho: 0.4, nu: 1.5 }, &grid).unwrap();
        let a32 = 3f64.sqrt() * d / 0.4;
        assert!((k32.eval(0.5, 0.25) - 1.5 * (1.0 + a32) * (-a32).exp()).abs() < 1e-14);
        let k52 = matern_kernel(&MaternSpec { sigma_sq: 0.7, rho: 0.6, nu: 2.5 }, &grid).unwrap();
        let a52 = 5f64.sqrt() * d / 0.6;
        let want = 0.7 * (1.0 + a52 + a52 * a52 / 3.0) * (-a52).exp();
        assert!((k52.eval(0.5, 0.25) - want).abs() < 1e-14);
    }

    #[test]
    fn matern_is_psd_and_decreasing() {
        let grid = make_grid(40).unwrap();
        for nu in [0.5, 1.5, 2.5] {
            let k = matern_kernel(&MaternSpec { sigma_sq: 1.0, rho: 0.5, nu }, &grid).unwrap();
            let spec = crate::fpca::weighted_spectrum(&k);
            assert!(spec.iter().all(|&l| l > -1e-10), "nu={nu}: {spec:?}");
            let t = grid.points()[12];
            assert_eq!(k.eval(t, t), 1.0);
            // Covariance decays with distance along the first row.
            for j in 1..grid.len() {
                assert!(k.values()[(0, j)] < k.values()[(0, j - 1)]);
            }
        }
    }

    #[test]
    fn matern_rejects_unsupported_smoothness() {
        let grid = make_grid(5).unwrap();
        assert!(matches!(
            matern_kernel(&MaternSpec { sigma_sq: 1.0, rho: 0.5, nu: 2.0 }, &grid),
            Err(Error::UnsupportedSmoothness(_))
        ));
        assert!(matern_kernel(&MaternSpec { sigma_sq: -1.0, rho: 0.5, nu: 0.5 }, &grid).is_err());
    }

    #[test]
    fn gp_sample_moments() {
        let grid = make_grid(15).unwrap();
        let kernel = matern_kernel(&MaternSpec::default(), &grid).unwrap();
        let mean = GridFunction::from_fn(grid.clone(), |t| 3.0 * t);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let draws = sample_gp(&kernel, &mean, n, &mut rng).unwrap();
        let k_mid = grid.len() / 2;
        let avg: f64 = draws.iter().map(|d| d.values()[k_mid]).sum::<f64>() / n as f64;
        assert!((avg - mean.values()[k_mid]).abs() < 0.06, "mean {avg}");
        let var: f64 = draws
            .iter()
            .map(|d| (d.values()[k_mid] - avg).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn mvt_sample_has_inflated_variance() {
        let grid = make_grid(10).unwrap();
        let kernel = matern_kernel(&MaternSpec::default(), &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = sample_mvt(&kernel, 30.0, 6000, &mut rng).unwrap();
        // df/(df-2) = 30/28 ≈ 1.071 at the diagonal.
        let var: f64 =
            draws.iter().map(|d| d.values()[3].powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((var - 30.0 / 28.0).abs() < 0.12, "var {var}");
        assert!(sample_mvt(&kernel, 0.0, 1, &mut rng).is_err());
    }

    #[test]
    fn linear_generator_shapes_and_grid_alignment() {
        let cfg = LinearSimConfig::new(30, 4, 2, 5.0, 0).with_grid_size(25);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (data, truth) = gen_linear(&cfg, &mut rng).unwrap();
        assert_eq!(data.len(), 30);
        assert_eq!(data.outcome_kind(), OutcomeKind::Continuous);
        let grid = truth.beta.grid();
        for s in data.subjects() {
            assert_eq!(s.len(), 4);
            for &t in s.times() {
                assert!(grid.points().iter().any(|&p| p == t), "time {t} off grid");
            }
        }
        assert_eq!(truth.alpha, 0.0);
        // β(t) = w sin(2πt).
        let t = grid.points()[7];
        assert!((truth.beta.values()[7] - 5.0 * (std::f64::consts::TAU * t).sin()).abs() < 1e-15);
    }

    #[test]
    fn linear_outcomes_are_exact_without_noise() {
        // With every grid point observed and both noises off, the outcome is
        // exactly the quadrature functional of the observed curve.
        let mut cfg = LinearSimConfig::new(10, 20, 2, 3.0, 0).with_grid_size(20).with_noise(0.0, 0.0);
        cfg.alpha = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (data, truth) = gen_linear(&cfg, &mut rng).unwrap();
        for s in data.subjects() {
            let x = GridFunction::new(truth.beta.grid().clone(), s.values().to_vec()).unwrap();
            let want = 0.7 + inner_product(&truth.beta, &x).unwrap();
            assert!((s.outcome() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn logistic_generator_design() {
        let cfg = LogisticSimConfig::new(60, 3, 2, 0).with_grid_size(30);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (data, truth) = gen_logistic(&cfg, &mut rng).unwrap();
        assert_eq!(data.outcome_kind(), OutcomeKind::Binary);
        let ones = data.outcomes().iter().filter(|&&y| y == 1.0).count();
        assert!(ones > 10 && ones < 50, "both classes present, got {ones} ones");
        // The truth matches the covariance eigenpairs.
        let grid = make_grid(30).unwrap();
        let kernel = matern_kernel(&cfg.matern, &grid).unwrap();
        let eig = eigendecompose(&kernel, 2).unwrap();
        for k in 0..grid.len() {
            let want = eig.functions()[0].values()[k] / eig.lambda()[0]
                + eig.functions()[1].values()[k] / eig.lambda()[1];
            assert!((truth.beta.values()[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn generators_are_deterministic_in_the_seed() {
        let cfg = LinearSimConfig::new(8, 3, 2, 5.0, 0).with_grid_size(15);
        let (a, _) = gen_linear(&cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let (b, _) = gen_linear(&cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let (c, _) = gen_linear(&cfg, &mut ChaCha8Rng::seed_from_u64(43)).unwrap();
        for (sa, sb) in a.subjects().iter().zip(b.subjects()) {
            assert_eq!(sa.times(), sb.times());
            assert_eq!(sa.values(), sb.values());
            assert_eq!(sa.outcome(), sb.outcome());
        }
        assert!(a
            .subjects()
            .iter()
            .zip(c.subjects())
            .any(|(sa, sc)| sa.values() != sc.values()));
    }

    #[test]
    fn ise_basics() {
        let grid = make_grid(20).unwrap();
        let f = GridFunction::from_fn(grid.clone(), |t| t * t);
        assert_eq!(ise(&f, &f).unwrap(), 0.0);
        let zero = GridFunction::zero(grid);
        let norm_sq = inner_product(&f, &f).unwrap();
        assert!((ise(&f, &zero).unwrap() - norm_sq).abs() < 1e-15);
    }

    #[test]
    fn design_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = LinearSimConfig::new(1, 3, 2, 0.0, 0);
        assert!(gen_linear(&cfg, &mut rng).is_err());
        let cfg = LinearSimConfig::new(10, 0, 2, 0.0, 0);
        assert!(gen_linear(&cfg, &mut rng).is_err());
        let cfg = LinearSimConfig::new(10, 101, 2, 0.0, 0);
        assert!(gen_linear(&cfg, &mut rng).is_err());
        let mut cfg = LogisticSimConfig::new(10, 3, 2, 0);
        cfg.p0 = 1.0;
        assert!(gen_logistic(&cfg, &mut rng).is_err());
    }
}
