//! Pooling of repeated-imputation fits and a norm test for the slope curve.
//!
//! Each imputed dataset yields one slope-curve estimate with a covariance
//! surface. [`rubin_pool`] combines the `K` estimates: the pooled curve is
//! the average, and the pooled covariance adds the average within-fit
//! covariance to the between-fit scatter inflated by `1 + 1/K`.
//!
//! The global null hypothesis "the slope curve is identically zero" is
//! tested through the squared norm `T = ∫ β̄(t)² dt`. Under the null, `T`
//! is approximately a weighted sum of independent chi-square variables
//! whose weights are the eigenvalues of the pooled covariance operator
//! ([`null_weights`]); the tail probability of that mixture is computed by
//! numerically inverting its characteristic function ([`imhof_pvalue`]).

use nalgebra::{DMatrix, DVector};

use crate::dataset::{inner_product, GridFunction, GridKernel};
use crate::error::{Error, Result};
use crate::fpca;
use crate::numerics;

/// Eigenvalues this far below the largest are treated as numerical rank
/// deficiency and excluded from the null spectrum.
pub const NULL_RANK_TOL: f64 = 1e-10;

/// Coverage level used for the confidence bands stored in a [`PooledFit`]
/// built by [`PooledFit::from_fits`].
pub const DEFAULT_BAND_LEVEL: f64 = 0.95;

/// Pointwise quantities combined across the `K` completed-data fits.
///
/// Produced by [`rubin_pool`]; carries the pooled curve and the three
/// covariance surfaces (within, between, total) but not yet the test
/// statistic or bands — call [`RubinPool::finalize`] for a full
/// [`PooledFit`].
#[derive(Debug, Clone)]
pub struct RubinPool {
    beta_bar: GridFunction,
    within: GridKernel,
    between: GridKernel,
    c_beta: GridKernel,
    k: usize,
}

impl RubinPool {
    /// Pooled slope curve (average of the completed-data estimates).
    pub fn beta_bar(&self) -> &GridFunction {
        &self.beta_bar
    }

    /// Average of the completed-data covariance surfaces.
    pub fn within(&self) -> &GridKernel {
        &self.within
    }

    /// Scatter of the completed-data estimates around their average,
    /// normalised by `K - 1`. Identically zero when `K = 1`.
    pub fn between(&self) -> &GridKernel {
        &self.between
    }

    /// Total covariance `within + (1 + 1/K) · between`.
    pub fn c_beta(&self) -> &GridKernel {
        &self.c_beta
    }

    /// Number of completed-data fits that were pooled.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Compute the norm statistic, its null tail probability, and pointwise
    /// bands at coverage `level`, yielding a complete [`PooledFit`].
    pub fn finalize(self, level: f64) -> Result<PooledFit> {
        let t_stat = norm_statistic(&self.beta_bar);
        let weights = null_weights(&self.c_beta, NULL_RANK_TOL)?;
        let p_value = imhof_pvalue(&weights, t_stat)?;
        let (lower, upper) = bands_from(&self.beta_bar, &self.c_beta, level)?;
        Ok(PooledFit {
            beta_bar: self.beta_bar,
            within: self.within,
            between: self.between,
            c_beta: self.c_beta,
            k: self.k,
            t_stat,
            p_value,
            lower,
            upper,
        })
    }
}

/// Combine `K` completed-data fits `(slope curve, covariance surface)`.
///
/// The pooled curve is the plain average. The within surface averages the
/// `K` covariances; the between surface is the sample covariance of the
/// curves (zero when `K = 1`); the total is
/// `within + (1 + 1/K) · between`.
///
/// Errors: [`Error::Empty`] when no fits are given, [`Error::GridMismatch`]
/// when the fits do not share one grid.
pub fn rubin_pool(fits: &[(GridFunction, GridKernel)]) -> Result<RubinPool> {
    let k = fits.len();
    if k == 0 {
        return Err(Error::Empty("no completed-data fits to pool".into()));
    }
    let grid = fits[0].0.grid().clone();
    for (beta, cov) in fits {
        if beta.grid() != &grid || cov.grid() != &grid {
            return Err(Error::GridMismatch("pooled fits must share one grid".into()));
        }
    }
    let m = grid.len();
    let kf = k as f64;

    let mut mean = DVector::<f64>::zeros(m);
    let mut within = DMatrix::<f64>::zeros(m, m);
    for (beta, cov) in fits {
        mean += DVector::from_column_slice(beta.values());
        within += cov.values();
    }
    mean /= kf;
    within /= kf;

    let mut between = DMatrix::<f64>::zeros(m, m);
    if k > 1 {
        for (beta, _) in fits {
            let dev = DVector::from_column_slice(beta.values()) - &mean;
            between.ger(1.0 / (kf - 1.0), &dev, &dev, 1.0);
        }
    }
    let c_beta = &within + (1.0 + 1.0 / kf) * &between;

    Ok(RubinPool {
        beta_bar: GridFunction::new(grid.clone(), mean.as_slice().to_vec())?,
        within: GridKernel::new(grid.clone(), within)?,
        between: GridKernel::new(grid.clone(), between)?,
        c_beta: GridKernel::new(grid, c_beta)?,
        k,
    })
}

/// Squared norm of the curve under the grid's quadrature rule,
/// `T = Σ_k w_k β(t_k)²`. The regression intercept plays no part in this
/// statistic; it measures the curve alone.
pub fn norm_statistic(beta: &GridFunction) -> f64 {
    inner_product(beta, beta).expect("a function shares its own grid")
}

/// Eigenvalues of the covariance operator that drive the null distribution
/// of the norm statistic.
///
/// These are the eigenvalues of the quadrature-weighted surface, kept while
/// they exceed `rank_tol` times the largest. Errors with
/// [`Error::EmptySpectrum`] when the surface has no positive eigenvalue.
pub fn null_weights(c_beta: &GridKernel, rank_tol: f64) -> Result<Vec<f64>> {
    let spectrum = fpca::weighted_spectrum(c_beta);
    let lambda_max = spectrum.first().copied().unwrap_or(0.0);
    if !(lambda_max > 0.0) {
        return Err(Error::EmptySpectrum(
            "covariance surface has no positive eigenvalue".into(),
        ));
    }
    Ok(spectrum.into_iter().take_while(|&v| v > rank_tol * lambda_max).collect())
}

/// Envelope below which the inversion integrand is truncated outright.
const IMHOF_TRUNC_ENV: f64 = 1e-12;
/// Envelope below which the oscillatory remainder is integrated by parts
/// instead of by quadrature.
const IMHOF_HEAD_ENV: f64 = 1e-6;
/// Absolute tolerance passed to the adaptive quadrature over the head.
const IMHOF_QUAD_TOL: f64 = 3e-7;

/// Characteristic-function inversion integrand for a weighted chi-square sum.
struct Inversion<'a> {
    weights: &'a [f64],
    half_t: f64,
}

impl Inversion<'_> {
    /// Phase `θ(u) = ½ Σ atan(λ_i u) − ½ t u`.
    fn theta(&self, u: f64) -> f64 {
        let s: f64 = self.weights.iter().map(|&w| (w * u).atan()).sum();
        0.5 * s - self.half_t * u
    }

    /// The part of `θ'` contributed by the weights; positive, decreasing.
    fn phase_rate(&self, u: f64) -> f64 {
        0.5 * self.weights.iter().map(|&w| w / (1.0 + (w * u).powi(2))).sum::<f64>()
    }

    fn theta_prime(&self, u: f64) -> f64 {
        self.phase_rate(u) - self.half_t
    }

    fn theta_second(&self, u: f64) -> f64 {
        -self.weights.iter().map(|&w| w.powi(3) * u / (1.0 + (w * u).powi(2)).powi(2)).sum::<f64>()
    }

    /// Decay envelope `1 / (u · Π (1 + λ_i²u²)^{1/4})`, computed in log
    /// space so large arguments cannot overflow.
    fn envelope(&self, u: f64) -> f64 {
        let log_rho: f64 =
            0.25 * self.weights.iter().map(|&w| (w * u).powi(2).ln_1p()).sum::<f64>();
        (-u.ln() - log_rho).exp()
    }

    fn envelope_prime(&self, u: f64) -> f64 {
        let rel: f64 =
            0.5 * self.weights.iter().map(|&w| w * w * u / (1.0 + (w * u).powi(2))).sum::<f64>();
        -self.envelope(u) * (1.0 / u + rel)
    }

    /// The inversion integrand `sin(θ(u)) / (u ρ(u))`.
    fn integrand(&self, u: f64) -> f64 {
        self.theta(u).sin() * self.envelope(u)
    }

    /// Boundary functional of two integrations by parts: on any interval
    /// where `θ'` stays bounded away from zero,
    /// `∫_a^b sinθ/(uρ) du ≈ edge(a) − edge(b)` with a remainder of two
    /// orders higher decay than the envelope.
    fn edge(&self, u: f64) -> f64 {
        let g = self.envelope(u);
        let gp = self.envelope_prime(u);
        let tp = self.theta_prime(u);
        let tpp = self.theta_second(u);
        let bp = g / tp;
        let s = (gp * tp - g * tpp) / (tp * tp * tp);
        bp * self.theta(u).cos() - s * self.theta(u).sin()
    }

    /// Smallest power-of-two abscissa at which `pred` holds (the quantity
    /// tested is monotone decreasing in `u`).
    fn doubling_point(&self, pred: impl Fn(f64) -> bool) -> f64 {
        let mut u = 1.0;
        for _ in 0..600 {
            if pred(u) {
                return u;
            }
            u *= 2.0;
        }
        u
    }
}

/// Tail probability `P(Σ λ_i Z_i² > t)` for independent standard normal
/// `Z_i`, by numerical inversion of the characteristic function:
///
/// `p = ½ + (1/π) ∫₀^∞ sin θ(u) / (u ρ(u)) du`,
///
/// with `θ(u) = ½ Σ atan(λ_i u) − ½ t u` and
/// `ρ(u) = Π (1 + λ_i² u²)^{1/4}`.
///
/// The integral is truncated where the envelope `1/(u ρ(u))` falls below
/// `1e-12`. The head of the range is handled by adaptive quadrature; once
/// the envelope is small and the phase derivative is dominated by `t`, the
/// remaining oscillatory stretch is evaluated in closed form by a two-term
/// integration by parts. Absolute accuracy target: `1e-6`. The result is
/// clamped to `[0, 1]`.
///
/// Errors with [`Error::InvalidInput`] when `t` is not finite or when no
/// strictly positive weight is supplied.
pub fn imhof_pvalue(weights: &[f64], t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::InvalidInput("test statistic must be finite".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput("null spectrum weights must be finite and nonnegative".into()));
    }
    let mut positive: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::InvalidInput("need at least one positive null spectrum weight".into()));
    }
    // A nonnegative quadratic form exceeds any nonpositive threshold surely.
    if t <= 0.0 {
        return Ok(1.0);
    }
    // Normalise by the largest weight: the tail probability is invariant
    // under a joint rescaling of weights and threshold, and working on the
    // standardised problem keeps truncation thresholds meaningful for any
    // absolute scale.
    let scale = positive.iter().cloned().fold(0.0f64, f64::max);
    positive.iter_mut().for_each(|w| *w /= scale);
    let t = t / scale;

    let inv = Inversion { weights: &positive, half_t: 0.5 * t };
    let u_trunc = inv.doubling_point(|u| inv.envelope(u) < IMHOF_TRUNC_ENV);
    // Beyond `u_head` the phase rate of the weights is below `t/4`, so
    // `|θ'| ≥ t/4` and the integration-by-parts tail is well conditioned.
    let u_head = inv
        .doubling_point(|u| inv.envelope(u) < IMHOF_HEAD_ENV && inv.phase_rate(u) <= 0.25 * t)
        .min(u_trunc);

    let head = numerics::integrate(&|u| inv.integrand(u), 0.0, u_head, IMHOF_QUAD_TOL)?;
    let tail =
        if u_head < u_trunc { inv.edge(u_head) - inv.edge(u_trunc) } else { 0.0 };

    Ok((0.5 + (head + tail) / std::f64::consts::PI).clamp(0.0, 1.0))
}

/// Pointwise normal confidence bands `β̄(t) ± z · √C(t, t)` at coverage
/// `level`; negative diagonal entries are clipped to zero before the square
/// root.
pub fn pointwise_bands(
    pooled: &PooledFit,
    level: f64,
) -> Result<(GridFunction, GridFunction)> {
    bands_from(&pooled.beta_bar, &pooled.c_beta, level)
}

fn bands_from(
    beta: &GridFunction,
    c_beta: &GridKernel,
    level: f64,
) -> Result<(GridFunction, GridFunction)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("band level must lie in (0, 1), found {level}")));
    }
    let z = numerics::normal_quantile(0.5 * (1.0 + level))?;
    let grid = beta.grid().clone();
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for (i, &b) in beta.values().iter().enumerate() {
        let half = z * c_beta.values()[(i, i)].max(0.0).sqrt();
        lower.push(b - half);
        upper.push(b + half);
    }
    Ok((GridFunction::new(grid.clone(), lower)?, GridFunction::new(grid, upper)?))
}

/// A pooled slope-curve fit with its norm test and confidence bands.
#[derive(Debug, Clone)]
pub struct PooledFit {
    beta_bar: GridFunction,
    within: GridKernel,
    between: GridKernel,
    c_beta: GridKernel,
    k: usize,
    t_stat: f64,
    p_value: f64,
    lower: GridFunction,
    upper: GridFunction,
}

impl PooledFit {
    /// Pool `K` completed-data fits and run the norm test, with bands at
    /// the default coverage [`DEFAULT_BAND_LEVEL`].
    pub fn from_fits(fits: &[(GridFunction, GridKernel)]) -> Result<Self> {
        rubin_pool(fits)?.finalize(DEFAULT_BAND_LEVEL)
    }

    /// Pooled slope curve.
    pub fn beta_bar(&self) -> &GridFunction {
        &self.beta_bar
    }

    /// Average within-fit covariance surface.
    pub fn within(&self) -> &GridKernel {
        &self.within
    }

    /// Between-fit covariance surface (zero when `K = 1`).
    pub fn between(&self) -> &GridKernel {
        &self.between
    }

    /// Total pooled covariance surface.
    pub fn c_beta(&self) -> &GridKernel {
        &self.c_beta
    }

    /// Number of completed-data fits pooled.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Squared-norm statistic of the pooled curve.
    pub fn t_stat(&self) -> f64 {
        self.t_stat
    }

    /// Tail probability of the norm statistic under the zero-curve null.
    pub fn p_value(&self) -> f64 {
        self.p_value
    }

    /// Lower confidence band.
    pub fn lower(&self) -> &GridFunction {
        &self.lower
    }

    /// Upper confidence band.
    pub fn upper(&self) -> &GridFunction {
        &self.upper
    }

    /// JSON document with keys `beta_bar`, `C_beta` (row-major), `T`,
    /// `p_value`, `bands` (`lower`/`upper`), and `K`.
    pub fn to_json(&self) -> String {
        let m = self.beta_bar.grid().len();
        let mut c_flat = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                c_flat.push(self.c_beta.values()[(i, j)]);
            }
        }
        let doc = serde_json::json!({
            "beta_bar": self.beta_bar.values(),
            "C_beta": c_flat,
            "T": self.t_stat,
            "p_value": self.p_value,
            "bands": {
                "lower": self.lower.values(),
                "upper": self.upper.values(),
            },
            "K": self.k,
        });
        serde_json::to_string_pretty(&doc).expect("plain finite numbers serialize")
    }

    /// Write [`PooledFit::to_json`] to a file.
    pub fn write_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Write the pooled curve and its bands as CSV rows
    /// `t,beta,lower,upper`.
    pub fn write_beta_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::from("t,beta,lower,upper\n");
        for (i, &t) in self.beta_bar.grid().points().iter().enumerate() {
            let _ = writeln!(
                out,
                "{t},{},{},{}",
                self.beta_bar.values()[i],
                self.lower.values()[i],
                self.upper.values()[i]
            );
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
