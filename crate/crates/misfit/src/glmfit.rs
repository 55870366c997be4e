//! Complete-data regression on imputed basis scores.
//!
//! Once each subject has a full score vector, the scalar-on-function model
//! collapses to an ordinary regression of the outcome on `[1, ξ̃]`: least
//! squares for continuous outcomes and iteratively reweighted least squares
//! for binary ones. The fitted coefficients map back to a coefficient
//! function `β̂(t) = Σ_j b̂_j v_j(t)` with a matching covariance surface.

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::dataset::{GridFunction, GridKernel};
use crate::error::{Error, Result};
use crate::fpca::EigenSystem;
use crate::impute::CompletedScoreData;
use crate::numerics::sigmoid;

/// Convergence tolerance on the largest absolute score-equation entry.
const GRAD_TOL: f64 = 1e-8;
/// Iteration budget for the logistic fit.
const MAX_ITER: usize = 50;
/// Maximum number of step halvings before giving up on an iteration.
const MAX_HALVINGS: usize = 20;
/// Linear predictor magnitude beyond which a class counts as pushed to its
/// boundary when detecting separation.
const SEPARATION_ETA: f64 = 30.0;

// ---------------------------------------------------------------------------
// Fit container
// ---------------------------------------------------------------------------

/// Coefficients of a regression of the outcome on `[1, ξ̃_1, …, ξ̃_J]`,
/// with their estimated covariance.
#[derive(Debug, Clone)]
pub struct CompleteDataFit {
    /// Intercept coefficient.
    pub intercept: f64,
    /// Score coefficients `b̂_1..b̂_J`.
    pub coefs: Vec<f64>,
    /// `(J+1) × (J+1)` covariance of `(intercept, coefs)`.
    pub coef_cov: DMatrix<f64>,
    /// Whether the fitting iteration met its tolerance (always true for
    /// closed-form fits).
    pub converged: bool,
    /// Number of iterations spent (0 for closed-form fits).
    pub iterations: usize,
}

impl CompleteDataFit {
    /// Number of score coefficients.
    pub fn ncomp(&self) -> usize {
        self.coefs.len()
    }

    /// Serializes the fit as a JSON object with keys `intercept`, `coefs`,
    /// `coef_cov` (row-major), `converged`, `iterations`.
    pub fn to_json(&self) -> String {
        let p = self.coef_cov.nrows();
        let cov_rows: Vec<Vec<f64>> =
            (0..p).map(|r| (0..p).map(|c| self.coef_cov[(r, c)]).collect()).collect();
        json!({
            "intercept": self.intercept,
            "coefs": self.coefs,
            "coef_cov": cov_rows,
            "converged": self.converged,
            "iterations": self.iterations,
        })
        .to_string()
    }
}

// ---------------------------------------------------------------------------
// Shared design handling
// ---------------------------------------------------------------------------

/// Design matrix `[1, ξ̃]` with exactly-zero score columns dropped.
///
/// A column of all zeros carries no information and would only make the
/// normal equations singular; its coefficient is reported as zero with zero
/// variance. Any other exact collinearity is an error.
struct Design {
    x: DMatrix<f64>,
    /// For each kept column of `x`, its index in the full `(J+1)`-vector.
    kept: Vec<usize>,
    ncols_full: usize,
}

impl Design {
    fn new(data: &CompletedScoreData) -> Result<Self> {
        let n = data.len();
        let j = data.ncomp();
        if n == 0 {
            return Err(Error::Empty("no subjects in the completed dataset".into()));
        }
        let mut kept = vec![0usize];
        for c in 0..j {
            if (0..n).any(|r| data.scores[(r, c)] != 0.0) {
                kept.push(c + 1);
            }
        }
        let mut x = DMatrix::zeros(n, kept.len());
        for (dst, &src) in kept.iter().enumerate() {
            for r in 0..n {
                x[(r, dst)] = if src == 0 { 1.0 } else { data.scores[(r, src - 1)] };
            }
        }
        Ok(Self { x, kept, ncols_full: j + 1 })
    }

    /// Scatters reduced-design coefficients back into a full-length vector.
    fn expand_coefs(&self, reduced: &DVector<f64>) -> Vec<f64> {
        let mut full = vec![0.0; self.ncols_full];
        for (src, &dst) in self.kept.iter().enumerate() {
            full[dst] = reduced[src];
        }
        full
    }

    /// Scatters a reduced covariance back into the full `(J+1)²` matrix,
    /// leaving rows and columns of dropped score columns at zero.
    fn expand_cov(&self, reduced: &DMatrix<f64>) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(self.ncols_full, self.ncols_full);
        for (ra, &fa) in self.kept.iter().enumerate() {
            for (rb, &fb) in self.kept.iter().enumerate() {
                full[(fa, fb)] = reduced[(ra, rb)];
            }
        }
        full
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for a in 0..n {
        for b in (a + 1)..n {
            let avg = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = avg;
            m[(b, a)] = avg;
        }
    }
}

// ---------------------------------------------------------------------------
// Linear model
// ---------------------------------------------------------------------------

/// Least-squares fit of the outcome on the completed scores.
///
/// Solved through a QR factorization of the design; the coefficient
/// covariance is `σ̂² (XᵀX)⁻¹` with `σ̂²` the residual mean square on
/// `N − J − 1` degrees of freedom.
pub fn fit_linear_scores(data: &CompletedScoreData) -> Result<CompleteDataFit> {
    let n = data.len();
    let j = data.ncomp();
    if n <= j + 1 {
        return Err(Error::SingularDesign(format!(
            "need more subjects than coefficients: N = {n}, J + 1 = {}",
            j + 1
        )));
    }
    let design = Design::new(data)?;
    let p = design.x.ncols();
    let y = DVector::from_column_slice(&data.outcomes);

    let qr = design.x.clone().qr();
    let r = qr.r();
    let mut r_max = 0.0f64;
    let mut r_min = f64::INFINITY;
    for d in 0..p {
        let v = r[(d, d)].abs();
        r_max = r_max.max(v);
        r_min = r_min.min(v);
    }
    if r_min <= 1e-10 * r_max {
        return Err(Error::SingularDesign(
            "completed score design has collinear columns".into(),
        ));
    }
    let qty = qr.q().transpose() * &y;
    let coefs = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign("triangular factor is singular".into()))?;

    let resid = &y - &design.x * &coefs;
    let sigma_sq = resid.norm_squared() / (n - j - 1) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::SingularDesign("triangular factor is singular".into()))?;
    let mut cov = sigma_sq * (&r_inv * r_inv.transpose());
    symmetrize(&mut cov);

    let full = design.expand_coefs(&coefs);
    Ok(CompleteDataFit {
        intercept: full[0],
        coefs: full[1..].to_vec(),
        coef_cov: design.expand_cov(&cov),
        converged: true,
        iterations: 0,
    })
}

// ---------------------------------------------------------------------------
// Logistic model
// ---------------------------------------------------------------------------

/// Log-likelihood `Σ yη − log(1 + e^η)`, with the softplus evaluated stably.
fn log_likelihood(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..y.len() {
        let e = eta[i];
        acc += y[i] * e - (e.max(0.0) + (-e.abs()).exp().ln_1p());
    }
    acc
}

/// Whether every subject of one class sits beyond the separation threshold
/// on its own side of the linear predictor.
fn class_pushed_out(y: &DVector<f64>, eta: &DVector<f64>) -> bool {
    let mut ones_out = true;
    let mut zeros_out = true;
    let mut seen_one = false;
    let mut seen_zero = false;
    for i in 0..y.len() {
        if y[i] == 1.0 {
            seen_one = true;
            ones_out &= eta[i] > SEPARATION_ETA;
        } else {
            seen_zero = true;
            zeros_out &= eta[i] < -SEPARATION_ETA;
        }
    }
    (seen_one && ones_out) || (seen_zero && zeros_out)
}

/// Maximum-likelihood logistic fit of the outcome on the completed scores.
///
/// Newton iterations with step halving keep the log-likelihood nondecreasing;
/// the coefficient covariance is the inverse observed information at the
/// optimum. Runaway linear predictors for an entire class are reported as
/// [`Error::Separation`] instead of letting the coefficients diverge.
pub fn fit_logistic_scores(data: &CompletedScoreData) -> Result<CompleteDataFit> {
    let n = data.len();
    let j = data.ncomp();
    if n <= j + 1 {
        return Err(Error::SingularDesign(format!(
            "need more subjects than coefficients: N = {n}, J + 1 = {}",
            j + 1
        )));
    }
    let y = DVector::from_column_slice(&data.outcomes);
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::DegenerateOutcome(format!(
            "logistic fit needs both outcome classes: all {n} outcomes are {}",
            if ones == 0 { 0 } else { 1 }
        )));
    }
    let design = Design::new(data)?;
    let p = design.x.ncols();

    let ybar = ones as f64 / n as f64;
    let mut theta = DVector::zeros(p);
    theta[0] = (ybar / (1.0 - ybar)).ln();
    let mut eta = &design.x * &theta;
    let mut lik = log_likelihood(&y, &eta);

    for iter in 1..=MAX_ITER {
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            let wi = pi * (1.0 - pi);
            let xi = design.x.row(i).transpose();
            grad += (y[i] - pi) * &xi;
            info.ger(wi, &xi, &xi, 1.0);
        }
        let grad_norm = grad.amax();
        if grad_norm < GRAD_TOL {
            symmetrize(&mut info);
            let cov = info.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
                Error::SingularDesign("observed information is singular at the optimum".into())
            })?;
            let mut cov = cov;
            symmetrize(&mut cov);
            let full = design.expand_coefs(&theta);
            return Ok(CompleteDataFit {
                intercept: full[0],
                coefs: full[1..].to_vec(),
                coef_cov: design.expand_cov(&cov),
                converged: true,
                iterations: iter - 1,
            });
        }
        symmetrize(&mut info);
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or_else(|| {
                // The curvature flattens exactly when the predictors run
                // away; distinguish separation from a genuinely collinear
                // design.
                if class_pushed_out(&y, &eta) {
                    Error::Separation { iterations: iter }
                } else {
                    Error::SingularDesign("observed information is singular".into())
                }
            })?;

        let mut scale = 1.0;
        let mut accepted = false;
        // Near the optimum the Newton improvement drops below the resolution
        // of the log-likelihood itself; accepting within roundoff keeps the
        // ascent property without stalling the endgame.
        let lik_tol = 1e-12 * (1.0 + lik.abs());
        for _ in 0..=MAX_HALVINGS {
            let cand = &theta + scale * &step;
            let cand_eta = &design.x * &cand;
            let cand_lik = log_likelihood(&y, &cand_eta);
            if cand_lik >= lik - lik_tol {
                theta = cand;
                eta = cand_eta;
                lik = cand_lik;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NotConverged { iterations: iter, grad_norm });
        }
        if class_pushed_out(&y, &eta) {
            return Err(Error::Separation { iterations: iter });
        }
    }

    // One final gradient evaluation decides between convergence on the
    // last step and an exhausted budget.
    let mut grad = DVector::zeros(p);
    for i in 0..n {
        let pi = sigmoid(eta[i]);
        grad += (y[i] - pi) * design.x.row(i).transpose();
    }
    Err(Error::NotConverged { iterations: MAX_ITER, grad_norm: grad.amax() })
}

// ---------------------------------------------------------------------------
// Moment estimator
// ---------------------------------------------------------------------------

/// Plug-in moment estimator for continuous outcomes:
/// `b̂_j = Σ_i (ξ̃_ij − ξ̄_j) Y_i / (N λ_j)`, with the intercept chosen so the
/// fit passes through the sample means.
///
/// This is the direct basis-coefficient estimate of the cross-moment
/// `E[Y ⟨X − μ_X, v_j⟩] / λ_j`; it is provided for comparison because it
/// inherits the full shrinkage of mean-imputed scores. The covariance is the
/// first-order (influence-function) estimate, which is positive
/// semi-definite by construction.
pub fn fit_moment_scores(data: &CompletedScoreData, eig: &EigenSystem) -> Result<CompleteDataFit> {
    let n = data.len();
    let j = data.ncomp();
    if j != eig.ncomp() {
        return Err(Error::InvalidInput(format!(
            "completed data carries {j} score columns but the eigensystem has {}",
            eig.ncomp()
        )));
    }
    if n <= j + 1 {
        return Err(Error::SingularDesign(format!(
            "need more subjects than coefficients: N = {n}, J + 1 = {}",
            j + 1
        )));
    }
    let nf = n as f64;
    let y = &data.outcomes;
    let ybar = y.iter().sum::<f64>() / nf;
    let score_bar: Vec<f64> =
        (0..j).map(|c| (0..n).map(|r| data.scores[(r, c)]).sum::<f64>() / nf).collect();

    let mut coefs = vec![0.0; j];
    for c in 0..j {
        let s: f64 = (0..n).map(|r| (data.scores[(r, c)] - score_bar[c]) * y[r]).sum();
        coefs[c] = s / (nf * eig.lambda()[c]);
    }
    let intercept =
        ybar - coefs.iter().zip(&score_bar).map(|(b, m)| b * m).sum::<f64>();

    // Per-subject influence of (intercept, b): stacking them gives a
    // covariance estimate that needs no model for the score distribution.
    let mut cov = DMatrix::zeros(j + 1, j + 1);
    let mut phi = DVector::zeros(j + 1);
    for r in 0..n {
        let dy = y[r] - ybar;
        let mut alpha_inf = dy;
        for c in 0..j {
            let ds = data.scores[(r, c)] - score_bar[c];
            let psi = ds * dy / eig.lambda()[c] - coefs[c];
            phi[c + 1] = psi;
            alpha_inf -= score_bar[c] * psi + coefs[c] * ds;
        }
        phi[0] = alpha_inf;
        cov.ger(1.0 / (nf * nf), &phi, &phi, 1.0);
    }
    symmetrize(&mut cov);

    Ok(CompleteDataFit { intercept, coefs, coef_cov: cov, converged: true, iterations: 0 })
}

// ---------------------------------------------------------------------------
// Back to function space
// ---------------------------------------------------------------------------

/// Expands fitted score coefficients into the coefficient function
/// `β̂(t) = Σ_j b̂_j v_j(t)` and its covariance surface
/// `cov(t, s) = v(t)ᵀ Cov(b̂) v(s)`, passing the intercept through.
pub fn coef_to_beta(
    fit: &CompleteDataFit,
    eig: &EigenSystem,
) -> Result<(GridFunction, GridKernel, f64)> {
    if !fit.converged {
        return Err(Error::InvalidInput(
            "coefficients from an unconverged fit cannot be mapped to a coefficient function".into(),
        ));
    }
    let j = fit.ncomp();
    if j != eig.ncomp() {
        return Err(Error::InvalidInput(format!(
            "fit carries {j} coefficients but the eigensystem has {} components",
            eig.ncomp()
        )));
    }
    let grid = eig.grid().clone();
    let m = grid.len();

    let mut beta_vals = vec![0.0; m];
    for (c, &b) in fit.coefs.iter().enumerate() {
        for (idx, v) in eig.functions()[c].values().iter().enumerate() {
            beta_vals[idx] += b * v;
        }
    }
    let beta = GridFunction::new(grid.clone(), beta_vals)?;

    // v(t)ᵀ C_b v(s) from the score block of the coefficient covariance.
    let mut vmat = DMatrix::zeros(m, j);
    for c in 0..j {
        for (idx, v) in eig.functions()[c].values().iter().enumerate() {
            vmat[(idx, c)] = *v;
        }
    }
    let block = fit.coef_cov.view((1, 1), (j, j)).into_owned();
    let mut cov = &vmat * block * vmat.transpose();
    symmetrize(&mut cov);
    let kernel = GridKernel::new(grid, cov)?;
    Ok((beta, kernel, fit.intercept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_grid;
    use crate::fpca::eigendecompose;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn completed(scores: DMatrix<f64>, outcomes: Vec<f64>) -> CompletedScoreData {
        CompletedScoreData { scores, outcomes, imputation_index: 1 }
    }

    fn random_scores(n: usize, j: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, j, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn exact_linear_relationship_is_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scores = random_scores(30, 3, &mut rng);
        let y: Vec<f64> = (0..30).map(|i| 1.0 + 2.0 * scores[(i, 0)]).collect();
        let fit = fit_linear_scores(&completed(scores, y)).unwrap();
        assert!((fit.intercept - 1.0).abs() <= 1e-10);
        assert!((fit.coefs[0] - 2.0).abs() <= 1e-10);
        assert!(fit.coefs[1].abs() <= 1e-10);
        assert!(fit.coefs[2].abs() <= 1e-10);
        assert!(fit.converged);
    }

    /// Normal equations assembled with compensated (Neumaier) summation and
    /// solved by full-pivot Gaussian elimination — an algorithmically
    /// independent route to the least-squares solution.
    fn normal_equation_oracle(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
        fn dot(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64>) -> f64 {
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            for (u, v) in a.zip(b) {
                let term = u * v;
                let t = sum + term;
                comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
                sum = t;
            }
            sum + comp
        }
        let p = x.ncols();
        let mut a = DMatrix::zeros(p, p + 1);
        for r in 0..p {
            for c in 0..p {
                a[(r, c)] = dot(x.column(r).iter().copied(), x.column(c).iter().copied());
            }
            a[(r, p)] = dot(x.column(r).iter().copied(), y.iter().copied());
        }
        // Gaussian elimination with partial pivoting on the augmented system.
        let mut rows: Vec<usize> = (0..p).collect();
        for col in 0..p {
            let (piv, _) = rows[col..]
                .iter()
                .enumerate()
                .map(|(k, &r)| (k + col, a[(r, col)].abs()))
                .max_by(|l, r| l.1.total_cmp(&r.1))
                .unwrap();
            rows.swap(col, piv);
            for &r in &rows[col + 1..] {
                let f = a[(r, col)] / a[(rows[col], col)];
                for c in col..=p {
                    let v = a[(rows[col], c)];
                    a[(r, c)] -= f * v;
                }
            }
        }
        let mut sol = DVector::zeros(p);
        for col in (0..p).rev() {
            let mut v = a[(rows[col], p)];
            for c in col + 1..p {
                v -= a[(rows[col], c)] * sol[c];
            }
            sol[col] = v / a[(rows[col], col)];
        }
        sol
    }

    #[test]
    fn least_squares_matches_the_normal_equation_oracle() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let scores = random_scores(n, 3, &mut rng);
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    0.5 - scores[(i, 0)] + 0.3 * scores[(i, 2)] + rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let data = completed(scores.clone(), y.clone());
            let fit = fit_linear_scores(&data).unwrap();

            let x = scores.insert_column(0, 1.0);
            let oracle = normal_equation_oracle(&x, &y);
            assert!((fit.intercept - oracle[0]).abs() <= 1e-9 * (1.0 + oracle[0].abs()));
            for c in 0..3 {
                assert!(
                    (fit.coefs[c] - oracle[c + 1]).abs() <= 1e-9 * (1.0 + oracle[c + 1].abs()),
                    "seed {seed} coef {c}"
                );
            }
        }
    }

    #[test]
    fn constant_outcome_fits_with_zero_residual_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores = random_scores(25, 2, &mut rng);
        let fit = fit_linear_scores(&completed(scores, vec![4.0; 25])).unwrap();
        assert!((fit.intercept - 4.0).abs() <= 1e-10);
        for b in &fit.coefs {
            assert!(b.abs() <= 1e-10);
        }
        assert!(fit.coef_cov.amax() <= 1e-20);
    }

    #[test]
    fn residuals_are_orthogonal_to_the_design() {
        for seed in 20..25u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 50;
            let scores = random_scores(n, 4, &mut rng);
            let y: Vec<f64> =
                (0..n).map(|i| scores[(i, 1)] + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let data = completed(scores.clone(), y.clone());
            let fit = fit_linear_scores(&data).unwrap();
            let x = scores.insert_column(0, 1.0);
            let mut coef = DVector::zeros(5);
            coef[0] = fit.intercept;
            for c in 0..4 {
                coef[c + 1] = fit.coefs[c];
            }
            let resid = DVector::from_column_slice(&y) - &x * coef;
            let ynorm = DVector::from_column_slice(&y).norm();
            let back = x.transpose() * resid;
            assert!(back.amax() <= 1e-8 * ynorm, "seed {seed}");
        }
    }

    #[test]
    fn too_few_subjects_or_collinear_columns_are_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores = random_scores(3, 3, &mut rng);
        let err = fit_linear_scores(&completed(scores, vec![1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::SingularDesign(_)));

        let mut scores = random_scores(20, 2, &mut rng);
        for r in 0..20 {
            scores[(r, 1)] = 3.0 * scores[(r, 0)];
        }
        let y: Vec<f64> = (0..20).map(|i| scores[(i, 0)]).collect();
        let err = fit_linear_scores(&completed(scores, y)).unwrap_err();
        assert!(matches!(err, Error::SingularDesign(_)));
    }

    #[test]
    fn all_zero_covariates_reduce_to_the_closed_form_null_model() {
        let n = 20;
        let scores = DMatrix::zeros(n, 2);
        let y: Vec<f64> = (0..n).map(|i| f64::from(i < 6)).collect();
        let fit = fit_logistic_scores(&completed(scores, y)).unwrap();
        let expect = (0.3f64 / 0.7).ln();
        assert!((fit.intercept - expect).abs() <= 1e-8);
        assert_eq!(fit.coefs, vec![0.0, 0.0]);
        assert!(fit.converged);
        // Dropped columns keep zero variance.
        assert_eq!(fit.coef_cov[(1, 1)], 0.0);
        assert!(fit.coef_cov[(0, 0)] > 0.0);
    }

    /// Coarse-to-fine grid search for the two-parameter logistic likelihood,
    /// refined down to step 1e-4.
    fn grid_search_logistic(scores: &DMatrix<f64>, y: &[f64]) -> (f64, f64) {
        let lik = |a: f64, b: f64| -> f64 {
            let mut acc = 0.0;
            for i in 0..y.len() {
                let eta = a + b * scores[(i, 0)];
                acc += y[i] * eta - (eta.max(0.0) + (-eta.abs()).exp().ln_1p());
            }
            acc
        };
        let (mut a0, mut b0) = (0.0, 0.0);
        let mut half: f64 = 4.0;
        let mut step: f64 = 0.05;
        loop {
            let n_steps = (2.0 * half / step).round() as i64;
            let mut best = (f64::NEG_INFINITY, a0, b0);
            for ia in 0..=n_steps {
                let a = a0 - half + ia as f64 * step;
                for ib in 0..=n_steps {
                    let b = b0 - half + ib as f64 * step;
                    let l = lik(a, b);
                    if l > best.0 {
                        best = (l, a, b);
                    }
                }
            }
            a0 = best.1;
            b0 = best.2;
            if step <= 1e-4 {
                return (a0, b0);
            }
            half = 4.0 * step;
            step /= 10.0;
        }
    }

    #[test]
    fn logistic_fit_matches_a_grid_search_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 20;
        let scores = random_scores(n, 1, &mut rng);
        let y: Vec<f64> = (0..n)
            .map(|i| f64::from(rng.random::<f64>() < sigmoid(0.4 + 0.8 * scores[(i, 0)])))
            .collect();
        assert!(y.iter().any(|&v| v == 0.0) && y.iter().any(|&v| v == 1.0));
        let fit = fit_logistic_scores(&completed(scores.clone(), y.clone())).unwrap();
        let (a, b) = grid_search_logistic(&scores, &y);
        assert!((fit.intercept - a).abs() <= 2e-4, "intercept {} vs {a}", fit.intercept);
        assert!((fit.coefs[0] - b).abs() <= 2e-4, "slope {} vs {b}", fit.coefs[0]);
    }

    #[test]
    fn perfectly_separated_classes_are_reported() {
        // Two tight clusters with a wide margin: the coefficient diverges and
        // an entire class is pushed beyond the linear-predictor threshold
        // while the score equations are still far from solved.
        let n = 30;
        let scores = DMatrix::from_fn(n, 1, |r, _| if r < 15 { -1e6 } else { 1e6 });
        let y: Vec<f64> = (0..n).map(|r| f64::from(r >= 15)).collect();
        let err = fit_logistic_scores(&completed(scores, y)).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "got {err:?}");
    }

    #[test]
    fn single_class_outcomes_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scores = random_scores(15, 1, &mut rng);
        let err = fit_logistic_scores(&completed(scores, vec![1.0; 15])).unwrap_err();
        assert!(matches!(err, Error::DegenerateOutcome(_)));
    }

    #[test]
    fn logistic_covariance_is_the_inverse_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 200;
        let scores = random_scores(n, 2, &mut rng);
        let y: Vec<f64> = (0..n)
            .map(|i| f64::from(rng.random::<f64>() < sigmoid(-0.2 + scores[(i, 0)])))
            .collect();
        let fit = fit_logistic_scores(&completed(scores.clone(), y)).unwrap();
        // Rebuild the information at the reported optimum and invert it.
        let x = scores.insert_column(0, 1.0);
        let mut theta = DVector::zeros(3);
        theta[0] = fit.intercept;
        theta[1] = fit.coefs[0];
        theta[2] = fit.coefs[1];
        let eta = &x * &theta;
        let mut info = DMatrix::zeros(3, 3);
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let xi = x.row(i).transpose();
            info.ger(p * (1.0 - p), &xi, &xi, 1.0);
        }
        let inv = info.try_inverse().unwrap();
        let diff = (&fit.coef_cov - &inv).amax();
        assert!(diff <= 1e-8 * (1.0 + inv.amax()));
    }

    fn two_component_system() -> (EigenSystem, crate::dataset::Grid) {
        let grid = make_grid(41).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut vals = DMatrix::zeros(grid.len(), grid.len());
        for scale in [1.2, 0.4] {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let g = GridFunction::from_fn(grid.clone(), |t| {
                a * (std::f64::consts::TAU * t).sin() + b * t
            });
            let gv = DVector::from_column_slice(g.values());
            vals.ger(scale, &gv, &gv, 1.0);
        }
        for d in 0..grid.len() {
            vals[(d, d)] += 0.02;
        }
        let kernel = GridKernel::new(grid.clone(), vals).unwrap();
        (eigendecompose(&kernel, 2).unwrap(), grid)
    }

    #[test]
    fn unit_coefficients_sum_the_basis_functions() {
        let (eig, grid) = two_component_system();
        let fit = CompleteDataFit {
            intercept: 0.7,
            coefs: vec![1.0, 1.0],
            coef_cov: DMatrix::zeros(3, 3),
            converged: true,
            iterations: 0,
        };
        let (beta, cov, intercept) = coef_to_beta(&fit, &eig).unwrap();
        assert_eq!(intercept, 0.7);
        for (idx, _) in grid.points().iter().enumerate() {
            let expect = eig.functions()[0].values()[idx] + eig.functions()[1].values()[idx];
            assert!((beta.values()[idx] - expect).abs() <= 1e-12);
        }
        assert_eq!(cov.values().amax(), 0.0);
    }

    #[test]
    fn beta_covariance_diagonal_is_nonnegative_for_random_psd_blocks() {
        let (eig, grid) = two_component_system();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let cov = &f * f.transpose();
            let fit = CompleteDataFit {
                intercept: 0.0,
                coefs: vec![0.3, -0.2],
                coef_cov: cov,
                converged: true,
                iterations: 0,
            };
            let (_, kernel, _) = coef_to_beta(&fit, &eig).unwrap();
            for idx in 0..grid.len() {
                assert!(kernel.values()[(idx, idx)] >= -1e-12);
            }
        }
    }

    #[test]
    fn coefficient_to_function_map_is_linear() {
        let (eig, _) = two_component_system();
        let base = CompleteDataFit {
            intercept: 0.0,
            coefs: vec![0.4, -1.1],
            coef_cov: DMatrix::zeros(3, 3),
            converged: true,
            iterations: 0,
        };
        let doubled = CompleteDataFit { coefs: vec![0.8, -2.2], ..base.clone() };
        let (b1, _, _) = coef_to_beta(&base, &eig).unwrap();
        let (b2, _, _) = coef_to_beta(&doubled, &eig).unwrap();
        for (a, b) in b1.values().iter().zip(b2.values()) {
            assert!((2.0 * a - b).abs() <= 1e-12);
        }

        let unconverged = CompleteDataFit { converged: false, ..base };
        assert!(coef_to_beta(&unconverged, &eig).is_err());
    }

    #[test]
    fn moment_estimator_recovers_coefficients_in_the_exact_model() {
        let (eig, _) = two_component_system();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 4000;
        let (l1, l2) = (eig.lambda()[0], eig.lambda()[1]);
        let mut scores = DMatrix::zeros(n, 2);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let s1 = l1.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let s2 = l2.sqrt() * rng.sample::<f64, _>(StandardNormal);
            scores[(i, 0)] = s1;
            scores[(i, 1)] = s2;
            y.push(0.3 + 1.5 * s1 - 0.7 * s2 + 0.2 * rng.sample::<f64, _>(StandardNormal));
        }
        let fit = fit_moment_scores(&completed(scores, y), &eig).unwrap();
        assert!((fit.coefs[0] - 1.5).abs() <= 0.1, "b1 {}", fit.coefs[0]);
        assert!((fit.coefs[1] + 0.7).abs() <= 0.1, "b2 {}", fit.coefs[1]);
        assert!((fit.intercept - 0.3).abs() <= 0.1);
        // The influence-based covariance is PSD and shrinks like 1/N.
        let chol = fit.coef_cov.clone().cholesky();
        assert!(chol.is_some() || fit.coef_cov.amax() <= 1e-12);
        assert!(fit.coef_cov[(1, 1)] <= 0.01);
    }

    #[test]
    fn fit_json_exposes_all_fields() {
        let fit = CompleteDataFit {
            intercept: 0.25,
            coefs: vec![1.0, -2.0],
            coef_cov: DMatrix::identity(3, 3),
            converged: true,
            iterations: 4,
        };
        let text = fit.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["intercept"], 0.25);
        assert_eq!(value["coefs"][1], -2.0);
        assert_eq!(value["coef_cov"][0][0], 1.0);
        assert_eq!(value["converged"], true);
        assert_eq!(value["iterations"], 4);
    }
}
