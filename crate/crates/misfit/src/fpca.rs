//! Functional principal components of a covariance surface.
//!
//! The continuous eigenproblem `∫ C(t,s) v(s) ds = λ v(t)` is discretized
//! with the grid's quadrature weights: with `W = diag(w)` the symmetric
//! problem `W^{1/2} C W^{1/2} u = λ u` is solved and eigenvectors are mapped
//! back via `v = W^{-1/2} u`, so the recovered functions are orthonormal in
//! the quadrature inner product rather than the raw Euclidean one.
//!
//! Conventions:
//! - eigenvalues are sorted descending and clipped at zero;
//! - each eigenfunction is scaled so its largest-magnitude value is positive
//!   (first occurrence wins on ties), making signs reproducible;
//! - requesting more components than the surface supports fails with
//!   [`Error::RankDeficient`] instead of silently returning noise directions.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dataset::{inner_product, Grid, GridFunction, GridKernel};
use crate::error::{Error, Result};
use crate::numerics::sym_eigen_desc;

/// Leading eigenvalues and eigenfunctions of a covariance surface.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    grid: Grid,
    lambda: Vec<f64>,
    functions: Vec<GridFunction>,
}

impl EigenSystem {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of retained components.
    pub fn ncomp(&self) -> usize {
        self.lambda.len()
    }

    /// Eigenvalues, descending, all nonnegative.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Eigenfunctions matching [`Self::lambda`] in order.
    pub fn functions(&self) -> &[GridFunction] {
        &self.functions
    }

    /// Values of eigenfunction `j` interpolated at arbitrary times.
    pub fn eval_function(&self, j: usize, t: f64) -> f64 {
        self.functions[j].eval(t)
    }

    /// JSON document with fields `lambda` (length J) and `v` (J rows of M
    /// grid values each).
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n  \"lambda\": [");
        for (i, l) in self.lambda.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{l}");
        }
        out.push_str("],\n  \"v\": [");
        for (j, f) in self.functions.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str("\n    [");
            for (i, v) in f.values().iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "{v}");
            }
            out.push(']');
        }
        out.push_str("\n  ]\n}\n");
        out
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

fn weighted_problem(kernel: &GridKernel) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
    let w_sqrt: Vec<f64> = kernel.grid().weights().iter().map(|w| w.sqrt()).collect();
    let m = w_sqrt.len();
    let mut a = kernel.values().clone();
    for j in 0..m {
        for k in 0..m {
            a[(j, k)] *= w_sqrt[j] * w_sqrt[k];
        }
    }
    let (vals, vecs) = sym_eigen_desc(&a);
    (vals, vecs, w_sqrt)
}

/// All eigenvalues (descending, unclipped) of the quadrature-weighted
/// operator. Used for spectra where negative tails matter.
pub(crate) fn weighted_spectrum(kernel: &GridKernel) -> Vec<f64> {
    weighted_problem(kernel).0
}

/// Leading `ncomp` eigenpairs of the surface under quadrature weighting.
///
/// Components whose eigenvalue falls below `1e-12` times the largest are not
/// considered usable; asking for them returns [`Error::RankDeficient`] with
/// the usable count.
pub fn eigendecompose(kernel: &GridKernel, ncomp: usize) -> Result<EigenSystem> {
    if ncomp == 0 {
        return Err(Error::InvalidInput("need at least one component".into()));
    }
    let (vals, vecs, w_sqrt) = weighted_problem(kernel);
    let lambda_max = vals.first().copied().unwrap_or(0.0).max(0.0);
    let usable = vals.iter().take_while(|&&v| v > 1e-12 * lambda_max && v > 0.0).count();
    if ncomp > usable {
        return Err(Error::RankDeficient { requested: ncomp, usable });
    }

    let grid = kernel.grid().clone();
    let mut lambda = Vec::with_capacity(ncomp);
    let mut functions = Vec::with_capacity(ncomp);
    for j in 0..ncomp {
        lambda.push(vals[j].max(0.0));
        let mut v: Vec<f64> = vecs.column(j).iter().zip(&w_sqrt).map(|(u, s)| u / s).collect();
        // Deterministic sign: largest-magnitude entry made positive.
        let mut arg = 0;
        for (i, &x) in v.iter().enumerate() {
            if x.abs() > v[arg].abs() {
                arg = i;
            }
        }
        if v[arg] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        functions.push(GridFunction::new(grid.clone(), v)?);
    }
    Ok(EigenSystem { grid, lambda, functions })
}

/// Nearest positive semi-definite surface in the quadrature-weighted metric:
/// negative eigenvalues of `W^{1/2} C W^{1/2}` are clipped at zero.
///
/// Idempotent up to roundoff, and a no-op for surfaces that are already PSD.
pub fn project_psd(kernel: &GridKernel) -> Result<GridKernel> {
    let (vals, vecs, w_sqrt) = weighted_problem(kernel);
    let m = vals.len();
    let mut b = DMatrix::zeros(m, m);
    for (j, &l) in vals.iter().enumerate() {
        if l <= 0.0 {
            // Eigenvalues are sorted descending; the rest contribute nothing.
            break;
        }
        let u = vecs.column(j);
        b.ger(l, &u, &u, 1.0);
    }
    for j in 0..m {
        for k in 0..m {
            b[(j, k)] /= w_sqrt[j] * w_sqrt[k];
        }
    }
    GridKernel::new(kernel.grid().clone(), b)
}

/// Projections `⟨mu, v_j⟩` of a mean function onto each eigenfunction.
pub fn mean_score_coefs(mu: &GridFunction, eig: &EigenSystem) -> Result<Vec<f64>> {
    eig.functions.iter().map(|v| inner_product(mu, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_grid;

    /// Orthonormalizes rows under the grid's quadrature inner product so test
    /// kernels have exactly known discrete eigenpairs.
    fn gram_schmidt(grid: &Grid, raw: Vec<Vec<f64>>) -> Vec<GridFunction> {
        let mut basis: Vec<GridFunction> = Vec::new();
        for values in raw {
            let mut f = GridFunction::new(grid.clone(), values).unwrap();
            for b in &basis {
                let c = inner_product(&f, b).unwrap();
                let fv = f.values_mut();
                for (x, y) in fv.iter_mut().zip(b.values()) {
                    *x -= c * y;
                }
            }
            let norm = inner_product(&f, &f).unwrap().sqrt();
            f.values_mut().iter_mut().for_each(|x| *x /= norm);
            basis.push(f);
        }
        basis
    }

    fn rank3_kernel(m: usize) -> (Grid, Vec<f64>, Vec<GridFunction>, GridKernel) {
        let grid = make_grid(m).unwrap();
        let tau = std::f64::consts::TAU;
        let raw = vec![
            grid.points().iter().map(|_| 1.0).collect(),
            grid.points().iter().map(|&t| (tau * t).sin()).collect(),
            grid.points().iter().map(|&t| (tau * t).cos()).collect(),
        ];
        let phi = gram_schmidt(&grid, raw);
        let lambda = vec![2.0, 1.0, 0.5];
        let mm = grid.len();
        let mut values = DMatrix::zeros(mm, mm);
        for (l, f) in lambda.iter().zip(&phi) {
            for j in 0..mm {
                for k in 0..mm {
                    values[(j, k)] += l * f.values()[j] * f.values()[k];
                }
            }
        }
        let kernel = GridKernel::new(grid.clone(), values).unwrap();
        (grid, lambda, phi, kernel)
    }

    #[test]
    fn recovers_known_rank3_spectrum() {
        let (_, lambda, phi, kernel) = rank3_kernel(81);
        let eig = eigendecompose(&kernel, 3).unwrap();
        for (got, want) in eig.lambda().iter().zip(&lambda) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        for (v, f) in eig.functions().iter().zip(&phi) {
            // Same function up to sign; compare |<v, phi>| with 1.
            let c = inner_product(v, f).unwrap().abs();
            assert!((c - 1.0).abs() < 1e-8, "alignment {c}");
        }
    }

    #[test]
    fn eigenfunctions_are_orthonormal_in_quadrature() {
        let (_, _, _, kernel) = rank3_kernel(60);
        let eig = eigendecompose(&kernel, 3).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let ip = inner_product(&eig.functions()[j], &eig.functions()[k]).unwrap();
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-10, "({j},{k}): {ip}");
            }
        }
    }

    #[test]
    fn sign_convention_max_abs_positive() {
        let (_, _, _, kernel) = rank3_kernel(40);
        let eig = eigendecompose(&kernel, 3).unwrap();
        for f in eig.functions() {
            let peak = f
                .values()
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap();
            assert!(peak > 0.0);
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let (_, _, _, kernel) = rank3_kernel(40);
        match eigendecompose(&kernel, 4) {
            Err(Error::RankDeficient { requested: 4, usable: 3 }) => {}
            other => panic!("expected RankDeficient, got {other:?}"),
        }
        assert!(eigendecompose(&kernel, 0).is_err());
    }

    #[test]
    fn zero_kernel_has_no_usable_components() {
        let grid = make_grid(10).unwrap();
        let kernel = GridKernel::new(grid, DMatrix::zeros(10, 10)).unwrap();
        match eigendecompose(&kernel, 1) {
            Err(Error::RankDeficient { usable: 0, .. }) => {}
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn psd_projection_clips_negative_part_and_is_idempotent() {
        let grid = make_grid(50).unwrap();
        let tau = std::f64::consts::TAU;
        let raw = vec![
            grid.points().iter().map(|&t| 1.0 + t).collect(),
            grid.points().iter().map(|&t| (tau * t).sin()).collect(),
        ];
        let phi = gram_schmidt(&grid, raw);
        let m = grid.len();
        let mut values = DMatrix::zeros(m, m);
        for j in 0..m {
            for k in 0..m {
                values[(j, k)] = 1.5 * phi[0].values()[j] * phi[0].values()[k]
                    - 0.5 * phi[1].values()[j] * phi[1].values()[k];
            }
        }
        let indefinite = GridKernel::new(grid.clone(), values).unwrap();
        assert!(weighted_spectrum(&indefinite).last().unwrap() < &-0.4);

        let projected = project_psd(&indefinite).unwrap();
        let spec = weighted_spectrum(&projected);
        assert!(spec.iter().all(|&l| l > -1e-12), "still indefinite: {spec:?}");
        // The positive part survives untouched.
        assert!((spec[0] - 1.5).abs() < 1e-10);
        // Idempotent.
        let twice = project_psd(&projected).unwrap();
        let diff = (twice.values() - projected.values()).norm();
        assert!(diff < 1e-10, "projection moved a PSD surface by {diff}");
    }

    #[test]
    fn mean_projections_match_construction() {
        let (grid, _, phi, kernel) = rank3_kernel(81);
        let eig = eigendecompose(&kernel, 3).unwrap();
        let mut mu = GridFunction::zero(grid);
        for (c, f) in [(2.0, &phi[0]), (-3.0, &phi[1]), (0.25, &phi[2])] {
            for (x, y) in mu.values_mut().iter_mut().zip(f.values()) {
                *x += c * y;
            }
        }
        let coefs = mean_score_coefs(&mu, &eig).unwrap();
        // Eigenfunction signs may differ from the constructing functions, so
        // compare magnitudes.
        for (got, want) in coefs.iter().zip([2.0f64, -3.0, 0.25]) {
            assert!((got.abs() - want.abs()).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn eigensystem_json_shape() {
        let (_, _, _, kernel) = rank3_kernel(12);
        let eig = eigendecompose(&kernel, 2).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&eig.to_json()).unwrap();
        assert_eq!(doc["lambda"].as_array().unwrap().len(), 2);
        let v = doc["v"].as_array().unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].as_array().unwrap().len(), 12);
    }
}
