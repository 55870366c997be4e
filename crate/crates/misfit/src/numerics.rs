//! Shared numerical kernels: deterministic seed derivation, the standard
//! normal quantile, clamped cubic B-spline bases, adaptive Gauss–Kronrod
//! quadrature, and a sorted symmetric eigendecomposition.
//!
//! Everything here is deterministic: no global state, no randomness, and
//! fixed accumulation orders, so identical inputs give identical bits.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Seed derivation
// ---------------------------------------------------------------------------

/// SplitMix64 step: advances the state by the golden-gamma increment and
/// returns a well-mixed 64-bit output. Bijective in the state.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tuple of indices into one substream seed.
///
/// Used to derive independent RNG streams per (master seed, subject, draw)
/// and per (master seed, cell, replication) without any cross-talk between
/// streams when one index changes.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3; // fractional bits of pi
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

// ---------------------------------------------------------------------------
// Standard normal quantile
// ---------------------------------------------------------------------------

/// Quantile of the standard normal distribution (inverse CDF).
///
/// Wichura's rational approximation, accurate to roughly full double
/// precision over the whole open interval.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!("quantile needs 0 < p < 1, got {p}")));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < 0.0 { -x } else { x })
}

fn poly(c: &[f64; 8], x: f64) -> f64 {
    // Horner evaluation, highest degree first.
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

const A: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// Numerically stable logistic function `1 / (1 + e^{-x})`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Clamped cubic B-splines
// ---------------------------------------------------------------------------

/// Cubic B-spline basis on `[0, 1]` with clamped, equally spaced knots.
///
/// `dim` basis functions require `dim - 3` spans; each point activates
/// exactly four consecutive basis functions.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    dim: usize,
}

impl BSplineBasis {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 4 {
            return Err(Error::InvalidInput(format!(
                "cubic spline basis needs dimension >= 4, got {dim}"
            )));
        }
        let spans = dim - 3;
        let mut knots = Vec::with_capacity(dim + 4);
        knots.extend_from_slice(&[0.0; 4]);
        for i in 1..spans {
            knots.push(i as f64 / spans as f64);
        }
        knots.extend_from_slice(&[1.0; 4]);
        Ok(Self { knots, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Values of the four active basis functions at `t` (clamped to `[0, 1]`)
    /// and the index of the first active function.
    pub fn eval(&self, t: f64) -> (usize, [f64; 4]) {
        let t = t.clamp(0.0, 1.0);
        let spans = self.dim - 3;
        let span = ((t * spans as f64) as usize).min(spans - 1);
        let k = span + 3; // knots[k] <= t < knots[k+1]

        // de Boor's triangular recurrence for the nonzero basis values.
        let mut n = [1.0, 0.0, 0.0, 0.0];
        let mut left = [0.0; 4];
        let mut right = [0.0; 4];
        for j in 1..4 {
            left[j] = t - self.knots[k + 1 - j];
            right[j] = self.knots[k + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (span, n)
    }

    /// Dense design matrix with one row per evaluation point.
    pub fn design(&self, times: &[f64]) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(times.len(), self.dim);
        for (row, &t) in times.iter().enumerate() {
            let (first, vals) = self.eval(t);
            for (off, &v) in vals.iter().enumerate() {
                x[(row, first + off)] = v;
            }
        }
        x
    }
}

/// Second-difference roughness penalty `DᵀD` for a coefficient vector of
/// length `dim` (zero for affine coefficient sequences).
pub fn second_difference_penalty(dim: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(dim, dim);
    if dim < 3 {
        return p;
    }
    for r in 0..dim - 2 {
        let idx = [r, r + 1, r + 2];
        let coef = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                p[(idx[a], idx[b])] += coef[a] * coef[b];
            }
        }
    }
    p
}

// ---------------------------------------------------------------------------
// Adaptive Gauss–Kronrod quadrature (7/15 pair)
// ---------------------------------------------------------------------------

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel on `[a, b]`; returns the Kronrod estimate and
/// the absolute difference from the embedded 7-point Gauss estimate.
fn gk15_panel(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = half * XGK[i];
        let fsum = f(mid - x) + f(mid + x);
        kronrod += WGK[i] * fsum;
        if i % 2 == 1 {
            gauss += WG[i / 2] * fsum;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half.abs())
}

/// Adaptive quadrature of `f` over `[a, b]` to absolute accuracy `abs_tol`.
///
/// Panels are bisected (left first, depth-limited) until each local error
/// estimate is below its share of the tolerance; the result is the ordered
/// sum of accepted panels, so the value is deterministic.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || !(abs_tol > 0.0) {
        return Err(Error::InvalidInput("integration needs finite bounds and a positive tolerance".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let span = (b - a).abs();
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        abs_tol: f64,
        span: f64,
        depth: u32,
    ) -> f64 {
        let (value, err) = gk15_panel(f, a, b);
        let local_tol = abs_tol * ((b - a).abs() / span).max(f64::EPSILON);
        if err <= local_tol || depth >= 48 {
            return value;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, abs_tol, span, depth + 1) + recurse(f, mid, b, abs_tol, span, depth + 1)
    }
    Ok(recurse(f, a, b, abs_tol, span, 0))
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition, sorted
// ---------------------------------------------------------------------------

/// Eigenvalues (descending) and matching eigenvector columns of a symmetric
/// matrix. No sign convention is imposed here.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seed_mixing_separates_neighbours() {
        let a = mix_seed(&[42, 0, 1]);
        let b = mix_seed(&[42, 1, 0]);
        let c = mix_seed(&[42, 0, 2]);
        let d = mix_seed(&[43, 0, 1]);
        assert!(a != b && a != c && a != d && b != c);
        // Stable across calls.
        assert_eq!(a, mix_seed(&[42, 0, 1]));
    }

    #[test]
    fn normal_quantile_matches_known_values() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        let z975 = normal_quantile(0.975).unwrap();
        assert!((z975 - 1.959_963_984_540_054).abs() < 1e-12, "got {z975}");
        let z995 = normal_quantile(0.995).unwrap();
        assert!((z995 - 2.575_829_303_548_901).abs() < 1e-12, "got {z995}");
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn normal_quantile_round_trips_through_reference_cdf() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-10, 1e-6, 1e-3, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0 - 1e-6] {
            let q = normal_quantile(p).unwrap();
            let back = n.cdf(q);
            assert!(
                (back - p).abs() <= 1e-9 * p.max(1e-3),
                "p={p}: quantile {q}, cdf back {back}"
            );
        }
    }

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        for &x in &[-5.0, -1.0, 0.3, 2.0, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bspline_dim_4_is_bernstein() {
        // With no interior knots the basis degenerates to cubic Bernstein
        // polynomials: B_i(t) = C(3,i) t^i (1-t)^(3-i).
        let basis = BSplineBasis::new(4).unwrap();
        let t: f64 = 0.3;
        let (first, vals) = basis.eval(t);
        assert_eq!(first, 0);
        let bern = [
            (1.0 - t).powi(3),
            3.0 * t * (1.0 - t).powi(2),
            3.0 * t * t * (1.0 - t),
            t.powi(3),
        ];
        for (v, b) in vals.iter().zip(bern) {
            assert!((v - b).abs() < 1e-14, "{v} vs {b}");
        }
    }

    #[test]
    fn bspline_rejects_small_dim() {
        assert!(BSplineBasis::new(3).is_err());
    }

    #[test]
    fn penalty_annihilates_affine_sequences() {
        let p = second_difference_penalty(8);
        let affine = nalgebra::DVector::from_fn(8, |i, _| 2.0 - 0.5 * i as f64);
        let q = (&p * &affine).norm();
        assert!(q < 1e-12, "penalty should vanish on affine coefficients, got {q}");
        // And it is PSD: xᵀPx >= 0.
        let x = nalgebra::DVector::from_fn(8, |i, _| ((i * i) as f64).sin());
        assert!((x.transpose() * &p * &x)[(0, 0)] >= 0.0);
    }

    #[test]
    fn integrate_known_values() {
        let v = integrate(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-12, "got {v}");
        let v = integrate(&|x: f64| x.powi(10), 0.0, 1.0, 1e-13).unwrap();
        assert!((v - 1.0 / 11.0).abs() < 1e-14, "got {v}");
        // Oscillatory integrand forcing subdivision.
        let v = integrate(&|x: f64| (20.0 * x).cos(), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - (20.0f64).sin() / 20.0).abs() < 1e-11, "got {v}");
    }

    #[test]
    fn sym_eigen_sorted_and_orthonormal() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let vtv = vecs.transpose() * &vecs;
        assert!((vtv - DMatrix::identity(3, 3)).norm() < 1e-12);
        // Reconstruction.
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals.clone()));
        assert!(((&vecs * lam * vecs.transpose()) - m).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn bspline_partition_of_unity(dim in 4usize..16, t in 0.0f64..=1.0) {
            let basis = BSplineBasis::new(dim).unwrap();
            let (first, vals) = basis.eval(t);
            prop_assert!(first + 3 < dim);
            let sum: f64 = vals.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "sum {}", sum);
            prop_assert!(vals.iter().all(|&v| v >= -1e-15));
        }

        #[test]
        fn normal_quantile_is_odd_and_monotone(p in 0.0001f64..0.9999) {
            let q = normal_quantile(p).unwrap();
            let q_sym = normal_quantile(1.0 - p).unwrap();
            prop_assert!((q + q_sym).abs() < 1e-10);
            let q2 = normal_quantile((p + 0.00005).min(0.99995)).unwrap();
            prop_assert!(q2 >= q);
        }
    }
}
