//! Gaussian imputation laws for the latent basis scores of sparsely observed
//! curves.
//!
//! Each subject's handful of noisy measurements `x_ik = X_i(t_ik) + δ_ik`
//! pins down a Gaussian conditional law for the subject's leading basis
//! scores. This module builds that law in two flavours — conditioning on the
//! observations alone, or jointly on the observations and the outcome — and
//! turns it into completed score datasets, either as conditional means or as
//! multiple random draws with reproducible per-subject substreams.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{
    inner_product, Grid, GridFunction, GridKernel, SparseFunctionalDataset, Subject,
};
use crate::error::{Error, Result};
use crate::fpca::{mean_score_coefs, EigenSystem};
use crate::numerics::{mix_seed, sym_eigen_desc};
use crate::smooth::{ImputationParams, ModelParams};

/// Largest acceptable condition number for a subject's observation
/// covariance before the law is refused as numerically meaningless.
const MAX_CONDITION: f64 = 1e12;

// ---------------------------------------------------------------------------
// Modes
// ---------------------------------------------------------------------------

/// How completed datasets are produced: a single dataset of conditional means
/// (`Me*`) or `K` datasets of random draws (`Mu*`), from laws that either use
/// the outcome (`*C`) or ignore it (`*U`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImputationMode {
    /// Mean of the outcome-aware law; one completed dataset.
    MeC,
    /// Draws from the outcome-aware law; `K` completed datasets.
    MuC,
    /// Mean of the outcome-free law; one completed dataset.
    MeU,
    /// Draws from the outcome-free law; `K` completed datasets.
    MuU,
}

impl ImputationMode {
    pub const ALL: [ImputationMode; 4] =
        [ImputationMode::MeC, ImputationMode::MuC, ImputationMode::MeU, ImputationMode::MuU];

    /// Whether the law conditions on the outcome in addition to the
    /// observations.
    pub fn uses_outcome(self) -> bool {
        matches!(self, ImputationMode::MeC | ImputationMode::MuC)
    }

    /// Whether the mode emits `K` random draws rather than a single mean.
    pub fn is_multiple(self) -> bool {
        matches!(self, ImputationMode::MuC | ImputationMode::MuU)
    }

    pub fn label(self) -> &'static str {
        match self {
            ImputationMode::MeC => "MeC",
            ImputationMode::MuC => "MuC",
            ImputationMode::MeU => "MeU",
            ImputationMode::MuU => "MuU",
        }
    }
}

impl fmt::Display for ImputationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ImputationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ImputationMode::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidInput(format!("unknown imputation mode {s:?}; expected MeC, MuC, MeU or MuU"))
            })
    }
}

// ---------------------------------------------------------------------------
// Conditional laws
// ---------------------------------------------------------------------------

/// The Gaussian law of one subject's basis scores given that subject's data.
///
/// `mean` and `cov` describe the centred scores; `mean_offset` holds the
/// basis coefficients of the centring mean (the class mean for binary
/// outcomes, zero for continuous ones) and is added back whenever scores are
/// materialised, so downstream regressions see a design on a common scale.
#[derive(Debug, Clone)]
pub struct ConditionalScoreLaw {
    subject_id: String,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    mean_offset: DVector<f64>,
}

impl ConditionalScoreLaw {
    /// Stores a law, forcing exact symmetry of the covariance by averaging
    /// it with its transpose.
    pub fn new(
        subject_id: impl Into<String>,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        mean_offset: DVector<f64>,
    ) -> Result<Self> {
        let j = mean.len();
        if cov.nrows() != j || cov.ncols() != j || mean_offset.len() != j {
            return Err(Error::InvalidInput(format!(
                "law dimensions disagree: mean {j}, cov {}x{}, offset {}",
                cov.nrows(),
                cov.ncols(),
                mean_offset.len()
            )));
        }
        let mut sym = cov;
        for a in 0..j {
            for b in (a + 1)..j {
                let avg = 0.5 * (sym[(a, b)] + sym[(b, a)]);
                sym[(a, b)] = avg;
                sym[(b, a)] = avg;
            }
        }
        Ok(Self { subject_id: subject_id.into(), mean, cov: sym, mean_offset })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn mean_offset(&self) -> &DVector<f64> {
        &self.mean_offset
    }

    pub fn ncomp(&self) -> usize {
        self.mean.len()
    }

    /// The conditional mean with the centring offset added back — what a
    /// mean-imputation mode stores for this subject.
    pub fn offset_mean(&self) -> DVector<f64> {
        &self.mean + &self.mean_offset
    }

    /// Symmetric positive-semidefinite square root of the covariance.
    /// Negative eigenvalues (roundoff from the conditioning update) are
    /// clipped to zero.
    pub fn psd_sqrt(&self) -> DMatrix<f64> {
        let j = self.ncomp();
        let (evals, evecs) = sym_eigen_desc(&self.cov);
        let mut root = DMatrix::zeros(j, j);
        for (idx, &e) in evals.iter().enumerate() {
            if e > 0.0 {
                let u = evecs.column(idx).into_owned();
                root.ger(e.sqrt(), &u, &u, 1.0);
            }
        }
        root
    }
}

/// One completed dataset: every subject's scores on the common basis plus the
/// observed outcomes. Scores are on the uncentred scale (centring offsets and,
/// for continuous outcomes, the basis coefficients of the overall mean are
/// already added), so a plain regression with intercept applies directly.
#[derive(Debug, Clone)]
pub struct CompletedScoreData {
    /// `N × J` matrix of imputed scores, one row per subject.
    pub scores: DMatrix<f64>,
    /// Outcomes in subject order.
    pub outcomes: Vec<f64>,
    /// Which imputation this is, `1..=K`.
    pub imputation_index: usize,
}

impl CompletedScoreData {
    pub fn len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.nrows() == 0
    }

    pub fn ncomp(&self) -> usize {
        self.scores.ncols()
    }
}

// ---------------------------------------------------------------------------
// Law construction
// ---------------------------------------------------------------------------

fn check_grids(params: &ImputationParams, eig: &EigenSystem) -> Result<()> {
    if params.grid() != eig.grid() {
        return Err(Error::GridMismatch(
            "imputation parameters and eigensystem live on different grids".into(),
        ));
    }
    Ok(())
}

/// Covariance of, and deviation vector for, the conditioning data: optionally
/// the outcome (variance `σ_Y²`, cross borders `C_XY(t_ik)`), then the noisy
/// observations (`C_X(t_ik, t_il) + 1{k=l} σ_δ²`, centred at `center`).
fn observation_moments(
    s: &Subject,
    c_x: &GridKernel,
    sigma_delta_sq: f64,
    center: &GridFunction,
    y_block: Option<(&GridFunction, f64, f64)>,
) -> (DMatrix<f64>, DVector<f64>) {
    let m = s.len();
    let off = usize::from(y_block.is_some());
    let dim = m + off;
    let mut binv = DMatrix::zeros(dim, dim);
    let mut dev = DVector::zeros(dim);
    if let Some((c_xy, mu_y, sigma_y_sq)) = y_block {
        binv[(0, 0)] = sigma_y_sq;
        for k in 0..m {
            let c = c_xy.eval(s.times()[k]);
            binv[(0, off + k)] = c;
            binv[(off + k, 0)] = c;
        }
        dev[0] = s.outcome() - mu_y;
    }
    for k in 0..m {
        // Fill the lower triangle and mirror it so the matrix is exactly
        // symmetric regardless of interpolation roundoff.
        for l in 0..=k {
            let c = c_x.eval(s.times()[k], s.times()[l]);
            binv[(off + k, off + l)] = c;
            binv[(off + l, off + k)] = c;
        }
        binv[(off + k, off + k)] += sigma_delta_sq;
        dev[off + k] = s.values()[k] - center.eval(s.times()[k]);
    }
    (binv, dev)
}

/// Loadings of the conditioning data on each basis score: an optional outcome
/// row `⟨C_XY, v_j⟩` followed by one row `λ_j v_j(t_ik)` per observation.
fn score_loadings(
    s: &Subject,
    eig: &EigenSystem,
    y_row: Option<&GridFunction>,
) -> Result<DMatrix<f64>> {
    let m = s.len();
    let off = usize::from(y_row.is_some());
    let mut a = DMatrix::zeros(m + off, eig.ncomp());
    for j in 0..eig.ncomp() {
        if let Some(c_xy) = y_row {
            a[(0, j)] = inner_product(c_xy, &eig.functions()[j])?;
        }
        for k in 0..m {
            a[(off + k, j)] = eig.lambda()[j] * eig.eval_function(j, s.times()[k]);
        }
    }
    Ok(a)
}

/// Spectral inverse of a symmetric positive-definite matrix, refusing
/// condition numbers beyond [`MAX_CONDITION`].
struct SpectralInverse {
    evals: Vec<f64>,
    evecs: DMatrix<f64>,
}

impl SpectralInverse {
    fn new(mat: &DMatrix<f64>, subject_id: &str) -> Result<Self> {
        let (evals, evecs) = sym_eigen_desc(mat);
        let e_max = evals[0];
        let e_min = *evals.last().expect("matrix is at least 1x1");
        let cond = if e_min > 0.0 { e_max / e_min } else { f64::INFINITY };
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditioned { id: subject_id.to_string(), cond });
        }
        Ok(Self { evals, evecs })
    }

    fn apply(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut t = self.evecs.transpose() * rhs;
        for (idx, &e) in self.evals.iter().enumerate() {
            let mut row = t.row_mut(idx);
            row /= e;
        }
        &self.evecs * t
    }

    fn apply_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut t = self.evecs.transpose() * rhs;
        for (idx, &e) in self.evals.iter().enumerate() {
            t[idx] /= e;
        }
        &self.evecs * t
    }
}

/// Conditioning update shared by every score law: with loadings `A`,
/// data covariance `B⁻¹` and deviations `d`, the law is
/// `mean = Aᵀ B d`, `cov = diag(λ) − Aᵀ B A`.
fn gaussian_update(
    subject_id: &str,
    binv: &DMatrix<f64>,
    a: &DMatrix<f64>,
    dev: &DVector<f64>,
    lambda: &[f64],
    mean_offset: DVector<f64>,
) -> Result<ConditionalScoreLaw> {
    let inv = SpectralInverse::new(binv, subject_id)?;
    let mean = a.transpose() * inv.apply_vec(dev);
    let mut cov = DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
    cov -= a.transpose() * inv.apply(a);
    ConditionalScoreLaw::new(subject_id, mean, cov, mean_offset)
}

/// Resolves the cross moments a continuous-outcome law conditions on.
///
/// An exactly zero cross-covariance decouples the outcome from the scores,
/// so the outcome row is dropped up front; the conditional law is then
/// bit-identical to the outcome-free one rather than merely close to it.
fn effective_cross(
    params: &ImputationParams,
    conditional: bool,
) -> Result<Option<(&GridFunction, f64, f64)>> {
    let ModelParams::Linear(lin) = params.model() else {
        return Err(Error::ModeUnsupported(
            "this law conditions on a continuous outcome; the supplied parameters carry class means".into(),
        ));
    };
    if !conditional {
        return Ok(None);
    }
    let Some(cross) = &lin.cross else {
        return Err(Error::ModeUnsupported(
            "conditioning on the outcome needs cross moments (C_XY, mu_Y, sigma_Y^2); refit jointly with the outcome".into(),
        ));
    };
    if cross.c_xy.values().iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    Ok(Some((&cross.c_xy, cross.mu_y, cross.sigma_y_sq)))
}

/// Law of a subject's scores under continuous-outcome parameters, given the
/// noisy observations and (when `conditional`) the outcome.
pub fn build_score_law_linear(
    s: &Subject,
    params: &ImputationParams,
    eig: &EigenSystem,
    conditional: bool,
) -> Result<ConditionalScoreLaw> {
    check_grids(params, eig)?;
    let cross = effective_cross(params, conditional)?;
    let ModelParams::Linear(lin) = params.model() else { unreachable!() };
    let (binv, dev) =
        observation_moments(s, params.c_x(), params.sigma_delta_sq(), &lin.mu_x, cross);
    let a = score_loadings(s, eig, cross.map(|(c_xy, _, _)| c_xy))?;
    let offset = DVector::zeros(eig.ncomp());
    gaussian_update(s.id(), &binv, &a, &dev, eig.lambda(), offset)
}

/// Law of a subject's scores under binary-outcome parameters. The subject's
/// observations are centred at the class mean for its outcome, and the basis
/// coefficients of that class mean become the law's offset.
pub fn build_score_law_logistic(
    s: &Subject,
    params: &ImputationParams,
    eig: &EigenSystem,
) -> Result<ConditionalScoreLaw> {
    check_grids(params, eig)?;
    let ModelParams::Logistic(lg) = params.model() else {
        return Err(Error::ModeUnsupported(
            "this law centres at class means; the supplied parameters carry continuous-outcome moments".into(),
        ));
    };
    let y = s.outcome();
    if y != 0.0 && y != 1.0 {
        return Err(Error::InvalidInput(format!(
            "subject {} has outcome {y}, expected 0 or 1",
            s.id()
        )));
    }
    let mu_y = if y == 1.0 { &lg.mu1 } else { &lg.mu0 };
    let (binv, dev) = observation_moments(s, params.c_x(), params.sigma_delta_sq(), mu_y, None);
    let a = score_loadings(s, eig, None)?;
    let offset = DVector::from_vec(mean_score_coefs(mu_y, eig)?);
    gaussian_update(s.id(), &binv, &a, &dev, eig.lambda(), offset)
}

/// Curve-level analogue of [`build_score_law_linear`]: the conditional mean
/// function and covariance surface of `X_i` on `eval`, given the subject's
/// data. Provided for inspection and plotting; the fitting pipeline works in
/// score coordinates.
pub fn build_curve_law(
    s: &Subject,
    params: &ImputationParams,
    conditional: bool,
    eval: &Grid,
) -> Result<(GridFunction, GridKernel)> {
    let cross = effective_cross(params, conditional)?;
    let ModelParams::Linear(lin) = params.model() else { unreachable!() };
    let (binv, dev) =
        observation_moments(s, params.c_x(), params.sigma_delta_sq(), &lin.mu_x, cross);
    let inv = SpectralInverse::new(&binv, s.id())?;
    let bd = inv.apply_vec(&dev);

    let m = s.len();
    let off = usize::from(cross.is_some());
    let p = eval.len();
    // Column p holds the covariance between the conditioning data and X(t_p).
    let mut a = DMatrix::zeros(m + off, p);
    for (col, &t) in eval.points().iter().enumerate() {
        if let Some((c_xy, _, _)) = cross {
            a[(0, col)] = c_xy.eval(t);
        }
        for k in 0..m {
            a[(off + k, col)] = params.c_x().eval(t, s.times()[k]);
        }
    }

    let mean_vals: Vec<f64> = eval
        .points()
        .iter()
        .enumerate()
        .map(|(col, &t)| lin.mu_x.eval(t) + a.column(col).dot(&bd))
        .collect();
    let mean = GridFunction::new(eval.clone(), mean_vals)?;

    let mut cov = DMatrix::from_fn(p, p, |r, c| {
        params.c_x().eval(eval.points()[r], eval.points()[c])
    });
    cov -= a.transpose() * inv.apply(&a);
    for r in 0..p {
        for c in (r + 1)..p {
            let avg = 0.5 * (cov[(r, c)] + cov[(c, r)]);
            cov[(r, c)] = avg;
            cov[(c, r)] = avg;
        }
    }
    Ok((mean, GridKernel::new(eval.clone(), cov)?))
}

// ---------------------------------------------------------------------------
// Drawing
// ---------------------------------------------------------------------------

fn draw_one(
    law: &ConditionalScoreLaw,
    root: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> DVector<f64> {
    let z = DVector::from_fn(law.ncomp(), |_, _| rng.sample(StandardNormal));
    law.mean() + root * z + law.mean_offset()
}

/// Draws `k` independent score vectors `mean + S z + offset` with `S` the
/// clipped symmetric square root of the law's covariance, consuming `rng`
/// sequentially.
pub fn draw_scores(
    law: &ConditionalScoreLaw,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DVector<f64>>> {
    if k == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let root = law.psd_sqrt();
    Ok((0..k).map(|_| draw_one(law, &root, rng)).collect())
}

// ---------------------------------------------------------------------------
// Dataset-level imputation
// ---------------------------------------------------------------------------

/// Produces completed score datasets for every subject.
///
/// `Me*` modes emit a single dataset of conditional means; `Mu*` modes emit
/// `k_imputations` datasets of draws. The draw for subject `i`, imputation
/// `k` comes from its own substream seeded by `(master_seed, i, k)`, so
/// results do not depend on scheduling and coincide across modes whenever the
/// laws coincide.
pub fn impute_dataset(
    data: &SparseFunctionalDataset,
    params: &ImputationParams,
    eig: &EigenSystem,
    mode: ImputationMode,
    k_imputations: usize,
    master_seed: u64,
) -> Result<Vec<CompletedScoreData>> {
    check_grids(params, eig)?;
    let k = if mode.is_multiple() {
        if k_imputations == 0 {
            return Err(Error::InvalidInput("multiple imputation needs at least one draw".into()));
        }
        k_imputations
    } else {
        1
    };
    match (mode.uses_outcome(), params.model()) {
        (true, ModelParams::Linear(lin)) if lin.cross.is_none() => {
            return Err(Error::ModeUnsupported(format!(
                "{mode} conditions on the outcome but the parameters carry no cross moments"
            )));
        }
        (false, ModelParams::Logistic(_)) => {
            return Err(Error::ModeUnsupported(format!(
                "{mode} ignores the outcome and needs a single marginal mean; assemble outcome-free parameters instead"
            )));
        }
        _ => {}
    }

    // Scores per subject, then per imputation.
    let per_subject: Vec<Vec<DVector<f64>>> = data
        .subjects()
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<Vec<DVector<f64>>> {
            let law = match params.model() {
                ModelParams::Linear(_) => {
                    build_score_law_linear(s, params, eig, mode.uses_outcome())?
                }
                ModelParams::Logistic(_) => build_score_law_logistic(s, params, eig)?,
            };
            if mode.is_multiple() {
                let root = law.psd_sqrt();
                Ok((0..k)
                    .map(|ki| {
                        let seed = mix_seed(&[master_seed, i as u64, ki as u64]);
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        draw_one(&law, &root, &mut rng)
                    })
                    .collect())
            } else {
                Ok(vec![law.offset_mean()])
            }
        })
        .collect::<Result<_>>()?;

    // Continuous-outcome parameters enter the completed design through the
    // basis coefficients of the overall mean, shared by every subject.
    let mean_coefs = match params.model() {
        ModelParams::Linear(lin) => Some(DVector::from_vec(mean_score_coefs(&lin.mu_x, eig)?)),
        ModelParams::Logistic(_) => None,
    };

    let outcomes = data.outcomes();
    let j = eig.ncomp();
    (0..k)
        .map(|ki| {
            let mut scores = DMatrix::zeros(data.len(), j);
            for (i, drawn) in per_subject.iter().enumerate() {
                let mut xi = drawn[ki].clone();
                if let Some(coefs) = &mean_coefs {
                    xi += coefs;
                }
                for c in 0..j {
                    if !xi[c].is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "non-finite imputed score for subject {}",
                            data.subjects()[i].id()
                        )));
                    }
                    scores[(i, c)] = xi[c];
                }
            }
            Ok(CompletedScoreData { scores, outcomes: outcomes.clone(), imputation_index: ki + 1 })
        })
        .collect()
}

/// Writes completed datasets as CSV rows `subject_id,k,xi_1..xi_J,outcome`,
/// one block per imputation.
pub fn write_completed_csv(
    data: &SparseFunctionalDataset,
    completed: &[CompletedScoreData],
    path: impl AsRef<Path>,
) -> Result<()> {
    let Some(first) = completed.first() else {
        return Err(Error::Empty("no completed datasets to write".into()));
    };
    let j = first.ncomp();
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["subject_id".to_string(), "k".to_string()];
    header.extend((1..=j).map(|c| format!("xi_{c}")));
    header.push("outcome".to_string());
    writer.write_record(&header)?;
    for set in completed {
        if set.len() != data.len() || set.ncomp() != j {
            return Err(Error::InvalidInput(
                "completed datasets disagree with the source dataset in shape".into(),
            ));
        }
        for (i, s) in data.subjects().iter().enumerate() {
            let mut record = vec![s.id().to_string(), set.imputation_index.to_string()];
            record.extend((0..j).map(|c| format!("{}", set.scores[(i, c)])));
            record.push(format!("{}", set.outcomes[i]));
            writer.write_record(&record)?;
        }
    }
    writer.flush()?;
    Ok(())
}
