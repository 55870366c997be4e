//! Replicated synthetic comparisons of the imputation variants.
//!
//! A plan enumerates a factor grid (generating model, parameter source,
//! sample size `N`, observations per curve `m`, component count `J`, signal
//! weight `w`). Each cell runs independent replications; every replication
//! generates one dataset and pushes it through all requested imputation
//! modes, recording the integrated squared error of the pooled curve against
//! the generating truth and whether the zero-curve null was rejected at the
//! 0.05 level. Failures are tagged and excluded from medians.
//!
//! The module also exposes [`fit_imputed`], the one-call pipeline
//! (estimate moments → eigensystem → impute → fit → pool) used by the
//! command-line tool on real data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Grid, OutcomeKind, SparseFunctionalDataset};
use crate::error::{Error, Result};
use crate::fpca::{eigendecompose, EigenSystem};
use crate::glmfit::{coef_to_beta, fit_linear_scores, fit_logistic_scores, fit_moment_scores};
use crate::impute::{impute_dataset, ImputationMode};
use crate::inference::{rubin_pool, PooledFit, DEFAULT_BAND_LEVEL};
use crate::numerics::mix_seed;
use crate::simulate::{gen_linear, gen_logistic, ise, LinearSimConfig, LogisticSimConfig, ParamMode};
use crate::smooth::{
    estimate_params, true_linear_params, true_logistic_marginal_params, true_logistic_params,
    ImputationParams,
};

/// Significance level for the zero-curve test in experiment records.
pub const TEST_LEVEL: f64 = 0.05;

/// Spline basis dimension used when moments are estimated from data.
pub const DEFAULT_BASIS_DIM: usize = 10;

/// Degrees of freedom of the heavy-tailed curve generator selected by
/// [`PlanModel::Mvt`].
pub const MVT_CURVE_DF: f64 = 4.0;

/// Rule-of-thumb bandwidth for the covariance smoother: shrinks with the
/// number of off-diagonal observation pairs, clamped to `[0.1, 0.3]` on the
/// unit interval.
pub fn default_bandwidth(data: &SparseFunctionalDataset) -> f64 {
    let pairs: usize = data.subjects().iter().map(|s| s.len() * (s.len().saturating_sub(1))).sum();
    let p = pairs.max(1) as f64;
    (1.5 * p.powf(-0.2)).clamp(0.1, 0.3)
}

/// Which complete-data fitter maps completed scores to coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Likelihood-based regression on the completed scores (least squares
    /// for continuous outcomes, logistic likelihood for binary ones).
    Scores,
    /// Closed-form cross-moment estimator for continuous outcomes.
    Moment,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scores" => Ok(Self::Scores),
            "moment" => Ok(Self::Moment),
            other => Err(Error::InvalidInput(format!(
                "unknown estimator '{other}' (expected scores or moment)"
            ))),
        }
    }
}

/// Result of the one-call pipeline: the pooled fit plus the averaged
/// regression intercept.
#[derive(Debug, Clone)]
pub struct ImputedFit {
    /// Imputation mode that produced the completions.
    pub mode: ImputationMode,
    /// Number of completed datasets pooled.
    pub k: usize,
    /// Average of the completed-data intercepts.
    pub intercept: f64,
    /// Tail probability of the pooled norm statistic under the zero-curve
    /// null (copied from `pooled` for convenience).
    pub p_value: f64,
    /// Pooled curve, covariance surfaces, test, and bands.
    pub pooled: PooledFit,
}

/// Run the imputation-and-fit stages with moments already in hand: leading
/// `ncomp` eigenpairs of the covariance surface, then `k` completions per
/// subject in `mode`, one complete-data fit per completion, pooled.
pub fn fit_with_params(
    data: &SparseFunctionalDataset,
    params: &ImputationParams,
    ncomp: usize,
    mode: ImputationMode,
    k: usize,
    seed: u64,
    estimator: Estimator,
) -> Result<ImputedFit> {
    let eig = eigendecompose(params.c_x(), ncomp)?;
    fit_with_system(data, params, &eig, mode, k, seed, estimator)
}

/// As [`fit_with_params`], with the eigensystem already factored (one
/// factorization can serve several modes).
pub fn fit_with_system(
    data: &SparseFunctionalDataset,
    params: &ImputationParams,
    eig: &EigenSystem,
    mode: ImputationMode,
    k: usize,
    seed: u64,
    estimator: Estimator,
) -> Result<ImputedFit> {
    let completed = impute_dataset(data, params, eig, mode, k, seed)?;
    pool_completed(data.outcome_kind(), &completed, eig, mode, estimator)
}

/// Fit every completed score matrix and pool the results.
pub fn pool_completed(
    kind: OutcomeKind,
    completed: &[crate::impute::CompletedScoreData],
    eig: &EigenSystem,
    mode: ImputationMode,
    estimator: Estimator,
) -> Result<ImputedFit> {
    if estimator == Estimator::Moment && kind == OutcomeKind::Binary {
        return Err(Error::ModeUnsupported(
            "the cross-moment estimator applies to continuous outcomes only".into(),
        ));
    }
    if completed.is_empty() {
        return Err(Error::Empty("no completed datasets to fit".into()));
    }
    let mut fits = Vec::with_capacity(completed.len());
    let mut intercepts = Vec::with_capacity(completed.len());
    for c in completed {
        let fit = match (kind, estimator) {
            (_, Estimator::Moment) => fit_moment_scores(c, eig)?,
            (OutcomeKind::Continuous, Estimator::Scores) => fit_linear_scores(c)?,
            (OutcomeKind::Binary, Estimator::Scores) => fit_logistic_scores(c)?,
        };
        let (beta, cov, intercept) = coef_to_beta(&fit, eig)?;
        fits.push((beta, cov));
        intercepts.push(intercept);
    }
    let pooled = rubin_pool(&fits)?.finalize(DEFAULT_BAND_LEVEL)?;
    let intercept = intercepts.iter().sum::<f64>() / intercepts.len() as f64;
    Ok(ImputedFit { mode, k: completed.len(), intercept, p_value: pooled.p_value(), pooled })
}

/// One-call pipeline on raw data: estimate the moments (jointly with the
/// outcome when `mode` conditions on it), then impute, fit, and pool.
pub fn fit_imputed(
    data: &SparseFunctionalDataset,
    grid: &Grid,
    mode: ImputationMode,
    k: usize,
    ncomp: usize,
    seed: u64,
) -> Result<ImputedFit> {
    let bandwidth = default_bandwidth(data);
    let params = estimate_params(data, grid, DEFAULT_BASIS_DIM, bandwidth, mode.uses_outcome())?;
    fit_with_params(data, &params, ncomp, mode, k, seed, Estimator::Scores)
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

/// Generating model selected by a plan cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanModel {
    /// Continuous outcome, Gaussian-process curves.
    Linear,
    /// Binary outcome, class-shifted Gaussian-process curves.
    Logistic,
    /// Continuous outcome, heavy-tailed (multivariate-t) curves.
    Mvt,
}

impl std::fmt::Display for PlanModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Logistic => "logistic",
            Self::Mvt => "mvt",
        })
    }
}

fn default_k() -> usize {
    10
}
fn default_grid_size() -> usize {
    100
}

/// A factor grid of experiment cells plus run-level settings.
///
/// The JSON form uses arrays for the factors:
/// `{"model": ["linear"], "param_mode": ["true"], "N": [200], "m": [2],
///   "J": [4], "w": [0.0], "modes": ["MeC","MuC","MeU","MuU"],
///   "replications": 200, "seed": 1}`
/// with optional `K` (completions per draw mode, default 10) and `M`
/// (grid resolution, default 100).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub model: Vec<PlanModel>,
    pub param_mode: Vec<ParamMode>,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    #[serde(rename = "J")]
    pub ncomp: Vec<usize>,
    pub w: Vec<f64>,
    pub modes: Vec<ImputationMode>,
    pub replications: usize,
    pub seed: u64,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    #[serde(rename = "M", default = "default_grid_size")]
    pub grid_size: usize,
}

impl ExperimentPlan {
    /// A single-cell plan; factor arrays can be extended afterwards.
    pub fn single(
        model: PlanModel,
        param_mode: ParamMode,
        n: usize,
        m: usize,
        ncomp: usize,
        w: f64,
        modes: &[ImputationMode],
        replications: usize,
        seed: u64,
    ) -> Self {
        Self {
            model: vec![model],
            param_mode: vec![param_mode],
            n: vec![n],
            m: vec![m],
            ncomp: vec![ncomp],
            w: vec![w],
            modes: modes.to_vec(),
            replications,
            seed,
            k: default_k(),
            grid_size: default_grid_size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arrays: [(&str, usize); 7] = [
            ("model", self.model.len()),
            ("param_mode", self.param_mode.len()),
            ("N", self.n.len()),
            ("m", self.m.len()),
            ("J", self.ncomp.len()),
            ("w", self.w.len()),
            ("modes", self.modes.len()),
        ];
        for (name, len) in arrays {
            if len == 0 {
                return Err(Error::InvalidInput(format!("plan array '{name}' is empty")));
            }
        }
        if self.replications == 0 {
            return Err(Error::InvalidInput("plan needs at least one replication".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidInput("plan needs at least one completion (K)".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidInput("plan grid resolution must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn read_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Cells in a fixed cartesian order:
    /// model → param_mode → N → m → J → w. The signal weight does not enter
    /// the binary-outcome generator, so logistic models take a single `w = 0`
    /// cell per remaining combination.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &model in &self.model {
            let w_list: Vec<f64> =
                if model == PlanModel::Logistic { vec![0.0] } else { self.w.clone() };
            for &param_mode in &self.param_mode {
                for &n in &self.n {
                    for &m in &self.m {
                        for &ncomp in &self.ncomp {
                            for &w in &w_list {
                                out.push(Cell { model, param_mode, n, m, ncomp, w });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One point of the factor grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub model: PlanModel,
    pub param_mode: ParamMode,
    pub n: usize,
    pub m: usize,
    pub ncomp: usize,
    pub w: f64,
}

impl Cell {
    fn param_mode_label(&self) -> &'static str {
        match self.param_mode {
            ParamMode::True => "true",
            ParamMode::Estimated => "estimated",
        }
    }
}

// ---------------------------------------------------------------------------
// Records and summaries
// ---------------------------------------------------------------------------

/// Outcome of one (cell, mode, replication) pipeline run.
#[derive(Debug, Clone)]
pub struct ReplicationRecord {
    pub cell: Cell,
    pub mode: ImputationMode,
    /// 1-based replication index.
    pub rep: usize,
    /// Integrated squared error of the pooled curve (absent on failure).
    pub ise: Option<f64>,
    /// Whether the zero-curve null was rejected at [`TEST_LEVEL`].
    pub reject: Option<bool>,
    /// Error tag when the pipeline failed.
    pub fail_tag: Option<&'static str>,
}

/// Per-(cell, mode) aggregate over replications.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub cell: Cell,
    pub mode: ImputationMode,
    pub successes: usize,
    pub failures: usize,
    /// Median ISE over successful replications.
    pub median_ise: Option<f64>,
    /// Fraction of successful replications rejecting the null.
    pub reject_rate: Option<f64>,
}

/// All records plus their per-cell aggregates.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<CellSummary>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn summarize(cells: &[Cell], modes: &[ImputationMode], records: &[ReplicationRecord]) -> Vec<CellSummary> {
    let mut out = Vec::with_capacity(cells.len() * modes.len());
    for cell in cells {
        for &mode in modes {
            let mut ises: Vec<f64> = Vec::new();
            let mut rejects = 0usize;
            let mut failures = 0usize;
            for r in records.iter().filter(|r| r.cell == *cell && r.mode == mode) {
                match r.ise {
                    Some(v) => {
                        ises.push(v);
                        if r.reject == Some(true) {
                            rejects += 1;
                        }
                    }
                    None => failures += 1,
                }
            }
            ises.sort_by(|a, b| a.total_cmp(b));
            let successes = ises.len();
            out.push(CellSummary {
                cell: *cell,
                mode,
                successes,
                failures,
                median_ise: (successes > 0).then(|| median(&ises)),
                reject_rate: (successes > 0).then(|| rejects as f64 / successes as f64),
            });
        }
    }
    out
}

impl ExperimentResult {
    /// Replication-level CSV:
    /// `model,param_mode,N,m,J,w,mode,rep,ise,reject,fail_tag`.
    pub fn records_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("model,param_mode,N,m,J,w,mode,rep,ise,reject,fail_tag\n");
        for r in &self.records {
            let c = &r.cell;
            let ise = r.ise.map(|v| format!("{v}")).unwrap_or_default();
            let reject = match r.reject {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{ise},{reject},{}",
                c.model,
                c.param_mode_label(),
                c.n,
                c.m,
                c.ncomp,
                c.w,
                r.mode,
                r.rep,
                r.fail_tag.unwrap_or("")
            );
        }
        out
    }

    /// Cell-level CSV:
    /// `model,param_mode,N,m,J,w,mode,successes,failures,median_ise,reject_rate`.
    pub fn summary_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out =
            String::from("model,param_mode,N,m,J,w,mode,successes,failures,median_ise,reject_rate\n");
        for s in &self.summaries {
            let c = &s.cell;
            let med = s.median_ise.map(|v| format!("{v}")).unwrap_or_default();
            let rate = s.reject_rate.map(|v| format!("{v}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{med},{rate}",
                c.model,
                c.param_mode_label(),
                c.n,
                c.m,
                c.ncomp,
                c.w,
                s.mode,
                s.successes,
                s.failures
            );
        }
        out
    }

    pub fn write_records_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.records_csv())?;
        Ok(())
    }

    pub fn write_summary_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.summary_csv())?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// The runner
// ---------------------------------------------------------------------------

/// Moments and eigensystem for one conditioning flavor.
#[derive(Clone)]
struct PreparedParams {
    params: ImputationParams,
    eig: EigenSystem,
}

fn prepare(params: ImputationParams, ncomp: usize) -> Result<PreparedParams> {
    let eig = eigendecompose(params.c_x(), ncomp)?;
    Ok(PreparedParams { params, eig })
}

fn linear_config(cell: &Cell, grid_size: usize, seed: u64) -> LinearSimConfig {
    let mut cfg = LinearSimConfig::new(cell.n, cell.m, cell.ncomp, cell.w, seed)
        .with_grid_size(grid_size)
        .with_param_mode(cell.param_mode);
    if cell.model == PlanModel::Mvt {
        cfg = cfg.with_curve_df(MVT_CURVE_DF);
    }
    cfg
}

/// True moments never depend on the replication, so they are built once per
/// cell. `None` entries mean the flavor is estimated per replication.
struct CellParams {
    conditional: Option<PreparedParams>,
    marginal: Option<PreparedParams>,
}

fn true_cell_params(cell: &Cell, grid_size: usize, need_cond: bool, need_marg: bool) -> Result<CellParams> {
    let mut out = CellParams { conditional: None, marginal: None };
    if cell.param_mode != ParamMode::True {
        return Ok(out);
    }
    match cell.model {
        PlanModel::Linear | PlanModel::Mvt => {
            // The joint moments carry the outcome cross-moments; the score
            // laws ignore them when a mode does not condition on the
            // outcome, so one bundle serves both flavors.
            if need_cond || need_marg {
                let cfg = linear_config(cell, grid_size, 0);
                let p = prepare(true_linear_params(&cfg)?, cell.ncomp)?;
                if need_cond {
                    out.conditional = Some(p.clone());
                }
                if need_marg {
                    out.marginal = Some(p);
                }
            }
        }
        PlanModel::Logistic => {
            let cfg = LogisticSimConfig::new(cell.n, cell.m, cell.ncomp, 0).with_grid_size(grid_size);
            if need_cond {
                out.conditional = Some(prepare(true_logistic_params(&cfg)?, cell.ncomp)?);
            }
            if need_marg {
                out.marginal = Some(prepare(true_logistic_marginal_params(&cfg)?, cell.ncomp)?);
            }
        }
    }
    Ok(out)
}

/// Run one replication of one cell through every requested mode.
fn run_replication(
    cell: &Cell,
    plan: &ExperimentPlan,
    cell_idx: usize,
    rep: usize,
    fixed: &CellParams,
) -> Vec<ReplicationRecord> {
    let modes = &plan.modes;
    let rep_seed = mix_seed(&[plan.seed, cell_idx as u64, rep as u64]);
    let fail_all = |tag: &'static str| -> Vec<ReplicationRecord> {
        modes
            .iter()
            .map(|&mode| ReplicationRecord {
                cell: *cell,
                mode,
                rep: rep + 1,
                ise: None,
                reject: None,
                fail_tag: Some(tag),
            })
            .collect()
    };

    // Stage 1: one dataset per replication, shared by all modes.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(&[rep_seed, 0]));
    let generated = match cell.model {
        PlanModel::Linear | PlanModel::Mvt => {
            gen_linear(&linear_config(cell, plan.grid_size, rep_seed), &mut rng)
        }
        PlanModel::Logistic => {
            let cfg =
                LogisticSimConfig::new(cell.n, cell.m, cell.ncomp, rep_seed).with_grid_size(plan.grid_size);
            gen_logistic(&cfg, &mut rng)
        }
    };
    let (data, truth) = match generated {
        Ok(pair) => pair,
        Err(e) => return fail_all(e.tag()),
    };

    // Stage 2: moments per conditioning flavor (estimated flavors are
    // refit on this replication's data; true flavors come prepared).
    let need_cond = modes.iter().any(|m| m.uses_outcome());
    let need_marg = modes.iter().any(|m| !m.uses_outcome());
    let grid = truth.beta.grid().clone();
    let bandwidth = default_bandwidth(&data);
    let estimate_flavor = |conditional: bool| -> Result<PreparedParams> {
        prepare(
            estimate_params(&data, &grid, DEFAULT_BASIS_DIM, bandwidth, conditional)?,
            cell.ncomp,
        )
    };
    let flavors: std::result::Result<(Option<PreparedParams>, Option<PreparedParams>), Error> =
        (|| {
            let cond = match (&fixed.conditional, need_cond) {
                (Some(_), _) | (_, false) => None,
                (None, true) => Some(estimate_flavor(true)?),
            };
            let marg = match (&fixed.marginal, need_marg) {
                (Some(_), _) | (_, false) => None,
                (None, true) => Some(estimate_flavor(false)?),
            };
            Ok((cond, marg))
        })();
    let (est_cond, est_marg) = match flavors {
        Ok(pair) => pair,
        Err(e) => return fail_all(e.tag()),
    };

    // Stage 3: impute, fit, pool per mode. The imputation seed is shared so
    // the mode-independent substreams line up across modes.
    let impute_seed = mix_seed(&[rep_seed, 1]);
    modes
        .iter()
        .map(|&mode| {
            let flavor = if mode.uses_outcome() {
                fixed.conditional.as_ref().or(est_cond.as_ref())
            } else {
                fixed.marginal.as_ref().or(est_marg.as_ref())
            }
            .expect("a needed flavor is always prepared or estimated");
            let run = fit_with_system(
                &data,
                &flavor.params,
                &flavor.eig,
                mode,
                plan.k,
                impute_seed,
                Estimator::Scores,
            )
            .and_then(|fit| {
                let err = ise(fit.pooled.beta_bar(), &truth.beta)?;
                Ok((err, fit.p_value < TEST_LEVEL))
            });
            match run {
                Ok((err, reject)) => ReplicationRecord {
                    cell: *cell,
                    mode,
                    rep: rep + 1,
                    ise: Some(err),
                    reject: Some(reject),
                    fail_tag: None,
                },
                Err(e) => ReplicationRecord {
                    cell: *cell,
                    mode,
                    rep: rep + 1,
                    ise: None,
                    reject: None,
                    fail_tag: Some(e.tag()),
                },
            }
        })
        .collect()
}

use rand::SeedableRng as _;

/// Run every cell of the plan for `plan.replications` replications.
///
/// Replications are independent and run on the worker pool; records are
/// assembled in (cell, replication, mode) order regardless of scheduling,
/// so a plan and seed determine the result byte for byte.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let cells = plan.cells();
    let need_cond = plan.modes.iter().any(|m| m.uses_outcome());
    let need_marg = plan.modes.iter().any(|m| !m.uses_outcome());

    let mut records = Vec::with_capacity(cells.len() * plan.replications * plan.modes.len());
    for (cell_idx, cell) in cells.iter().enumerate() {
        let fixed = true_cell_params(cell, plan.grid_size, need_cond, need_marg)?;
        let mut cell_records: Vec<Vec<ReplicationRecord>> = (0..plan.replications)
            .into_par_iter()
            .map(|rep| run_replication(cell, plan, cell_idx, rep, &fixed))
            .collect();
        for batch in cell_records.drain(..) {
            records.extend(batch);
        }
        eprintln!(
            "cell {}/{}: {} {} N={} m={} J={} w={} done",
            cell_idx + 1,
            cells.len(),
            cell.model,
            cell.param_mode_label(),
            cell.n,
            cell.m,
            cell.ncomp,
            cell.w
        );
    }
    let summaries = summarize(&cells, &plan.modes, &records);
    Ok(ExperimentResult { records, summaries })
}

// ---------------------------------------------------------------------------
// Table presets
// ---------------------------------------------------------------------------

/// The replicated comparison tables the runner knows how to lay out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableId {
    TrueJ,
    TrueN,
    TrueM,
    EstJ,
    EstN,
    EstM,
    Reject,
    LogisticJ,
    LogisticN,
    LogisticM,
    Mvt,
}

impl TableId {
    pub const ALL: [TableId; 11] = [
        TableId::TrueJ,
        TableId::TrueN,
        TableId::TrueM,
        TableId::EstJ,
        TableId::EstN,
        TableId::EstM,
        TableId::Reject,
        TableId::LogisticJ,
        TableId::LogisticN,
        TableId::LogisticM,
        TableId::Mvt,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Self::TrueJ => "trueJ",
            Self::TrueN => "trueN",
            Self::TrueM => "truem",
            Self::EstJ => "estJ",
            Self::EstN => "estN",
            Self::EstM => "estm",
            Self::Reject => "reject",
            Self::LogisticJ => "logisticJ",
            Self::LogisticN => "logisticN",
            Self::LogisticM => "logisticm",
            Self::Mvt => "mvt",
        }
    }

    /// Default replication count at desk scale: 200 where moments are exact
    /// (cheap cells), 100 where they are re-estimated each replication.
    pub fn default_replications(&self) -> usize {
        match self {
            Self::TrueJ | Self::TrueN | Self::TrueM => 200,
            _ => 100,
        }
    }

    /// Whether the table reports rejection rates rather than median ISE.
    pub fn reports_rejections(&self) -> bool {
        *self == Self::Reject
    }

    /// The factor that varies along the rows.
    fn factor(&self) -> Factor {
        match self {
            Self::TrueJ | Self::EstJ | Self::LogisticJ => Factor::Ncomp,
            Self::TrueN | Self::EstN | Self::LogisticN => Factor::N,
            Self::TrueM | Self::EstM | Self::Reject | Self::LogisticM | Self::Mvt => Factor::M,
        }
    }
}

impl std::fmt::Display for TableId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown table id '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Factor {
    N,
    M,
    Ncomp,
}

impl Factor {
    fn name(&self) -> &'static str {
        match self {
            Self::N => "N",
            Self::M => "m",
            Self::Ncomp => "J",
        }
    }

    fn of(&self, cell: &Cell) -> usize {
        match self {
            Self::N => cell.n,
            Self::M => cell.m,
            Self::Ncomp => cell.ncomp,
        }
    }
}

/// The plan behind a preset table, at a configurable replication count.
pub fn table_plan(table: TableId, replications: usize, seed: u64) -> ExperimentPlan {
    let modes = ImputationMode::ALL.to_vec();
    let w_levels = vec![0.0, 5.0, 10.0];
    let all_n = vec![100, 200, 400, 800];
    let all_m = vec![2, 5, 10, 20];
    let all_j = vec![1, 2, 3, 4, 5, 6];
    let base = |model: PlanModel, pm: ParamMode, n: Vec<usize>, m: Vec<usize>, j: Vec<usize>, w: Vec<f64>| {
        ExperimentPlan {
            model: vec![model],
            param_mode: vec![pm],
            n,
            m,
            ncomp: j,
            w,
            modes: modes.clone(),
            replications,
            seed,
            k: default_k(),
            grid_size: default_grid_size(),
        }
    };
    use ParamMode::{Estimated, True};
    use PlanModel::{Linear, Logistic, Mvt};
    match table {
        TableId::TrueJ => base(Linear, True, vec![200], vec![2], all_j, w_levels),
        TableId::TrueN => base(Linear, True, all_n, vec![2], vec![4], w_levels),
        TableId::TrueM => base(Linear, True, vec![200], all_m, vec![4], w_levels),
        TableId::EstJ => base(Linear, Estimated, vec![200], vec![2], all_j, w_levels),
        TableId::EstN => base(Linear, Estimated, all_n, vec![2], vec![2], w_levels),
        TableId::EstM => base(Linear, Estimated, vec![200], all_m, vec![2], w_levels),
        TableId::Reject => base(Linear, Estimated, vec![200], all_m, vec![2], w_levels),
        TableId::LogisticJ => base(Logistic, Estimated, vec![400], vec![2], all_j, vec![0.0]),
        TableId::LogisticN => base(Logistic, Estimated, all_n, vec![2], vec![2], vec![0.0]),
        TableId::LogisticM => base(Logistic, Estimated, vec![400], all_m, vec![2], vec![0.0]),
        TableId::Mvt => base(Mvt, Estimated, vec![200], all_m, vec![2], w_levels),
    }
}

/// Lay a result out like the published comparison tables: one row per level
/// of the varying factor, one column per mode (crossed with the signal
/// weight for continuous models). Cells whose replications all failed print
/// `NA`.
pub fn pivot_table(table: TableId, plan: &ExperimentPlan, result: &ExperimentResult) -> String {
    use std::fmt::Write as _;
    let factor = table.factor();
    let levels: Vec<usize> = match factor {
        Factor::N => plan.n.clone(),
        Factor::M => plan.m.clone(),
        Factor::Ncomp => plan.ncomp.clone(),
    };
    let w_levels: Vec<f64> =
        if plan.model == [PlanModel::Logistic] { vec![0.0] } else { plan.w.clone() };
    let logistic = plan.model == [PlanModel::Logistic];

    let mut out = String::new();
    let _ = write!(out, "{}", factor.name());
    for &w in &w_levels {
        for mode in &plan.modes {
            if logistic {
                let _ = write!(out, ",{mode}");
            } else {
                let _ = write!(out, ",{mode}_w{w}");
            }
        }
    }
    out.push('\n');

    for &level in &levels {
        let _ = write!(out, "{level}");
        for &w in &w_levels {
            for &mode in &plan.modes {
                let hit = result.summaries.iter().find(|s| {
                    s.mode == mode && factor.of(&s.cell) == level && s.cell.w == w
                });
                let value = hit.and_then(|s| {
                    if table.reports_rejections() {
                        s.reject_rate
                    } else {
                        s.median_ise
                    }
                });
                match value {
                    Some(v) => {
                        let _ = write!(out, ",{v:.4}");
                    }
                    None => out.push_str(",NA"),
                }
            }
        }
        out.push('\n');
    }
    out
}
