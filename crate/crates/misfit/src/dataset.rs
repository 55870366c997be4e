//! Sparse functional data and the evaluation grid everything lives on.
//!
//! A [`Subject`] is a handful of `(time, value)` pairs on `[0, 1]` plus one
//! scalar outcome. A [`SparseFunctionalDataset`] is the collection used by the
//! whole pipeline. Estimated objects (means, eigenfunctions, coefficient
//! curves, covariance surfaces) are represented on a shared [`Grid`] carrying
//! trapezoid quadrature weights, so that inner products and integrals are the
//! same discrete sums everywhere in the crate.
//!
//! Design notes:
//! - Grid weights are normalized to sum to exactly one; integrals over the
//!   full span and probability-style averages then share one code path.
//! - `inner_product` accumulates strictly in index order so results are
//!   reproducible bit-for-bit across runs and thread counts.
//! - Values are validated at construction; downstream code may assume
//!   finiteness and ordering instead of re-checking.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether outcomes are arbitrary reals or 0/1 class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// One subject: irregular observation times, noisy curve values, one outcome.
#[derive(Debug, Clone)]
pub struct Subject {
    id: String,
    times: Vec<f64>,
    values: Vec<f64>,
    outcome: f64,
}

impl Subject {
    /// Validates ordering, range and finiteness.
    ///
    /// Times must be strictly increasing within `[0, 1]`; `values` must match
    /// `times` in length and be finite, as must `outcome`.
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<f64>, outcome: f64) -> Result<Self> {
        let id = id.into();
        if times.is_empty() {
            return Err(Error::Empty(format!("subject {id} has no observations")));
        }
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "subject {id}: {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        for &t in &times {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(Error::TimeOutOfRange { id, t });
            }
        }
        for w in times.windows(2) {
            if w[1] == w[0] {
                return Err(Error::DuplicateTime { id, t: w[1] });
            }
            if w[1] < w[0] {
                return Err(Error::InvalidInput(format!(
                    "subject {id}: times must be sorted increasing"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) || !outcome.is_finite() {
            return Err(Error::InvalidInput(format!("subject {id}: non-finite value")));
        }
        Ok(Self { id, times, values, outcome })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn outcome(&self) -> f64 {
        self.outcome
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// A collection of subjects sharing one outcome type.
#[derive(Debug, Clone)]
pub struct SparseFunctionalDataset {
    subjects: Vec<Subject>,
    outcome_kind: OutcomeKind,
}

impl SparseFunctionalDataset {
    /// Requires at least two subjects; binary outcomes must be 0/1 with both
    /// classes present.
    pub fn new(subjects: Vec<Subject>, outcome_kind: OutcomeKind) -> Result<Self> {
        if subjects.len() < 2 {
            return Err(Error::Empty(format!(
                "need at least 2 subjects, found {}",
                subjects.len()
            )));
        }
        if outcome_kind == OutcomeKind::Binary {
            let mut seen = [false, false];
            for s in &subjects {
                if s.outcome == 0.0 {
                    seen[0] = true;
                } else if s.outcome == 1.0 {
                    seen[1] = true;
                } else {
                    return Err(Error::InvalidInput(format!(
                        "subject {}: binary outcome must be 0 or 1, found {}",
                        s.id, s.outcome
                    )));
                }
            }
            if !(seen[0] && seen[1]) {
                return Err(Error::DegenerateOutcome(
                    "binary outcomes contain only one class".into(),
                ));
            }
        }
        Ok(Self { subjects, outcome_kind })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    /// Number of subjects.
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.outcome).collect()
    }

    /// Total number of observations across subjects.
    pub fn n_obs(&self) -> usize {
        self.subjects.iter().map(|s| s.len()).sum()
    }
}

/// Ordered evaluation points in `[0, 1]` with trapezoid quadrature weights
/// normalized to unit total mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Builds a grid from strictly increasing points in `[0, 1]`.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, found {}",
                points.len()
            )));
        }
        for &t in &points {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidGrid(format!("point {t} outside [0, 1]")));
            }
        }
        for w in points.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidGrid(format!(
                    "points must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        let m = points.len();
        let mut weights = vec![0.0; m];
        weights[0] = (points[1] - points[0]) / 2.0;
        weights[m - 1] = (points[m - 1] - points[m - 2]) / 2.0;
        for k in 1..m - 1 {
            weights[k] = (points[k + 1] - points[k - 1]) / 2.0;
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the interval containing `t` and the fractional position
    /// within it, clamping `t` to the grid span.
    pub(crate) fn locate(&self, t: f64) -> (usize, f64) {
        let pts = &self.points;
        let m = pts.len();
        if t <= pts[0] {
            return (0, 0.0);
        }
        if t >= pts[m - 1] {
            return (m - 2, 1.0);
        }
        // partition_point returns the first index with pts[i] > t, so i-1 is
        // the left edge of the containing interval.
        let i = pts.partition_point(|&p| p <= t) - 1;
        let i = i.min(m - 2);
        (i, (t - pts[i]) / (pts[i + 1] - pts[i]))
    }

    /// Writes the grid as CSV with header `t,w`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("t,w\n");
        for (t, w) in self.points.iter().zip(&self.weights) {
            let _ = writeln!(out, "{t},{w}");
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Uniform grid of `m` points spanning `[0, 1]`.
pub fn make_grid(m: usize) -> Result<Grid> {
    if m < 2 {
        return Err(Error::InvalidGrid(format!("need at least 2 points, found {m}")));
    }
    let denom = (m - 1) as f64;
    Grid::from_points((0..m).map(|j| j as f64 / denom).collect())
}

/// A function known by its values on a grid; evaluated elsewhere by linear
/// interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Builds by evaluating `f` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points.iter().map(|&t| f(t)).collect();
        Self { grid, values }
    }

    pub fn zero(grid: Grid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Linear interpolation, clamped to the grid span. Exact at grid points.
    pub fn eval(&self, t: f64) -> f64 {
        let (i, u) = self.grid.locate(t);
        (1.0 - u) * self.values[i] + u * self.values[i + 1]
    }
}

/// Quadrature inner product `Σ_k w_k f_k g_k`, accumulated in index order.
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch("inner product of functions on different grids".into()));
    }
    let w = f.grid.weights();
    let mut acc = 0.0;
    for k in 0..w.len() {
        // The product f·g is formed first so the sum is bitwise symmetric
        // in its arguments.
        acc += w[k] * (f.values[k] * g.values[k]);
    }
    Ok(acc)
}

/// A symmetric surface on `grid × grid` (covariance-like object).
#[derive(Debug, Clone, PartialEq)]
pub struct GridKernel {
    grid: Grid,
    values: DMatrix<f64>,
}

impl GridKernel {
    /// Checks the matrix is `M × M` and symmetric to within `1e-10` relative
    /// tolerance, then stores the exactly symmetrized average.
    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        let m = grid.len();
        if values.nrows() != m || values.ncols() != m {
            return Err(Error::GridMismatch(format!(
                "{}x{} surface on a {}-point grid",
                values.nrows(),
                values.ncols(),
                m
            )));
        }
        let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut sym = values;
        for j in 0..m {
            for k in (j + 1)..m {
                let a = sym[(j, k)];
                let b = sym[(k, j)];
                if (a - b).abs() > 1e-10 * (1.0 + scale) {
                    return Err(Error::InvalidInput(format!(
                        "surface not symmetric at ({j}, {k}): {a} vs {b}"
                    )));
                }
                let avg = 0.5 * (a + b);
                sym[(j, k)] = avg;
                sym[(k, j)] = avg;
            }
        }
        Ok(Self { grid, values: sym })
    }

    /// Builds from a symmetric bivariate function.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let pts = grid.points.clone();
        let m = pts.len();
        let mut values = DMatrix::zeros(m, m);
        for j in 0..m {
            for k in j..m {
                let v = 0.5 * (f(pts[j], pts[k]) + f(pts[k], pts[j]));
                values[(j, k)] = v;
                values[(k, j)] = v;
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Bilinear interpolation, clamped to the grid span. Exact at grid nodes.
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        let (i, u) = self.grid.locate(t);
        let (j, v) = self.grid.locate(s);
        let a = &self.values;
        (1.0 - u) * ((1.0 - v) * a[(i, j)] + v * a[(i, j + 1)])
            + u * ((1.0 - v) * a[(i + 1, j)] + v * a[(i + 1, j + 1)])
    }

    /// Diagonal as a function on the grid.
    pub fn diagonal(&self) -> GridFunction {
        let values = (0..self.grid.len()).map(|k| self.values[(k, k)]).collect();
        GridFunction { grid: self.grid.clone(), values }
    }

    /// Integrates the second argument against `f`:
    /// `out(t_j) = Σ_k w_k K(t_j, t_k) f(t_k)`.
    pub fn integrate_rows(&self, f: &GridFunction) -> Result<GridFunction> {
        if f.grid != self.grid {
            return Err(Error::GridMismatch("kernel and function on different grids".into()));
        }
        let w = self.grid.weights();
        let m = w.len();
        let mut out = vec![0.0; m];
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += w[k] * self.values[(j, k)] * f.values[k];
            }
            out[j] = acc;
        }
        Ok(GridFunction { grid: self.grid.clone(), values: out })
    }

    /// Double integral `Σ_{j,k} w_j f_j K(t_j, t_k) w_k g_k`.
    pub fn bilinear(&self, f: &GridFunction, g: &GridFunction) -> Result<f64> {
        let kf = self.integrate_rows(g)?;
        if f.grid != self.grid {
            return Err(Error::GridMismatch("kernel and function on different grids".into()));
        }
        inner_product(f, &kf)
    }
}

/// Reads a long-format CSV with header `subject_id,time,value,outcome`.
///
/// Rows are grouped by id (subjects keep first-appearance order, observations
/// are sorted by time). With `rescale_time`, observation times are first
/// mapped affinely so the smallest becomes 0 and the largest 1; otherwise
/// out-of-range times are an error.
pub fn load_long_csv(
    path: impl AsRef<Path>,
    outcome_kind: OutcomeKind,
    rescale_time: bool,
) -> Result<SparseFunctionalDataset> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    {
        let headers = reader.headers()?;
        let expect = ["subject_id", "time", "value", "outcome"];
        if headers.len() != 4 || headers.iter().zip(expect).any(|(h, e)| h != e) {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("header must be subject_id,time,value,outcome, found {headers:?}"),
            });
        }
    }

    struct Row {
        id: String,
        time: f64,
        value: f64,
        outcome: f64,
        line: usize,
    }

    let mut rows: Vec<Row> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record?;
        if record.len() != 4 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::MalformedRow { line, reason: "empty subject_id".into() });
        }
        let parse = |field: &str, name: &str| -> Result<f64> {
            let v: f64 = field.trim().parse().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("{name} is not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedRow { line, reason: format!("{name} is not finite") });
            }
            Ok(v)
        };
        let time = parse(&record[1], "time")?;
        let value = parse(&record[2], "value")?;
        let outcome = parse(&record[3], "outcome")?;
        if outcome_kind == OutcomeKind::Binary && outcome != 0.0 && outcome != 1.0 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("binary outcome must be 0 or 1, found {outcome}"),
            });
        }
        rows.push(Row { id, time, value, outcome, line });
    }
    if rows.is_empty() {
        return Err(Error::Empty("no data rows".into()));
    }

    if rescale_time {
        let lo = rows.iter().map(|r| r.time).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.time).fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Err(Error::InvalidInput(
                "cannot rescale time: all observation times are equal".into(),
            ));
        }
        for r in &mut rows {
            r.time = ((r.time - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
    } else {
        for r in &rows {
            if !(0.0..=1.0).contains(&r.time) {
                return Err(Error::TimeOutOfRange { id: r.id.clone(), t: r.time });
            }
        }
    }

    // Group by id, preserving first appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<usize>> = std::collections::HashMap::new();
    for (i, r) in rows.iter().enumerate() {
        groups
            .entry(r.id.clone())
            .or_insert_with(|| {
                order.push(r.id.clone());
                Vec::new()
            })
            .push(i);
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let idxs = &groups[&id];
        let outcome = rows[idxs[0]].outcome;
        for &i in idxs {
            let r = &rows[i];
            if r.outcome != outcome {
                return Err(Error::InconsistentOutcome { id, a: outcome, b: r.outcome });
            }
        }
        let mut obs: Vec<(f64, f64, usize)> =
            idxs.iter().map(|&i| (rows[i].time, rows[i].value, rows[i].line)).collect();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in obs.windows(2) {
            if w[1].0 == w[0].0 {
                return Err(Error::DuplicateTime { id, t: w[1].0 });
            }
        }
        let times = obs.iter().map(|o| o.0).collect();
        let values = obs.iter().map(|o| o.1).collect();
        subjects.push(Subject::new(id, times, values, outcome)?);
    }

    SparseFunctionalDataset::new(subjects, outcome_kind)
}

/// Writes a dataset in the same long format accepted by [`load_long_csv`].
pub fn write_long_csv(data: &SparseFunctionalDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("subject_id,time,value,outcome\n");
    for s in data.subjects() {
        for (t, v) in s.times().iter().zip(s.values()) {
            let _ = writeln!(out, "{},{t},{v},{}", s.id(), s.outcome());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
