//! Loading, persisting, splitting, windowing, and normalizing
//! multi-node thermal time series.
//!
//! On disk a run is a UTF-8 CSV with header `time,<node_1>,...,<node_d>`:
//! column 0 is time in seconds, every other column one node's series
//! (kelvin for temperatures, W/m² for heat fluxes). Values are written
//! with the shortest round-trip float representation, so a save/load
//! cycle is bit-exact.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv at line {line}: {detail}")]
    MalformedCsv { line: usize, detail: String },
    #[error("time column not strictly increasing at row {index}")]
    NonMonotonicTime { index: usize },
    #[error("non-uniform time spacing at row {index}")]
    NonUniformSpacing { index: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("need at least 2 node columns, found {found}")]
    TooFewNodes { found: usize },
    #[error("series too short: need {needed} rows, found {found}")]
    TooShort { needed: usize, found: usize },
    #[error("inconsistent dimensions: {detail}")]
    DimensionMismatch { detail: String },
    #[error("split fractions must each lie in (0,1) and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),
    #[error("node {node_id} is degenerate (constant) on the training segment")]
    DegenerateNode { node_id: String },
    #[error("series nodes {found:?} do not match normalizer nodes {expected:?}")]
    NodeMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("invalid initial conditions: {detail}")]
    InvalidInitialConditions { detail: String },
}

/// Physical quantity a series records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    Temperature,
    HeatFlux,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Temperature => write!(f, "temperature"),
            Quantity::HeatFlux => write!(f, "heat_flux"),
        }
    }
}

/// Boundary and starting conditions of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConditions {
    /// Environmental air temperature T∞, kelvin.
    pub ambient_temp: f64,
    /// Ground temperature under the machine bed, kelvin.
    pub ground_temp: f64,
    /// Uniform system temperature at t = 0, kelvin.
    pub initial_system_temp: f64,
    /// Imposed heat-flux magnitude per internal source, W/m².
    pub heat_flux_magnitudes: Vec<f64>,
    /// Air film coefficient h for convective exchange, W/(m²·K).
    pub film_coefficient: f64,
}

impl InitialConditions {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |detail: String| Err(DatasetError::InvalidInitialConditions { detail });
        for (name, t) in [
            ("ambient_temp", self.ambient_temp),
            ("ground_temp", self.ground_temp),
            ("initial_system_temp", self.initial_system_temp),
        ] {
            if !(t.is_finite() && t > 0.0) {
                return bad(format!("{name} must be a positive temperature, got {t}"));
            }
        }
        if !(self.film_coefficient.is_finite() && self.film_coefficient >= 0.0) {
            return bad(format!(
                "film_coefficient must be >= 0, got {}",
                self.film_coefficient
            ));
        }
        if self.heat_flux_magnitudes.iter().any(|q| !q.is_finite()) {
            return bad("heat flux magnitudes must be finite".into());
        }
        Ok(())
    }
}

impl Default for InitialConditions {
    /// Quiescent lab conditions: machine soaked at 20 °C air over
    /// slightly cooler ground, no internal sources.
    fn default() -> Self {
        Self {
            ambient_temp: 293.15,
            ground_temp: 291.15,
            initial_system_temp: 293.15,
            heat_flux_magnitudes: Vec::new(),
            film_coefficient: 10.0,
        }
    }
}

/// One run of multi-node measurements on a uniform time grid.
///
/// Invariants (checked at construction): timestamps strictly increasing
/// with uniform spacing, all values finite, at least two nodes, shapes
/// consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTimeSeries<F> {
    run_id: String,
    quantity: Quantity,
    timestamps: Vec<F>,
    values: Tensor<F>,
    node_ids: Vec<String>,
    initial_conditions: InitialConditions,
}

impl<F: Scalar> NodeTimeSeries<F> {
    pub fn new(
        run_id: impl Into<String>,
        quantity: Quantity,
        timestamps: Vec<F>,
        values: Tensor<F>,
        node_ids: Vec<String>,
        initial_conditions: InitialConditions,
    ) -> Result<Self, DatasetError> {
        let t = timestamps.len();
        if values.rows() != t {
            return Err(DatasetError::DimensionMismatch {
                detail: format!("{t} timestamps but {} value rows", values.rows()),
            });
        }
        if node_ids.len() != values.cols() {
            return Err(DatasetError::DimensionMismatch {
                detail: format!(
                    "{} node ids but {} value columns",
                    node_ids.len(),
                    values.cols()
                ),
            });
        }
        if node_ids.len() < 2 {
            return Err(DatasetError::TooFewNodes {
                found: node_ids.len(),
            });
        }
        for i in 1..t {
            if timestamps[i] <= timestamps[i - 1] {
                return Err(DatasetError::NonMonotonicTime { index: i });
            }
        }
        if t >= 3 {
            let dt0 = timestamps[1] - timestamps[0];
            for i in 2..t {
                let dt = timestamps[i] - timestamps[i - 1];
                let rel = ((dt - dt0) / dt0).abs();
                if rel > F::of(1e-9) {
                    return Err(DatasetError::NonUniformSpacing { index: i });
                }
            }
        }
        for r in 0..values.rows() {
            for c in 0..values.cols() {
                if !values.get2(r, c).is_finite() {
                    return Err(DatasetError::NonFiniteValue { row: r, col: c });
                }
            }
        }
        initial_conditions.validate()?;
        Ok(Self {
            run_id: run_id.into(),
            quantity,
            timestamps,
            values,
            node_ids,
            initial_conditions,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn quantity(&self) -> Quantity {
        self.quantity
    }

    pub fn timestamps(&self) -> &[F] {
        &self.timestamps
    }

    /// `[T, d]` value matrix; row = time step, column = node.
    pub fn values(&self) -> &Tensor<F> {
        &self.values
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn initial_conditions(&self) -> &InitialConditions {
        &self.initial_conditions
    }

    /// Number of time steps T.
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Number of nodes d.
    pub fn width(&self) -> usize {
        self.node_ids.len()
    }

    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.run_id = run_id.into();
        self
    }

    pub fn with_quantity(mut self, quantity: Quantity) -> Self {
        self.quantity = quantity;
        self
    }

    pub fn with_initial_conditions(
        mut self,
        ics: InitialConditions,
    ) -> Result<Self, DatasetError> {
        ics.validate()?;
        self.initial_conditions = ics;
        Ok(self)
    }

    /// New series keeping only the given node columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self, DatasetError> {
        for &c in cols {
            if c >= self.width() {
                return Err(DatasetError::DimensionMismatch {
                    detail: format!("column {c} out of range for width {}", self.width()),
                });
            }
        }
        let mut data = Vec::with_capacity(self.len() * cols.len());
        for r in 0..self.len() {
            for &c in cols {
                data.push(self.values.get2(r, c));
            }
        }
        Ok(Self {
            run_id: self.run_id.clone(),
            quantity: self.quantity,
            timestamps: self.timestamps.clone(),
            values: Tensor::matrix(self.len(), cols.len(), data),
            node_ids: cols.iter().map(|&c| self.node_ids[c].clone()).collect(),
            initial_conditions: self.initial_conditions.clone(),
        })
    }

    fn segment(&self, r0: usize, r1: usize) -> Self {
        Self {
            run_id: self.run_id.clone(),
            quantity: self.quantity,
            timestamps: self.timestamps[r0..r1].to_vec(),
            values: self.values.slice_rows(r0, r1),
            node_ids: self.node_ids.clone(),
            initial_conditions: self.initial_conditions.clone(),
        }
    }
}

/// Contiguous-in-time split fractions; train is the earliest segment,
/// test the latest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64) -> Result<Self, DatasetError> {
        let fr = [train_frac, val_frac, test_frac];
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !fr.iter().copied().all(open_unit) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidFractions(fr));
        }
        Ok(Self {
            train_frac,
            val_frac,
            test_frac,
        })
    }
}

impl Default for SplitSpec {
    /// The 60/20/20 split used throughout.
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
        }
    }
}

/// The three contiguous segments of one run, in time order.
#[derive(Debug, Clone)]
pub struct SplitSeries<F> {
    pub train: NodeTimeSeries<F>,
    pub val: NodeTimeSeries<F>,
    pub test: NodeTimeSeries<F>,
}

/// Splits a run into contiguous train/val/test segments. Lengths are
/// the floor allocation of each fraction with the remainder assigned to
/// train; every segment must end up non-empty.
pub fn split<F: Scalar>(
    series: &NodeTimeSeries<F>,
    spec: &SplitSpec,
) -> Result<SplitSeries<F>, DatasetError> {
    let t = series.len();
    // The +1e-9 absorbs binary-fraction error so e.g. 100 * 0.6 floors
    // to 60, not 59.
    let alloc = |frac: f64| (t as f64 * frac + 1e-9).floor() as usize;
    let n_val = alloc(spec.val_frac);
    let n_test = alloc(spec.test_frac);
    let n_train_floor = alloc(spec.train_frac);
    let spoken_for = n_train_floor + n_val + n_test;
    if spoken_for > t {
        return Err(DatasetError::TooShort {
            needed: spoken_for,
            found: t,
        });
    }
    let n_train = n_train_floor + (t - spoken_for);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(DatasetError::TooShort { needed: 3, found: t });
    }
    Ok(SplitSeries {
        train: series.segment(0, n_train),
        val: series.segment(n_train, n_train + n_val),
        test: series.segment(n_train + n_val, t),
    })
}

/// One supervised sample: `seq_len` consecutive steps and the step
/// immediately after them.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<F> {
    /// `[seq_len, d]` input block, rows in time order.
    pub input: Tensor<F>,
    /// `[1, d]` one-step-ahead target.
    pub target: Tensor<F>,
}

/// Stride-1 sliding windows: window `i` covers steps `[i, i+seq_len)`
/// and its target is step `i + seq_len`, giving `T − seq_len` windows.
pub fn make_windows<F: Scalar>(
    series: &NodeTimeSeries<F>,
    seq_len: usize,
) -> Result<Vec<Window<F>>, DatasetError> {
    windows_from_values(series.values(), seq_len)
}

/// [`make_windows`] on a bare `[T, d]` matrix, for data that has already
/// been normalized or projected out of its series wrapper.
pub fn windows_from_values<F: Scalar>(
    values: &Tensor<F>,
    seq_len: usize,
) -> Result<Vec<Window<F>>, DatasetError> {
    assert!(seq_len >= 1, "seq_len must be at least 1");
    let t = values.rows();
    if t < seq_len + 1 {
        return Err(DatasetError::TooShort {
            needed: seq_len + 1,
            found: t,
        });
    }
    Ok((0..t - seq_len)
        .map(|i| Window {
            input: values.slice_rows(i, i + seq_len),
            target: values.slice_rows(i + seq_len, i + seq_len + 1),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    MinMax,
    ZScore,
}

/// Per-node affine map `x ↦ (x − offset)/scale` with its inverse.
///
/// MinMax: offset = min, scale = max − min (train maps into [0,1]).
/// ZScore: offset = mean, scale = population std.
/// Statistics are fitted on the training segment only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mode: NormMode,
    pub node_ids: Vec<String>,
    offset: Vec<f64>,
    scale: Vec<f64>,
}

/// Fits per-node statistics on `train`. A node whose statistics give a
/// zero scale (a constant series) cannot be normalized.
pub fn fit_normalizer<F: Scalar>(
    train: &NodeTimeSeries<F>,
    mode: NormMode,
) -> Result<Normalizer, DatasetError> {
    fit_normalizer_matrix(train.values(), train.node_ids(), mode)
}

/// [`fit_normalizer`] on a bare `[T, d]` matrix, e.g. rows pooled from
/// several runs.
pub fn fit_normalizer_matrix<F: Scalar>(
    values: &Tensor<F>,
    node_ids: &[String],
    mode: NormMode,
) -> Result<Normalizer, DatasetError> {
    let (t, d) = (values.rows(), values.cols());
    assert_eq!(d, node_ids.len(), "node id count must match matrix width");
    let mut offset = Vec::with_capacity(d);
    let mut scale = Vec::with_capacity(d);
    for (c, node_id) in node_ids.iter().enumerate() {
        let col: Vec<f64> = (0..t).map(|r| values.get2(r, c).to64()).collect();
        let (o, s) = match mode {
            NormMode::MinMax => {
                let min = col.iter().copied().fold(f64::INFINITY, f64::min);
                let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (min, max - min)
            }
            NormMode::ZScore => {
                let mean = col.iter().sum::<f64>() / t as f64;
                let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / t as f64;
                let std = var.sqrt();
                // Constant columns leave roundoff residue after
                // centering; treat near-zero spread as degenerate.
                if std <= 1e-12 * mean.abs().max(1.0) {
                    (mean, 0.0)
                } else {
                    (mean, std)
                }
            }
        };
        if s == 0.0 || !s.is_finite() {
            return Err(DatasetError::DegenerateNode {
                node_id: node_id.clone(),
            });
        }
        offset.push(o);
        scale.push(s);
    }
    Ok(Normalizer {
        mode,
        node_ids: node_ids.to_vec(),
        offset,
        scale,
    })
}

impl Normalizer {
    pub fn width(&self) -> usize {
        self.node_ids.len()
    }

    /// Normalizes a `[*, d]` matrix whose columns follow the fitted
    /// node order.
    pub fn apply_matrix<F: Scalar>(&self, values: &Tensor<F>) -> Tensor<F> {
        self.affine(values, |x, o, s| (x - o) / s)
    }

    /// Inverse of [`Normalizer::apply_matrix`].
    pub fn invert_matrix<F: Scalar>(&self, values: &Tensor<F>) -> Tensor<F> {
        self.affine(values, |x, o, s| x * s + o)
    }

    fn affine<F: Scalar>(&self, values: &Tensor<F>, f: impl Fn(F, F, F) -> F) -> Tensor<F> {
        assert_eq!(
            values.cols(),
            self.width(),
            "matrix width does not match fitted node count"
        );
        let mut out = values.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = f(
                    out.get2(r, c),
                    F::of(self.offset[c]),
                    F::of(self.scale[c]),
                );
                out.set2(r, c, v);
            }
        }
        out
    }

    pub fn apply<F: Scalar>(
        &self,
        series: &NodeTimeSeries<F>,
    ) -> Result<NodeTimeSeries<F>, DatasetError> {
        self.check_nodes(series)?;
        let mut out = series.clone();
        out.values = self.apply_matrix(&series.values);
        Ok(out)
    }

    pub fn invert<F: Scalar>(
        &self,
        series: &NodeTimeSeries<F>,
    ) -> Result<NodeTimeSeries<F>, DatasetError> {
        self.check_nodes(series)?;
        let mut out = series.clone();
        out.values = self.invert_matrix(&series.values);
        Ok(out)
    }

    fn check_nodes<F: Scalar>(&self, series: &NodeTimeSeries<F>) -> Result<(), DatasetError> {
        if series.node_ids() != self.node_ids.as_slice() {
            return Err(DatasetError::NodeMismatch {
                expected: self.node_ids.clone(),
                found: series.node_ids().to_vec(),
            });
        }
        Ok(())
    }
}

/// Loads a run from CSV. The file stem becomes the run id; quantity
/// defaults to temperature and initial conditions to
/// [`InitialConditions::default`] (override with the builder methods).
pub fn load_csv<F: Scalar>(path: impl AsRef<Path>) -> Result<NodeTimeSeries<F>, DatasetError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.is_empty() {
        return Err(DatasetError::MalformedCsv {
            line: 1,
            detail: "empty header".into(),
        });
    }
    let node_ids: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let d = node_ids.len();
    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(csv_error)?;
        if record.len() != d + 1 {
            return Err(DatasetError::MalformedCsv {
                line,
                detail: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        let parse = |field: &str| {
            field.trim().parse::<F>().map_err(|_| DatasetError::MalformedCsv {
                line,
                detail: format!("non-numeric cell {field:?}"),
            })
        };
        timestamps.push(parse(&record[0])?);
        for field in record.iter().skip(1) {
            data.push(parse(field)?);
        }
    }
    let t = timestamps.len();
    let run_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_owned());
    NodeTimeSeries::new(
        run_id,
        Quantity::Temperature,
        timestamps,
        Tensor::matrix(t, d, data),
        node_ids,
        InitialConditions::default(),
    )
}

/// Writes a run as CSV using shortest round-trip float formatting, so
/// `load_csv` recovers the values bit-exactly.
pub fn save_csv<F: Scalar>(
    series: &NodeTimeSeries<F>,
    path: impl AsRef<Path>,
) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_error)?;
    let mut header = vec!["time".to_owned()];
    header.extend(series.node_ids().iter().cloned());
    writer.write_record(&header).map_err(csv_error)?;
    for r in 0..series.len() {
        let mut record = Vec::with_capacity(series.width() + 1);
        record.push(series.timestamps()[r].to_string());
        for c in 0..series.width() {
            record.push(series.values().get2(r, c).to_string());
        }
        writer.write_record(&record).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> DatasetError {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or_default();
    DatasetError::MalformedCsv {
        line,
        detail: e.to_string(),
    }
}
