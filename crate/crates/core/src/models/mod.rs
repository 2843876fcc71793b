//! The six sequence architectures: model specs, named parameter sets,
//! initialization, checkpoints, and tape-based forward passes.
//!
//! Every architecture maps a `[seq_len, d_in]` window to a `[1, d_out]`
//! prediction through a linear output head (no output activation; targets
//! are normalized real values that may leave (0, 1)). `forward_sequence`
//! applies the same head to every step's representation instead, which is
//! what the causality checks probe.

mod recurrent;
mod tcn;
mod transformer;

pub use recurrent::{bilstm_forward, gru_forward, lstm_forward, rnn_forward};
pub use tcn::{receptive_field, tcn_forward};
pub use transformer::transformer_forward;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{op}: input shape {found:?} does not fit the spec ({expected})")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: Vec<usize>,
    },
    #[error("hidden width {hidden} is not divisible by {heads} attention heads")]
    HeadsDivisibility { hidden: usize, heads: usize },
    #[error("invalid model spec: {detail}")]
    BadSpec { detail: String },
    #[error("parameters do not match the spec: {detail}")]
    ParameterMismatch { detail: String },
    #[error("unknown architecture {found:?}; valid kinds: {valid}")]
    UnknownKind { found: String, valid: String },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {detail}")]
    MalformedCheckpoint { detail: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rnn,
    Lstm,
    Gru,
    BiLstm,
    Transformer,
    Tcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Rnn,
        ModelKind::Lstm,
        ModelKind::Gru,
        ModelKind::BiLstm,
        ModelKind::Transformer,
        ModelKind::Tcn,
    ];

    /// Lowercase token used on the command line and in file names.
    pub fn token(self) -> &'static str {
        match self {
            ModelKind::Rnn => "rnn",
            ModelKind::Lstm => "lstm",
            ModelKind::Gru => "gru",
            ModelKind::BiLstm => "bilstm",
            ModelKind::Transformer => "transformer",
            ModelKind::Tcn => "tcn",
        }
    }

    /// Table-style label for reports.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Rnn => "RNN",
            ModelKind::Lstm => "LSTM",
            ModelKind::Gru => "GRU",
            ModelKind::BiLstm => "BiLSTM",
            ModelKind::Transformer => "Transformer",
            ModelKind::Tcn => "TCN",
        }
    }

    fn valid_tokens() -> String {
        Self::ALL
            .iter()
            .map(|k| k.token())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowered = s.to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.token() == lowered)
            .ok_or_else(|| ModelError::UnknownKind {
                found: s.to_string(),
                valid: Self::valid_tokens(),
            })
    }
}

/// Architecture hyperparameters. `heads` is read by the Transformer only
/// and `kernel` (tap count per dilated conv) by the TCN only; both carry
/// harmless defaults otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d_in: usize,
    pub d_out: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub heads: usize,
    pub kernel: usize,
    pub rng_seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, d_in: usize, d_out: usize) -> Self {
        Self {
            kind,
            d_in,
            d_out,
            hidden: 32,
            layers: 1,
            dropout: 0.0,
            heads: 2,
            kernel: 2,
            rng_seed: 0,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |detail: String| Err(ModelError::BadSpec { detail });
        if self.d_in == 0 || self.d_out == 0 {
            return bad(format!("d_in {} and d_out {} must be >= 1", self.d_in, self.d_out));
        }
        if self.hidden == 0 {
            return bad("hidden width must be >= 1".into());
        }
        if self.layers == 0 {
            return bad("layer count must be >= 1".into());
        }
        if !self.dropout.is_finite() || !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if self.kind == ModelKind::Transformer {
            if self.heads == 0 {
                return bad("transformer needs at least one attention head".into());
            }
            if !self.hidden.is_multiple_of(self.heads) {
                return Err(ModelError::HeadsDivisibility {
                    hidden: self.hidden,
                    heads: self.heads,
                });
            }
        }
        if self.kind == ModelKind::Tcn {
            if self.kernel == 0 {
                return bad("tcn kernel needs at least one tap".into());
            }
            // Dilation is 2^l; cap the depth so the shift never overflows.
            if self.layers > 32 {
                return bad(format!("tcn depth {} exceeds the dilation budget", self.layers));
            }
        }
        Ok(())
    }
}

enum Init {
    /// `U(-1/sqrt(fan_in), +1/sqrt(fan_in))`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

struct TensorDecl {
    name: String,
    shape: [usize; 2],
    init: Init,
}

impl TensorDecl {
    fn weight(name: String, rows: usize, cols: usize) -> Self {
        Self {
            name,
            shape: [rows, cols],
            init: Init::Uniform { fan_in: rows },
        }
    }

    fn conv_tap(name: String, rows: usize, cols: usize, taps: usize) -> Self {
        Self {
            name,
            shape: [rows, cols],
            init: Init::Uniform { fan_in: rows * taps },
        }
    }

    fn bias(name: String, cols: usize) -> Self {
        Self {
            name,
            shape: [1, cols],
            init: Init::Zeros,
        }
    }

    fn gain(name: String, cols: usize) -> Self {
        Self {
            name,
            shape: [1, cols],
            init: Init::Ones,
        }
    }
}

fn gate_decls(decls: &mut Vec<TensorDecl>, prefix: &str, gates: &[&str], d_in: usize, n: usize) {
    for gate in gates {
        decls.push(TensorDecl::weight(format!("{prefix}.{gate}.w_x"), d_in, n));
        decls.push(TensorDecl::weight(format!("{prefix}.{gate}.w_h"), n, n));
        decls.push(TensorDecl::bias(format!("{prefix}.{gate}.bias"), n));
    }
}

/// Declares every tensor of the architecture in a fixed order: the order
/// drives seeded initialization, checkpoint layout, and optimizer sweeps.
fn tensor_plan(spec: &ModelSpec) -> Vec<TensorDecl> {
    let n = spec.hidden;
    let mut decls = Vec::new();
    let mut head_in = n;
    match spec.kind {
        ModelKind::Rnn => {
            for l in 0..spec.layers {
                let d = if l == 0 { spec.d_in } else { n };
                decls.push(TensorDecl::weight(format!("layer{l}.w_input"), d, n));
                decls.push(TensorDecl::weight(format!("layer{l}.w_feedback"), n, n));
                decls.push(TensorDecl::bias(format!("layer{l}.bias"), n));
            }
        }
        ModelKind::Lstm => {
            for l in 0..spec.layers {
                let d = if l == 0 { spec.d_in } else { n };
                gate_decls(&mut decls, &format!("layer{l}"), &LSTM_GATES, d, n);
            }
        }
        ModelKind::Gru => {
            for l in 0..spec.layers {
                let d = if l == 0 { spec.d_in } else { n };
                gate_decls(&mut decls, &format!("layer{l}"), &GRU_GATES, d, n);
            }
        }
        ModelKind::BiLstm => {
            for dir in ["fwd", "bwd"] {
                for l in 0..spec.layers {
                    let d = if l == 0 { spec.d_in } else { 2 * n };
                    gate_decls(&mut decls, &format!("{dir}.layer{l}"), &LSTM_GATES, d, n);
                }
            }
            head_in = 2 * n;
        }
        ModelKind::Transformer => {
            decls.push(TensorDecl::weight("embed.weight".into(), spec.d_in, n));
            decls.push(TensorDecl::bias("embed.bias".into(), n));
            let ff = 4 * n;
            for l in 0..spec.layers {
                let p = format!("block{l}");
                for proj in ["w_q", "w_k", "w_v", "w_o"] {
                    decls.push(TensorDecl::weight(format!("{p}.attn.{proj}"), n, n));
                }
                for b in ["b_q", "b_k", "b_v", "b_o"] {
                    decls.push(TensorDecl::bias(format!("{p}.attn.{b}"), n));
                }
                decls.push(TensorDecl::gain(format!("{p}.norm1.gain"), n));
                decls.push(TensorDecl::bias(format!("{p}.norm1.bias"), n));
                decls.push(TensorDecl::weight(format!("{p}.ffn.w1"), n, ff));
                decls.push(TensorDecl::bias(format!("{p}.ffn.b1"), ff));
                decls.push(TensorDecl::weight(format!("{p}.ffn.w2"), ff, n));
                decls.push(TensorDecl::bias(format!("{p}.ffn.b2"), n));
                decls.push(TensorDecl::gain(format!("{p}.norm2.gain"), n));
                decls.push(TensorDecl::bias(format!("{p}.norm2.bias"), n));
            }
        }
        ModelKind::Tcn => {
            for l in 0..spec.layers {
                let c_in = if l == 0 { spec.d_in } else { n };
                let p = format!("block{l}");
                for j in 0..spec.kernel {
                    decls.push(TensorDecl::conv_tap(format!("{p}.conv1.tap{j}"), c_in, n, spec.kernel));
                }
                decls.push(TensorDecl::bias(format!("{p}.conv1.bias"), n));
                for j in 0..spec.kernel {
                    decls.push(TensorDecl::conv_tap(format!("{p}.conv2.tap{j}"), n, n, spec.kernel));
                }
                decls.push(TensorDecl::bias(format!("{p}.conv2.bias"), n));
                if c_in != n {
                    decls.push(TensorDecl::weight(format!("{p}.skip.weight"), c_in, n));
                }
            }
        }
    }
    decls.push(TensorDecl::weight("head.weight".into(), head_in, spec.d_out));
    decls.push(TensorDecl::bias("head.bias".into(), spec.d_out));
    debug_assert_eq!(
        decls.iter().map(|d| d.name.as_str()).collect::<HashSet<_>>().len(),
        decls.len(),
        "tensor names must be unique"
    );
    decls
}

const LSTM_GATES: [&str; 4] = ["input", "forget", "cell", "output"];
const GRU_GATES: [&str; 3] = ["update", "reset", "candidate"];

/// Total scalar parameter count, a pure function of the spec.
pub fn parameter_count(spec: &ModelSpec) -> usize {
    tensor_plan(spec).iter().map(|d| d.shape[0] * d.shape[1]).sum()
}

/// Named tensor collection in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Scalar> Parameters<F> {
    pub fn from_entries(entries: Vec<(String, Tensor<F>)>) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for (name, tensor) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(ModelError::ParameterMismatch {
                    detail: format!("duplicate tensor name {name:?}"),
                });
            }
            if !tensor.is_finite() {
                return Err(ModelError::ParameterMismatch {
                    detail: format!("tensor {name:?} holds a non-finite value"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Checks that the set of names and shapes matches the spec's plan
    /// exactly, in any order.
    pub fn validate_against(&self, spec: &ModelSpec) -> Result<(), ModelError> {
        spec.validate()?;
        let plan = tensor_plan(spec);
        let mismatch = |detail: String| Err(ModelError::ParameterMismatch { detail });
        if plan.len() != self.entries.len() {
            return mismatch(format!(
                "expected {} tensors, found {}",
                plan.len(),
                self.entries.len()
            ));
        }
        for decl in &plan {
            match self.get(&decl.name) {
                None => return mismatch(format!("missing tensor {:?}", decl.name)),
                Some(t) if t.shape() != decl.shape => {
                    return mismatch(format!(
                        "tensor {:?} has shape {:?}, expected {:?}",
                        decl.name,
                        t.shape(),
                        decl.shape
                    ));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Writes the flat named-tensor checkpoint: magic, tensor count, then
    /// per tensor its name, shape, and raw little-endian f64 data.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
            for &dim in tensor.shape() {
                w.write_all(&(dim as u32).to_le_bytes())?;
            }
            for &v in tensor.data() {
                w.write_all(&v.to64().to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        let malformed = |detail: &str| ModelError::MalformedCheckpoint {
            detail: detail.to_string(),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(malformed("bad magic bytes"));
        }
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 4096 {
                return Err(malformed("tensor name too long"));
            }
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| malformed("tensor name is not utf-8"))?;
            let rank = read_u32(&mut r)? as usize;
            if rank == 0 || rank > 8 {
                return Err(malformed("unsupported tensor rank"));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            if numel > (1 << 28) {
                return Err(malformed("tensor too large"));
            }
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(F::of(f64::from_le_bytes(buf)));
            }
            entries.push((name, Tensor::new(shape, data)));
        }
        Self::from_entries(entries)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"THNTCKP1";

fn read_u32(r: &mut impl Read) -> Result<u32, std::io::Error> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Seeded fan-based initialization: weights `U(+-1/sqrt(fan_in))`, biases
/// zero, normalization gains one. Deterministic per seed.
pub fn init_parameters<F: Scalar>(spec: &ModelSpec) -> Result<Parameters<F>, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let entries = tensor_plan(spec)
        .into_iter()
        .map(|decl| {
            let numel = decl.shape[0] * decl.shape[1];
            let data: Vec<F> = match decl.init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..numel)
                        .map(|_| F::of(rng.gen_range(-bound..=bound)))
                        .collect()
                }
                Init::Zeros => vec![F::zero(); numel],
                Init::Ones => vec![F::one(); numel],
            };
            (decl.name, Tensor::new(decl.shape.to_vec(), data))
        })
        .collect();
    Parameters::from_entries(entries)
}

/// Parameters lifted onto a tape as differentiable variables. Bind once
/// per tape, run any number of forwards, then read gradients by name.
pub struct BoundParams<F> {
    vars: HashMap<String, Var<F>>,
}

impl<F: Scalar> BoundParams<F> {
    pub fn bind(
        tape: &Tape<F>,
        spec: &ModelSpec,
        params: &Parameters<F>,
    ) -> Result<Self, ModelError> {
        params.validate_against(spec)?;
        let vars = params
            .iter()
            .map(|(name, tensor)| (name.to_string(), tape.var(tensor.clone())))
            .collect();
        Ok(Self { vars })
    }

    /// Panics on an unknown name: `bind` has already proven the set
    /// complete for the spec, so a miss is a programming error.
    pub(crate) fn var(&self, name: &str) -> &Var<F> {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} missing after validation"))
    }

    /// Accumulated gradient of one tensor, if it exists.
    pub fn grad(&self, name: &str) -> Option<Tensor<F>> {
        self.vars.get(name).map(Var::grad)
    }
}

/// Mean squared error over all elements, as a scalar tape node.
pub fn mse_loss<F: Scalar>(pred: &Var<F>, target: &Var<F>) -> Result<Var<F>, AutodiffError> {
    let diff = pred.sub(target)?;
    Ok(diff.mul(&diff)?.mean_all())
}

pub(crate) fn check_window<F: Scalar>(
    op: &'static str,
    spec: &ModelSpec,
    window: &Tensor<F>,
) -> Result<(), ModelError> {
    if window.rows() == 0 || window.cols() != spec.d_in {
        return Err(ModelError::ShapeMismatch {
            op,
            expected: format!("[seq_len >= 1, {}]", spec.d_in),
            found: window.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn check_kind(
    op: &'static str,
    spec: &ModelSpec,
    expected: ModelKind,
) -> Result<(), ModelError> {
    if spec.kind != expected {
        return Err(ModelError::BadSpec {
            detail: format!("{op} called with a {} spec", spec.kind),
        });
    }
    Ok(())
}

/// Concatenates `[1, c]` rows into a `[len, c]` sequence node.
pub(crate) fn stack_rows<F: Scalar>(rows: &[Var<F>]) -> Result<Var<F>, AutodiffError> {
    let mut iter = rows.iter();
    let first = iter.next().expect("at least one row").clone();
    iter.try_fold(first, |acc, row| acc.concat(row, 0))
}

/// Splits a `[T, c]` sequence node into per-step `[1, c]` rows.
pub(crate) fn split_rows<F: Scalar>(seq: &Var<F>) -> Result<Vec<Var<F>>, AutodiffError> {
    (0..seq.value().rows())
        .map(|i| seq.slice(0, i, i + 1))
        .collect()
}

pub(crate) fn apply_head<F: Scalar>(
    rep: &Var<F>,
    params: &BoundParams<F>,
) -> Result<Var<F>, AutodiffError> {
    rep.matmul(params.var("head.weight"))?.add(params.var("head.bias"))
}

/// Forward pass to a `[1, d_out]` prediction from the window's final
/// representation. Dispatches on `spec.kind`.
pub fn forward<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    match spec.kind {
        ModelKind::Rnn => rnn_forward(tape, spec, params, window, training, rng),
        ModelKind::Lstm => lstm_forward(tape, spec, params, window, training, rng),
        ModelKind::Gru => gru_forward(tape, spec, params, window, training, rng),
        ModelKind::BiLstm => bilstm_forward(tape, spec, params, window, training, rng),
        ModelKind::Transformer => transformer_forward(tape, spec, params, window, training, rng),
        ModelKind::Tcn => tcn_forward(tape, spec, params, window, training, rng),
    }
}

/// Per-step predictions `[T, d_out]`: the output head applied to every
/// step's representation. Causal architectures keep row `i` independent
/// of inputs after step `i`; BiLSTM and Transformer do not.
pub fn forward_sequence<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    check_window("forward_sequence", spec, window)?;
    let rep = match spec.kind {
        ModelKind::Rnn | ModelKind::Lstm | ModelKind::Gru => {
            let states = recurrent::stack_states(tape, spec, params, window, training, rng)?;
            stack_rows(&states)?
        }
        ModelKind::BiLstm => recurrent::bilstm_sequence(tape, spec, params, window, training, rng)?,
        ModelKind::Transformer => transformer::encode(tape, spec, params, window, training, rng)?,
        ModelKind::Tcn => tcn::tcn_sequence(tape, spec, params, window, training, rng)?,
    };
    Ok(apply_head(&rep, params)?)
}

/// Evaluation-mode prediction on a fresh private tape.
pub fn predict<F: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<F>,
    window: &Tensor<F>,
) -> Result<Tensor<F>, ModelError> {
    let tape = Tape::new();
    let bound = BoundParams::bind(&tape, spec, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(forward(&tape, spec, &bound, window, false, &mut rng)?.value())
}

/// Evaluation-mode per-step predictions on a fresh private tape.
pub fn predict_sequence<F: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<F>,
    window: &Tensor<F>,
) -> Result<Tensor<F>, ModelError> {
    let tape = Tape::new();
    let bound = BoundParams::bind(&tape, spec, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(forward_sequence(&tape, spec, &bound, window, false, &mut rng)?.value())
}
