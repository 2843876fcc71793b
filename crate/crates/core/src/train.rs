//! Optimizer, training loop, hyperparameter search, and the two
//! evaluation protocols (per-run specialised, leave-one-out generalised).

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::dataset::{
    fit_normalizer_matrix, split, windows_from_values, DatasetError, NodeTimeSeries, NormMode,
    Normalizer, SplitSpec, Window,
};
use crate::models::{
    forward, init_parameters, mse_loss, predict, BoundParams, ModelError, ModelSpec, Parameters,
};
use crate::scalar::Scalar;
use crate::select::{build_plan, pearson_matrix_values, SelectError, SelectionPlan};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in tensor {name:?}")]
    NonFiniteGradient { name: String },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("bad training configuration: {detail}")]
    BadConfig { detail: String },
    #[error("gradients do not match parameters: {detail}")]
    GradientMismatch { detail: String },
    #[error("malformed metrics csv at line {line}: {detail}")]
    MalformedMetrics { line: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// AdamW hyperparameters and training-loop sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seq_len: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            batch_size: 32,
            seq_len: 10,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |detail: String| Err(TrainError::BadConfig { detail });
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay {} must be finite and >= 0", self.weight_decay));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return bad(format!("{name} {beta} must lie in [0, 1)"));
            }
        }
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return bad(format!("epsilon {} must be finite and > 0", self.epsilon));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.seq_len == 0 {
            return bad("epochs, batch_size, and seq_len must all be >= 1".into());
        }
        Ok(())
    }
}

/// First and second moment estimates, aligned with the parameter list.
#[derive(Debug, Clone)]
pub struct AdamWState<F> {
    names: Vec<String>,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: u64,
}

impl<F: Scalar> AdamWState<F> {
    pub fn new(params: &Parameters<F>) -> Self {
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        let zeros: Vec<Tensor<F>> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            names,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One decoupled-weight-decay Adam step over every tensor:
/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
///
/// `grads` must list one gradient per parameter, in state order. The
/// element arithmetic runs in f64 so the update is independent of the
/// storage scalar's intermediate precision.
pub fn adamw_step<F: Scalar>(
    params: &mut Parameters<F>,
    grads: &[(String, Tensor<F>)],
    state: &mut AdamWState<F>,
    config: &OptimConfig,
) -> Result<(), TrainError> {
    config.validate()?;
    if grads.len() != state.names.len() {
        return Err(TrainError::GradientMismatch {
            detail: format!("{} gradients for {} tensors", grads.len(), state.names.len()),
        });
    }
    state.t += 1;
    let bias1 = 1.0 - config.beta1.powf(state.t as f64);
    let bias2 = 1.0 - config.beta2.powf(state.t as f64);
    for (i, (name, grad)) in grads.iter().enumerate() {
        if *name != state.names[i] {
            return Err(TrainError::GradientMismatch {
                detail: format!("gradient {name:?} in slot for {:?}", state.names[i]),
            });
        }
        let theta = params
            .get_mut(name)
            .ok_or_else(|| TrainError::GradientMismatch {
                detail: format!("no parameter named {name:?}"),
            })?;
        if grad.shape() != theta.shape() {
            return Err(TrainError::GradientMismatch {
                detail: format!(
                    "gradient {name:?} has shape {:?}, parameter has {:?}",
                    grad.shape(),
                    theta.shape()
                ),
            });
        }
        if !grad.is_finite() {
            return Err(TrainError::NonFiniteGradient { name: name.clone() });
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..theta.numel() {
            let g = grad.data()[j].to64();
            let mj = config.beta1 * m.data()[j].to64() + (1.0 - config.beta1) * g;
            let vj = config.beta2 * v.data()[j].to64() + (1.0 - config.beta2) * g * g;
            m.data_mut()[j] = F::of(mj);
            v.data_mut()[j] = F::of(vj);
            let m_hat = mj / bias1;
            let v_hat = vj / bias2;
            let th = theta.data()[j].to64();
            let step = config.learning_rate
                * (m_hat / (v_hat.sqrt() + config.epsilon) + config.weight_decay * th);
            theta.data_mut()[j] = F::of(th - step);
        }
    }
    Ok(())
}

/// Reads one gradient per parameter off a bound tape, in parameter order.
pub fn collect_gradients<F: Scalar>(
    params: &Parameters<F>,
    bound: &BoundParams<F>,
) -> Vec<(String, Tensor<F>)> {
    params
        .iter()
        .map(|(name, _)| {
            let grad = bound
                .grad(name)
                .expect("bound parameters cover every name");
            (name.to_string(), grad)
        })
        .collect()
}

/// Per-epoch mean squared errors. Train is measured in training mode
/// (dropout active), validation in evaluation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel<F> {
    pub params: Parameters<F>,
    pub curves: LossCurves,
}

fn check_window_shapes<F: Scalar>(
    spec: &ModelSpec,
    windows: &[Window<F>],
    what: &str,
) -> Result<(), TrainError> {
    for w in windows {
        let ok = w.input.rows() >= 1
            && w.input.cols() == spec.d_in
            && w.target.rows() == 1
            && w.target.cols() == spec.d_out;
        if !ok {
            return Err(TrainError::BadConfig {
                detail: format!(
                    "{what} window has input {:?} and target {:?}, expected [*, {}] and [1, {}]",
                    w.input.shape(),
                    w.target.shape(),
                    spec.d_in,
                    spec.d_out
                ),
            });
        }
    }
    Ok(())
}

/// Trains one model with AdamW on minibatches of windows. The seed
/// drives initialization, batch shuffling, and dropout, so equal seeds
/// reproduce the run bit for bit.
pub fn train_model<F: Scalar>(
    spec: &ModelSpec,
    optim: &OptimConfig,
    train_windows: &[Window<F>],
    val_windows: &[Window<F>],
    seed: u64,
) -> Result<TrainedModel<F>, TrainError> {
    optim.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(TrainError::BadConfig {
            detail: "training and validation window sets must be non-empty".into(),
        });
    }
    let spec = spec.clone().with_seed(seed);
    check_window_shapes(&spec, train_windows, "train")?;
    check_window_shapes(&spec, val_windows, "validation")?;
    let mut params = init_parameters::<F>(&spec)?;
    let mut state = AdamWState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    // Distinct stream from the shuffle so adding dropout never changes
    // the batch order.
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut curves = LossCurves {
        train: Vec::with_capacity(optim.epochs),
        val: Vec::with_capacity(optim.epochs),
    };
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    for epoch in 0..optim.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sq_sum = 0.0;
        for batch in order.chunks(optim.batch_size) {
            let tape = Tape::new();
            let bound = BoundParams::bind(&tape, &spec, &params)?;
            let mut loss: Option<Var<F>> = None;
            for &i in batch {
                let w = &train_windows[i];
                let pred = forward(&tape, &spec, &bound, &w.input, true, &mut dropout_rng)?;
                let target = tape.var(w.target.clone());
                let one = mse_loss(&pred, &target)?;
                loss = Some(match loss {
                    None => one,
                    Some(acc) => acc.add(&one)?,
                });
            }
            let loss = loss
                .expect("chunks are non-empty")
                .scale(F::of(1.0 / batch.len() as f64));
            let batch_mse = loss.value().data()[0].to64();
            if !batch_mse.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            sq_sum += batch_mse * batch.len() as f64;
            loss.backward()?;
            let grads = collect_gradients(&params, &bound);
            adamw_step(&mut params, &grads, &mut state, optim)?;
        }
        let val_mse = evaluate_mse(&spec, &params, val_windows)?;
        if !val_mse.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        curves.train.push(sq_sum / train_windows.len() as f64);
        curves.val.push(val_mse);
    }
    Ok(TrainedModel { params, curves })
}

/// Evaluation-mode MSE of one-step predictions, averaged over windows.
pub fn evaluate_mse<F: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<F>,
    windows: &[Window<F>],
) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::BadConfig {
            detail: "cannot evaluate on an empty window set".into(),
        });
    }
    let mut total = 0.0;
    for w in windows {
        let pred = predict(spec, params, &w.input)?;
        total += matrix_mse(&pred, &w.target);
    }
    Ok(total / windows.len() as f64)
}

fn matrix_mse<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let sq: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let e = x.to64() - y.to64();
            e * e
        })
        .sum();
    sq / a.numel() as f64
}

/// Hyperparameter ranges for random search. `learning_rate` and
/// `weight_decay` are drawn log-uniformly, `dropout` uniformly, integer
/// ranges uniformly inclusive, and `hidden` uniformly from its choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub weight_decay: (f64, f64),
    pub dropout: (f64, f64),
    pub layers: (usize, usize),
    pub hidden: Vec<usize>,
    pub heads: (usize, usize),
    pub trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: (1e-5, 1e-2),
            weight_decay: (1e-6, 1e-3),
            dropout: (0.1, 0.5),
            layers: (1, 12),
            hidden: vec![32, 64, 128, 256],
            heads: (2, 4),
            trials: 20,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |detail: String| Err(TrainError::BadConfig { detail });
        for (name, (lo, hi)) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return bad(format!("{name} range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
            }
        }
        let (dlo, dhi) = self.dropout;
        if !(0.0..1.0).contains(&dlo) || !(0.0..1.0).contains(&dhi) || dhi < dlo {
            return bad(format!("dropout range ({dlo}, {dhi}) must lie in [0, 1)"));
        }
        if self.layers.0 == 0 || self.layers.1 < self.layers.0 {
            return bad(format!("layers range {:?} must satisfy 1 <= lo <= hi", self.layers));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden choices must be non-empty and positive".into());
        }
        if self.heads.0 == 0 || self.heads.1 < self.heads.0 {
            return bad(format!("heads range {:?} must satisfy 1 <= lo <= hi", self.heads));
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        Ok(())
    }

    /// Draws one configuration. Heads are drawn from the divisors of the
    /// sampled width inside the range, because attention needs the width
    /// to split evenly across heads; if no divisor lands in the range the
    /// lower bound is used as-is.
    pub fn sample(&self, rng: &mut impl Rng) -> TrialConfig {
        let log_uniform = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| -> f64 {
            if lo == hi {
                return lo;
            }
            rng.gen_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
        };
        let learning_rate = log_uniform(rng, self.learning_rate);
        let weight_decay = log_uniform(rng, self.weight_decay);
        let dropout = if self.dropout.0 == self.dropout.1 {
            self.dropout.0
        } else {
            rng.gen_range(self.dropout.0..=self.dropout.1)
        };
        let layers = rng.gen_range(self.layers.0..=self.layers.1);
        let hidden = *self.hidden.choose(rng).expect("validated non-empty");
        let divisors: Vec<usize> = (self.heads.0..=self.heads.1)
            .filter(|&h| hidden.is_multiple_of(h))
            .collect();
        let heads = match divisors.as_slice() {
            [] => self.heads.0,
            ds => *ds.choose(rng).expect("non-empty"),
        };
        TrialConfig {
            learning_rate,
            weight_decay,
            dropout,
            hidden,
            layers,
            heads,
        }
    }
}

/// One sampled hyperparameter assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
}

impl TrialConfig {
    /// Overlays the sampled architecture fields onto a base spec.
    pub fn apply(&self, spec: &ModelSpec) -> ModelSpec {
        spec.clone()
            .with_hidden(self.hidden)
            .with_layers(self.layers)
            .with_dropout(self.dropout)
            .with_heads(self.heads)
    }

    /// Overlays the sampled optimizer fields onto a base config.
    pub fn apply_optim(&self, optim: &OptimConfig) -> OptimConfig {
        let mut out = optim.clone();
        out.learning_rate = self.learning_rate;
        out.weight_decay = self.weight_decay;
        out
    }
}

/// One evaluated draw. A diverged trial is logged with objective +inf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: TrialConfig,
    pub objective: f64,
}

/// Seeded uniform random search: draws `trials` configurations, scores
/// each with `objective` (lower is better), and returns the best config
/// with the full log. A trial that diverges is recorded as +inf and
/// skipped rather than aborting the sweep; other errors propagate.
pub fn random_search(
    space: &SearchSpace,
    mut objective: impl FnMut(&TrialConfig) -> Result<f64, TrainError>,
    trials: usize,
    seed: u64,
) -> Result<(TrialConfig, Vec<TrialRecord>), TrainError> {
    space.validate()?;
    if trials == 0 {
        return Err(TrainError::BadConfig {
            detail: "random search needs at least one trial".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(trials);
    for trial in 0..trials {
        let config = space.sample(&mut rng);
        let value = match objective(&config) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(TrainError::Diverged { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        log.push(TrialRecord {
            trial,
            config,
            objective: value,
        });
    }
    let best = log
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .expect("at least one trial")
        .config
        .clone();
    Ok((best, log))
}

/// Seeds for the repeat runs behind every reported mean +- std.
pub const REPEAT_SEEDS: [u64; 3] = [1, 2, 3];

/// Repeat statistics for one run x model cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mse_mean: f64,
    /// Population standard deviation over the repeats.
    pub mse_std: f64,
    pub n_repeats: usize,
    /// Wall-clock seconds for all repeats together.
    pub wall_time: f64,
}

impl RunMetrics {
    pub fn from_samples(samples: &[f64], wall_time: f64) -> Self {
        assert!(!samples.is_empty(), "need at least one repeat");
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mse_mean: mean,
            mse_std: var.sqrt(),
            n_repeats: samples.len(),
            wall_time,
        }
    }
}

/// Full-node and retained-only MSE of one-step predictions over a
/// held-out segment. `proj` is the `[T, J]` retained matrix and `full`
/// the aligned `[T, d]` matrix; predictions are pushed back through the
/// plan's parent maps before the full-node comparison.
pub fn reconstruction_mse<F: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<F>,
    plan: &SelectionPlan,
    proj: &Tensor<F>,
    full: &Tensor<F>,
    seq_len: usize,
) -> Result<(f64, f64), TrainError> {
    assert_eq!(proj.rows(), full.rows(), "segment lengths must agree");
    let t = proj.rows();
    if t < seq_len + 1 {
        return Err(TrainError::Dataset(DatasetError::TooShort {
            needed: seq_len + 1,
            found: t,
        }));
    }
    let n = t - seq_len;
    let mut preds = Tensor::zeros(&[n, spec.d_out]);
    for i in 0..n {
        let window = proj.slice_rows(i, i + seq_len);
        let p = predict(spec, params, &window)?;
        for c in 0..spec.d_out {
            preds.set2(i, c, p.get2(0, c));
        }
    }
    let retained_mse = matrix_mse(&preds, &proj.slice_rows(seq_len, t));
    let reconstructed = plan.reconstruct(&preds)?;
    let full_mse = matrix_mse(&reconstructed, &full.slice_rows(seq_len, t));
    Ok((full_mse, retained_mse))
}

/// Everything the specialised protocol produces for one run.
#[derive(Debug, Clone)]
pub struct SpecialisedOutcome<F> {
    /// Full-node test MSE after reconstruction, in normalized units.
    pub metrics: RunMetrics,
    /// Test MSE over the retained nodes only.
    pub retained_metrics: RunMetrics,
    pub plan: SelectionPlan,
    pub normalizer: Normalizer,
    /// One trained model per repeat seed, in seed order.
    pub repeats: Vec<TrainedModel<F>>,
}

/// Specialised protocol: a 60/20/20 contiguous split of one run.
/// Normalizer and selection plan are fitted on the training segment
/// only, the model trains on the retained nodes, and the test score is
/// the full-node MSE after reconstruction, repeated over `seeds`.
pub fn specialised_protocol<F: Scalar>(
    run: &NodeTimeSeries<F>,
    spec: &ModelSpec,
    optim: &OptimConfig,
    tau: f64,
    norm_mode: NormMode,
    seeds: &[u64],
) -> Result<SpecialisedOutcome<F>, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::BadConfig {
            detail: "need at least one repeat seed".into(),
        });
    }
    let start = Instant::now();
    let parts = split(run, &SplitSpec::default())?;
    let normalizer = fit_normalizer_matrix(parts.train.values(), run.node_ids(), norm_mode)?;
    let train_n = normalizer.apply_matrix(parts.train.values());
    let val_n = normalizer.apply_matrix(parts.val.values());
    let test_n = normalizer.apply_matrix(parts.test.values());
    // Selection statistics come from the normalized training segment;
    // the retained set is unchanged by the affine rescale, the parent
    // slopes live in normalized units.
    let corr = pearson_matrix_values(&train_n, run.node_ids());
    let plan = build_plan(&corr, tau, format!("run {} train segment", run.run_id()))?;
    let proj_train = plan.project(&train_n)?;
    let proj_val = plan.project(&val_n)?;
    let proj_test = plan.project(&test_n)?;
    let train_windows = windows_from_values(&proj_train, optim.seq_len)?;
    let val_windows = windows_from_values(&proj_val, optim.seq_len)?;
    let mut spec = spec.clone();
    spec.d_in = plan.n_retained();
    spec.d_out = plan.n_retained();
    let mut full = Vec::with_capacity(seeds.len());
    let mut retained = Vec::with_capacity(seeds.len());
    let mut repeats = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let trained = train_model(&spec, optim, &train_windows, &val_windows, seed)?;
        let (f, r) =
            reconstruction_mse(&spec, &trained.params, &plan, &proj_test, &test_n, optim.seq_len)?;
        full.push(f);
        retained.push(r);
        repeats.push(trained);
    }
    let wall = start.elapsed().as_secs_f64();
    Ok(SpecialisedOutcome {
        metrics: RunMetrics::from_samples(&full, wall),
        retained_metrics: RunMetrics::from_samples(&retained, wall),
        plan,
        normalizer,
        repeats,
    })
}

/// One leave-one-out fold's result.
#[derive(Debug, Clone)]
pub struct FoldOutcome<F> {
    pub held_out: String,
    /// Full-node MSE over the held-out run, normalized units.
    pub metrics: RunMetrics,
    pub retained_metrics: RunMetrics,
    pub plan: SelectionPlan,
    pub normalizer: Normalizer,
    pub repeats: Vec<TrainedModel<F>>,
}

/// Generalised protocol: leave-one-run-out. Each fold pools the other
/// runs for normalization and selection, trains on their windows (the
/// last fifth of each run is that run's validation slice; windows never
/// span run boundaries), and scores the held-out run end to end.
pub fn generalised_protocol<F: Scalar>(
    runs: &[NodeTimeSeries<F>],
    spec: &ModelSpec,
    optim: &OptimConfig,
    tau: f64,
    norm_mode: NormMode,
    seeds: &[u64],
) -> Result<Vec<FoldOutcome<F>>, TrainError> {
    if runs.len() < 2 {
        return Err(TrainError::BadConfig {
            detail: "leave-one-out needs at least two runs".into(),
        });
    }
    if seeds.is_empty() {
        return Err(TrainError::BadConfig {
            detail: "need at least one repeat seed".into(),
        });
    }
    let node_ids = runs[0].node_ids();
    for run in &runs[1..] {
        if run.node_ids() != node_ids {
            return Err(TrainError::Dataset(DatasetError::NodeMismatch {
                expected: node_ids.to_vec(),
                found: run.node_ids().to_vec(),
            }));
        }
    }
    let mut folds = Vec::with_capacity(runs.len());
    for held in 0..runs.len() {
        let start = Instant::now();
        let training: Vec<&NodeTimeSeries<F>> = runs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held)
            .map(|(_, r)| r)
            .collect();
        let mut pooled = training[0].values().clone();
        for run in &training[1..] {
            pooled = pooled.concat_rows(run.values());
        }
        let normalizer = fit_normalizer_matrix(&pooled, node_ids, norm_mode)?;
        let pooled_n = normalizer.apply_matrix(&pooled);
        let corr = pearson_matrix_values(&pooled_n, node_ids);
        let plan = build_plan(
            &corr,
            tau,
            format!("pooled training runs, fold without {}", runs[held].run_id()),
        )?;
        let mut train_windows = Vec::new();
        let mut val_windows = Vec::new();
        for run in &training {
            let projected = plan.project(&normalizer.apply_matrix(run.values()))?;
            let t = projected.rows();
            let cut = t - t / 5;
            train_windows.extend(windows_from_values(
                &projected.slice_rows(0, cut),
                optim.seq_len,
            )?);
            val_windows.extend(windows_from_values(
                &projected.slice_rows(cut, t),
                optim.seq_len,
            )?);
        }
        let held_n = normalizer.apply_matrix(runs[held].values());
        let held_p = plan.project(&held_n)?;
        let mut spec_k = spec.clone();
        spec_k.d_in = plan.n_retained();
        spec_k.d_out = plan.n_retained();
        let mut full = Vec::with_capacity(seeds.len());
        let mut retained = Vec::with_capacity(seeds.len());
        let mut repeats = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let trained = train_model(&spec_k, optim, &train_windows, &val_windows, seed)?;
            let (f, r) = reconstruction_mse(
                &spec_k,
                &trained.params,
                &plan,
                &held_p,
                &held_n,
                optim.seq_len,
            )?;
            full.push(f);
            retained.push(r);
            repeats.push(trained);
        }
        let wall = start.elapsed().as_secs_f64();
        folds.push(FoldOutcome {
            held_out: runs[held].run_id().to_string(),
            metrics: RunMetrics::from_samples(&full, wall),
            retained_metrics: RunMetrics::from_samples(&retained, wall),
            plan,
            normalizer,
            repeats,
        });
    }
    Ok(folds)
}

/// Writes the search log, one row per trial.
pub fn write_trial_log(
    path: impl AsRef<Path>,
    records: &[TrialRecord],
) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "trial", "lr", "wd", "dropout", "hidden", "layers", "heads", "objective",
    ])?;
    for r in records {
        w.write_record(&[
            r.trial.to_string(),
            r.config.learning_rate.to_string(),
            r.config.weight_decay.to_string(),
            r.config.dropout.to_string(),
            r.config.hidden.to_string(),
            r.config.layers.to_string(),
            r.config.heads.to_string(),
            r.objective.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One benchmark cell: repeat statistics for `model` on `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub target: String,
    pub model: String,
    pub metrics: RunMetrics,
}

/// Writes benchmark cells for later aggregation. Floats are written in
/// shortest round-trip form, so reading back is lossless.
pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["target", "model", "mse_mean", "mse_std", "n_repeats", "wall_time"])?;
    for r in rows {
        w.write_record(&[
            r.target.clone(),
            r.model.clone(),
            r.metrics.mse_mean.to_string(),
            r.metrics.mse_std.to_string(),
            r.metrics.n_repeats.to_string(),
            r.metrics.wall_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>, TrainError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != 6 {
            return Err(TrainError::MalformedMetrics {
                line,
                detail: format!("expected 6 fields, found {}", record.len()),
            });
        }
        let field = |idx: usize| record.get(idx).unwrap_or_default();
        let parse_f64 = |idx: usize| -> Result<f64, TrainError> {
            field(idx).parse().map_err(|_| TrainError::MalformedMetrics {
                line,
                detail: format!("field {idx} is not a number: {:?}", field(idx)),
            })
        };
        let n_repeats: usize =
            field(4)
                .parse()
                .map_err(|_| TrainError::MalformedMetrics {
                    line,
                    detail: format!("field 4 is not a count: {:?}", field(4)),
                })?;
        rows.push(MetricsRow {
            target: field(0).to_string(),
            model: field(1).to_string(),
            metrics: RunMetrics {
                mse_mean: parse_f64(2)?,
                mse_std: parse_f64(3)?,
                n_repeats,
                wall_time: parse_f64(5)?,
            },
        });
    }
    Ok(rows)
}

/// One row of the best-configuration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConfigRow {
    pub target: String,
    pub model: String,
    pub config: TrialConfig,
}

pub fn write_best_configs(
    path: impl AsRef<Path>,
    rows: &[BestConfigRow],
) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "target", "model", "lr", "wd", "dropout", "hidden", "layers", "heads",
    ])?;
    for r in rows {
        w.write_record(&[
            r.target.clone(),
            r.model.clone(),
            r.config.learning_rate.to_string(),
            r.config.weight_decay.to_string(),
            r.config.dropout.to_string(),
            r.config.hidden.to_string(),
            r.config.layers.to_string(),
            r.config.heads.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{InitialConditions, Quantity};
    use crate::models::ModelKind;

    fn single_param(value: f64) -> (Parameters<f64>, AdamWState<f64>) {
        let params =
            Parameters::from_entries(vec![("w".to_string(), Tensor::scalar(value))]).unwrap();
        let state = AdamWState::new(&params);
        (params, state)
    }

    fn grad_of(value: f64) -> Vec<(String, Tensor<f64>)> {
        vec![("w".to_string(), Tensor::scalar(value))]
    }

    fn plain_config(lr: f64, wd: f64) -> OptimConfig {
        OptimConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..OptimConfig::default()
        }
    }

    #[test]
    fn adamw_first_step_matches_hand_value() {
        let (mut params, mut state) = single_param(1.0);
        adamw_step(&mut params, &grad_of(1.0), &mut state, &plain_config(0.1, 0.0)).unwrap();
        let got = params.get("w").unwrap().data()[0];
        // Bias corrections cancel on step one, so the step is lr/(1+eps).
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((got - expected).abs() <= 1e-12, "got {got}");
        assert!((got - 0.9).abs() < 1e-6);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adamw_pure_decay_step_is_exact() {
        let (mut params, mut state) = single_param(1.0);
        adamw_step(&mut params, &grad_of(0.0), &mut state, &plain_config(0.1, 0.1)).unwrap();
        let got = params.get("w").unwrap().data()[0];
        assert_eq!(got, 1.0 - 0.1 * (0.1 * 1.0));
        assert!((got - 0.99).abs() < 1e-15);
    }

    #[test]
    fn adamw_zero_update_keeps_bits() {
        let params: Parameters<f64> = Parameters::from_entries(vec![(
            "w".to_string(),
            Tensor::row(&[0.3, -1.7, 42.0]),
        )])
        .unwrap();
        let mut stepped = params.clone();
        let mut state = AdamWState::new(&stepped);
        let grads = vec![("w".to_string(), Tensor::zeros(&[1, 3]))];
        for _ in 0..5 {
            adamw_step(&mut stepped, &grads, &mut state, &plain_config(0.1, 0.0)).unwrap();
        }
        let before = params.get("w").unwrap().data();
        let after = stepped.get("w").unwrap().data();
        for (b, a) in before.iter().zip(after) {
            assert_eq!(b.to_bits(), a.to_bits());
        }
    }

    #[test]
    fn adamw_matches_scalar_reference_for_100_steps() {
        let config = plain_config(0.0023, 3e-4);
        let shape = [2, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let theta0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut params = Parameters::from_entries(vec![(
            "w".to_string(),
            Tensor::new(shape.to_vec(), theta0.clone()),
        )])
        .unwrap();
        let mut state = AdamWState::new(&params);
        // Straight-line per-element reference.
        let mut theta = theta0;
        let mut m = [0.0; 6];
        let mut v = [0.0; 6];
        for step in 1..=100u32 {
            let g: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let grads = vec![("w".to_string(), Tensor::new(shape.to_vec(), g.clone()))];
            adamw_step(&mut params, &grads, &mut state, &config).unwrap();
            let bias1 = 1.0 - config.beta1.powf(f64::from(step));
            let bias2 = 1.0 - config.beta2.powf(f64::from(step));
            for j in 0..6 {
                m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
                v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                theta[j] -= config.learning_rate
                    * (m_hat / (v_hat.sqrt() + config.epsilon) + config.weight_decay * theta[j]);
            }
            let got = params.get("w").unwrap().data();
            for j in 0..6 {
                assert!(
                    (got[j] - theta[j]).abs() <= 1e-12,
                    "step {step}, element {j}: {} vs {}",
                    got[j],
                    theta[j]
                );
            }
        }
    }

    #[test]
    fn adamw_rejects_non_finite_gradient() {
        let (mut params, mut state) = single_param(1.0);
        let err = adamw_step(
            &mut params,
            &grad_of(f64::NAN),
            &mut state,
            &plain_config(0.1, 0.0),
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient { name } if name == "w"));
    }

    #[test]
    fn optim_config_rejects_bad_fields() {
        let config = OptimConfig {
            batch_size: 0,
            ..OptimConfig::default()
        };
        assert!(matches!(config.validate(), Err(TrainError::BadConfig { .. })));
        let config = OptimConfig {
            learning_rate: -1.0,
            ..OptimConfig::default()
        };
        assert!(matches!(config.validate(), Err(TrainError::BadConfig { .. })));
    }

    /// Windows whose inputs ramp linearly and whose target is a constant.
    fn constant_target_windows(n: usize, seq_len: usize, target: f64) -> Vec<Window<f64>> {
        (0..n)
            .map(|i| Window {
                input: Tensor::new(
                    vec![seq_len, 1],
                    (0..seq_len).map(|t| 0.01 * (i + t) as f64).collect(),
                ),
                target: Tensor::scalar(target),
            })
            .collect()
    }

    #[test]
    fn train_rejects_empty_window_sets() {
        let spec = ModelSpec::new(ModelKind::Rnn, 1, 1).with_hidden(2);
        let windows = constant_target_windows(4, 3, 0.5);
        let err = train_model(&spec, &OptimConfig::default(), &[], &windows, 1).unwrap_err();
        assert!(matches!(err, TrainError::BadConfig { .. }));
        let err = train_model(&spec, &OptimConfig::default(), &windows, &[], 1).unwrap_err();
        assert!(matches!(err, TrainError::BadConfig { .. }));
    }

    #[test]
    fn train_lr_zero_leaves_parameters_at_init() {
        let spec = ModelSpec::new(ModelKind::Gru, 1, 1).with_hidden(3);
        let windows = constant_target_windows(8, 3, 0.5);
        let optim = OptimConfig {
            learning_rate: 0.0,
            weight_decay: 0.3,
            epochs: 3,
            batch_size: 4,
            seq_len: 3,
            ..OptimConfig::default()
        };
        let trained = train_model(&spec, &optim, &windows, &windows, 7).unwrap();
        let init = init_parameters::<f64>(&spec.clone().with_seed(7)).unwrap();
        for (name, tensor) in init.iter() {
            let got = trained.params.get(name).unwrap();
            for (a, b) in tensor.data().iter().zip(got.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name} changed under lr = 0");
            }
        }
    }

    #[test]
    fn same_seed_reproduces_training_exactly() {
        let spec = ModelSpec::new(ModelKind::Rnn, 1, 1)
            .with_hidden(3)
            .with_dropout(0.2)
            .with_layers(2);
        let windows = constant_target_windows(10, 4, 0.4);
        let optim = OptimConfig {
            learning_rate: 3e-3,
            epochs: 3,
            batch_size: 4,
            seq_len: 4,
            ..OptimConfig::default()
        };
        let a = train_model(&spec, &optim, &windows, &windows, 11).unwrap();
        let b = train_model(&spec, &optim, &windows, &windows, 11).unwrap();
        assert_eq!(a.curves, b.curves);
        for (name, tensor) in a.params.iter() {
            let other = b.params.get(name).unwrap();
            for (x, y) in tensor.data().iter().zip(other.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let c = train_model(&spec, &optim, &windows, &windows, 12).unwrap();
        assert_ne!(a.curves, c.curves, "different seeds should not coincide");
    }

    #[test]
    fn constant_target_train_mse_vanishes() {
        // Bias-only fit: identical windows make every minibatch the full
        // batch, so the optimizer damps onto the constant target instead
        // of riding stochastic-gradient noise.
        let spec = ModelSpec::new(ModelKind::Rnn, 1, 1).with_hidden(2);
        let window = Window {
            input: Tensor::new(vec![3, 1], vec![0.0, 0.01, 0.02]),
            target: Tensor::scalar(0.3),
        };
        let windows = vec![window; 64];
        let optim = OptimConfig {
            learning_rate: 0.05,
            weight_decay: 0.0,
            epochs: 30,
            batch_size: 8,
            seq_len: 3,
            ..OptimConfig::default()
        };
        let trained = train_model(&spec, &optim, &windows, &windows, 1).unwrap();
        let last = *trained.curves.train.last().unwrap();
        assert!(last < 1e-8, "final train MSE {last}");
        assert!(trained.curves.val.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn search_respects_bounds_and_head_divisibility() {
        let space = SearchSpace::default();
        let (_, log) = random_search(&space, |c| Ok(c.learning_rate), 40, 7).unwrap();
        assert_eq!(log.len(), 40);
        for (i, record) in log.iter().enumerate() {
            assert_eq!(record.trial, i);
            let c = &record.config;
            assert!(c.learning_rate >= 1e-5 && c.learning_rate <= 1e-2);
            assert!(c.weight_decay >= 1e-6 && c.weight_decay <= 1e-3);
            assert!(c.dropout >= 0.1 && c.dropout <= 0.5);
            assert!(c.layers >= 1 && c.layers <= 12);
            assert!(space.hidden.contains(&c.hidden));
            assert!(c.heads >= 2 && c.heads <= 4);
            assert!(c.hidden.is_multiple_of(c.heads));
        }
    }

    #[test]
    fn search_returns_argmin_of_log() {
        let space = SearchSpace::default();
        let (best, log) =
            random_search(&space, |c| Ok((c.learning_rate - 1e-3).abs()), 20, 3).unwrap();
        let min = log
            .iter()
            .min_by(|a, b| a.objective.total_cmp(&b.objective))
            .unwrap();
        assert_eq!(best, min.config);
        assert_eq!((best.learning_rate - 1e-3).abs(), min.objective);
    }

    #[test]
    fn search_single_trial_returns_it() {
        let (best, log) = random_search(&SearchSpace::default(), |_| Ok(1.0), 1, 5).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(best, log[0].config);
    }

    #[test]
    fn search_logs_diverged_trials_as_infinite() {
        let mut calls = 0;
        let (best, log) = random_search(
            &SearchSpace::default(),
            |c| {
                calls += 1;
                if calls == 1 {
                    Err(TrainError::Diverged { epoch: 0 })
                } else {
                    Ok(c.learning_rate)
                }
            },
            5,
            9,
        )
        .unwrap();
        assert!(log[0].objective.is_infinite());
        assert!(log[1..].iter().all(|r| r.objective.is_finite()));
        assert_ne!(best, log[0].config);
        // Errors other than divergence abort the sweep.
        let err = random_search(
            &SearchSpace::default(),
            |_| {
                Err(TrainError::BadConfig {
                    detail: "boom".into(),
                })
            },
            2,
            9,
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::BadConfig { .. }));
    }

    #[test]
    fn run_metrics_population_statistics() {
        let metrics = RunMetrics::from_samples(&[2.0, 4.0, 6.0], 1.5);
        assert!((metrics.mse_mean - 4.0).abs() < 1e-15);
        assert!((metrics.mse_std - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(metrics.n_repeats, 3);
        assert_eq!(metrics.wall_time, 1.5);
    }

    /// Four nodes where 2 and 3 are exact affine images of 0 and 1, and
    /// the retained dynamics are one-step linear: x0 decays by 0.9,
    /// x1 by -0.8 per step.
    fn affine_geometric_matrix(t: usize) -> Tensor<f64> {
        let mut rows = Vec::with_capacity(t);
        let (mut x0, mut x1) = (1.0f64, 0.7f64);
        for _ in 0..t {
            rows.push(vec![x0, x1, 2.0 * x0 + 3.0, -x1 + 0.5]);
            x0 *= 0.9;
            x1 *= -0.8;
        }
        Tensor::from_rows(&rows)
    }

    #[test]
    fn reconstruction_mse_is_zero_for_an_exact_model() {
        let full = affine_geometric_matrix(40);
        let ids: Vec<String> = ["n0", "n1", "n2", "n3"].map(str::to_string).to_vec();
        let corr = pearson_matrix_values(&full, &ids);
        let plan = build_plan(&corr, 0.95, "unit").unwrap();
        assert_eq!(plan.retained, vec![0, 1]);
        // A TCN with zeroed conv paths passes its input through; a
        // diagonal head then applies the exact one-step map.
        let spec = ModelSpec::new(ModelKind::Tcn, 2, 2).with_hidden(2).with_kernel(2);
        let mut params = init_parameters::<f64>(&spec).unwrap();
        for (name, tensor) in params.iter_mut() {
            if name.starts_with("block0") {
                tensor.fill(0.0);
            }
        }
        *params.get_mut("head.weight").unwrap() =
            Tensor::matrix(2, 2, vec![0.9, 0.0, 0.0, -0.8]);
        params.get_mut("head.bias").unwrap().fill(0.0);
        let proj = plan.project(&full).unwrap();
        let (full_mse, retained_mse) =
            reconstruction_mse(&spec, &params, &plan, &proj, &full, 5).unwrap();
        assert_eq!(retained_mse, 0.0, "exact map must leave no residual");
        assert!(full_mse < 1e-24, "reconstruction residual {full_mse}");
    }

    fn series_of(
        run_id: &str,
        columns: impl Fn(usize) -> Vec<f64>,
        t: usize,
    ) -> NodeTimeSeries<f64> {
        let rows: Vec<Vec<f64>> = (0..t).map(&columns).collect();
        let d = rows[0].len();
        let ids: Vec<String> = (0..d).map(|i| format!("n{i}")).collect();
        NodeTimeSeries::new(
            run_id,
            Quantity::Temperature,
            (0..t).map(|i| i as f64).collect(),
            Tensor::from_rows(&rows),
            ids,
            InitialConditions::default(),
        )
        .unwrap()
    }

    fn correlated_run(run_id: &str, t: usize) -> NodeTimeSeries<f64> {
        series_of(
            run_id,
            |i| {
                let x = i as f64;
                let a = 300.0 + 10.0 * (x / 40.0 * std::f64::consts::TAU).sin() + 0.01 * x;
                let b = 295.0 + 5.0 * (x / 23.0 * std::f64::consts::TAU).cos();
                vec![a, b, 1.5 * a - 2.0]
            },
            t,
        )
    }

    fn quick_optim() -> OptimConfig {
        OptimConfig {
            learning_rate: 3e-3,
            epochs: 3,
            batch_size: 16,
            seq_len: 5,
            ..OptimConfig::default()
        }
    }

    #[test]
    fn specialised_protocol_is_deterministic() {
        let run = correlated_run("runA", 160);
        let spec = ModelSpec::new(ModelKind::Gru, 1, 1).with_hidden(6);
        let optim = quick_optim();
        let a =
            specialised_protocol(&run, &spec, &optim, 0.95, NormMode::MinMax, &[1, 2]).unwrap();
        assert_eq!(a.plan.n_retained(), 2, "affine third node should fold away");
        assert_eq!(a.metrics.n_repeats, 2);
        assert!(a.metrics.mse_mean.is_finite() && a.metrics.mse_mean >= 0.0);
        assert!(a.retained_metrics.mse_mean.is_finite());
        let b =
            specialised_protocol(&run, &spec, &optim, 0.95, NormMode::MinMax, &[1, 2]).unwrap();
        assert_eq!(a.metrics.mse_mean, b.metrics.mse_mean);
        assert_eq!(a.metrics.mse_std, b.metrics.mse_std);
        assert_eq!(a.retained_metrics.mse_mean, b.retained_metrics.mse_mean);
    }

    #[test]
    fn validation_never_reads_the_test_segment() {
        let run = correlated_run("runA", 160);
        // Same run with the test segment (the final fifth) vandalized.
        let mut values = run.values().clone();
        for r in 128..160 {
            for c in 0..3 {
                values.set2(r, c, values.get2(r, c) + 37.0);
            }
        }
        let tampered = series_of("runA", |i| values.row_slice(i).to_vec(), 160);
        let spec = ModelSpec::new(ModelKind::Rnn, 1, 1).with_hidden(4);
        let optim = quick_optim();
        let a = specialised_protocol(&run, &spec, &optim, 0.95, NormMode::MinMax, &[1]).unwrap();
        let b =
            specialised_protocol(&tampered, &spec, &optim, 0.95, NormMode::MinMax, &[1]).unwrap();
        assert_eq!(a.normalizer, b.normalizer, "normalizer must only see train");
        assert_eq!(a.plan, b.plan, "plan must only see train");
        assert_eq!(
            a.repeats[0].curves, b.repeats[0].curves,
            "train/val curves must not depend on the test segment"
        );
        assert_ne!(a.metrics.mse_mean, b.metrics.mse_mean);
    }

    #[test]
    fn full_node_mse_equals_retained_when_nothing_is_discarded() {
        // Weakly correlated nodes: the plan keeps everything, so the
        // reconstruction is the identity and both columns coincide.
        let run = series_of(
            "runB",
            |i| {
                let x = i as f64;
                vec![
                    (x / 17.0).sin(),
                    (x / 5.0).cos(),
                    (x / 41.0).sin() + 0.02 * x,
                ]
            },
            140,
        );
        let spec = ModelSpec::new(ModelKind::Gru, 1, 1).with_hidden(4);
        let out =
            specialised_protocol(&run, &spec, &quick_optim(), 0.95, NormMode::MinMax, &[1])
                .unwrap();
        assert!(out.plan.parents.is_empty());
        assert_eq!(out.metrics.mse_mean, out.retained_metrics.mse_mean);
        assert_eq!(out.metrics.mse_std, out.retained_metrics.mse_std);
    }

    #[test]
    fn generalised_duplicate_training_sets_give_identical_folds() {
        let a = correlated_run("runA", 110);
        let b = correlated_run("runA", 110).with_run_id("runB");
        let c = series_of(
            "runC",
            |i| {
                let x = i as f64;
                let p = 302.0 + 8.0 * (x / 31.0).sin();
                let q = 296.0 + 4.0 * (x / 11.0).cos();
                vec![p, q, 1.5 * p - 2.0]
            },
            110,
        );
        let spec = ModelSpec::new(ModelKind::Gru, 1, 1).with_hidden(4);
        let folds = generalised_protocol(
            &[a, b, c],
            &spec,
            &quick_optim(),
            0.95,
            NormMode::MinMax,
            &[1],
        )
        .unwrap();
        assert_eq!(folds.len(), 3);
        let ids: Vec<&str> = folds.iter().map(|f| f.held_out.as_str()).collect();
        assert_eq!(ids, ["runA", "runB", "runC"]);
        for fold in &folds {
            assert!(fold.metrics.mse_mean.is_finite());
            assert!(fold.retained_metrics.mse_mean.is_finite());
        }
        // Folds 0 and 1 hold out identical data and train on identical
        // pools, so they must agree bit for bit.
        assert_eq!(folds[0].metrics.mse_mean, folds[1].metrics.mse_mean);
        assert_eq!(folds[0].metrics.mse_std, folds[1].metrics.mse_std);
    }

    #[test]
    fn generalised_requires_two_runs() {
        let run = correlated_run("runA", 110);
        let spec = ModelSpec::new(ModelKind::Gru, 1, 1).with_hidden(4);
        let err = generalised_protocol(
            std::slice::from_ref(&run),
            &spec,
            &quick_optim(),
            0.95,
            NormMode::MinMax,
            &[1],
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::BadConfig { .. }));
    }

    #[test]
    fn trial_log_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.csv");
        let space = SearchSpace::default();
        let (_, log) = random_search(&space, |c| Ok(c.dropout), 3, 21).unwrap();
        write_trial_log(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "trial,lr,wd,dropout,hidden,layers,heads,objective"
        );
        assert_eq!(lines.count(), 3);
        // Shortest round-trip float formatting: parsing back is exact.
        let second = text.lines().nth(1).unwrap();
        let lr: f64 = second.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(lr, log[0].config.learning_rate);
    }

    #[test]
    fn metrics_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            MetricsRow {
                target: "runA".into(),
                model: "GRU".into(),
                metrics: RunMetrics::from_samples(&[4.9e-5, 5.0e-5, 4.8e-5], 12.25),
            },
            MetricsRow {
                target: "runA".into(),
                model: "TCN".into(),
                metrics: RunMetrics::from_samples(&[5.7e-5], 3.5),
            },
        ];
        write_metrics(&path, &rows).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn best_config_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best_configs.csv");
        let row = BestConfigRow {
            target: "runA".into(),
            model: "GRU".into(),
            config: TrialConfig {
                learning_rate: 1.5e-3,
                weight_decay: 2e-5,
                dropout: 0.25,
                hidden: 64,
                layers: 2,
                heads: 2,
            },
        };
        write_best_configs(&path, &[row]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "target,model,lr,wd,dropout,hidden,layers,heads"
        );
        assert_eq!(lines.next().unwrap(), "runA,GRU,0.0015,0.00002,0.25,64,2,2");
    }
}
