//! RNN, LSTM, GRU, and BiLSTM forward passes.
//!
//! Layers share parameters across time steps; stacked layers feed the
//! previous layer's hidden sequence, with dropout between layers only.
//! Hidden and cell states start at zero.

use rand::Rng;

use super::{
    apply_head, check_kind, check_window, split_rows, stack_rows, BoundParams, ModelError,
    ModelKind, ModelSpec,
};
use crate::autodiff::{AutodiffError, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn affine2<F: Scalar>(
    x: &Var<F>,
    wx: &Var<F>,
    h: &Var<F>,
    wh: &Var<F>,
    b: &Var<F>,
) -> Result<Var<F>, AutodiffError> {
    x.matmul(wx)?.add(&h.matmul(wh)?)?.add(b)
}

fn gate_vars<F: Scalar>(
    params: &BoundParams<F>,
    prefix: &str,
    gate: &str,
) -> (Var<F>, Var<F>, Var<F>) {
    (
        params.var(&format!("{prefix}.{gate}.w_x")).clone(),
        params.var(&format!("{prefix}.{gate}.w_h")).clone(),
        params.var(&format!("{prefix}.{gate}.bias")).clone(),
    )
}

fn rnn_layer<F: Scalar>(
    tape: &Tape<F>,
    params: &BoundParams<F>,
    prefix: &str,
    inputs: &[Var<F>],
    n: usize,
) -> Result<Vec<Var<F>>, ModelError> {
    let w_in = params.var(&format!("{prefix}.w_input")).clone();
    let w_fb = params.var(&format!("{prefix}.w_feedback")).clone();
    let b = params.var(&format!("{prefix}.bias")).clone();
    let mut h = tape.var(Tensor::zeros(&[1, n]));
    let mut states = Vec::with_capacity(inputs.len());
    for x in inputs {
        h = affine2(x, &w_in, &h, &w_fb, &b)?.tanh_act();
        states.push(h.clone());
    }
    Ok(states)
}

fn lstm_layer<F: Scalar>(
    tape: &Tape<F>,
    params: &BoundParams<F>,
    prefix: &str,
    inputs: &[Var<F>],
    n: usize,
) -> Result<Vec<Var<F>>, ModelError> {
    let (wxi, whi, bi) = gate_vars(params, prefix, "input");
    let (wxf, whf, bf) = gate_vars(params, prefix, "forget");
    let (wxg, whg, bg) = gate_vars(params, prefix, "cell");
    let (wxo, who, bo) = gate_vars(params, prefix, "output");
    let mut h = tape.var(Tensor::zeros(&[1, n]));
    let mut c = tape.var(Tensor::zeros(&[1, n]));
    let mut states = Vec::with_capacity(inputs.len());
    for x in inputs {
        let i = affine2(x, &wxi, &h, &whi, &bi)?.sigmoid();
        let f = affine2(x, &wxf, &h, &whf, &bf)?.sigmoid();
        let g = affine2(x, &wxg, &h, &whg, &bg)?.tanh_act();
        let o = affine2(x, &wxo, &h, &who, &bo)?.sigmoid();
        c = f.mul(&c)?.add(&i.mul(&g)?)?;
        h = o.mul(&c.tanh_act())?;
        states.push(h.clone());
    }
    Ok(states)
}

// The intermediate fields exist for the convex-combination invariant
// check; production callers read only `next`.
#[cfg_attr(not(test), allow(dead_code))]
struct GruStep<F> {
    prev: Var<F>,
    update: Var<F>,
    candidate: Var<F>,
    next: Var<F>,
}

fn gru_layer_trace<F: Scalar>(
    tape: &Tape<F>,
    params: &BoundParams<F>,
    prefix: &str,
    inputs: &[Var<F>],
    n: usize,
) -> Result<Vec<GruStep<F>>, ModelError> {
    let (wxz, whz, bz) = gate_vars(params, prefix, "update");
    let (wxr, whr, br) = gate_vars(params, prefix, "reset");
    let (wxh, whh, bh) = gate_vars(params, prefix, "candidate");
    let mut h = tape.var(Tensor::zeros(&[1, n]));
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        let z = affine2(x, &wxz, &h, &whz, &bz)?.sigmoid();
        let r = affine2(x, &wxr, &h, &whr, &br)?.sigmoid();
        let gated = r.mul(&h)?;
        let candidate = x.matmul(&wxh)?.add(&gated.matmul(&whh)?)?.add(&bh)?.tanh_act();
        // Literal convex combination (1-z) h + z h~ so the z = 0 and
        // z = 1 limits are exact, not merely close.
        let keep = z.neg().add_scalar(F::one());
        let next = keep.mul(&h)?.add(&z.mul(&candidate)?)?;
        steps.push(GruStep {
            prev: h.clone(),
            update: z,
            candidate,
            next: next.clone(),
        });
        h = next;
    }
    Ok(steps)
}

fn gru_layer<F: Scalar>(
    tape: &Tape<F>,
    params: &BoundParams<F>,
    prefix: &str,
    inputs: &[Var<F>],
    n: usize,
) -> Result<Vec<Var<F>>, ModelError> {
    Ok(gru_layer_trace(tape, params, prefix, inputs, n)?
        .into_iter()
        .map(|s| s.next)
        .collect())
}

/// Top-layer hidden states of a stacked unidirectional recurrent net,
/// one `[1, n]` state per input step.
pub(crate) fn stack_states<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Vec<Var<F>>, ModelError> {
    let mut xs = split_rows(&tape.var(window.clone()))?;
    for l in 0..spec.layers {
        let prefix = format!("layer{l}");
        let mut states = match spec.kind {
            ModelKind::Rnn => rnn_layer(tape, params, &prefix, &xs, spec.hidden)?,
            ModelKind::Lstm => lstm_layer(tape, params, &prefix, &xs, spec.hidden)?,
            ModelKind::Gru => gru_layer(tape, params, &prefix, &xs, spec.hidden)?,
            other => unreachable!("stack_states does not serve {other}"),
        };
        if l + 1 < spec.layers {
            states = states
                .iter()
                .map(|h| h.dropout(spec.dropout, training, rng))
                .collect();
        }
        xs = states;
    }
    Ok(xs)
}

/// Runs the bidirectional stack. Returns the top layer's per-step
/// concatenated features aligned to input order, plus the prediction
/// feature: forward state at the last step joined with the backward
/// state at the first step (each direction's final processed state).
fn bilstm_passes<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<(Vec<Var<F>>, Var<F>), ModelError> {
    let n = spec.hidden;
    let mut xs = split_rows(&tape.var(window.clone()))?;
    let mut feature = None;
    for l in 0..spec.layers {
        let fwd = lstm_layer(tape, params, &format!("fwd.layer{l}"), &xs, n)?;
        let reversed: Vec<Var<F>> = xs.iter().rev().cloned().collect();
        let bwd = lstm_layer(tape, params, &format!("bwd.layer{l}"), &reversed, n)?;
        let t = xs.len();
        let mut combined = Vec::with_capacity(t);
        for i in 0..t {
            combined.push(fwd[i].concat(&bwd[t - 1 - i], 1)?);
        }
        if l + 1 == spec.layers {
            let last_fwd = fwd.last().expect("non-empty window");
            let last_bwd = bwd.last().expect("non-empty window");
            feature = Some(last_fwd.concat(last_bwd, 1)?);
        } else {
            combined = combined
                .iter()
                .map(|row| row.dropout(spec.dropout, training, rng))
                .collect();
        }
        xs = combined;
    }
    Ok((xs, feature.expect("at least one layer")))
}

/// Aligned `[T, 2n]` feature sequence of the bidirectional stack.
pub(crate) fn bilstm_sequence<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    let (combined, _) = bilstm_passes(tape, spec, params, window, training, rng)?;
    Ok(stack_rows(&combined)?)
}

pub fn rnn_forward<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    check_kind("rnn_forward", spec, ModelKind::Rnn)?;
    check_window("rnn_forward", spec, window)?;
    let states = stack_states(tape, spec, params, window, training, rng)?;
    Ok(apply_head(states.last().expect("non-empty window"), params)?)
}

pub fn lstm_forward<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    check_kind("lstm_forward", spec, ModelKind::Lstm)?;
    check_window("lstm_forward", spec, window)?;
    let states = stack_states(tape, spec, params, window, training, rng)?;
    Ok(apply_head(states.last().expect("non-empty window"), params)?)
}

pub fn gru_forward<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    check_kind("gru_forward", spec, ModelKind::Gru)?;
    check_window("gru_forward", spec, window)?;
    let states = stack_states(tape, spec, params, window, training, rng)?;
    Ok(apply_head(states.last().expect("non-empty window"), params)?)
}

pub fn bilstm_forward<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    check_kind("bilstm_forward", spec, ModelKind::BiLstm)?;
    check_window("bilstm_forward", spec, window)?;
    let (_, feature) = bilstm_passes(tape, spec, params, window, training, rng)?;
    Ok(apply_head(&feature, params)?)
}
