//! Temporal convolutional network: residual blocks of two dilated causal
//! convolutions each, dilation doubling per block. A 1x1 projection
//! aligns the skip path when the channel counts differ; the block output
//! is the plain sum of skip and conv paths, so a zero conv path leaves
//! the block as the identity.

use rand::Rng;

use super::{apply_head, check_kind, check_window, BoundParams, ModelError, ModelKind, ModelSpec};
use crate::autodiff::{conv1d_causal, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Steps of history visible to the last output: two convolutions per
/// block, each spanning `(taps - 1) * 2^l` steps at block `l`.
pub fn receptive_field(spec: &ModelSpec) -> usize {
    (0..spec.layers).fold(1usize, |acc, l| {
        acc + 2 * (spec.kernel - 1) * (1usize << l)
    })
}

fn conv_taps<F: Scalar>(params: &BoundParams<F>, prefix: &str, taps: usize) -> Vec<Var<F>> {
    (0..taps)
        .map(|j| params.var(&format!("{prefix}.tap{j}")).clone())
        .collect()
}

/// Full block stack; returns the `[T, n]` representation sequence.
pub(crate) fn tcn_sequence<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    let n = spec.hidden;
    let mut h = tape.var(window.clone());
    let mut c_in = spec.d_in;
    for l in 0..spec.layers {
        let dilation = 1usize << l;
        let p = format!("block{l}");
        let first = conv1d_causal(&h, &conv_taps(params, &format!("{p}.conv1"), spec.kernel), dilation)?
            .add(params.var(&format!("{p}.conv1.bias")))?
            .relu()
            .dropout(spec.dropout, training, rng);
        let path = conv1d_causal(&first, &conv_taps(params, &format!("{p}.conv2"), spec.kernel), dilation)?
            .add(params.var(&format!("{p}.conv2.bias")))?
            .relu()
            .dropout(spec.dropout, training, rng);
        let skip = if c_in == n {
            h.clone()
        } else {
            h.matmul(params.var(&format!("{p}.skip.weight")))?
        };
        h = skip.add(&path)?;
        c_in = n;
    }
    Ok(h)
}

pub fn tcn_forward<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    check_kind("tcn_forward", spec, ModelKind::Tcn)?;
    check_window("tcn_forward", spec, window)?;
    let rep = tcn_sequence(tape, spec, params, window, training, rng)?;
    let t = window.rows();
    let last = rep.slice(0, t - 1, t)?;
    Ok(apply_head(&last, params)?)
}
