//! Encoder-only Transformer: input projection plus sinusoidal positional
//! encoding, then post-norm blocks of multi-head scaled dot-product
//! attention and a position-wise feed-forward net (width 4n), each with
//! a residual connection and layer normalization.

use rand::Rng;

use super::{apply_head, check_kind, check_window, BoundParams, ModelError, ModelKind, ModelSpec};
use crate::autodiff::{layer_norm, AutodiffError, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

/// One head of scaled dot-product attention. Returns the row-stochastic
/// weight matrix alongside the attended values.
fn scaled_dot_attention<F: Scalar>(
    q: &Var<F>,
    k: &Var<F>,
    v: &Var<F>,
) -> Result<(Var<F>, Var<F>), AutodiffError> {
    let d_k = q.value().cols() as f64;
    let scores = q.matmul(&k.transpose())?.scale(F::of(1.0 / d_k.sqrt()));
    let weights = scores.softmax(1);
    let attended = weights.matmul(v)?;
    Ok((weights, attended))
}

/// `PE[i, 2j] = sin(i / 10000^(2j/n))`, `PE[i, 2j+1] = cos(...)`.
fn positional_encoding<F: Scalar>(t: usize, n: usize) -> Tensor<F> {
    let mut pe = Tensor::zeros(&[t, n]);
    for i in 0..t {
        for j in 0..n {
            let exponent = (2 * (j / 2)) as f64 / n as f64;
            let angle = i as f64 / 10000f64.powf(exponent);
            let value = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.set2(i, j, F::of(value));
        }
    }
    pe
}

/// Full encoder stack; returns the `[T, n]` representation sequence.
pub(crate) fn encode<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    let n = spec.hidden;
    let d_head = n / spec.heads;
    let x = tape.var(window.clone());
    let mut h = x
        .matmul(params.var("embed.weight"))?
        .add(params.var("embed.bias"))?
        .add(&tape.var(positional_encoding::<F>(window.rows(), n)))?;
    for l in 0..spec.layers {
        let p = format!("block{l}");
        let var = |suffix: &str| params.var(&format!("{p}.{suffix}"));
        let q = h.matmul(var("attn.w_q"))?.add(var("attn.b_q"))?;
        let k = h.matmul(var("attn.w_k"))?.add(var("attn.b_k"))?;
        let v = h.matmul(var("attn.w_v"))?.add(var("attn.b_v"))?;
        let mut heads = Vec::with_capacity(spec.heads);
        for head in 0..spec.heads {
            let (start, end) = (head * d_head, (head + 1) * d_head);
            let (qh, kh, vh) = (
                q.slice(1, start, end)?,
                k.slice(1, start, end)?,
                v.slice(1, start, end)?,
            );
            let (_, attended) = scaled_dot_attention(&qh, &kh, &vh)?;
            heads.push(attended);
        }
        let mut joined = heads[0].clone();
        for other in &heads[1..] {
            joined = joined.concat(other, 1)?;
        }
        let projected = joined
            .matmul(var("attn.w_o"))?
            .add(var("attn.b_o"))?
            .dropout(spec.dropout, training, rng);
        let attended = layer_norm(
            &h.add(&projected)?,
            var("norm1.gain"),
            var("norm1.bias"),
            F::of(NORM_EPS),
        )?;
        let ff = attended
            .matmul(var("ffn.w1"))?
            .add(var("ffn.b1"))?
            .relu()
            .matmul(var("ffn.w2"))?
            .add(var("ffn.b2"))?
            .dropout(spec.dropout, training, rng);
        h = layer_norm(
            &attended.add(&ff)?,
            var("norm2.gain"),
            var("norm2.bias"),
            F::of(NORM_EPS),
        )?;
    }
    Ok(h)
}

pub fn transformer_forward<F: Scalar, R: Rng>(
    tape: &Tape<F>,
    spec: &ModelSpec,
    params: &BoundParams<F>,
    window: &Tensor<F>,
    training: bool,
    rng: &mut R,
) -> Result<Var<F>, ModelError> {
    check_kind("transformer_forward", spec, ModelKind::Transformer)?;
    check_window("transformer_forward", spec, window)?;
    let rep = encode(tape, spec, params, window, training, rng)?;
    let t = window.rows();
    let last = rep.slice(0, t - 1, t)?;
    Ok(apply_head(&last, params)?)
}
