use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-head attention probabilities, shape `[heads, queries, keys]`.
pub type AttnWeights<T> = Tensor<T>;

/// Multi-head scaled dot-product attention on already-projected Q, K, V.
///
/// Column blocks of Q/K/V are the heads; each head computes
/// `softmax(Q_h K_hᵀ / √d_h) V_h` and the head outputs are concatenated.
pub fn scaled_dot_product_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Result<(Var, AttnWeights<T>)> {
    let (nq, d) = (tape.value(q).rows(), tape.value(q).cols());
    let (nk, dk) = (tape.value(k).rows(), tape.value(k).cols());
    let (nv, dv) = (tape.value(v).rows(), tape.value(v).cols());
    if nk == 0 {
        return Err(Error::EmptyKeys);
    }
    if d != dk || nk != nv {
        return Err(Error::dim(format!("attention: Q {nq}x{d}, K {nk}x{dk}, V {nv}x{dv}")));
    }
    if heads == 0 || d % heads != 0 || dv % heads != 0 {
        return Err(Error::config(format!("{heads} heads do not divide widths {d} and {dv}")));
    }
    let dh = d / heads;
    let dvh = dv / heads;
    let scale = T::one() / T::from_usize(dh).expect("head width fits").sqrt();

    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads * nq * nk);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh)?,
                tape.slice_cols(k, h * dh, dh)?,
                tape.slice_cols(v, h * dvh, dvh)?,
            )
        };
        let logits = tape.matmul_nt(qh, kh)?;
        let logits = tape.scale(logits, scale)?;
        let attn = tape.softmax_rows(logits)?;
        weights.extend_from_slice(tape.value(attn).data());
        outs.push(tape.matmul(attn, vh)?);
    }
    let out = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok((out, Tensor::new(&[heads, nq, nk], weights)?))
}

/// Head-averaged attention matrix `[queries, keys]`.
pub fn mean_over_heads<T: Scalar>(weights: &AttnWeights<T>) -> Tensor<T> {
    let [heads, q, k] = *weights.shape() else {
        panic!("attention weights must be [heads, q, k]");
    };
    let mut out = vec![T::zero(); q * k];
    for block in weights.data().chunks(q * k) {
        out.iter_mut().zip(block).for_each(|(o, &w)| *o = *o + w);
    }
    let n = T::from_usize(heads).expect("head count fits");
    out.iter_mut().for_each(|o| *o = *o / n);
    Tensor::new(&[q, k], out).expect("shape matches data")
}
