//! Transformer building blocks expressed over a [`Graph`].
//!
//! Layers hold only [`ParamId`]s; the values live in the model's
//! [`ParamStore`], so one layer definition serves f32 and f64 stores.

use rand::Rng;

use crate::attention::{scaled_dot_product_attention, AttnWeights};
use crate::error::Result;
use crate::params::{fan_in_std, Graph, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_scaled_normal(format!("{name}.weight"), &[in_dim, out_dim], fan_in_std(in_dim), group, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), group));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, group: ParamGroup) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim]), group),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]), group),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.tape.layer_norm(x, gamma, beta, T::from_f64_lossy(LN_EPS))
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        ratio: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = dim * ratio;
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, ParamGroup::Heads, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, true, ParamGroup::Heads, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.tape.gelu(h)?;
        self.fc2.forward(g, h)
    }
}

/// Q/K/V/output projections around multi-head attention.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    /// Queries of width `q_dim` attend over keys of width `kv_dim`; the
    /// attention itself runs at `inner` width and is projected to `out_dim`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        inner: usize,
        out_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let h = ParamGroup::Heads;
        Self {
            q: Linear::new(store, &format!("{name}.q"), q_dim, inner, true, h, rng),
            k: Linear::new(store, &format!("{name}.k"), kv_dim, inner, true, h, rng),
            v: Linear::new(store, &format!("{name}.v"), kv_dim, inner, true, h, rng),
            o: Linear::new(store, &format!("{name}.o"), inner, out_dim, true, h, rng),
            heads,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        queries: Var,
        keys: Var,
    ) -> Result<(Var, AttnWeights<T>)> {
        let q = self.q.forward(g, queries)?;
        let k = self.k.forward(g, keys)?;
        let v = self.v.forward(g, keys)?;
        let (ctx, w) = scaled_dot_product_attention(&mut g.tape, q, k, v, self.heads)?;
        Ok((self.o.forward(g, ctx)?, w))
    }
}

/// Pre-norm self-attention layer: `x += attn(LN(x)); x += mlp(LN(x))`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerLayer {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim, ParamGroup::Heads),
            attn: Attention::new(store, &format!("{name}.attn"), dim, dim, dim, dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim, ParamGroup::Heads),
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, mlp_ratio, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, AttnWeights<T>)> {
        let h = self.ln1.forward(g, x)?;
        let (a, w) = self.attn.forward(g, h, h)?;
        let x = g.tape.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let m = self.mlp.forward(g, h)?;
        Ok((g.tape.add(x, m)?, w))
    }
}

/// Single-head, pre-norm cross-attention with an optional query residual.
/// The residual is dropped whenever the output width differs from the
/// query width.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub attn: Attention,
    pub residual: bool,
}

impl CrossAttention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        out_dim: usize,
        residual: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            ln_q: LayerNorm::new(store, &format!("{name}.ln_q"), q_dim, ParamGroup::Heads),
            ln_kv: LayerNorm::new(store, &format!("{name}.ln_kv"), kv_dim, ParamGroup::Heads),
            attn: Attention::new(store, &format!("{name}.attn"), q_dim, kv_dim, q_dim, out_dim, 1, rng),
            residual: residual && out_dim == q_dim,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        queries: Var,
        inputs: Var,
    ) -> Result<(Var, AttnWeights<T>)> {
        let q = self.ln_q.forward(g, queries)?;
        let kv = self.ln_kv.forward(g, inputs)?;
        let (out, w) = self.attn.forward(g, q, kv)?;
        let out = if self.residual { g.tape.add(queries, out)? } else { out };
        Ok((out, w))
    }
}
