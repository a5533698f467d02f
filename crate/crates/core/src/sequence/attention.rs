use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Ctx, Dense, Dropout, LayerNorm, ParamGroup, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_feedforward: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl AttentionSpec {
    pub fn head_width(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_feedforward == 0 || self.n_layers == 0 {
            return Err(Error::Config(format!(
                "attention widths and depth must be positive: {self:?}"
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Q, K, V and output projections with biases.
    pub fn mha_param_count(&self) -> usize {
        4 * (self.d_model * self.d_model + self.d_model)
    }

    pub fn feedforward_param_count(&self) -> usize {
        let (d, f) = (self.d_model, self.d_feedforward);
        d * f + f + f * d + d
    }

    /// Self-attention, feedforward and two layer norms.
    pub fn encoder_layer_param_count(&self) -> usize {
        self.mha_param_count() + self.feedforward_param_count() + 2 * 2 * self.d_model
    }
}

/// `softmax(QKᵀ/√d_k)·V`. Returns the attended values and the weights.
///
/// Shapes: `Q: [.., T_q, d_k]`, `K: [.., T_k, d_k]`, `V: [.., T_k, d_v]`.
pub fn scaled_dot_product_attention<S: Scalar>(
    tape: &Tape<S>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if qs.len() < 2 || ks.len() != qs.len() || vs.len() != qs.len() {
        return Err(Error::shape("attention", &qs, &ks));
    }
    let r = qs.len();
    if qs[r - 1] != ks[r - 1] || qs[..r - 2] != ks[..r - 2] {
        return Err(Error::shape("attention(d_k)", &qs, &ks));
    }
    if ks[r - 2] != vs[r - 2] || ks[..r - 2] != vs[..r - 2] {
        return Err(Error::shape("attention(T_k)", &ks, &vs));
    }
    let d_k = qs[r - 1];
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, S::one() / S::of(d_k as f64).sqrt());
    let weights = tape.softmax(scores);
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Multi-head attention over `[B, T, d_model]` inputs. The per-head
/// projections `W_i^Q, W_i^K, W_i^V` are the column blocks of one
/// `d_model × d_model` matrix each.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub n_heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        d_model: usize,
        n_heads: usize,
    ) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by n_heads {n_heads}"
            )));
        }
        let g = ParamGroup::Sequence;
        Ok(MultiHeadAttention {
            query: Dense::new(
                store,
                rng,
                &format!("{name}.query"),
                g,
                d_model,
                d_model,
                true,
            ),
            key: Dense::new(
                store,
                rng,
                &format!("{name}.key"),
                g,
                d_model,
                d_model,
                true,
            ),
            value: Dense::new(
                store,
                rng,
                &format!("{name}.value"),
                g,
                d_model,
                d_model,
                true,
            ),
            output: Dense::new(
                store,
                rng,
                &format!("{name}.output"),
                g,
                d_model,
                d_model,
                true,
            ),
            n_heads,
            d_model,
        })
    }

    fn split_heads<S: Scalar>(&self, tape: &Tape<S>, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        let x = tape.reshape(x, &[s[0], s[1], self.n_heads, self.d_model / self.n_heads])?;
        tape.permute(x, &[0, 2, 1, 3])
    }

    /// Returns the output `[B, T_q, d_model]` and the weights `[B, H, T_q, T_k]`.
    pub fn forward<S: Scalar>(
        &self,
        ctx: &Ctx<'_, S>,
        q: Var,
        k: Var,
        v: Var,
    ) -> Result<(Var, Var)> {
        let t = ctx.tape;
        for x in [q, k, v] {
            let s = t.shape(x);
            if s.len() != 3 || s[2] != self.d_model {
                return Err(Error::shape("multi_head_attention", &s, &[self.d_model]));
            }
        }
        let qh = self.split_heads(t, self.query.forward(ctx, q)?)?;
        let kh = self.split_heads(t, self.key.forward(ctx, k)?)?;
        let vh = self.split_heads(t, self.value.forward(ctx, v)?)?;
        let (heads, weights) = scaled_dot_product_attention(t, qh, kh, vh)?;
        let merged = t.permute(heads, &[0, 2, 1, 3])?;
        let s = t.shape(merged);
        let merged = t.reshape(merged, &[s[0], s[1], self.d_model])?;
        Ok((self.output.forward(ctx, merged)?, weights))
    }
}

/// Position-wise `d_model → d_ff → d_model` network.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub expand: Dense,
    pub contract: Dense,
    pub activation: Activation,
}

impl FeedForward {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        spec: &AttentionSpec,
    ) -> Self {
        let g = ParamGroup::Sequence;
        FeedForward {
            expand: Dense::new(
                store,
                rng,
                &format!("{name}.expand"),
                g,
                spec.d_model,
                spec.d_feedforward,
                true,
            ),
            contract: Dense::new(
                store,
                rng,
                &format!("{name}.contract"),
                g,
                spec.d_feedforward,
                spec.d_model,
                true,
            ),
            activation: spec.activation,
        }
    }

    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        let h = self.expand.forward(ctx, x)?;
        let h = self.activation.apply(ctx, h);
        self.contract.forward(ctx, h)
    }
}

/// Post-norm transformer encoder layer:
/// `x ← LN(x + drop(MHA(x,x,x)))`, then `x ← LN(x + drop(FF(x)))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub feedforward: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub dropout: Dropout,
}

impl EncoderLayer {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        spec: &AttentionSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let g = ParamGroup::Sequence;
        Ok(EncoderLayer {
            attention: MultiHeadAttention::new(
                store,
                rng,
                &format!("{name}.attn"),
                spec.d_model,
                spec.n_heads,
            )?,
            feedforward: FeedForward::new(store, rng, &format!("{name}.ff"), spec),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), g, spec.d_model),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), g, spec.d_model),
            dropout: Dropout { p: spec.dropout },
        })
    }

    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<(Var, Var)> {
        let t = ctx.tape;
        let (a, weights) = self.attention.forward(ctx, x, x, x)?;
        let a = self.dropout.forward(ctx, a)?;
        let x = self.norm1.forward(ctx, t.add(x, a)?)?;
        let f = self.feedforward.forward(ctx, x)?;
        let f = self.dropout.forward(ctx, f)?;
        let x = self.norm2.forward(ctx, t.add(x, f)?)?;
        Ok((x, weights))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
}

impl EncoderStack {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        spec: &AttentionSpec,
    ) -> Result<Self> {
        let layers = (0..spec.n_layers)
            .map(|l| EncoderLayer::new(store, rng, &format!("{name}.layer{l}"), spec))
            .collect::<Result<_>>()?;
        Ok(EncoderStack { layers })
    }

    pub fn forward<S: Scalar>(&self, ctx: &Ctx<'_, S>, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(ctx, x)?.0)
    }

    /// Also returns every layer's attention weights.
    pub fn forward_with_weights<S: Scalar>(
        &self,
        ctx: &Ctx<'_, S>,
        mut x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let mut all = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, w) = layer.forward(ctx, x)?;
            x = y;
            all.push(w);
        }
        Ok((x, all))
    }
}
