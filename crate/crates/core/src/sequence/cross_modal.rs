use rand::Rng;

use super::attention::{AttentionSpec, FeedForward, MultiHeadAttention};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Dropout, LayerNorm, ParamGroup, ParamStore};
use crate::scalar::Scalar;

/// Two directed cross-modal stacks followed by a self-attention stack.
///
/// `V→A` uses the visual stream as source (keys/values) and reinforces the
/// audio target; `A→V` is the converse. `attention.n_layers` is the depth of
/// the self-attention stack that runs on the fused sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossModalSpec {
    pub n_layers_v_to_a: usize,
    pub n_layers_a_to_v: usize,
    pub attention: AttentionSpec,
}

impl CrossModalSpec {
    pub fn validate(&self) -> Result<()> {
        self.attention.validate()?;
        if self.n_layers_v_to_a == 0 || self.n_layers_a_to_v == 0 {
            return Err(Error::Config(
                "cross-modal stacks need at least one layer each".into(),
            ));
        }
        Ok(())
    }

    /// Attention, feedforward, and four layer norms (two on the inputs, two
    /// after the residual additions).
    pub fn block_param_count(&self) -> usize {
        let a = &self.attention;
        a.mha_param_count() + a.feedforward_param_count() + 4 * 2 * a.d_model
    }
}

/// Cross-modal attention block: queries from the target, keys and values
/// from the source, no self-attention.
///
/// `t ← LN(t + drop(MHA(LN_t(t), LN_s(s), LN_s(s))))`, then
/// `t ← LN(t + drop(FF(t)))`.
#[derive(Clone, Debug)]
pub struct CrossModalBlock {
    pub attention: MultiHeadAttention,
    pub feedforward: FeedForward,
    pub norm_target: LayerNorm,
    pub norm_source: LayerNorm,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub dropout: Dropout,
}

impl CrossModalBlock {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        spec: &AttentionSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let g = ParamGroup::Sequence;
        let d = spec.d_model;
        Ok(CrossModalBlock {
            attention: MultiHeadAttention::new(
                store,
                rng,
                &format!("{name}.attn"),
                d,
                spec.n_heads,
            )?,
            feedforward: FeedForward::new(store, rng, &format!("{name}.ff"), spec),
            norm_target: LayerNorm::new(store, &format!("{name}.norm_target"), g, d),
            norm_source: LayerNorm::new(store, &format!("{name}.norm_source"), g, d),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), g, d),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), g, d),
            dropout: Dropout { p: spec.dropout },
        })
    }

    /// `target: [B, T_t, d]`, `source: [B, T_s, d]` → `[B, T_t, d]` plus the
    /// attention weights `[B, H, T_t, T_s]`.
    pub fn forward<S: Scalar>(
        &self,
        ctx: &Ctx<'_, S>,
        target: Var,
        source: Var,
    ) -> Result<(Var, Var)> {
        let t = ctx.tape;
        let (ts, ss) = (t.shape(target), t.shape(source));
        if ts.len() != 3 || ss.len() != 3 || ts[2] != ss[2] || ts[0] != ss[0] {
            return Err(Error::shape("cross_modal_block", &ts, &ss));
        }
        let q = self.norm_target.forward(ctx, target)?;
        let kv = self.norm_source.forward(ctx, source)?;
        let (a, weights) = self.attention.forward(ctx, q, kv, kv)?;
        let a = self.dropout.forward(ctx, a)?;
        let x = self.norm1.forward(ctx, t.add(target, a)?)?;
        let f = self.feedforward.forward(ctx, x)?;
        let f = self.dropout.forward(ctx, f)?;
        let x = self.norm2.forward(ctx, t.add(x, f)?)?;
        Ok((x, weights))
    }
}

/// A directed stack. Every layer attends to the same layer-0 source.
#[derive(Clone, Debug)]
pub struct CrossModalStack {
    pub blocks: Vec<CrossModalBlock>,
}

impl CrossModalStack {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        spec: &AttentionSpec,
        depth: usize,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|l| CrossModalBlock::new(store, rng, &format!("{name}.layer{l}"), spec))
            .collect::<Result<_>>()?;
        Ok(CrossModalStack { blocks })
    }

    pub fn forward<S: Scalar>(
        &self,
        ctx: &Ctx<'_, S>,
        mut target: Var,
        source: Var,
    ) -> Result<Var> {
        for b in &self.blocks {
            target = b.forward(ctx, target, source)?.0;
        }
        Ok(target)
    }
}
