//! Dual-attention Transformer semantic encoder and decoder.
//!
//! Each layer runs two branches on the same input `Z` and adds them:
//!
//! * spatial attention: multi-head self-attention, `LN(softmax(QKᵀ/√d_h)V·W_F + Z)`;
//! * channel attention: three parallel 1-D convolution banks over the token
//!   axis, a sigmoid and a channel-wise merge `W₁`, then a squeeze gate
//!   `sigmoid(W₂W₃·maxpool(Z̃))` that rescales every feature channel, a
//!   kernel-1 convolution and `LN(· + Z)`.
//!
//! The sum feeds the Transformer feed-forward block. Decoder layers use a
//! causal mask in the spatial branch, left-only padding in the convolutions
//! and a running (prefix) max instead of a global max, followed by standard
//! cross-attention to the received features.

use crate::corpus::TokenBatch;
use crate::error::{Error, Result};
use crate::model::{Bound, ModelConfig};
use crate::tensor::{Padding, Tensor, Var};

/// Masks shared by every layer of one encoder or decoder pass.
pub struct SeqContext {
    pub batch: usize,
    pub len: usize,
    pub causal: bool,
    /// Additive attention mask, `[B,1,1,L]` or `[B,1,L,L]` (0 or −∞).
    pub attn_mask: Tensor,
    /// `[B,1,L]`, 1 at real tokens; zeroes padding before the convolutions.
    keep: Tensor,
    /// `[B,1,L]`, −∞ at padding; excludes it from the max-pool.
    pool_mask: Tensor,
}

impl SeqContext {
    /// Bidirectional context that hides padded keys.
    pub fn padded(batch: usize, len: usize, pad_mask: &[bool]) -> Result<Self> {
        if pad_mask.len() != batch * len {
            return Err(Error::dim("attention mask", &[batch, len], &[pad_mask.len()]));
        }
        let add: Vec<f64> = pad_mask.iter().map(|&m| if m { 0.0 } else { f64::NEG_INFINITY }).collect();
        let keep: Vec<f64> = pad_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Ok(SeqContext {
            batch,
            len,
            causal: false,
            attn_mask: Tensor::new(vec![batch, 1, 1, len], add.clone())?,
            keep: Tensor::new(vec![batch, 1, len], keep)?,
            pool_mask: Tensor::new(vec![batch, 1, len], add)?,
        })
    }

    /// Causal context: position `t` attends to keys `s <= t` that are not padding.
    pub fn causal(batch: usize, len: usize, pad_mask: &[bool]) -> Result<Self> {
        let mut ctx = Self::padded(batch, len, pad_mask)?;
        let mut add = vec![0.0; batch * len * len];
        for b in 0..batch {
            for t in 0..len {
                for s in 0..len {
                    if s > t || !pad_mask[b * len + s] {
                        add[(b * len + t) * len + s] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        ctx.attn_mask = Tensor::new(vec![batch, 1, len, len], add)?;
        ctx.causal = true;
        Ok(ctx)
    }

    fn padding(&self) -> Padding {
        if self.causal {
            Padding::Causal
        } else {
            Padding::Same
        }
    }
}

/// Multi-head attention of `x_q` over `x_kv` with the post-norm residual.
/// Returns the block output and the attention weights `[B,H,Lq,Lk]`.
pub fn attention_block<'t>(
    x_q: Var<'t>,
    x_kv: Var<'t>,
    p: &Bound<'t>,
    prefix: &str,
    mask: &Tensor,
    cfg: &ModelConfig,
) -> Result<(Var<'t>, Var<'t>)> {
    let qs = x_q.shape();
    let ks = x_kv.shape();
    let (b, lq, lk) = (qs[0], qs[1], ks[1]);
    let (h, dh) = (cfg.heads, cfg.head_dim());
    let ms = mask.shape();
    if ms.len() != 4 || ms[0] != b || ms[3] != lk || (ms[2] != 1 && ms[2] != lq) {
        return Err(Error::dim("attention mask", &[b, 1, lq, lk], ms));
    }
    let split = |x: Var<'t>, l: usize| -> Result<Var<'t>> {
        x.reshape(&[b, l, h, dh])?.permute(&[0, 2, 1, 3])
    };
    let q = split(x_q.dense(p.get(&format!("{prefix}.wq"))?, None)?, lq)?;
    let k = split(x_kv.dense(p.get(&format!("{prefix}.wk"))?, None)?, lk)?;
    let v = split(x_kv.dense(p.get(&format!("{prefix}.wv"))?, None)?, lk)?;
    let scores = q
        .batch_matmul(k, true)?
        .scale(1.0 / (dh as f64).sqrt())
        .add(p.tape.constant(mask.clone()))?;
    let weights = scores.softmax(3)?;
    let ctx = weights
        .batch_matmul(v, false)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, lq, cfg.d_model])?;
    let out = ctx
        .dense(p.get(&format!("{prefix}.wf"))?, None)?
        .add(x_q)?
        .layer_norm(p.get(&format!("{prefix}.ln.g"))?, p.get(&format!("{prefix}.ln.b"))?, cfg.ln_eps)?;
    Ok((out, weights))
}

/// Coarse branch: self-attention over token positions.
pub fn spatial_attention<'t>(z: Var<'t>, p: &Bound<'t>, prefix: &str, ctx: &SeqContext, cfg: &ModelConfig) -> Result<Var<'t>> {
    Ok(attention_block(z, z, p, prefix, &ctx.attn_mask, cfg)?.0)
}

/// Fine branch: multi-kernel convolutions along the token axis with a
/// squeeze-style gate over feature channels.
pub fn channel_attention<'t>(z: Var<'t>, p: &Bound<'t>, prefix: &str, ctx: &SeqContext, cfg: &ModelConfig) -> Result<Var<'t>> {
    let s = z.shape();
    if s.len() != 3 || s[0] != ctx.batch || s[1] != ctx.len || s[2] != cfg.d_model {
        return Err(Error::dim("channel_attention", &s, &[ctx.batch, ctx.len, cfg.d_model]));
    }
    let (b, l, d) = (s[0], s[1], s[2]);
    let tape = p.tape;
    let pad = ctx.padding();
    let w = |n: &str| p.get(&format!("{prefix}.{n}"));

    // Zᵀ: [B, d, L], padding zeroed so it reads like the conv's own zero pad
    let zt = z.transpose()?.mul(tape.constant(ctx.keep.clone()))?;
    let banks = (0..cfg.kernel_sizes.len())
        .map(|j| zt.conv1d(w(&format!("conv{j}.w"))?, Some(w(&format!("conv{j}.b"))?), pad))
        .collect::<Result<Vec<_>>>()?;
    let stacked = Var::concat(&banks, 1)?.sigmoid();
    let z_tilde = stacked.conv1d(w("merge.w")?, Some(w("merge.b")?), pad)?;

    let gate = if ctx.causal {
        let pooled = z_tilde.prefix_max(2)?.transpose()?; // [B, L, d]
        pooled
            .dense(w("squeeze.w")?, Some(w("squeeze.b")?))?
            .dense(w("excite.w")?, Some(w("excite.b")?))?
            .sigmoid()
            .transpose()? // [B, d, L]
    } else {
        let pooled = z_tilde.add(tape.constant(ctx.pool_mask.clone()))?.global_maxpool(2)?; // [B, d]
        pooled
            .dense(w("squeeze.w")?, Some(w("squeeze.b")?))?
            .dense(w("excite.w")?, Some(w("excite.b")?))?
            .sigmoid()
            .reshape(&[b, d, 1])?
    };
    let gated = z_tilde.mul(gate)?;
    let out = gated.conv1d(w("out.w")?, Some(w("out.b")?), pad)?.transpose()?;
    debug_assert_eq!(out.shape(), vec![b, l, d]);
    out.add(z)?.layer_norm(w("ln.g")?, w("ln.b")?, cfg.ln_eps)
}

/// Position-wise feed-forward block with residual and layer norm.
pub fn feed_forward<'t>(x: Var<'t>, p: &Bound<'t>, prefix: &str, cfg: &ModelConfig) -> Result<Var<'t>> {
    let w = |n: &str| p.get(&format!("{prefix}.{n}"));
    x.dense(w("w1")?, Some(w("b1")?))?
        .relu()
        .dense(w("w2")?, Some(w("b2")?))?
        .add(x)?
        .layer_norm(w("ln.g")?, w("ln.b")?, cfg.ln_eps)
}

/// Which branch a [`FuseProbe`] entry refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Spatial,
    Channel,
}

/// Evaluation order of the two branches (the result does not depend on it).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BranchOrder {
    #[default]
    SpatialFirst,
    ChannelFirst,
}

/// Records the tape node each branch received as its input.
#[derive(Debug, Default)]
pub struct FuseProbe {
    pub inputs: Vec<(Branch, usize)>,
}

/// `SA(Z) + CA(Z)`, both branches reading the same `Z`.
pub fn fuse_branches<'t>(
    z: Var<'t>,
    p: &Bound<'t>,
    prefix: &str,
    ctx: &SeqContext,
    cfg: &ModelConfig,
    order: BranchOrder,
    mut probe: Option<&mut FuseProbe>,
) -> Result<Var<'t>> {
    let mut run = |branch: Branch| -> Result<Var<'t>> {
        if let Some(pr) = probe.as_deref_mut() {
            pr.inputs.push((branch, z.id()));
        }
        match branch {
            Branch::Spatial => spatial_attention(z, p, &format!("{prefix}.sa"), ctx, cfg),
            Branch::Channel => channel_attention(z, p, &format!("{prefix}.ca"), ctx, cfg),
        }
    };
    match order {
        BranchOrder::SpatialFirst => {
            let sa = run(Branch::Spatial)?;
            let ca = run(Branch::Channel)?;
            sa.add(ca)
        }
        BranchOrder::ChannelFirst => {
            let ca = run(Branch::Channel)?;
            let sa = run(Branch::Spatial)?;
            sa.add(ca)
        }
    }
}

/// One encoder layer: `Z' = FFN(SA(Z) + CA(Z))`.
pub fn fuse_layer<'t>(z: Var<'t>, p: &Bound<'t>, prefix: &str, ctx: &SeqContext, cfg: &ModelConfig) -> Result<Var<'t>> {
    fuse_layer_with(z, p, prefix, ctx, cfg, BranchOrder::default(), None)
}

pub fn fuse_layer_with<'t>(
    z: Var<'t>,
    p: &Bound<'t>,
    prefix: &str,
    ctx: &SeqContext,
    cfg: &ModelConfig,
    order: BranchOrder,
    probe: Option<&mut FuseProbe>,
) -> Result<Var<'t>> {
    let fused = fuse_branches(z, p, prefix, ctx, cfg, order, probe)?;
    feed_forward(fused, p, &format!("{prefix}.ffn"), cfg)
}

/// Sinusoidal position table `[len, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("positional table shape")
}

fn embed<'t>(p: &Bound<'t>, table: &str, ids: &[usize], batch: usize, len: usize, cfg: &ModelConfig) -> Result<Var<'t>> {
    let e = p.get(table)?.embedding_lookup(ids, &[batch, len])?;
    e.add(p.tape.constant(positional_encoding(len, cfg.d_model)))
}

/// Semantic encoder: embeddings + positions, then the dual-attention stack.
/// Output `[B, L, d]`.
pub fn encode<'t>(batch: &TokenBatch, p: &Bound<'t>, cfg: &ModelConfig) -> Result<Var<'t>> {
    batch.check_vocab(cfg.vocab_size)?;
    let ctx = SeqContext::padded(batch.batch, batch.max_len, &batch.pad_mask)?;
    let mut z = embed(p, "enc.emb", &batch.ids, batch.batch, batch.max_len, cfg)?;
    for i in 0..cfg.layers {
        z = fuse_layer(z, p, &format!("enc.{i}"), &ctx, cfg)?;
    }
    Ok(z)
}

/// Semantic decoder over a full (teacher-forced or partial) target prefix.
/// `ids` is `[B, Lt]` row-major; `memory` is `[B, Ls, d]` with `memory_mask`
/// marking real source tokens. Returns logits `[B, Lt, V]`.
pub fn decode<'t>(
    memory: Var<'t>,
    memory_mask: &[bool],
    ids: &[usize],
    target_mask: &[bool],
    p: &Bound<'t>,
    cfg: &ModelConfig,
) -> Result<Var<'t>> {
    let ms = memory.shape();
    let (b, ls) = (ms[0], ms[1]);
    if ids.is_empty() || !ids.len().is_multiple_of(b) {
        return Err(Error::Contract("decoder needs a non-empty target prefix per row".into()));
    }
    let lt = ids.len() / b;
    if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::Data(format!("token id {bad} out of range for vocabulary of {}", cfg.vocab_size)));
    }
    let self_ctx = SeqContext::causal(b, lt, target_mask)?;
    let cross = SeqContext::padded(b, ls, memory_mask)?;
    let mut x = embed(p, "dec.emb", ids, b, lt, cfg)?;
    for i in 0..cfg.layers {
        let prefix = format!("dec.{i}");
        let h = fuse_branches(x, p, &prefix, &self_ctx, cfg, BranchOrder::default(), None)?;
        let (h, _) = attention_block(h, memory, p, &format!("{prefix}.xa"), &cross.attn_mask, cfg)?;
        x = feed_forward(h, p, &format!("{prefix}.ffn"), cfg)?;
    }
    x.dense(p.get("out.w")?, Some(p.get("out.b")?))
}

/// Logits `[B, V]` for the token following each partial sequence. Every row
/// must start with START and all rows must have the same length.
pub fn decode_step<'t>(
    memory: Var<'t>,
    memory_mask: &[bool],
    partial: &[Vec<usize>],
    p: &Bound<'t>,
    cfg: &ModelConfig,
) -> Result<Var<'t>> {
    let lt = partial.first().map_or(0, Vec::len);
    if lt == 0 || partial.iter().any(|r| r.len() != lt || r[0] != crate::corpus::Vocabulary::START) {
        return Err(Error::Contract("partial sequences must be non-empty, equal length and start with START".into()));
    }
    let b = partial.len();
    let ids: Vec<usize> = partial.concat();
    let logits = decode(memory, memory_mask, &ids, &vec![true; b * lt], p, cfg)?;
    let v = cfg.vocab_size;
    let all = logits.value();
    let mut last = Vec::with_capacity(b * v);
    for r in 0..b {
        let start = (r * lt + lt - 1) * v;
        last.extend_from_slice(&all.data()[start..start + v]);
    }
    // Slicing is only needed at inference; expose it as a constant view.
    Ok(p.tape.constant(Tensor::new(vec![b, v], last)?))
}
