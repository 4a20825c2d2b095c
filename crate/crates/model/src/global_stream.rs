//! Transformer stream: patch embedding, four stages of striped-window
//! attention blocks, and a pyramid-collapse that fuses all stages into one
//! map at quarter resolution.
//!
//! Attention splits each block's channels in half: one half attends within
//! horizontal stripes (s rows x full width), the other within vertical
//! stripes (full height x s columns), so stacking two blocks lets
//! information cross the whole map. Each value tensor also passes through a
//! depthwise 3x3 inside its own window, giving tokens a local positional
//! signal without global position embeddings. A stage marked `Full` uses a
//! single window over the whole grid with all heads together.

use crackseg_core::{NodeId, ParamStore, Scalar, Session};
use rand::Rng;

use crate::config::{ModelConfig, Stripe};
use crate::layers::{map_to_tokens, tokens_to_map, Conv2d, ConvSpec, Linear, Norm};

#[derive(Debug, Clone)]
enum Lepe {
    /// One depthwise conv per stripe direction (each sees half the channels).
    Split { horizontal: Conv2d, vertical: Conv2d },
    /// Whole-grid window: one depthwise conv over all channels.
    Single(Conv2d),
}

/// Pre-norm transformer block: striped attention, then a two-layer MLP,
/// each behind a residual connection.
#[derive(Debug, Clone)]
pub struct TBlock {
    norm1: Norm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    proj: Linear,
    lepe: Lepe,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
    stripe: Stripe,
}

impl TBlock {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        heads: usize,
        stripe: Stripe,
        mlp_ratio: usize,
    ) -> Self {
        let lepe = match stripe {
            Stripe::Fixed(_) => {
                let half = channels / 2;
                Lepe::Split {
                    horizontal: Conv2d::build(store, rng, &format!("{name}.attn.lepe_h"), half, half, ConvSpec::dw3(half)),
                    vertical: Conv2d::build(store, rng, &format!("{name}.attn.lepe_v"), half, half, ConvSpec::dw3(half)),
                }
            }
            Stripe::Full => Lepe::Single(Conv2d::build(
                store,
                rng,
                &format!("{name}.attn.lepe"),
                channels,
                channels,
                ConvSpec::dw3(channels),
            )),
        };
        let hidden = channels * mlp_ratio;
        Self {
            norm1: Norm::build(store, &format!("{name}.norm1"), channels),
            wq: Linear::build(store, rng, &format!("{name}.attn.wq"), channels, channels, true),
            wk: Linear::build(store, rng, &format!("{name}.attn.wk"), channels, channels, true),
            wv: Linear::build(store, rng, &format!("{name}.attn.wv"), channels, channels, true),
            proj: Linear::build(store, rng, &format!("{name}.attn.proj"), channels, channels, true),
            lepe,
            norm2: Norm::build(store, &format!("{name}.norm2"), channels),
            fc1: Linear::build(store, rng, &format!("{name}.mlp.fc1"), channels, hidden, true),
            fc2: Linear::build(store, rng, &format!("{name}.mlp.fc2"), hidden, channels, true),
            heads,
            stripe,
        }
    }

    /// The attention operator alone (as applied to already-normalized
    /// tokens). Exposed so tests can compare it against a plain loop
    /// implementation.
    pub fn attention<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        x: NodeId,
        h: usize,
        w: usize,
        trace: &mut Vec<NodeId>,
    ) -> NodeId {
        let c = sess.tape.shape(x)[2];
        let q = self.wq.forward(sess, x);
        let k = self.wk.forward(sess, x);
        let v = self.wv.forward(sess, x);
        let mixed = match (&self.stripe, &self.lepe) {
            (Stripe::Full, Lepe::Single(lepe)) => {
                group_attention(sess, q, k, v, self.heads, (h, w), lepe, trace)
            }
            (Stripe::Fixed(s), Lepe::Split { horizontal, vertical }) => {
                let s = *s;
                assert!(
                    h % s == 0 && w % s == 0,
                    "config: token grid {h}x{w} not divisible by stripe width {s}"
                );
                let half = c / 2;
                let hg = self.heads / 2;
                let b = sess.tape.shape(x)[0];

                // horizontal stripes: s consecutive rows per window, which
                // the row-major token order exposes as one contiguous run
                let qh = sess.tape.narrow(q, 2, 0, half);
                let kh = sess.tape.narrow(k, 2, 0, half);
                let vh = sess.tape.narrow(v, 2, 0, half);
                let fold_h = |sess: &mut Session<'_, T>, t: NodeId| {
                    sess.tape.reshape(t, &[b * (h / s), s * w, half])
                };
                let qhw = fold_h(sess, qh);
                let khw = fold_h(sess, kh);
                let vhw = fold_h(sess, vh);
                let oh = group_attention(sess, qhw, khw, vhw, hg, (s, w), horizontal, trace);
                let oh = sess.tape.reshape(oh, &[b, h * w, half]);

                // vertical stripes: s consecutive columns, gathered by a
                // transpose before and after windowing
                let qv = sess.tape.narrow(q, 2, half, half);
                let kv = sess.tape.narrow(k, 2, half, half);
                let vv = sess.tape.narrow(v, 2, half, half);
                let fold_v = |sess: &mut Session<'_, T>, t: NodeId| {
                    let g = sess.tape.reshape(t, &[b, h, w / s, s, half]);
                    let g = sess.tape.permute(g, &[0, 2, 1, 3, 4]);
                    sess.tape.reshape(g, &[b * (w / s), h * s, half])
                };
                let qvw = fold_v(sess, qv);
                let kvw = fold_v(sess, kv);
                let vvw = fold_v(sess, vv);
                let ov = group_attention(sess, qvw, kvw, vvw, hg, (h, s), vertical, trace);
                let ov = sess.tape.reshape(ov, &[b, w / s, h, s, half]);
                let ov = sess.tape.permute(ov, &[0, 2, 1, 3, 4]);
                let ov = sess.tape.reshape(ov, &[b, h * w, half]);

                sess.tape.concat(&[oh, ov], 2)
            }
            _ => unreachable!("stripe/lepe kinds are paired at build time"),
        };
        self.proj.forward(sess, mixed)
    }

    /// One block over tokens [B, H*W, C].
    pub fn forward<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        x: NodeId,
        h: usize,
        w: usize,
        trace: &mut Vec<NodeId>,
    ) -> NodeId {
        let n1 = self.norm1.forward_tokens(sess, x);
        let attn = self.attention(sess, n1, h, w, trace);
        let x1 = sess.tape.add(x, attn);
        let n2 = self.norm2.forward_tokens(sess, x1);
        let hidden = self.fc1.forward(sess, n2);
        let act = sess.tape.gelu(hidden);
        let mlp = self.fc2.forward(sess, act);
        sess.tape.add(x1, mlp)
    }
}

/// Multi-head attention within one window group. `q`, `k`, `v` arrive as
/// [G, t, c] with windows already folded into the leading axis; `win` gives
/// each window's 2D extent (t = win.0 * win.1) for the positional conv.
fn group_attention<T: Scalar>(
    sess: &mut Session<'_, T>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
    win: (usize, usize),
    lepe: &Conv2d,
    trace: &mut Vec<NodeId>,
) -> NodeId {
    let shape = sess.tape.shape(q).to_vec();
    let (g, t, c) = (shape[0], shape[1], shape[2]);
    assert!(c % heads == 0, "config: {c} window channels not divisible by {heads} heads");
    let dh = c / heads;
    let split = |sess: &mut Session<'_, T>, x: NodeId| {
        let hx = sess.tape.reshape(x, &[g, t, heads, dh]);
        let hx = sess.tape.permute(hx, &[0, 2, 1, 3]);
        sess.tape.reshape(hx, &[g * heads, t, dh])
    };
    let qh = split(sess, q);
    let kh = split(sess, k);
    let vh = split(sess, v);
    let qs = sess.tape.scale(qh, 1.0 / (dh as f64).sqrt());
    let kt = sess.tape.permute(kh, &[0, 2, 1]);
    let scores = sess.tape.bmm(qs, kt);
    let probs = sess.tape.softmax(scores, 2);
    trace.push(probs);
    let ctx = sess.tape.bmm(probs, vh);
    let ctx = sess.tape.reshape(ctx, &[g, heads, t, dh]);
    let ctx = sess.tape.permute(ctx, &[0, 2, 1, 3]);
    let ctx = sess.tape.reshape(ctx, &[g, t, c]);

    // positional signal: depthwise conv over each window's 2D layout of v
    let vmap = sess.tape.permute(v, &[0, 2, 1]);
    let vmap = sess.tape.reshape(vmap, &[g, c, win.0, win.1]);
    let pos = lepe.forward(sess, vmap);
    let pos = sess.tape.reshape(pos, &[g, c, t]);
    let pos = sess.tape.permute(pos, &[0, 2, 1]);

    sess.tape.add(ctx, pos)
}

/// Stage shapes for an input of extent `hw`: quarter resolution after the
/// patch embed, then halving.
pub fn stage_grid(hw: usize, stage: usize) -> usize {
    hw >> (stage + 2)
}

pub struct GlobalStream {
    patch: Conv2d,
    patch_norm: Norm,
    stages: Vec<Vec<TBlock>>,
    transitions: Vec<(Conv2d, Norm)>,
    fuse_reduce: Vec<Conv2d>,
    fuse_out: Conv2d,
    fuse_norm: Norm,
}

pub struct GlobalOut {
    /// Per-stage maps [B, C*2^i, H/2^(i+2), W/2^(i+2)].
    pub stage_maps: [NodeId; 4],
    /// All stages aligned and fused at quarter resolution, [B, 4C, H/4, W/4].
    pub fused: NodeId,
}

impl GlobalStream {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cfg: &ModelConfig,
    ) -> Self {
        let c0 = cfg.base_channels;
        let patch = Conv2d::build(store, rng, &format!("{name}.patch"), cfg.in_channels, c0, ConvSpec::k7_down4());
        let patch_norm = Norm::build(store, &format!("{name}.patch_norm"), c0);
        let mut stages = Vec::new();
        let mut transitions = Vec::new();
        for i in 0..4 {
            let c = cfg.stage_channels(i);
            let blocks = (0..cfg.depths[i])
                .map(|d| {
                    TBlock::build(
                        store,
                        rng,
                        &format!("{name}.stage{}.block{}", i + 1, d),
                        c,
                        cfg.heads[i],
                        cfg.stripes[i],
                        cfg.mlp_ratio,
                    )
                })
                .collect();
            stages.push(blocks);
            if i < 3 {
                let conv = Conv2d::build(
                    store,
                    rng,
                    &format!("{name}.merge{}", i + 1),
                    c,
                    c * 2,
                    ConvSpec::k3_down(),
                );
                let norm = Norm::build(store, &format!("{name}.merge{}_norm", i + 1), c * 2);
                transitions.push((conv, norm));
            }
        }
        let fuse_reduce = (0..4)
            .map(|i| {
                Conv2d::build(
                    store,
                    rng,
                    &format!("{name}.fuse.reduce{}", i + 1),
                    cfg.stage_channels(i),
                    c0,
                    ConvSpec::k1(),
                )
            })
            .collect();
        let fuse_out = Conv2d::build(store, rng, &format!("{name}.fuse.out"), 4 * c0, 4 * c0, ConvSpec::k3());
        let fuse_norm = Norm::build(store, &format!("{name}.fuse.norm"), 4 * c0);
        Self { patch, patch_norm, stages, transitions, fuse_reduce, fuse_out, fuse_norm }
    }

    pub fn forward<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        x: NodeId,
        trace: &mut Vec<NodeId>,
    ) -> GlobalOut {
        let shape = sess.tape.shape(x).to_vec();
        let (h, w) = (shape[2], shape[3]);
        let embedded = self.patch.forward(sess, x);
        let mut tokens = map_to_tokens(sess, embedded);
        tokens = self.patch_norm.forward_tokens(sess, tokens);
        let (mut gh, mut gw) = (h / 4, w / 4);
        let mut stage_maps = Vec::with_capacity(4);
        for (i, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                tokens = block.forward(sess, tokens, gh, gw, trace);
            }
            let map = tokens_to_map(sess, tokens, gh, gw);
            stage_maps.push(map);
            if i < 3 {
                let (conv, norm) = &self.transitions[i];
                let down = conv.forward(sess, map);
                let normed = norm.forward_map(sess, down);
                tokens = map_to_tokens(sess, normed);
                gh /= 2;
                gw /= 2;
            }
        }
        let (th, tw) = (h / 4, w / 4);
        let mut parts = Vec::with_capacity(4);
        for (i, reduce) in self.fuse_reduce.iter().enumerate() {
            let r = reduce.forward(sess, stage_maps[i]);
            let r = if i == 0 { r } else { sess.tape.bilinear_resize(r, th, tw) };
            parts.push(r);
        }
        let cat = sess.tape.concat(&parts, 1);
        let out = self.fuse_out.forward(sess, cat);
        let out = self.fuse_norm.forward_map(sess, out);
        let fused = sess.tape.relu(out);
        GlobalOut { stage_maps: stage_maps.try_into().expect("four stages"), fused }
    }
}
