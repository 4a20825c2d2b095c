//! Cross-stream fusion. Each level aligns the transformer and convolutional
//! features to a shared width and resolution, optionally filters each one
//! (channel attention on the transformer side, spatial attention on the
//! convolutional side), optionally reweights their concatenation by a
//! learned per-position channel distribution, and projects back down.
//!
//! With every switch off this collapses to concat + 1x1 conv, the plain
//! baseline the ablations compare against.

use crackseg_core::{NodeId, ParamStore, Scalar, Session};
use rand::Rng;

use crate::config::ModelConfig;
use crate::layers::{Conv2d, ConvSpec, Linear, Norm};

/// Squeeze-excite gate: global average pool -> bottleneck MLP -> sigmoid,
/// multiplied back over the channels.
#[derive(Debug, Clone)]
struct ChannelGate {
    fc1: Linear,
    fc2: Linear,
}

impl ChannelGate {
    fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Self {
        let mid = channels / reduction;
        Self {
            fc1: Linear::build(store, rng, &format!("{name}.fc1"), channels, mid, false),
            fc2: Linear::build(store, rng, &format!("{name}.fc2"), mid, channels, false),
        }
    }

    fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> NodeId {
        let shape = sess.tape.shape(x).to_vec();
        let (b, c) = (shape[0], shape[1]);
        let pooled = sess.tape.global_avg_pool(x);
        let flat = sess.tape.reshape(pooled, &[b, c]);
        let mid = self.fc1.forward(sess, flat);
        let mid = sess.tape.relu(mid);
        let gate = self.fc2.forward(sess, mid);
        let gate = sess.tape.sigmoid(gate);
        let gate = sess.tape.reshape(gate, &[b, c, 1, 1]);
        sess.tape.mul(x, gate)
    }
}

/// Spatial gate: channel-wise max and mean maps -> 7x7 conv -> sigmoid,
/// multiplied back over every position.
#[derive(Debug, Clone)]
struct SpatialGate {
    conv: Conv2d,
}

impl SpatialGate {
    fn build<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str) -> Self {
        Self { conv: Conv2d::build(store, rng, &format!("{name}.conv"), 2, 1, ConvSpec::k7()) }
    }

    fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> NodeId {
        let mx = sess.tape.max_axis(x, 1);
        let mean = sess.tape.mean_axis(x, 1);
        let stats = sess.tape.concat(&[mx, mean], 1);
        let gate = self.conv.forward(sess, stats);
        let gate = sess.tape.sigmoid(gate);
        sess.tape.mul(x, gate)
    }
}

/// Correlation reweighting: a per-position MLP over the concatenated
/// channels, normalized to a distribution across those channels.
#[derive(Debug, Clone)]
struct CorrGate {
    reduce: Conv2d,
    expand: Conv2d,
}

impl CorrGate {
    fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
    ) -> Self {
        Self {
            reduce: Conv2d::build(store, rng, &format!("{name}.reduce"), channels, channels / 2, ConvSpec::k1()),
            expand: Conv2d::build(store, rng, &format!("{name}.expand"), channels / 2, channels, ConvSpec::k1()),
        }
    }

    /// Returns (reweighted input, the weight map itself).
    fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> (NodeId, NodeId) {
        let mid = self.reduce.forward(sess, x);
        let mid = sess.tape.relu(mid);
        let logits = self.expand.forward(sess, mid);
        let weights = sess.tape.softmax(logits, 1);
        (sess.tape.mul(x, weights), weights)
    }
}

/// Alignment: pointwise projection to the fusion width, resize to the
/// level's resolution, normalize, activate.
#[derive(Debug, Clone)]
struct Align {
    proj: Conv2d,
    norm: Norm,
}

impl Align {
    fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        Self {
            proj: Conv2d::build(store, rng, &format!("{name}.proj"), cin, cout, ConvSpec::k1()),
            norm: Norm::build(store, &format!("{name}.norm"), cout),
        }
    }

    fn forward<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        x: NodeId,
        th: usize,
        tw: usize,
    ) -> NodeId {
        let p = self.proj.forward(sess, x);
        let shape = sess.tape.shape(p).to_vec();
        let p = if (shape[2], shape[3]) == (th, tw) {
            p
        } else {
            sess.tape.bilinear_resize(p, th, tw)
        };
        let n = self.norm.forward_map(sess, p);
        sess.tape.relu(n)
    }
}

pub struct CoFuseLevel {
    align_g: Align,
    align_l: Align,
    channel_gate: Option<ChannelGate>,
    spatial_gate: Option<SpatialGate>,
    corr: Option<CorrGate>,
    proj: Conv2d,
    out_norm: Norm,
}

pub struct CoFuseOut {
    pub fused: NodeId,
    /// Per-position channel weights, present when correlation fusion is on.
    /// Sums to one across the channel axis at every position.
    pub corr_map: Option<NodeId>,
}

impl CoFuseLevel {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        global_channels: usize,
        local_channels: usize,
        cfg: &ModelConfig,
    ) -> Self {
        let cf = cfg.fuse_channels;
        Self {
            align_g: Align::build(store, rng, &format!("{name}.align_g"), global_channels, cf),
            align_l: Align::build(store, rng, &format!("{name}.align_l"), local_channels, cf),
            channel_gate: cfg
                .gf_filter
                .then(|| ChannelGate::build(store, rng, &format!("{name}.gf"), cf, cfg.se_reduction)),
            spatial_gate: cfg.lf_filter.then(|| SpatialGate::build(store, rng, &format!("{name}.lf"))),
            corr: cfg.corr_fuse.then(|| CorrGate::build(store, rng, &format!("{name}.corr"), 2 * cf)),
            proj: Conv2d::build(store, rng, &format!("{name}.proj"), 2 * cf, cf, ConvSpec::k1()),
            out_norm: Norm::build(store, &format!("{name}.norm"), cf),
        }
    }

    /// Fuse one level. `g` and `l` may be any resolution; both align to
    /// `(th, tw)`.
    pub fn forward<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        g: NodeId,
        l: NodeId,
        th: usize,
        tw: usize,
    ) -> CoFuseOut {
        let mut ga = self.align_g.forward(sess, g, th, tw);
        if let Some(gate) = &self.channel_gate {
            ga = gate.forward(sess, ga);
        }
        let mut la = self.align_l.forward(sess, l, th, tw);
        if let Some(gate) = &self.spatial_gate {
            la = gate.forward(sess, la);
        }
        let cat = sess.tape.concat(&[ga, la], 1);
        let (mixed, corr_map) = match &self.corr {
            Some(corr) => {
                let (m, w) = corr.forward(sess, cat);
                (m, Some(w))
            }
            None => (cat, None),
        };
        let out = self.proj.forward(sess, mixed);
        let out = self.out_norm.forward_map(sess, out);
        CoFuseOut { fused: sess.tape.relu(out), corr_map }
    }
}
