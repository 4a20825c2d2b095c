//! Whole-network assembly: both streams, four fusion levels, trunk
//! aggregation, the decoupling head, and the output classifiers.

use crackseg_core::{NodeId, ParamStore, Scalar, Session};
use rand::Rng;

use crate::cofuse::CoFuseLevel;
use crate::config::ModelConfig;
use crate::decm::DecoupledHead;
use crate::global_stream::GlobalStream;
use crate::layers::{Conv2d, ConvSpec, Norm};
use crate::local_stream::LocalStream;

pub struct Model {
    pub cfg: ModelConfig,
    global: GlobalStream,
    local: LocalStream,
    fuse: Vec<CoFuseLevel>,
    trunk_proj: Conv2d,
    trunk_norm: Norm,
    decm: Option<DecoupledHead>,
    head_final: Conv2d,
    head_body: Option<Conv2d>,
    head_edge: Option<Conv2d>,
    head_global: Conv2d,
    head_local: Conv2d,
}

/// Everything a forward pass produces. Logit maps are at input resolution;
/// feature nodes stay at their native scales and remain readable off the
/// session for inspection and tests.
pub struct Forward {
    pub final_logits: NodeId,
    pub global_logits: NodeId,
    pub local_logits: NodeId,
    pub body_logits: Option<NodeId>,
    pub edge_logits: Option<NodeId>,
    pub trunk: NodeId,
    pub final_feat: NodeId,
    pub body_feat: Option<NodeId>,
    pub edge_feat: Option<NodeId>,
    pub flow: Option<NodeId>,
    pub fused: [NodeId; 4],
    pub corr_maps: Vec<NodeId>,
    pub attn_probs: Vec<NodeId>,
    pub x_global: NodeId,
    pub stage_maps: [NodeId; 4],
    pub local_merged: [NodeId; 4],
}

impl Model {
    pub fn build<T: Scalar, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        cfg.validate().expect("model config must validate");
        let global = GlobalStream::build(store, rng, "global", cfg);
        let local = LocalStream::build(store, rng, "local", cfg);
        let fuse = (0..4)
            .map(|i| {
                CoFuseLevel::build(
                    store,
                    rng,
                    &format!("fuse{}", i + 1),
                    cfg.stage_channels(i),
                    cfg.local_channels[i],
                    cfg,
                )
            })
            .collect();
        let cf = cfg.fuse_channels;
        let tc = cfg.trunk_channels;
        let trunk_proj = Conv2d::build(store, rng, "trunk.proj", 4 * cf, tc, ConvSpec::k1());
        let trunk_norm = Norm::build(store, "trunk.norm", tc);
        let decm = cfg.decm.then(|| DecoupledHead::build(store, rng, "decm", tc, cf));
        let head_final = Conv2d::build(store, rng, "head.final", tc, 1, ConvSpec::k1());
        let head_body = cfg.decm.then(|| Conv2d::build(store, rng, "head.body", tc, 1, ConvSpec::k1()));
        let head_edge = cfg.decm.then(|| Conv2d::build(store, rng, "head.edge", tc, 1, ConvSpec::k1()));
        let head_global =
            Conv2d::build(store, rng, "head.global", 4 * cfg.base_channels, 1, ConvSpec::k1());
        let head_local =
            Conv2d::build(store, rng, "head.local", cfg.local_channels[3], 1, ConvSpec::k1());
        Self {
            cfg: cfg.clone(),
            global,
            local,
            fuse,
            trunk_proj,
            trunk_norm,
            decm,
            head_final,
            head_body,
            head_edge,
            head_global,
            head_local,
        }
    }

    /// Run the network on [B, in_channels, H, W]; H and W must be multiples
    /// of 32 and compatible with the configured stripe widths.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> Forward {
        let shape = sess.tape.shape(x).to_vec();
        let (h, w) = (shape[2], shape[3]);
        self.cfg.validate_input(h, w).expect("input size must fit the stage ladder");

        let mut attn_probs = Vec::new();
        let gout = self.global.forward(sess, x, &mut attn_probs);
        let lout = self.local.forward(sess, x);

        let mut fused = Vec::with_capacity(4);
        let mut corr_maps = Vec::new();
        for (i, level) in self.fuse.iter().enumerate() {
            let (th, tw) = (h >> (i + 1), w >> (i + 1));
            let out = level.forward(sess, gout.stage_maps[i], lout.merged[i], th, tw);
            fused.push(out.fused);
            if let Some(m) = out.corr_map {
                corr_maps.push(m);
            }
        }

        // aggregate the pyramid at half resolution
        let (th, tw) = (h / 2, w / 2);
        let mut parts = vec![fused[0]];
        for &f in &fused[1..] {
            parts.push(sess.tape.bilinear_resize(f, th, tw));
        }
        let cat = sess.tape.concat(&parts, 1);
        let trunk = self.trunk_proj.forward(sess, cat);
        let trunk = self.trunk_norm.forward_map(sess, trunk);
        let trunk = sess.tape.relu(trunk);

        let (final_feat, body_feat, edge_feat, flow) = match &self.decm {
            Some(head) => {
                let out = head.forward(sess, trunk, fused[0]);
                (out.combined, Some(out.body), Some(out.edge), Some(out.flow))
            }
            None => (trunk, None, None, None),
        };

        let logits = |sess: &mut Session<'_, T>, conv: &Conv2d, feat: NodeId| {
            let m = conv.forward(sess, feat);
            sess.tape.bilinear_resize(m, h, w)
        };
        let final_logits = logits(sess, &self.head_final, final_feat);
        let body_logits = match (&self.head_body, body_feat) {
            (Some(conv), Some(feat)) => Some(logits(sess, conv, feat)),
            _ => None,
        };
        let edge_logits = match (&self.head_edge, edge_feat) {
            (Some(conv), Some(feat)) => Some(logits(sess, conv, feat)),
            _ => None,
        };
        let global_logits = logits(sess, &self.head_global, gout.fused);
        let local_logits = logits(sess, &self.head_local, lout.merged[3]);

        Forward {
            final_logits,
            global_logits,
            local_logits,
            body_logits,
            edge_logits,
            trunk,
            final_feat,
            body_feat,
            edge_feat,
            flow,
            fused: [fused[0], fused[1], fused[2], fused[3]],
            corr_maps,
            attn_probs,
            x_global: gout.fused,
            stage_maps: gout.stage_maps,
            local_merged: lout.merged,
        }
    }
}
