//! Body/edge decoupling. A learned per-pixel displacement field resamples
//! the trunk feature toward region interiors (the body); subtracting the
//! warped map from the trunk isolates high-frequency residue, which joins a
//! projected early-level feature to form the edge map. Body and edge add
//! back together into the feature the final classifier sees.
//!
//! The displacement conv starts at exactly zero, so an untrained head warps
//! by the identity and the body equals the trunk bit for bit.

use crackseg_core::{NodeId, ParamStore, Scalar, Session};
use rand::Rng;

use crate::layers::{Conv2d, ConvBlock, ConvSpec};

pub struct DecoupledHead {
    down1: ConvBlock,
    down2: ConvBlock,
    flow: Conv2d,
    low_proj: Conv2d,
    edge: ConvBlock,
}

pub struct DecmOut {
    pub body: NodeId,
    pub edge: NodeId,
    pub combined: NodeId,
    /// Displacement field [B, 2, H, W] in pixels (x-shift, then y-shift).
    pub flow: NodeId,
}

impl DecoupledHead {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        trunk_channels: usize,
        low_channels: usize,
    ) -> Self {
        let tc = trunk_channels;
        Self {
            down1: ConvBlock::build(store, rng, &format!("{name}.down1"), tc, tc, ConvSpec::k3_down()),
            down2: ConvBlock::build(store, rng, &format!("{name}.down2"), tc, tc, ConvSpec::k3_down()),
            flow: Conv2d::build_zeroed(store, &format!("{name}.flow"), 2 * tc, 2, ConvSpec::k3()),
            low_proj: Conv2d::build(store, rng, &format!("{name}.low_proj"), low_channels, tc, ConvSpec::k1()),
            edge: ConvBlock::build(store, rng, &format!("{name}.edge"), 2 * tc, tc, ConvSpec::k3()),
        }
    }

    /// `trunk` and `low` must share a resolution.
    pub fn forward<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        trunk: NodeId,
        low: NodeId,
    ) -> DecmOut {
        let shape = sess.tape.shape(trunk).to_vec();
        let (h, w) = (shape[2], shape[3]);
        // displacement comes from a widened receptive field: two strided
        // convs down, resampled back up, stacked on the trunk itself
        let a = self.down1.forward(sess, trunk);
        let b = self.down2.forward(sess, a);
        let up = sess.tape.bilinear_resize(b, h, w);
        let ctx = sess.tape.concat(&[trunk, up], 1);
        let flow = self.flow.forward(sess, ctx);
        let body = sess.tape.grid_sample(trunk, flow);
        let residue = sess.tape.sub(trunk, body);
        let low = self.low_proj.forward(sess, low);
        let ecat = sess.tape.concat(&[residue, low], 1);
        let edge = self.edge.forward(sess, ecat);
        let combined = sess.tape.add(edge, body);
        DecmOut { body, edge, combined, flow }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crackseg_core::tensor::TensorData;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build_head() -> (ParamStore<f32>, DecoupledHead) {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = DecoupledHead::build(&mut store, &mut rng, "decm", 8, 4);
        (store, head)
    }

    fn demo(sess: &mut Session<'_, f32>) -> (NodeId, NodeId) {
        let tv: Vec<f32> = (0..8 * 8 * 8).map(|i| ((i as f32) * 0.119).sin() * 2.0).collect();
        let lv: Vec<f32> = (0..4 * 8 * 8).map(|i| ((i as f32) * 0.071).cos()).collect();
        let trunk = sess.constant(TensorData::new(vec![1, 8, 8, 8], tv));
        let low = sess.constant(TensorData::new(vec![1, 4, 8, 8], lv));
        (trunk, low)
    }

    #[test]
    fn fresh_head_warps_by_identity() {
        let (store, head) = build_head();
        let mut sess = Session::new(&store);
        let (trunk, low) = demo(&mut sess);
        let out = head.forward(&mut sess, trunk, low);
        assert!(sess.tape.data(out.flow).iter().all(|v| *v == 0.0));
        let t = sess.tape.data(trunk);
        let b = sess.tape.data(out.body);
        assert!(t.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn combined_is_exactly_edge_plus_body() {
        let (mut store, head) = build_head();
        // give the flow conv real weights so the warp actually moves
        let wid = store.find("decm.flow.w").unwrap();
        for (i, v) in store.value_mut(wid).data_mut().iter_mut().enumerate() {
            *v = ((i as f32) * 0.017).sin() * 0.05;
        }
        let mut sess = Session::new(&store);
        let (trunk, low) = demo(&mut sess);
        let out = head.forward(&mut sess, trunk, low);
        assert!(sess.tape.data(out.flow).iter().any(|v| *v != 0.0));
        let e = sess.tape.data(out.edge);
        let b = sess.tape.data(out.body);
        let c = sess.tape.data(out.combined);
        for ((ev, bv), cv) in e.iter().zip(b).zip(c) {
            assert_eq!((ev + bv).to_bits(), cv.to_bits());
        }
    }

    #[test]
    fn output_shapes_match_trunk() {
        let (store, head) = build_head();
        let mut sess = Session::new(&store);
        let (trunk, low) = demo(&mut sess);
        let out = head.forward(&mut sess, trunk, low);
        assert_eq!(sess.tape.shape(out.body), &[1, 8, 8, 8]);
        assert_eq!(sess.tape.shape(out.edge), &[1, 8, 8, 8]);
        assert_eq!(sess.tape.shape(out.combined), &[1, 8, 8, 8]);
        assert_eq!(sess.tape.shape(out.flow), &[1, 2, 8, 8]);
    }
}
