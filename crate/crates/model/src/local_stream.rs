//! Convolutional stream: a four-level strided encoder over the raw image
//! and a lightweight top-down decoder whose upsampled features are summed
//! back onto the matching encoder levels.
//!
//! Level i (1-based) lives at stride 2^i. The decoder starts from the
//! deepest encoder level and walks back up; level 1 passes its encoder
//! feature through untouched, and the decoder's final half-resolution
//! output exists only to complete the chain.

use crackseg_core::{NodeId, ParamStore, Scalar, Session};
use rand::Rng;

use crate::config::ModelConfig;
use crate::layers::{ConvBlock, ConvSpec};

struct EncoderStage {
    down: ConvBlock,
    refine: ConvBlock,
}

pub struct LocalStream {
    stages: Vec<EncoderStage>,
    decode: Vec<ConvBlock>,
}

pub struct LocalOut {
    /// Encoder features, level i at [B, local_channels[i], H/2^(i+1), ...].
    pub down: [NodeId; 4],
    /// Decoder-enriched features per level: encoder + upsampled decoder at
    /// levels 2..4, the raw encoder feature at level 1.
    pub merged: [NodeId; 4],
}

impl LocalStream {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cfg: &ModelConfig,
    ) -> Self {
        let mut stages = Vec::new();
        let mut cin = cfg.in_channels;
        for (i, &c) in cfg.local_channels.iter().enumerate() {
            stages.push(EncoderStage {
                down: ConvBlock::build(store, rng, &format!("{name}.enc{}.down", i + 1), cin, c, ConvSpec::k3_down()),
                refine: ConvBlock::build(store, rng, &format!("{name}.enc{}.refine", i + 1), c, c, ConvSpec::k3()),
            });
            cin = c;
        }
        // decode steps 4->3, 3->2, 2->1, each halving the channel count
        // after a 2x upsample
        let decode = (0..3)
            .map(|step| {
                let from = cfg.local_channels[3 - step];
                let to = cfg.local_channels[2 - step];
                ConvBlock::build(store, rng, &format!("{name}.dec{}", 3 - step), from, to, ConvSpec::k3())
            })
            .collect();
        Self { stages, decode }
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> LocalOut {
        let mut down = Vec::with_capacity(4);
        let mut cur = x;
        for stage in &self.stages {
            cur = stage.down.forward(sess, cur);
            cur = stage.refine.forward(sess, cur);
            down.push(cur);
        }
        // top-down chain: d[0] is the deepest level itself
        let mut ups = Vec::with_capacity(3);
        let mut d = down[3];
        for step in &self.decode {
            let shape = sess.tape.shape(d).to_vec();
            let up = sess.tape.bilinear_resize(d, shape[2] * 2, shape[3] * 2);
            d = step.forward(sess, up);
            ups.push(d);
        }
        // ups = [level 3, level 2, level 1]; level 1's entry is the unused
        // tail of the chain, levels 2..4 merge by addition
        let m4 = sess.tape.add(down[3], down[3]);
        let m3 = sess.tape.add(down[2], ups[0]);
        let m2 = sess.tape.add(down[1], ups[1]);
        let merged = [down[0], m2, m3, m4];
        LocalOut { down: [down[0], down[1], down[2], down[3]], merged }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crackseg_core::tensor::TensorData;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn level_shapes_follow_the_stride_ladder() {
        let cfg = ModelConfig::toy();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stream = LocalStream::build(&mut store, &mut rng, "local", &cfg);
        let mut sess = Session::new(&store);
        let x = sess.constant(TensorData::zeros(&[2, 3, 64, 32]));
        let out = stream.forward(&mut sess, x);
        for i in 0..4 {
            let c = cfg.local_channels[i];
            let (h, w) = (64 >> (i + 1), 32 >> (i + 1));
            assert_eq!(sess.tape.shape(out.down[i]), &[2, c, h, w], "encoder level {}", i + 1);
            assert_eq!(sess.tape.shape(out.merged[i]), &[2, c, h, w], "merged level {}", i + 1);
        }
    }

    #[test]
    fn level1_passes_encoder_feature_through() {
        let cfg = ModelConfig::toy();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stream = LocalStream::build(&mut store, &mut rng, "local", &cfg);
        let mut sess = Session::new(&store);
        let vals: Vec<f64> = (0..3 * 32 * 32).map(|i| (i as f64 * 0.137).sin()).collect();
        let x = sess.constant(TensorData::new(vec![1, 3, 32, 32], vals));
        let out = stream.forward(&mut sess, x);
        assert_eq!(out.merged[0], out.down[0]);
    }

    #[test]
    fn deepest_merge_doubles_the_encoder_feature() {
        // the decoder chain starts at level 4 itself, so the merge there is
        // feature + feature
        let cfg = ModelConfig::toy();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stream = LocalStream::build(&mut store, &mut rng, "local", &cfg);
        let mut sess = Session::new(&store);
        let vals: Vec<f64> = (0..3 * 32 * 32).map(|i| (i as f64 * 0.311).cos()).collect();
        let x = sess.constant(TensorData::new(vec![1, 3, 32, 32], vals));
        let out = stream.forward(&mut sess, x);
        let enc: Vec<f64> = sess.tape.data(out.down[3]).to_vec();
        let merged = sess.tape.data(out.merged[3]);
        for (e, m) in enc.iter().zip(merged) {
            assert_eq!(2.0 * e, *m);
        }
    }
}
