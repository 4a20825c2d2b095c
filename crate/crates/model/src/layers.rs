//! Parameterized building blocks. Each struct owns `ParamId`s registered at
//! build time under a dotted name prefix, and replays its computation onto a
//! session at forward time.
//!
//! Convolutions never use implicit zero padding: padding is an explicit
//! `pad2d` with a mode chosen per site (feature maps replicate their border
//! so a constant map stays constant through the block). Strided convolutions
//! pad asymmetrically (one extra sample on the top/left) so output sizes
//! divide exactly at every legal input size.

use crackseg_core::init;
use crackseg_core::{NodeId, PadMode, ParamId, ParamStore, Scalar, Session};
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    /// (left, right, top, bottom)
    pub pad: (usize, usize, usize, usize),
    pub mode: PadMode,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Pointwise projection.
    pub fn k1() -> Self {
        Self { kernel: 1, stride: 1, pad: (0, 0, 0, 0), mode: PadMode::Replicate, groups: 1, bias: true }
    }

    /// 3x3, stride 1, size-preserving.
    pub fn k3() -> Self {
        Self { kernel: 3, stride: 1, pad: (1, 1, 1, 1), mode: PadMode::Replicate, groups: 1, bias: true }
    }

    /// 3x3, stride 2, exact halving: (H + 1 - 3) / 2 + 1 = H / 2.
    pub fn k3_down() -> Self {
        Self { kernel: 3, stride: 2, pad: (1, 0, 1, 0), mode: PadMode::Replicate, groups: 1, bias: true }
    }

    /// 7x7, stride 4, exact quartering: (H + 3 - 7) / 4 + 1 = H / 4.
    pub fn k7_down4() -> Self {
        Self { kernel: 7, stride: 4, pad: (1, 2, 1, 2), mode: PadMode::Replicate, groups: 1, bias: true }
    }

    /// 7x7, stride 1, size-preserving (spatial-attention mixer).
    pub fn k7() -> Self {
        Self { kernel: 7, stride: 1, pad: (3, 3, 3, 3), mode: PadMode::Replicate, groups: 1, bias: true }
    }

    /// Depthwise 3x3, zero-padded: border positions see the pad, which is
    /// what lets this act as a positional signal inside attention windows.
    pub fn dw3(channels: usize) -> Self {
        Self { kernel: 3, stride: 1, pad: (1, 1, 1, 1), mode: PadMode::Zero, groups: channels, bias: false }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    w: ParamId,
    b: Option<ParamId>,
    spec: ConvSpec,
}

impl Conv2d {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
    ) -> Self {
        assert!(cin % spec.groups == 0 && cout % spec.groups == 0, "config: {name}: groups {} must divide {cin} and {cout}", spec.groups);
        let k = spec.kernel;
        let fan_in = (cin / spec.groups) * k * k;
        let w = store.add(
            format!("{name}.w"),
            init::uniform_fan_in(rng, &[cout, cin / spec.groups, k, k], fan_in),
        );
        let b = spec.bias.then(|| store.add(format!("{name}.b"), init::zeros(&[cout])));
        Self { w, b, spec }
    }

    /// All-zero weights and bias: the layer starts as a constant-zero map.
    pub fn build_zeroed<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
    ) -> Self {
        let k = spec.kernel;
        let w = store.add(format!("{name}.w"), init::zeros(&[cout, cin / spec.groups, k, k]));
        let b = spec.bias.then(|| store.add(format!("{name}.b"), init::zeros(&[cout])));
        Self { w, b, spec }
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> NodeId {
        let (l, r, t, bo) = self.spec.pad;
        let padded = if l + r + t + bo > 0 {
            sess.tape.pad2d(x, l, r, t, bo, self.spec.mode)
        } else {
            x
        };
        let w = sess.param(self.w);
        let b = self.b.map(|b| sess.param(b));
        sess.tape.conv2d(padded, w, b, self.spec.stride, 0, self.spec.groups)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init::uniform_fan_in(rng, &[dout, din], din));
        let b = bias.then(|| store.add(format!("{name}.b"), init::zeros(&[dout])));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> NodeId {
        let w = sess.param(self.w);
        let b = self.b.map(|b| sess.param(b));
        sess.tape.linear(x, w, b)
    }
}

/// Per-feature normalization (unit gain, zero shift at init). Applies over
/// the trailing axis of a token tensor, or the channel axis of a map.
#[derive(Debug, Clone)]
pub struct Norm {
    gain: ParamId,
    shift: ParamId,
}

impl Norm {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, name: &str, features: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), init::ones(&[features]));
        let shift = store.add(format!("{name}.shift"), init::zeros(&[features]));
        Self { gain, shift }
    }

    /// Normalize [..., C] over its last axis.
    pub fn forward_tokens<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> NodeId {
        let gain = sess.param(self.gain);
        let shift = sess.param(self.shift);
        sess.tape.layer_norm(x, gain, shift)
    }

    /// Normalize [B,C,H,W] over its channel axis.
    pub fn forward_map<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> NodeId {
        let hwc = sess.tape.permute(x, &[0, 2, 3, 1]);
        let normed = self.forward_tokens(sess, hwc);
        sess.tape.permute(normed, &[0, 3, 1, 2])
    }
}

/// conv -> channel norm -> relu, the default convolutional unit here.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv: Conv2d,
    norm: Norm,
}

impl ConvBlock {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
    ) -> Self {
        Self {
            conv: Conv2d::build(store, rng, &format!("{name}.conv"), cin, cout, spec),
            norm: Norm::build(store, &format!("{name}.norm"), cout),
        }
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> NodeId {
        let c = self.conv.forward(sess, x);
        let n = self.norm.forward_map(sess, c);
        sess.tape.relu(n)
    }
}

/// Token layout [B,N,C] -> map layout [B,C,H,W].
pub fn tokens_to_map<T: Scalar>(
    sess: &mut Session<'_, T>,
    x: NodeId,
    h: usize,
    w: usize,
) -> NodeId {
    let shape = sess.tape.shape(x).to_vec();
    let (b, c) = (shape[0], shape[2]);
    let grid = sess.tape.reshape(x, &[b, h, w, c]);
    sess.tape.permute(grid, &[0, 3, 1, 2])
}

/// Map layout [B,C,H,W] -> token layout [B,N,C].
pub fn map_to_tokens<T: Scalar>(sess: &mut Session<'_, T>, x: NodeId) -> NodeId {
    let shape = sess.tape.shape(x).to_vec();
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hwc = sess.tape.permute(x, &[0, 2, 3, 1]);
    sess.tape.reshape(hwc, &[b, h * w, c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crackseg_core::tensor::TensorData;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_round_trip_is_exact() {
        let mut store = ParamStore::<f64>::new();
        let mut sess = Session::new(&store);
        let vals: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let x = sess.constant(TensorData::new(vec![1, 2, 3, 4], vals));
        let tok = map_to_tokens(&mut sess, x);
        assert_eq!(sess.tape.shape(tok), &[1, 12, 2]);
        let back = tokens_to_map(&mut sess, tok, 3, 4);
        assert_eq!(sess.tape.data(back), sess.tape.data(x));
        let _ = &mut store;
    }

    #[test]
    fn strided_conv_block_halves_every_even_size() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = ConvBlock::build(&mut store, &mut rng, "down", 3, 8, ConvSpec::k3_down());
        for hw in [4usize, 6, 10, 16] {
            let mut sess = Session::new(&store);
            let x = sess.constant(TensorData::zeros(&[1, 3, hw, hw]));
            let y = block.forward(&mut sess, x);
            assert_eq!(sess.tape.shape(y), &[1, 8, hw / 2, hw / 2]);
        }
    }

    #[test]
    fn quartering_conv_matches_patch_grid() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::build(&mut store, &mut rng, "embed", 3, 16, ConvSpec::k7_down4());
        for hw in [32usize, 64, 96] {
            let mut sess = Session::new(&store);
            let x = sess.constant(TensorData::zeros(&[1, 3, hw, hw]));
            let y = conv.forward(&mut sess, x);
            assert_eq!(sess.tape.shape(y), &[1, 16, hw / 4, hw / 4]);
        }
    }

    #[test]
    fn constant_map_survives_replicate_padded_conv() {
        // replicate padding plus a constant input must give a constant
        // output plane per channel (no edge artifacts)
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::build(&mut store, &mut rng, "c", 2, 3, ConvSpec::k3());
        let mut sess = Session::new(&store);
        let x = sess.constant(TensorData::full(&[1, 2, 5, 5], 0.7));
        let y = conv.forward(&mut sess, x);
        let y = sess.tape.data(y).to_vec();
        for plane in y.chunks(25) {
            for v in plane {
                assert!((v - plane[0]).abs() < 1e-12, "plane not constant: {plane:?}");
            }
        }
    }

    #[test]
    fn zeroed_conv_outputs_zero() {
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::build_zeroed(&mut store, "flow", 4, 2, ConvSpec::k3());
        let mut sess = Session::new(&store);
        let vals: Vec<f64> = (0..64).map(|i| i as f64 * 0.3 - 9.0).collect();
        let x = sess.constant(TensorData::new(vec![1, 4, 4, 4], vals));
        let y = conv.forward(&mut sess, x);
        assert!(sess.tape.data(y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn norm_map_standardizes_each_position() {
        let mut store = ParamStore::<f64>::new();
        let norm = Norm::build(&mut store, "n", 8);
        let mut sess = Session::new(&store);
        let vals: Vec<f64> = (0..32).map(|i| (i as f64 * 37.0) % 11.0).collect();
        let x = sess.constant(TensorData::new(vec![1, 8, 2, 2], vals));
        let y = norm.forward_map(&mut sess, x);
        assert_eq!(sess.tape.shape(y), &[1, 8, 2, 2]);
        let data = sess.tape.data(y);
        // channel mean at each of the 4 positions must vanish
        for p in 0..4 {
            let mean: f64 = (0..8).map(|c| data[c * 4 + p]).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9, "position {p} mean {mean}");
        }
    }
}
