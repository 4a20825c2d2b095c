//! Randomized invariants over the op set.

use crackseg_core::tensor::TensorData;
use crackseg_core::Tape;
use proptest::prelude::*;

fn tensor4_f64(max_dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = TensorData<f64>> {
    (1..=max_dim, 1..=max_dim, 1..=max_dim, 1..=max_dim).prop_flat_map(move |(b, c, h, w)| {
        prop::collection::vec(lo..hi, b * c * h * w)
            .prop_map(move |v| TensorData::new(vec![b, c, h, w], v))
    })
}

fn tensor4_f32(max_dim: usize) -> impl Strategy<Value = TensorData<f32>> {
    (1..=max_dim, 1..=max_dim, 1..=max_dim, 1..=max_dim).prop_flat_map(|(b, c, h, w)| {
        prop::collection::vec(-100.0f32..100.0, b * c * h * w)
            .prop_map(move |v| TensorData::new(vec![b, c, h, w], v))
    })
}

proptest! {
    #[test]
    fn softmax_lanes_sum_to_one(x in tensor4_f64(4, -50.0, 50.0), axis in 0usize..4) {
        let mut tape = Tape::new();
        let id = tape.constant(x.clone());
        let s = tape.softmax(id, axis);
        let data = tape.data(s);
        prop_assert!(data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        // walk each lane along `axis` and total it
        let shape = x.shape();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        for o in 0..outer {
            for i in 0..inner {
                let total: f64 = (0..n).map(|j| data[(o * n + j) * inner + i]).sum();
                prop_assert!((total - 1.0).abs() < 1e-9, "lane sums to {total}");
            }
        }
    }

    #[test]
    fn sigmoid_bounded_and_monotone(mut vals in prop::collection::vec(-200.0f64..200.0, 2..64)) {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = vals.len();
        let mut tape = Tape::new();
        let id = tape.constant(TensorData::new(vec![n], vals));
        let s = tape.sigmoid(id);
        let data = tape.data(s);
        prop_assert!(data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        prop_assert!(data.windows(2).all(|w| w[0] <= w[1]), "sigmoid kept input order");
    }

    #[test]
    fn zero_flow_sampling_is_bit_identical(x in tensor4_f32(4)) {
        let mut tape = Tape::new();
        let shape = x.shape().to_vec();
        let id = tape.constant(x);
        let flow = tape.constant(TensorData::zeros(&[shape[0], 2, shape[2], shape[3]]));
        let y = tape.grid_sample(id, flow);
        let (a, b) = (tape.data(id), tape.data(y));
        prop_assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn same_size_resize_is_bit_identical(x in tensor4_f32(4)) {
        let mut tape = Tape::new();
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let id = tape.constant(x);
        let y = tape.bilinear_resize(id, h, w);
        let (a, b) = (tape.data(id), tape.data(y));
        prop_assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn resize_of_constant_plane_is_constant(
        v in -10.0f64..10.0,
        hw in (1usize..5, 1usize..5),
        target in (1usize..9, 1usize..9),
    ) {
        // interpolation between equal samples must not invent new values
        let mut tape = Tape::new();
        let id = tape.constant(TensorData::full(&[1, 1, hw.0, hw.1], v));
        let y = tape.bilinear_resize(id, target.0, target.1);
        prop_assert!(tape.data(y).iter().all(|q| (q - v).abs() < 1e-12));
    }

    #[test]
    fn concat_then_narrow_restores_parts(
        a in tensor4_f64(3, -5.0, 5.0),
        extra in 1usize..4,
        axis in 0usize..4,
    ) {
        let mut shape_b = a.shape().to_vec();
        shape_b[axis] = extra;
        let nb: usize = shape_b.iter().product();
        let b = TensorData::new(shape_b, (0..nb).map(|i| i as f64 * 0.5).collect());
        let mut tape = Tape::new();
        let ia = tape.constant(a.clone());
        let ib = tape.constant(b.clone());
        let cat = tape.concat(&[ia, ib], axis);
        let ra = tape.narrow(cat, axis, 0, a.shape()[axis]);
        let rb = tape.narrow(cat, axis, a.shape()[axis], extra);
        prop_assert_eq!(tape.data(ra), a.data());
        prop_assert_eq!(tape.data(rb), b.data());
    }

    #[test]
    fn permute_round_trip_is_exact(x in tensor4_f64(4, -5.0, 5.0), perm_seed in 0usize..24) {
        // enumerate the 24 permutations of 4 axes by index
        let mut axes = vec![0usize, 1, 2, 3];
        let mut k = perm_seed;
        let mut order = Vec::new();
        for r in (1..=4usize).rev() {
            order.push(axes.remove(k % r));
            k /= r;
        }
        let mut inverse = vec![0usize; 4];
        for (i, &a) in order.iter().enumerate() {
            inverse[a] = i;
        }
        let mut tape = Tape::new();
        let id = tape.constant(x.clone());
        let p = tape.permute(id, &order);
        let back = tape.permute(p, &inverse);
        prop_assert_eq!(tape.shape(back), x.shape());
        prop_assert_eq!(tape.data(back), x.data());
    }

    #[test]
    fn pad_then_crop_restores(x in tensor4_f64(3, -5.0, 5.0), pads in (0usize..3, 0usize..3, 0usize..3, 0usize..3)) {
        use crackseg_core::PadMode;
        let (l, r, t, bo) = pads;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        for mode in [PadMode::Zero, PadMode::Replicate, PadMode::Reflect] {
            let mut tape = Tape::new();
            let id = tape.constant(x.clone());
            let padded = tape.pad2d(id, l, r, t, bo, mode);
            let rows = tape.narrow(padded, 2, t, h);
            let cropped = tape.narrow(rows, 3, l, w);
            prop_assert_eq!(tape.data(cropped), x.data());
        }
    }

    #[test]
    fn relu_is_idempotent(x in tensor4_f64(3, -5.0, 5.0)) {
        let mut tape = Tape::new();
        let id = tape.constant(x);
        let once = tape.relu(id);
        let twice = tape.relu(once);
        prop_assert_eq!(tape.data(once), tape.data(twice));
    }

    #[test]
    fn layer_norm_standardizes_rows(x in tensor4_f64(3, -20.0, 20.0)) {
        let c = x.shape()[3];
        prop_assume!(c >= 2);
        // rows with enough spread that eps in the denominator is negligible
        let spread = x.data().chunks(c).all(|row| {
            let mean = row.iter().sum::<f64>() / c as f64;
            row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64 > 1e-2
        });
        prop_assume!(spread);
        let mut tape = Tape::new();
        let id = tape.constant(x.clone());
        let gain = tape.constant(TensorData::full(&[c], 1.0));
        let shift = tape.constant(TensorData::zeros(&[c]));
        let y = tape.layer_norm(id, gain, shift);
        for row in tape.data(y).chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-9, "mean {mean}");
            prop_assert!((var - 1.0).abs() < 1e-2, "var {var}");
        }
    }

    #[test]
    fn backward_never_produces_nonfinite(x in tensor4_f64(3, -3.0, 3.0)) {
        // a pipeline touching most op families keeps gradients finite
        let mut tape = Tape::new();
        let id = tape.leaf(x, true);
        let s = tape.sigmoid(id);
        let g = tape.gelu(s);
        let sm = tape.softmax(g, 1);
        let loss = tape.mean_all(sm);
        tape.backward(loss).unwrap();
        let grad = tape.grad(id).unwrap();
        prop_assert!(grad.iter().all(|v| v.is_finite()));
    }
}
