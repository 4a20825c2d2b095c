//! Reductions and softmax. Axis reductions keep the reduced axis with
//! extent 1 so the result broadcasts straight back against the input.

use super::axis_blocks;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Op, Tape};

impl<T: Scalar> Tape<T> {
    /// Numerically stable softmax along `axis` (max subtraction per lane).
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> NodeId {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_blocks(&shape, axis);
        let xd = self.data(x);
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut m = xd[base];
                for k in 1..n {
                    m = m.max(xd[base + k * inner]);
                }
                let mut sum = T::zero();
                for k in 0..n {
                    let e = (xd[base + k * inner] - m).exp();
                    out[base + k * inner] = e;
                    sum += e;
                }
                for k in 0..n {
                    out[base + k * inner] = out[base + k * inner] / sum;
                }
            }
        }
        let req = self.requires_grad(x);
        self.push(shape, out, req, Op::Softmax { x, axis })
    }

    /// Mean over `axis`, keeping the axis with extent 1.
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_blocks(&shape, axis);
        let xd = self.data(x);
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let mut out = vec![T::zero(); outer * inner];
        let inv = T::from_f64(1.0 / n as f64);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut s = T::zero();
                for k in 0..n {
                    s += xd[base + k * inner];
                }
                out[o * inner + i] = s * inv;
            }
        }
        let req = self.requires_grad(x);
        self.push(out_shape, out, req, Op::MeanAxis { x, axis })
    }

    /// Max over `axis`, keeping the axis with extent 1. Ties resolve to the
    /// first (lowest-index) maximum, which keeps the backward route
    /// deterministic.
    pub fn max_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_blocks(&shape, axis);
        let xd = self.data(x);
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let mut out = vec![T::zero(); outer * inner];
        let mut arg = vec![0u32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut best = xd[base];
                let mut best_k = 0usize;
                for k in 1..n {
                    let v = xd[base + k * inner];
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                out[o * inner + i] = best;
                arg[o * inner + i] = (base + best_k * inner) as u32;
            }
        }
        let req = self.requires_grad(x);
        self.push(out_shape, out, req, Op::MaxAxis { x, arg })
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: T = self.data(x).iter().copied().sum();
        let req = self.requires_grad(x);
        self.push(vec![1], vec![s], req, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.numel(x);
        assert!(n > 0, "shape mismatch: mean of empty tensor");
        let s: T = self.data(x).iter().copied().sum();
        let req = self.requires_grad(x);
        self.push(
            vec![1],
            vec![s * T::from_f64(1.0 / n as f64)],
            req,
            Op::MeanAll { x },
        )
    }
}

pub(crate) fn bwd_softmax<T: Scalar>(tape: &mut Tape<T>, out: usize, g: &[T], x: NodeId, axis: usize) {
    if !tape.requires_grad(x) {
        return;
    }
    let shape = tape.nodes[out].shape.clone();
    let (outer, n, inner) = axis_blocks(&shape, axis);
    let y = &tape.nodes[out].data;
    let mut gx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut dot = T::zero();
            for k in 0..n {
                let idx = base + k * inner;
                dot += g[idx] * y[idx];
            }
            for k in 0..n {
                let idx = base + k * inner;
                gx[idx] = y[idx] * (g[idx] - dot);
            }
        }
    }
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_mean_axis<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId, axis: usize) {
    if !tape.requires_grad(x) {
        return;
    }
    let shape = tape.shape(x).to_vec();
    let (outer, n, inner) = axis_blocks(&shape, axis);
    let inv = T::from_f64(1.0 / n as f64);
    let mut gx = vec![T::zero(); tape.numel(x)];
    for o in 0..outer {
        for i in 0..inner {
            let go = g[o * inner + i] * inv;
            let base = o * n * inner + i;
            for k in 0..n {
                gx[base + k * inner] += go;
            }
        }
    }
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_max_axis<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId, arg: &[u32]) {
    if !tape.requires_grad(x) {
        return;
    }
    let mut gx = vec![T::zero(); tape.numel(x)];
    for (i, &src) in arg.iter().enumerate() {
        gx[src as usize] += g[i];
    }
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_sum_all<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId) {
    if !tape.requires_grad(x) {
        return;
    }
    let gx = vec![g[0]; tape.numel(x)];
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_mean_all<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId) {
    if !tape.requires_grad(x) {
        return;
    }
    let n = tape.numel(x);
    let gx = vec![g[0] * T::from_f64(1.0 / n as f64); n];
    tape.accumulate_owned(x, gx);
}

#[cfg(test)]
mod tests {
    use crate::tensor::TensorData;
    use crate::Tape;

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut tape = Tape::<f64>::new();
        let vals = [0.3, -1.2, 2.0, 0.0, 5.0, -3.0];
        let x = tape.constant(TensorData::from_f64(&[2, 3], &vals));
        let y = tape.softmax(x, 1);
        for row in tape.data(y).chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let shifted: Vec<f64> = vals.iter().map(|v| v + 100.0).collect();
        let xs = tape.constant(TensorData::from_f64(&[2, 3], &shifted));
        let ys = tape.softmax(xs, 1);
        for (a, b) in tape.data(y).to_vec().iter().zip(tape.data(ys)) {
            assert!((a - b).abs() < 1e-12, "shift invariance broken");
        }
    }

    #[test]
    fn softmax_survives_large_magnitudes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(TensorData::from_f64(&[1, 3], &[1000.0, 999.0, -1000.0]));
        let y = tape.softmax(x, 1);
        assert!(tape.data(y).iter().all(|v| v.is_finite()));
        let s: f64 = tape.data(y).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axis_reductions_keep_dim() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(TensorData::from_f64(&[1, 2, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]));
        let m = tape.mean_axis(x, 1);
        assert_eq!(tape.shape(m), &[1, 1, 2, 2]);
        assert_eq!(tape.data(m), &[3., 4., 5., 6.]);
        let mx = tape.max_axis(x, 1);
        assert_eq!(tape.data(mx), &[5., 6., 7., 8.]);
    }

    #[test]
    fn max_axis_ties_take_first() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::from_f64(&[1, 2, 1, 1], &[7.0, 7.0]), true);
        let y = tape.max_axis(x, 1);
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn sum_and_mean_all() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(TensorData::from_f64(&[2, 2], &[1., 2., 3., 4.]));
        let s = tape.sum_all(x);
        let m = tape.mean_all(x);
        assert_eq!(tape.data(s), &[10.0]);
        assert_eq!(tape.data(m), &[2.5]);
    }
}
