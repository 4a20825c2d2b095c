//! Spatial pooling over [B,C,H,W].

use crate::scalar::Scalar;
use crate::tape::{NodeId, Op, Tape};

fn pool_dims(xs: &[usize], k: usize, s: usize) -> (usize, usize, usize, usize, usize, usize) {
    assert_eq!(xs.len(), 4, "shape mismatch: pool input must be [B,C,H,W], got {:?}", xs);
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    assert!(k >= 1 && s >= 1, "config: pool kernel/stride must be >= 1");
    assert!(h >= k && w >= k, "config: pool kernel {} larger than input {}x{}", k, h, w);
    assert!((h - k) % s == 0 && (w - k) % s == 0,
        "config: pool output size not integral for input {}x{} kernel {} stride {}", h, w, k, s);
    (b, c, h, w, (h - k) / s + 1, (w - k) / s + 1)
}

impl<T: Scalar> Tape<T> {
    pub fn avg_pool2d(&mut self, x: NodeId, k: usize, s: usize) -> NodeId {
        let (b, c, h, w, oh, ow) = pool_dims(self.shape(x), k, s);
        let xd = self.data(x);
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let mut out = vec![T::zero(); b * c * oh * ow];
        for p in 0..b * c {
            let plane = &xd[p * h * w..][..h * w];
            let oplane = &mut out[p * oh * ow..][..oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        let row = &plane[(oy * s + ky) * w + ox * s..][..k];
                        for &v in row {
                            acc += v;
                        }
                    }
                    oplane[oy * ow + ox] = acc * inv;
                }
            }
        }
        let req = self.requires_grad(x);
        self.push(vec![b, c, oh, ow], out, req, Op::AvgPool { x, k, s })
    }

    /// Max pooling; ties route gradient to the first (row-major) maximum.
    pub fn max_pool2d(&mut self, x: NodeId, k: usize, s: usize) -> NodeId {
        let (b, c, h, w, oh, ow) = pool_dims(self.shape(x), k, s);
        let xd = self.data(x);
        let mut out = vec![T::zero(); b * c * oh * ow];
        let mut arg = vec![0u32; b * c * oh * ow];
        for p in 0..b * c {
            let base = p * h * w;
            let plane = &xd[base..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = plane[(oy * s) * w + ox * s];
                    let mut best_idx = (oy * s) * w + ox * s;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = (oy * s + ky) * w + ox * s + kx;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[p * oh * ow + oy * ow + ox] = best;
                    arg[p * oh * ow + oy * ow + ox] = (base + best_idx) as u32;
                }
            }
        }
        let req = self.requires_grad(x);
        self.push(vec![b, c, oh, ow], out, req, Op::MaxPool { x, arg })
    }

    /// Mean over all spatial positions: [B,C,H,W] -> [B,C,1,1].
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4, "shape mismatch: global_avg_pool input must be [B,C,H,W]");
        let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let xd = self.data(x);
        let inv = T::from_f64(1.0 / hw as f64);
        let mut out = vec![T::zero(); b * c];
        for p in 0..b * c {
            let mut acc = T::zero();
            for &v in &xd[p * hw..][..hw] {
                acc += v;
            }
            out[p] = acc * inv;
        }
        let req = self.requires_grad(x);
        self.push(vec![b, c, 1, 1], out, req, Op::GlobalAvgPool { x })
    }
}

pub(crate) fn bwd_avg_pool<T: Scalar>(
    tape: &mut Tape<T>,
    out: usize,
    g: &[T],
    x: NodeId,
    k: usize,
    s: usize,
) {
    if !tape.requires_grad(x) {
        return;
    }
    let xs = tape.shape(x).to_vec();
    let (h, w) = (xs[2], xs[3]);
    let os = tape.nodes[out].shape.clone();
    let (oh, ow) = (os[2], os[3]);
    let inv = T::from_f64(1.0 / (k * k) as f64);
    let mut gx = vec![T::zero(); tape.numel(x)];
    for p in 0..xs[0] * xs[1] {
        let gplane = &g[p * oh * ow..][..oh * ow];
        let gxplane = &mut gx[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let go = gplane[oy * ow + ox] * inv;
                for ky in 0..k {
                    for kx in 0..k {
                        gxplane[(oy * s + ky) * w + ox * s + kx] += go;
                    }
                }
            }
        }
    }
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_max_pool<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId, arg: &[u32]) {
    if !tape.requires_grad(x) {
        return;
    }
    let mut gx = vec![T::zero(); tape.numel(x)];
    for (i, &src) in arg.iter().enumerate() {
        gx[src as usize] += g[i];
    }
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_global_avg_pool<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId) {
    if !tape.requires_grad(x) {
        return;
    }
    let xs = tape.shape(x).to_vec();
    let hw = xs[2] * xs[3];
    let inv = T::from_f64(1.0 / hw as f64);
    let mut gx = vec![T::zero(); tape.numel(x)];
    for p in 0..xs[0] * xs[1] {
        let go = g[p] * inv;
        for v in &mut gx[p * hw..][..hw] {
            *v += go;
        }
    }
    tape.accumulate_owned(x, gx);
}
