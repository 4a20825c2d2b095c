//! Affine map over the last axis, batched matmul, and layer norm.

use crate::scalar::Scalar;
use crate::tape::{NodeId, Op, Tape};

pub(crate) const LN_EPS: f64 = 1e-5;

/// out[m,n] += a[m,k] * b[k,n]
pub(crate) fn mm_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..][..k];
        let orow = &mut out[i * n..][..n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..][..n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out[m,n] += a[m,k] * b[n,k]^T (dot of rows)
pub(crate) fn mm_abt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..][..k];
        for j in 0..n {
            let brow = &b[j * k..][..k];
            let mut acc = T::zero();
            for kk in 0..k {
                acc += arow[kk] * brow[kk];
            }
            out[i * n + j] += acc;
        }
    }
}

/// out[k,n] += a[m,k]^T * b[m,n]
pub(crate) fn mm_atb<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..][..k];
        let brow = &b[i * n..][..n];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..][..n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Affine map over the last axis: `x [..., Din] -> [..., Dout]` with
    /// `w [Dout, Din]` and optional bias `[Dout]`. Leading axes broadcast
    /// through untouched.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 2, "shape mismatch: linear weight must be 2-d, got {:?}", ws);
        let din = *xs.last().expect("shape mismatch: linear input needs at least 1 axis");
        assert_eq!(din, ws[1], "shape mismatch: linear input width {} vs weight {:?}", din, ws);
        let dout = ws[0];
        let rows = self.numel(x) / din;
        let mut out = vec![T::zero(); rows * dout];
        if let Some(bias) = b {
            assert_eq!(self.shape(bias), &[dout], "shape mismatch: linear bias");
            let bd = self.data(bias);
            for r in 0..rows {
                out[r * dout..][..dout].copy_from_slice(bd);
            }
        }
        mm_abt(self.data(x), self.data(w), rows, din, dout, &mut out);
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = dout;
        let mut deps = vec![x, w];
        if let Some(bias) = b {
            deps.push(bias);
        }
        let req = self.requires_any(&deps);
        self.push(out_shape, out, req, Op::Linear { x, w, b })
    }

    /// Batched matmul: `a [N,M,K] * b [N,K,P] -> [N,M,P]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert!(
            sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
            "shape mismatch: bmm {:?} x {:?}",
            sa,
            sb
        );
        let (n, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); n * m * p];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..n {
            mm_acc(
                &da[i * m * k..][..m * k],
                &db[i * k * p..][..k * p],
                m,
                k,
                p,
                &mut out[i * m * p..][..m * p],
            );
        }
        let req = self.requires_any(&[a, b]);
        self.push(vec![n, m, p], out, req, Op::Bmm { a, b })
    }

    /// Layer norm over the last axis with per-feature affine, eps 1e-5.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, shift: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("shape mismatch: layer_norm input needs at least 1 axis");
        assert_eq!(self.shape(gain), &[d], "shape mismatch: layer_norm gain");
        assert_eq!(self.shape(shift), &[d], "shape mismatch: layer_norm shift");
        let rows = self.numel(x) / d;
        let xd = self.data(x);
        let gd = self.data(gain);
        let sd = self.data(shift);
        let eps = T::from_f64(LN_EPS);
        let inv_d = T::from_f64(1.0 / d as f64);
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..][..d];
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = T::zero();
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let inv_std = T::one() / (var + eps).sqrt();
            let orow = &mut out[r * d..][..d];
            for j in 0..d {
                orow[j] = gd[j] * ((row[j] - mean) * inv_std) + sd[j];
            }
        }
        let req = self.requires_any(&[x, gain, shift]);
        self.push(shape, out, req, Op::LayerNorm { x, gain, shift })
    }
}

pub(crate) fn bwd_linear<T: Scalar>(
    tape: &mut Tape<T>,
    g: &[T],
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
) {
    let din = *tape.shape(x).last().unwrap();
    let dout = tape.shape(w)[0];
    let rows = tape.numel(x) / din;
    if tape.requires_grad(x) {
        let mut gx = vec![T::zero(); tape.numel(x)];
        mm_acc(g, tape.data(w), rows, dout, din, &mut gx);
        tape.accumulate_owned(x, gx);
    }
    if tape.requires_grad(w) {
        let mut gw = vec![T::zero(); tape.numel(w)];
        mm_atb(g, tape.data(x), rows, dout, din, &mut gw);
        tape.accumulate_owned(w, gw);
    }
    if let Some(bias) = b {
        if tape.requires_grad(bias) {
            let mut gb = vec![T::zero(); dout];
            for r in 0..rows {
                for j in 0..dout {
                    gb[j] += g[r * dout + j];
                }
            }
            tape.accumulate_owned(bias, gb);
        }
    }
}

pub(crate) fn bwd_bmm<T: Scalar>(tape: &mut Tape<T>, g: &[T], a: NodeId, b: NodeId) {
    let sa = tape.shape(a).to_vec();
    let sb = tape.shape(b).to_vec();
    let (n, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
    if tape.requires_grad(a) {
        let mut ga = vec![T::zero(); tape.numel(a)];
        let db = tape.data(b);
        for i in 0..n {
            mm_abt(
                &g[i * m * p..][..m * p],
                &db[i * k * p..][..k * p],
                m,
                p,
                k,
                &mut ga[i * m * k..][..m * k],
            );
        }
        tape.accumulate_owned(a, ga);
    }
    if tape.requires_grad(b) {
        let mut gb = vec![T::zero(); tape.numel(b)];
        let da = tape.data(a);
        for i in 0..n {
            mm_atb(
                &da[i * m * k..][..m * k],
                &g[i * m * p..][..m * p],
                m,
                k,
                p,
                &mut gb[i * k * p..][..k * p],
            );
        }
        tape.accumulate_owned(b, gb);
    }
}

pub(crate) fn bwd_layer_norm<T: Scalar>(
    tape: &mut Tape<T>,
    g: &[T],
    x: NodeId,
    gain: NodeId,
    shift: NodeId,
) {
    let d = *tape.shape(x).last().unwrap();
    let rows = tape.numel(x) / d;
    let eps = T::from_f64(LN_EPS);
    let inv_d = T::from_f64(1.0 / d as f64);
    let xd = tape.data(x);
    let gd = tape.data(gain);

    let mut gx = vec![T::zero(); xd.len()];
    let mut ggain = vec![T::zero(); d];
    let mut gshift = vec![T::zero(); d];
    for r in 0..rows {
        let row = &xd[r * d..][..d];
        let grow = &g[r * d..][..d];
        let mut mean = T::zero();
        for &v in row {
            mean += v;
        }
        mean *= inv_d;
        let mut var = T::zero();
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var *= inv_d;
        let inv_std = T::one() / (var + eps).sqrt();

        let mut m1 = T::zero(); // mean of dxhat
        let mut m2 = T::zero(); // mean of dxhat * xhat
        for j in 0..d {
            let xhat = (row[j] - mean) * inv_std;
            let dxhat = grow[j] * gd[j];
            m1 += dxhat;
            m2 += dxhat * xhat;
            ggain[j] += grow[j] * xhat;
            gshift[j] += grow[j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        let gxrow = &mut gx[r * d..][..d];
        for j in 0..d {
            let xhat = (row[j] - mean) * inv_std;
            let dxhat = grow[j] * gd[j];
            gxrow[j] = (dxhat - m1 - xhat * m2) * inv_std;
        }
    }
    tape.accumulate_owned(x, gx);
    tape.accumulate_owned(gain, ggain);
    tape.accumulate_owned(shift, gshift);
}
