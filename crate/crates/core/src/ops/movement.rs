//! Data movement: padding, concatenation, slicing, permutation, reshape.
//! All of these copy; the tape never aliases storage between nodes.

use super::axis_blocks;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Op, PadMode, Tape};
use crate::tensor::strides;

/// Source index for a (possibly out-of-range) coordinate under a pad mode.
/// `None` means the output position reads no input (zero fill).
pub(crate) fn pad_src(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Replicate => Some(i.clamp(0, n as isize - 1) as usize),
        PadMode::Reflect => {
            if n == 1 {
                return Some(0);
            }
            // mirror about the edge samples, folding as many times as needed
            let period = 2 * (n as isize - 1);
            let m = i.rem_euclid(period);
            Some(if m < n as isize { m as usize } else { (period - m) as usize })
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Pad the two trailing spatial axes of [B,C,H,W].
    pub fn pad2d(
        &mut self,
        x: NodeId,
        l: usize,
        r: usize,
        t: usize,
        bo: usize,
        mode: PadMode,
    ) -> NodeId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4, "shape mismatch: pad2d input must be [B,C,H,W], got {:?}", xs);
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (nh, nw) = (h + t + bo, w + l + r);
        let ymap: Vec<Option<usize>> =
            (0..nh).map(|oy| pad_src(oy as isize - t as isize, h, mode)).collect();
        let xmap: Vec<Option<usize>> =
            (0..nw).map(|ox| pad_src(ox as isize - l as isize, w, mode)).collect();
        let xd = self.data(x);
        let mut out = vec![T::zero(); b * c * nh * nw];
        for p in 0..b * c {
            let plane = &xd[p * h * w..][..h * w];
            let oplane = &mut out[p * nh * nw..][..nh * nw];
            for (oy, sy) in ymap.iter().enumerate() {
                let Some(sy) = sy else { continue };
                let srow = &plane[sy * w..][..w];
                let orow = &mut oplane[oy * nw..][..nw];
                for (ox, sx) in xmap.iter().enumerate() {
                    if let Some(sx) = sx {
                        orow[ox] = srow[*sx];
                    }
                }
            }
        }
        let req = self.requires_grad(x);
        self.push(vec![b, c, nh, nw], out, req, Op::Pad2d { x, l, r, t, bo, mode })
    }

    /// Concatenate along `axis`; every other axis must agree.
    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> NodeId {
        assert!(!xs.is_empty(), "shape mismatch: concat of zero tensors");
        let first = self.shape(xs[0]).to_vec();
        assert!(axis < first.len(), "shape mismatch: concat axis {} out of range", axis);
        let mut ax_total = 0;
        for &id in xs {
            let s = self.shape(id);
            assert_eq!(s.len(), first.len(), "shape mismatch: concat rank");
            for (d, (&a, &b)) in first.iter().zip(s).enumerate() {
                assert!(d == axis || a == b, "shape mismatch: concat {:?} vs {:?} on axis {}", first, s, d);
            }
            ax_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = ax_total;
        let (outer, _, inner) = axis_blocks(&out_shape, axis);
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let row = ax_total * inner;
        let mut offset = 0;
        for &id in xs {
            let n_i = self.shape(id)[axis];
            let data = self.data(id);
            for o in 0..outer {
                let src = &data[o * n_i * inner..][..n_i * inner];
                let dst = &mut out[o * row + offset * inner..][..n_i * inner];
                dst.copy_from_slice(src);
            }
            offset += n_i;
        }
        let req = self.requires_any(xs);
        self.push(out_shape, out, req, Op::Concat { xs: xs.to_vec(), axis })
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        let xs = self.shape(x).to_vec();
        assert!(axis < xs.len(), "shape mismatch: narrow axis {} out of range", axis);
        assert!(start + len <= xs[axis],
            "shape mismatch: narrow {}..{} exceeds axis extent {}", start, start + len, xs[axis]);
        let (outer, n, inner) = axis_blocks(&xs, axis);
        let xd = self.data(x);
        let mut out_shape = xs.clone();
        out_shape[axis] = len;
        let mut out = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src = &xd[(o * n + start) * inner..][..len * inner];
            out[o * len * inner..][..len * inner].copy_from_slice(src);
        }
        let req = self.requires_grad(x);
        self.push(out_shape, out, req, Op::Narrow { x, axis, start })
    }

    /// Reorder axes; `axes` must be a permutation of 0..rank.
    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> NodeId {
        let xs = self.shape(x).to_vec();
        let (out_shape, out) = permute_data(self.data(x), &xs, axes);
        let req = self.requires_grad(x);
        self.push(out_shape, out, req, Op::Permute { x, axes: axes.to_vec() })
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(x),
            "shape mismatch: reshape {:?} -> {:?}",
            self.shape(x),
            shape
        );
        let data = self.data(x).to_vec();
        let req = self.requires_grad(x);
        self.push(shape.to_vec(), data, req, Op::Reshape { x })
    }
}

/// Reorder a flat buffer; returns (new_shape, new_data).
pub(crate) fn permute_data<T: Scalar>(
    data: &[T],
    shape: &[usize],
    axes: &[usize],
) -> (Vec<usize>, Vec<T>) {
    let nd = shape.len();
    assert_eq!(axes.len(), nd, "shape mismatch: permute axes rank");
    let mut seen = vec![false; nd];
    for &a in axes {
        assert!(a < nd && !seen[a], "shape mismatch: permute axes {:?} not a permutation", axes);
        seen[a] = true;
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let walk: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = vec![data.first().copied().unwrap_or_else(T::zero); n];
    if n == 0 {
        return (out_shape, out);
    }
    let mut coord = vec![0usize; nd];
    let mut src = 0usize;
    for item in out.iter_mut() {
        *item = data[src];
        for d in (0..nd).rev() {
            coord[d] += 1;
            src += walk[d];
            if coord[d] < out_shape[d] {
                break;
            }
            coord[d] = 0;
            src -= walk[d] * out_shape[d];
        }
    }
    (out_shape, out)
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bwd_pad2d<T: Scalar>(
    tape: &mut Tape<T>,
    g: &[T],
    x: NodeId,
    l: usize,
    _r: usize,
    t: usize,
    _bo: usize,
    mode: PadMode,
) {
    if !tape.requires_grad(x) {
        return;
    }
    let xs = tape.shape(x).to_vec();
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let nh = g.len() / (b * c * (w + l + _r));
    let nw = w + l + _r;
    let ymap: Vec<Option<usize>> =
        (0..nh).map(|oy| pad_src(oy as isize - t as isize, h, mode)).collect();
    let xmap: Vec<Option<usize>> =
        (0..nw).map(|ox| pad_src(ox as isize - l as isize, w, mode)).collect();
    let mut gx = vec![T::zero(); tape.numel(x)];
    for p in 0..b * c {
        let gplane = &g[p * nh * nw..][..nh * nw];
        let gxplane = &mut gx[p * h * w..][..h * w];
        for (oy, sy) in ymap.iter().enumerate() {
            let Some(sy) = sy else { continue };
            let grow = &gplane[oy * nw..][..nw];
            for (ox, sx) in xmap.iter().enumerate() {
                if let Some(sx) = sx {
                    gxplane[sy * w + sx] += grow[ox];
                }
            }
        }
    }
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_concat<T: Scalar>(
    tape: &mut Tape<T>,
    out: usize,
    g: &[T],
    xs: &[NodeId],
    axis: usize,
) {
    let out_shape = tape.nodes[out].shape.clone();
    let (outer, ax_total, inner) = axis_blocks(&out_shape, axis);
    let row = ax_total * inner;
    let mut offset = 0;
    for &id in xs {
        let n_i = tape.shape(id)[axis];
        if tape.requires_grad(id) {
            let mut gi = vec![T::zero(); tape.numel(id)];
            for o in 0..outer {
                let src = &g[o * row + offset * inner..][..n_i * inner];
                for (dst, &s) in gi[o * n_i * inner..][..n_i * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
            tape.accumulate_owned(id, gi);
        }
        offset += n_i;
    }
}

pub(crate) fn bwd_narrow<T: Scalar>(
    tape: &mut Tape<T>,
    out: usize,
    g: &[T],
    x: NodeId,
    axis: usize,
    start: usize,
) {
    if !tape.requires_grad(x) {
        return;
    }
    let len = tape.nodes[out].shape[axis];
    let xs = tape.shape(x).to_vec();
    let (outer, n, inner) = axis_blocks(&xs, axis);
    let mut gx = vec![T::zero(); tape.numel(x)];
    for o in 0..outer {
        let dst = &mut gx[(o * n + start) * inner..][..len * inner];
        let src = &g[o * len * inner..][..len * inner];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_permute<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId, axes: &[usize]) {
    if !tape.requires_grad(x) {
        return;
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| tape.shape(x)[a]).collect();
    let (_, gx) = permute_data(g, &out_shape, &inverse_axes(axes));
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_reshape<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId) {
    tape.accumulate(x, g);
}
