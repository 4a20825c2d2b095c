//! 2-d convolution (cross-correlation, no kernel flip), with stride,
//! symmetric zero padding, and channel groups. Output extent must divide
//! exactly; callers wanting asymmetric or non-zero padding compose with
//! `pad2d` and run the kernel pad-free.

use crate::scalar::Scalar;
use crate::tape::{NodeId, Op, Tape};

pub(crate) struct ConvDims {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub cin_g: usize,
    pub cout_g: usize,
}

pub(crate) fn conv_dims(
    xs: &[usize],
    ws: &[usize],
    stride: usize,
    pad: usize,
    groups: usize,
) -> ConvDims {
    assert_eq!(xs.len(), 4, "shape mismatch: conv2d input must be [B,C,H,W], got {:?}", xs);
    assert_eq!(ws.len(), 4, "shape mismatch: conv2d weight must be [Co,Ci/g,kh,kw], got {:?}", ws);
    let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    assert!(stride >= 1, "config: conv stride must be >= 1");
    assert!(groups >= 1 && cin % groups == 0 && cout % groups == 0,
        "config: groups {} must divide cin {} and cout {}", groups, cin, cout);
    assert_eq!(wc, cin / groups, "shape mismatch: weight channel {} vs cin/groups {}", wc, cin / groups);
    assert!(h + 2 * pad >= kh && w + 2 * pad >= kw,
        "config: kernel {}x{} larger than padded input {}x{}", kh, kw, h + 2 * pad, w + 2 * pad);
    assert!((h + 2 * pad - kh) % stride == 0 && (w + 2 * pad - kw) % stride == 0,
        "config: conv output size not integral for input {}x{} kernel {}x{} stride {} pad {}",
        h, w, kh, kw, stride, pad);
    ConvDims {
        b,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
        cin_g: cin / groups,
        cout_g: cout / groups,
    }
}

/// Valid output-column range for one kernel column: all ox with
/// 0 <= ox*stride + kx - pad < w.
#[inline]
fn ox_range(kx: usize, pad: usize, stride: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    let hi_excl = if w + pad > kx {
        (((w + pad - kx - 1) / stride) + 1).min(ow)
    } else {
        0
    };
    (lo.min(hi_excl), hi_excl)
}

impl<T: Scalar> Tape<T> {
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> NodeId {
        let d = conv_dims(self.shape(x), self.shape(w), stride, pad, groups);
        if let Some(bias) = b {
            assert_eq!(self.shape(bias), &[d.cout], "shape mismatch: conv bias");
        }
        let xd = self.data(x);
        let wd = self.data(w);
        let mut out = vec![T::zero(); d.b * d.cout * d.oh * d.ow];
        if let Some(bias) = b {
            let bd = self.data(bias);
            for bi in 0..d.b {
                for co in 0..d.cout {
                    out[(bi * d.cout + co) * d.oh * d.ow..][..d.oh * d.ow].fill(bd[co]);
                }
            }
        }
        for bi in 0..d.b {
            for gi in 0..d.cout / d.cout_g {
                for cg in 0..d.cout_g {
                    let co = gi * d.cout_g + cg;
                    for ci_g in 0..d.cin_g {
                        let ci = gi * d.cin_g + ci_g;
                        let xplane = &xd[(bi * d.cin + ci) * d.h * d.w..][..d.h * d.w];
                        let wplane = &wd[(co * d.cin_g + ci_g) * d.kh * d.kw..][..d.kh * d.kw];
                        for ky in 0..d.kh {
                            for kx in 0..d.kw {
                                let wv = wplane[ky * d.kw + kx];
                                let (lo, hi) = ox_range(kx, pad, stride, d.w, d.ow);
                                for oy in 0..d.oh {
                                    let iy = oy * stride + ky;
                                    if iy < pad || iy - pad >= d.h {
                                        continue;
                                    }
                                    let xrow = &xplane[(iy - pad) * d.w..][..d.w];
                                    let orow = &mut out
                                        [((bi * d.cout + co) * d.oh + oy) * d.ow..][..d.ow];
                                    if stride == 1 {
                                        let off = kx as isize - pad as isize;
                                        for ox in lo..hi {
                                            orow[ox] += wv * xrow[(ox as isize + off) as usize];
                                        }
                                    } else {
                                        for ox in lo..hi {
                                            orow[ox] += wv * xrow[ox * stride + kx - pad];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut deps = vec![x, w];
        if let Some(bias) = b {
            deps.push(bias);
        }
        let req = self.requires_any(&deps);
        self.push(
            vec![d.b, d.cout, d.oh, d.ow],
            out,
            req,
            Op::Conv2d { x, w, b, stride, pad, groups },
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bwd_conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    g: &[T],
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    stride: usize,
    pad: usize,
    groups: usize,
) {
    let d = conv_dims(tape.shape(x), tape.shape(w), stride, pad, groups);

    if let Some(bias) = b {
        if tape.requires_grad(bias) {
            let mut gb = vec![T::zero(); d.cout];
            for bi in 0..d.b {
                for co in 0..d.cout {
                    let grow = &g[(bi * d.cout + co) * d.oh * d.ow..][..d.oh * d.ow];
                    let mut acc = T::zero();
                    for &v in grow {
                        acc += v;
                    }
                    gb[co] += acc;
                }
            }
            tape.accumulate_owned(bias, gb);
        }
    }

    if tape.requires_grad(w) {
        let mut gw = vec![T::zero(); tape.numel(w)];
        let xd = tape.data(x);
        for bi in 0..d.b {
            for gi in 0..groups {
                for cg in 0..d.cout_g {
                    let co = gi * d.cout_g + cg;
                    for ci_g in 0..d.cin_g {
                        let ci = gi * d.cin_g + ci_g;
                        let xplane = &xd[(bi * d.cin + ci) * d.h * d.w..][..d.h * d.w];
                        for ky in 0..d.kh {
                            for kx in 0..d.kw {
                                let (lo, hi) = ox_range(kx, pad, stride, d.w, d.ow);
                                let mut acc = T::zero();
                                for oy in 0..d.oh {
                                    let iy = oy * stride + ky;
                                    if iy < pad || iy - pad >= d.h {
                                        continue;
                                    }
                                    let xrow = &xplane[(iy - pad) * d.w..][..d.w];
                                    let grow = &g[((bi * d.cout + co) * d.oh + oy) * d.ow..][..d.ow];
                                    for ox in lo..hi {
                                        acc += grow[ox] * xrow[ox * stride + kx - pad];
                                    }
                                }
                                gw[(co * d.cin_g + ci_g) * d.kh * d.kw + ky * d.kw + kx] += acc;
                            }
                        }
                    }
                }
            }
        }
        tape.accumulate_owned(w, gw);
    }

    if tape.requires_grad(x) {
        let mut gx = vec![T::zero(); tape.numel(x)];
        let wd = tape.data(w);
        for bi in 0..d.b {
            for gi in 0..groups {
                for cg in 0..d.cout_g {
                    let co = gi * d.cout_g + cg;
                    for ci_g in 0..d.cin_g {
                        let ci = gi * d.cin_g + ci_g;
                        let wplane = &wd[(co * d.cin_g + ci_g) * d.kh * d.kw..][..d.kh * d.kw];
                        for ky in 0..d.kh {
                            for kx in 0..d.kw {
                                let wv = wplane[ky * d.kw + kx];
                                let (lo, hi) = ox_range(kx, pad, stride, d.w, d.ow);
                                for oy in 0..d.oh {
                                    let iy = oy * stride + ky;
                                    if iy < pad || iy - pad >= d.h {
                                        continue;
                                    }
                                    let gxrow = &mut gx
                                        [((bi * d.cin + ci) * d.h + (iy - pad)) * d.w..][..d.w];
                                    let grow = &g[((bi * d.cout + co) * d.oh + oy) * d.ow..][..d.ow];
                                    for ox in lo..hi {
                                        gxrow[ox * stride + kx - pad] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        tape.accumulate_owned(x, gx);
    }
}
