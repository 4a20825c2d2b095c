//! Bilinear resampling: fixed-grid resize and flow-driven warping.

use crate::scalar::Scalar;
use crate::tape::{NodeId, Op, Tape};

/// One interpolation tap pair along an axis: floor index, ceil index,
/// and the weight on the ceil sample.
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

/// Half-pixel source mapping, clamped to the valid range so edge rows
/// and columns replicate rather than read out of bounds.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            Tap { i0, i1, w1: src - i0 as f64 }
        })
        .collect()
}

impl<T: Scalar> Tape<T> {
    /// Resize [B,C,H,W] to [B,C,nh,nw] with bilinear interpolation.
    /// A same-size call copies verbatim.
    pub fn bilinear_resize(&mut self, x: NodeId, nh: usize, nw: usize) -> NodeId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4, "shape mismatch: resize input must be [B,C,H,W], got {:?}", xs);
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        assert!(nh > 0 && nw > 0, "shape mismatch: resize target must be nonzero");
        let req = self.requires_grad(x);
        if (nh, nw) == (h, w) {
            let data = self.data(x).to_vec();
            return self.push(vec![b, c, nh, nw], data, req, Op::BilinearResize { x });
        }
        let ty = axis_taps(h, nh);
        let tx = axis_taps(w, nw);
        let xd = self.data(x);
        let mut out = vec![T::zero(); b * c * nh * nw];
        for p in 0..b * c {
            let plane = &xd[p * h * w..][..h * w];
            let oplane = &mut out[p * nh * nw..][..nh * nw];
            for (oy, t_y) in ty.iter().enumerate() {
                let r0 = &plane[t_y.i0 * w..][..w];
                let r1 = &plane[t_y.i1 * w..][..w];
                let wy = T::from_f64(t_y.w1);
                let orow = &mut oplane[oy * nw..][..nw];
                for (ox, t_x) in tx.iter().enumerate() {
                    let wx = T::from_f64(t_x.w1);
                    let top = r0[t_x.i0] + (r0[t_x.i1] - r0[t_x.i0]) * wx;
                    let bot = r1[t_x.i0] + (r1[t_x.i1] - r1[t_x.i0]) * wx;
                    orow[ox] = top + (bot - top) * wy;
                }
            }
        }
        self.push(vec![b, c, nh, nw], out, req, Op::BilinearResize { x })
    }

    /// Sample `x` [B,C,H,W] at positions displaced by `flow` [B,2,H,W]
    /// (channel 0 shifts columns, channel 1 shifts rows, both in pixels).
    /// Sample points clamp to the border. Zero displacement reproduces the
    /// input exactly.
    pub fn grid_sample(&mut self, x: NodeId, flow: NodeId) -> NodeId {
        let xs = self.shape(x).to_vec();
        let fs = self.shape(flow).to_vec();
        assert_eq!(xs.len(), 4, "shape mismatch: grid_sample input must be [B,C,H,W]");
        assert_eq!(
            fs,
            vec![xs[0], 2, xs[2], xs[3]],
            "shape mismatch: flow {:?} does not match input {:?}",
            fs,
            xs
        );
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let xd = self.data(x);
        let fd = self.data(flow);
        let mut out = vec![T::zero(); b * c * h * w];
        for bi in 0..b {
            let fplane = &fd[bi * 2 * h * w..][..2 * h * w];
            for oy in 0..h {
                for ox in 0..w {
                    let p = oy * w + ox;
                    let sx = (ox as f64 + fplane[p].to_f64()).clamp(0.0, (w - 1) as f64);
                    let sy = (oy as f64 + fplane[h * w + p].to_f64()).clamp(0.0, (h - 1) as f64);
                    let x0 = sx.floor() as usize;
                    let y0 = sy.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let y1 = (y0 + 1).min(h - 1);
                    let wx = sx - x0 as f64;
                    let wy = sy - y0 as f64;
                    for ci in 0..c {
                        let plane = &xd[(bi * c + ci) * h * w..][..h * w];
                        let v = if wx == 0.0 && wy == 0.0 {
                            plane[y0 * w + x0]
                        } else {
                            let twx = T::from_f64(wx);
                            let twy = T::from_f64(wy);
                            let v00 = plane[y0 * w + x0];
                            let v01 = plane[y0 * w + x1];
                            let v10 = plane[y1 * w + x0];
                            let v11 = plane[y1 * w + x1];
                            let top = v00 + (v01 - v00) * twx;
                            let bot = v10 + (v11 - v10) * twx;
                            top + (bot - top) * twy
                        };
                        out[(bi * c + ci) * h * w + p] = v;
                    }
                }
            }
        }
        let req = self.requires_grad(x) || self.requires_grad(flow);
        self.push(vec![b, c, h, w], out, req, Op::GridSample { x, flow })
    }
}

pub(crate) fn bwd_bilinear_resize<T: Scalar>(
    tape: &mut Tape<T>,
    out: usize,
    g: &[T],
    x: NodeId,
) {
    if !tape.requires_grad(x) {
        return;
    }
    let os = tape.nodes[out].shape.clone();
    let xs = tape.shape(x).to_vec();
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (nh, nw) = (os[2], os[3]);
    if (nh, nw) == (h, w) {
        tape.accumulate(x, g);
        return;
    }
    let ty = axis_taps(h, nh);
    let tx = axis_taps(w, nw);
    let mut gx = vec![T::zero(); b * c * h * w];
    for p in 0..b * c {
        let gplane = &g[p * nh * nw..][..nh * nw];
        let xplane = &mut gx[p * h * w..][..h * w];
        for (oy, t_y) in ty.iter().enumerate() {
            let wy = t_y.w1;
            for (ox, t_x) in tx.iter().enumerate() {
                let go = gplane[oy * nw + ox];
                let wx = t_x.w1;
                xplane[t_y.i0 * w + t_x.i0] += go * T::from_f64((1.0 - wy) * (1.0 - wx));
                xplane[t_y.i0 * w + t_x.i1] += go * T::from_f64((1.0 - wy) * wx);
                xplane[t_y.i1 * w + t_x.i0] += go * T::from_f64(wy * (1.0 - wx));
                xplane[t_y.i1 * w + t_x.i1] += go * T::from_f64(wy * wx);
            }
        }
    }
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_grid_sample<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId, flow: NodeId) {
    let xs = tape.shape(x).to_vec();
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let need_x = tape.requires_grad(x);
    let need_f = tape.requires_grad(flow);
    let xd = tape.data(x);
    let fd = tape.data(flow);
    let mut gx = vec![T::zero(); if need_x { b * c * h * w } else { 0 }];
    let mut gf = vec![T::zero(); if need_f { b * 2 * h * w } else { 0 }];
    for bi in 0..b {
        let fplane = &fd[bi * 2 * h * w..][..2 * h * w];
        for oy in 0..h {
            for ox in 0..w {
                let p = oy * w + ox;
                let raw_x = ox as f64 + fplane[p].to_f64();
                let raw_y = oy as f64 + fplane[h * w + p].to_f64();
                let sx = raw_x.clamp(0.0, (w - 1) as f64);
                let sy = raw_y.clamp(0.0, (h - 1) as f64);
                // a clamped coordinate no longer responds to the flow
                let free_x = raw_x == sx;
                let free_y = raw_y == sy;
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let wx = sx - x0 as f64;
                let wy = sy - y0 as f64;
                let mut dfx = 0.0f64;
                let mut dfy = 0.0f64;
                for ci in 0..c {
                    let base = (bi * c + ci) * h * w;
                    let go = g[base + p];
                    let plane = &xd[base..][..h * w];
                    if need_x {
                        let gxp = &mut gx[base..][..h * w];
                        gxp[y0 * w + x0] += go * T::from_f64((1.0 - wy) * (1.0 - wx));
                        gxp[y0 * w + x1] += go * T::from_f64((1.0 - wy) * wx);
                        gxp[y1 * w + x0] += go * T::from_f64(wy * (1.0 - wx));
                        gxp[y1 * w + x1] += go * T::from_f64(wy * wx);
                    }
                    if need_f {
                        let v00 = plane[y0 * w + x0].to_f64();
                        let v01 = plane[y0 * w + x1].to_f64();
                        let v10 = plane[y1 * w + x0].to_f64();
                        let v11 = plane[y1 * w + x1].to_f64();
                        let go = go.to_f64();
                        if free_x {
                            dfx += go * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
                        }
                        if free_y {
                            dfy += go * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
                        }
                    }
                }
                if need_f {
                    gf[bi * 2 * h * w + p] += T::from_f64(dfx);
                    gf[bi * 2 * h * w + h * w + p] += T::from_f64(dfy);
                }
            }
        }
    }
    if need_x {
        tape.accumulate_owned(x, gx);
    }
    if need_f {
        tape.accumulate_owned(flow, gf);
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::TensorData;
    use crate::Tape;

    #[test]
    fn same_size_resize_is_verbatim() {
        let mut tape = Tape::<f32>::new();
        let vals = [1.5f32, -2.25, 0.0, 3.75, 1e-30, 7.0];
        let x = tape.constant(TensorData::new(vec![1, 1, 2, 3], vals.to_vec()));
        let y = tape.bilinear_resize(x, 2, 3);
        for (a, b) in tape.data(x).iter().zip(tape.data(y)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn upsample_doubles_with_half_pixel_centers() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(TensorData::from_f64(&[1, 1, 1, 2], &[0., 4.]));
        let y = tape.bilinear_resize(x, 1, 4);
        // sources: -0.25 -> clamp 0, 0.25, 0.75, 1.25 -> clamp 1
        assert_eq!(tape.data(y), &[0., 1., 3., 4.]);
    }

    #[test]
    fn downsample_averages_pairs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(TensorData::from_f64(&[1, 1, 1, 4], &[0., 2., 4., 6.]));
        let y = tape.bilinear_resize(x, 1, 2);
        assert_eq!(tape.data(y), &[1., 5.]);
    }

    #[test]
    fn zero_flow_reproduces_input_bitwise() {
        let mut tape = Tape::<f32>::new();
        let vals = [0.1f32, -7.5, 2.25, 1e-20, 9.0, -0.125, 3.5, 4.0];
        let x = tape.constant(TensorData::new(vec![1, 2, 2, 2], vals.to_vec()));
        let flow = tape.constant(TensorData::zeros(&[1, 2, 2, 2]));
        let y = tape.grid_sample(x, flow);
        for (a, b) in tape.data(x).iter().zip(tape.data(y)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn half_pixel_shift_blends_neighbors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(TensorData::from_f64(&[1, 1, 1, 3], &[2., 4., 8.]));
        let mut fvals = vec![0.0; 6];
        fvals[0] = 0.5;
        fvals[1] = 0.5;
        fvals[2] = 0.5;
        let flow = tape.constant(TensorData::from_f64(&[1, 2, 1, 3], &fvals));
        let y = tape.grid_sample(x, flow);
        // last column clamps at the border and keeps its own value
        assert_eq!(tape.data(y), &[3., 6., 8.]);
    }

    #[test]
    fn out_of_range_flow_clamps_to_border() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(TensorData::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let mut fvals = vec![0.0; 8];
        fvals[0] = -10.0; // column shift far left of the image
        fvals[4] = -10.0; // row shift far above
        let flow = tape.constant(TensorData::from_f64(&[1, 2, 2, 2], &fvals));
        let y = tape.grid_sample(x, flow);
        assert_eq!(tape.data(y)[0], 1.);
    }
}
