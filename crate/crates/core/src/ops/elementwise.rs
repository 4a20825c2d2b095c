//! Pointwise ops and broadcast arithmetic.

use super::{bcast_strides, broadcast_shape, zip_bcast2};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Op, Tape};

const GELU_COEF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(T, T) -> T) -> NodeId {
        let out_shape = broadcast_shape(self.shape(a), self.shape(b));
        let sa = bcast_strides(self.shape(a), &out_shape);
        let sb = bcast_strides(self.shape(b), &out_shape);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![T::zero(); out_shape.iter().product()];
        zip_bcast2(&out_shape, &sa, &sb, |oi, ai, bi| out[oi] = f(da[ai], db[bi]));
        let req = self.requires_any(&[a, b]);
        self.push(out_shape, out, req, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Div { a, b }, |x, y| x / y)
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(T) -> T) -> NodeId {
        let data: Vec<T> = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let req = self.requires_grad(x);
        self.push(shape, data, req, op)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let cv = T::from_f64(c);
        self.unary(x, Op::Scale { x, c }, |v| v * cv)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let cv = T::from_f64(c);
        self.unary(x, Op::AddScalar { x }, |v| v + cv)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Relu { x }, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Sigmoid { x }, |v| T::one() / (T::one() + (-v).exp()))
    }

    /// Tanh-form gelu.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Gelu { x }, |v| {
            let xv = v.to_f64();
            let u = SQRT_2_OVER_PI * (xv + GELU_COEF * xv * xv * xv);
            T::from_f64(0.5 * xv * (1.0 + u.tanh()))
        })
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Exp { x }, |v| v.exp())
    }

    /// Natural log. The caller is responsible for keeping inputs positive
    /// (loss paths clamp first).
    pub fn ln(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Ln { x }, |v| v.ln())
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo <= hi, "config: clamp bounds inverted ({lo} > {hi})");
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.max(l).min(h))
    }
}

fn bwd_binary<T: Scalar>(
    tape: &mut Tape<T>,
    out: usize,
    g: &[T],
    a: NodeId,
    b: NodeId,
    fa: impl Fn(T, T, T) -> T,
    fb: impl Fn(T, T, T) -> T,
) {
    let out_shape = tape.nodes[out].shape.clone();
    let sa = bcast_strides(tape.shape(a), &out_shape);
    let sb = bcast_strides(tape.shape(b), &out_shape);
    if tape.requires_grad(a) {
        let mut ga = vec![T::zero(); tape.numel(a)];
        let (da, db) = (tape.data(a), tape.data(b));
        zip_bcast2(&out_shape, &sa, &sb, |oi, ai, bi| {
            ga[ai] += fa(g[oi], da[ai], db[bi]);
        });
        tape.accumulate_owned(a, ga);
    }
    if tape.requires_grad(b) {
        let mut gb = vec![T::zero(); tape.numel(b)];
        let (da, db) = (tape.data(a), tape.data(b));
        zip_bcast2(&out_shape, &sa, &sb, |oi, ai, bi| {
            gb[bi] += fb(g[oi], da[ai], db[bi]);
        });
        tape.accumulate_owned(b, gb);
    }
}

pub(crate) fn bwd_add<T: Scalar>(tape: &mut Tape<T>, out: usize, g: &[T], a: NodeId, b: NodeId) {
    bwd_binary(tape, out, g, a, b, |go, _, _| go, |go, _, _| go);
}

pub(crate) fn bwd_sub<T: Scalar>(tape: &mut Tape<T>, out: usize, g: &[T], a: NodeId, b: NodeId) {
    bwd_binary(tape, out, g, a, b, |go, _, _| go, |go, _, _| -go);
}

pub(crate) fn bwd_mul<T: Scalar>(tape: &mut Tape<T>, out: usize, g: &[T], a: NodeId, b: NodeId) {
    bwd_binary(tape, out, g, a, b, |go, _, bv| go * bv, |go, av, _| go * av);
}

pub(crate) fn bwd_div<T: Scalar>(tape: &mut Tape<T>, out: usize, g: &[T], a: NodeId, b: NodeId) {
    bwd_binary(
        tape,
        out,
        g,
        a,
        b,
        |go, _, bv| go / bv,
        |go, av, bv| -go * av / (bv * bv),
    );
}

fn bwd_unary<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId, f: impl Fn(T, T) -> T) {
    if !tape.requires_grad(x) {
        return;
    }
    let gx: Vec<T> = tape.data(x).iter().zip(g).map(|(&xv, &go)| f(go, xv)).collect();
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_scale<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId, c: f64) {
    let cv = T::from_f64(c);
    bwd_unary(tape, g, x, |go, _| go * cv);
}

pub(crate) fn bwd_add_scalar<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId) {
    bwd_unary(tape, g, x, |go, _| go);
}

pub(crate) fn bwd_relu<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId) {
    bwd_unary(tape, g, x, |go, xv| if xv > T::zero() { go } else { T::zero() });
}

pub(crate) fn bwd_sigmoid<T: Scalar>(tape: &mut Tape<T>, out: usize, g: &[T], x: NodeId) {
    if !tape.requires_grad(x) {
        return;
    }
    let gx: Vec<T> = tape.nodes[out]
        .data
        .iter()
        .zip(g)
        .map(|(&s, &go)| go * s * (T::one() - s))
        .collect();
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_gelu<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId) {
    bwd_unary(tape, g, x, |go, xv| {
        let v = xv.to_f64();
        let u = SQRT_2_OVER_PI * (v + GELU_COEF * v * v * v);
        let t = u.tanh();
        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * v * v);
        let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        go * T::from_f64(d)
    });
}

pub(crate) fn bwd_exp<T: Scalar>(tape: &mut Tape<T>, out: usize, g: &[T], x: NodeId) {
    if !tape.requires_grad(x) {
        return;
    }
    let gx: Vec<T> = tape.nodes[out].data.iter().zip(g).map(|(&e, &go)| go * e).collect();
    tape.accumulate_owned(x, gx);
}

pub(crate) fn bwd_ln<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId) {
    bwd_unary(tape, g, x, |go, xv| go / xv);
}

pub(crate) fn bwd_clamp<T: Scalar>(tape: &mut Tape<T>, g: &[T], x: NodeId, lo: f64, hi: f64) {
    let (l, h) = (T::from_f64(lo), T::from_f64(hi));
    bwd_unary(tape, g, x, |go, xv| {
        if xv >= l && xv <= h {
            go
        } else {
            T::zero()
        }
    });
}
