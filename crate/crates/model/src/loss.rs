//! Training objectives. All losses take logits, build their graph on the
//! tape, and reduce to a scalar node; anything that needs a data-dependent
//! decision (degenerate overlap, class balance) reads host-side values
//! first and bakes them in as constants.

use crackseg_core::tensor::TensorData;
use crackseg_core::{NodeId, Scalar, Tape};

use crate::model::Forward;

/// Probabilities are pinned this far inside (0, 1) before any log.
pub const PROB_EPS: f64 = 1e-7;
/// Guard on the overlap denominator.
pub const IOU_EPS: f64 = 1e-7;

/// Mean binary cross entropy from logits against a {0,1} target map.
pub fn bce<T: Scalar>(tape: &mut Tape<T>, logits: NodeId, target: NodeId) -> NodeId {
    let p = tape.sigmoid(logits);
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let ln_p = tape.ln(p);
    let q = tape.scale(p, -1.0);
    let q = tape.add_scalar(q, 1.0);
    let ln_q = tape.ln(q);
    let ty = tape.mul(target, ln_p);
    let not_t = tape.scale(target, -1.0);
    let not_t = tape.add_scalar(not_t, 1.0);
    let tq = tape.mul(not_t, ln_q);
    let s = tape.add(ty, tq);
    let neg = tape.scale(s, -1.0);
    tape.mean_all(neg)
}

/// BCE with the positive term weighted by the negative fraction and vice
/// versa, so sparse positives are not drowned out. The balance is computed
/// from the target host-side and enters the graph as a constant map.
pub fn balanced_bce<T: Scalar>(
    tape: &mut Tape<T>,
    logits: NodeId,
    target: NodeId,
    target_host: &TensorData<T>,
) -> NodeId {
    let n = target_host.numel() as f64;
    let n_pos: f64 = target_host.data().iter().map(|&v| v.to_f64()).sum();
    let beta = (n - n_pos) / n;
    let weights: Vec<T> = target_host
        .data()
        .iter()
        .map(|&y| {
            let y = y.to_f64();
            T::from_f64(beta * y + (1.0 - beta) * (1.0 - y))
        })
        .collect();
    let wnode = tape.constant(TensorData::new(target_host.shape().to_vec(), weights));

    let p = tape.sigmoid(logits);
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let ln_p = tape.ln(p);
    let q = tape.scale(p, -1.0);
    let q = tape.add_scalar(q, 1.0);
    let ln_q = tape.ln(q);
    let ty = tape.mul(target, ln_p);
    let not_t = tape.scale(target, -1.0);
    let not_t = tape.add_scalar(not_t, 1.0);
    let tq = tape.mul(not_t, ln_q);
    let s = tape.add(ty, tq);
    let weighted = tape.mul(wnode, s);
    let neg = tape.scale(weighted, -1.0);
    tape.mean_all(neg)
}

/// Differentiable overlap loss: one minus soft intersection over union.
/// When both the target and the prediction are entirely empty the loss is
/// exactly zero (decided host-side; there is nothing to optimize).
pub fn soft_iou<T: Scalar>(
    tape: &mut Tape<T>,
    logits: NodeId,
    target: NodeId,
    target_host: &TensorData<T>,
) -> NodeId {
    let p = tape.sigmoid(logits);
    let sum_y: f64 = target_host.data().iter().map(|&v| v.to_f64()).sum();
    let sum_p: f64 = tape.data(p).iter().map(|&v| v.to_f64()).sum();
    if sum_y == 0.0 && sum_p == 0.0 {
        return tape.constant(TensorData::scalar(T::zero()));
    }
    let yp = tape.mul(target, p);
    let inter = tape.sum_all(yp);
    let sp = tape.sum_all(p);
    let sy_plus_sp = tape.add_scalar(sp, sum_y);
    let union = tape.sub(sy_plus_sp, inter);
    let union = tape.add_scalar(union, IOU_EPS);
    let ratio = tape.div(inter, union);
    let neg = tape.scale(ratio, -1.0);
    tape.add_scalar(neg, 1.0)
}

/// Ring of boundary pixels of a binary mask: dilation XOR erosion with a
/// 3x3 structuring element (borders clamp).
pub fn edge_from_mask<T: Scalar>(mask: &TensorData<T>) -> TensorData<T> {
    let shape = mask.shape().to_vec();
    assert_eq!(shape.len(), 4, "shape mismatch: mask must be [B,1,H,W]");
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let data = mask.data();
    let mut out = vec![T::zero(); data.len()];
    for p in 0..planes {
        let src = &data[p * h * w..][..h * w];
        let dst = &mut out[p * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                let mut dil = false;
                let mut ero = true;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        let on = src[sy * w + sx].to_f64() > 0.5;
                        dil |= on;
                        ero &= on;
                    }
                }
                if dil != ero {
                    dst[y * w + x] = T::one();
                }
            }
        }
    }
    TensorData::new(shape, out)
}

/// The raw soft overlap share, intersection over the plain sum of both
/// masses (half the Dice coefficient). It grows with agreement, so taken
/// as a loss it pushes the prediction away from the target; it exists only
/// to compare against the complement form that training uses.
pub fn soft_overlap_share<T: Scalar>(
    tape: &mut Tape<T>,
    logits: NodeId,
    target: NodeId,
    target_host: &TensorData<T>,
) -> NodeId {
    let p = tape.sigmoid(logits);
    let sum_y: f64 = target_host.data().iter().map(|&v| v.to_f64()).sum();
    let yp = tape.mul(target, p);
    let inter = tape.sum_all(yp);
    let sp = tape.sum_all(p);
    let both = tape.add_scalar(sp, sum_y + IOU_EPS);
    tape.div(inter, both)
}

/// Which overlap term enters the structural loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapForm {
    /// One minus soft intersection-over-union; falls as overlap improves.
    #[default]
    Complement,
    /// The raw overlap share, kept switchable for side-by-side comparison
    /// even though it rewards moving away from the target.
    Share,
}

/// Which objective supervises the edge map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeLossMode {
    None,
    Bce,
    Balanced,
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub final_w: f64,
    pub global_w: f64,
    pub local_w: f64,
    pub edge_w: f64,
    /// Joint scale on the final head's structural term (its BCE and
    /// overlap parts together); the auxiliary heads always use scale 1.
    pub omega: f64,
    pub overlap: OverlapForm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            final_w: 1.0,
            global_w: 0.5,
            local_w: 0.5,
            edge_w: 1.0,
            omega: 1.0,
            overlap: OverlapForm::Complement,
        }
    }
}

pub struct LossNodes {
    pub total: NodeId,
    pub final_part: NodeId,
    pub global_part: NodeId,
    pub local_part: NodeId,
    pub edge_part: Option<NodeId>,
}

/// Assemble the training objective over a forward pass: cross entropy plus
/// an overlap term on the final map and on each auxiliary map (the final
/// one scaled by omega), and an optional edge objective against the mask's
/// boundary ring.
pub fn composite_loss<T: Scalar>(
    tape: &mut Tape<T>,
    fwd: &Forward,
    target_host: &TensorData<T>,
    edge_mode: EdgeLossMode,
    weights: &LossWeights,
) -> LossNodes {
    let target = tape.constant(target_host.clone());

    let structural = |tape: &mut Tape<T>, logits: NodeId, scale: f64| {
        let b = bce(tape, logits, target);
        let i = match weights.overlap {
            OverlapForm::Complement => soft_iou(tape, logits, target, target_host),
            OverlapForm::Share => soft_overlap_share(tape, logits, target, target_host),
        };
        let s = tape.add(b, i);
        tape.scale(s, scale)
    };

    let final_part = structural(tape, fwd.final_logits, weights.omega);
    let global_part = structural(tape, fwd.global_logits, 1.0);
    let local_part = structural(tape, fwd.local_logits, 1.0);

    let edge_part = match (edge_mode, fwd.edge_logits) {
        (EdgeLossMode::None, _) | (_, None) => None,
        (mode, Some(edge_logits)) => {
            let edge_host = edge_from_mask(target_host);
            let edge_target = tape.constant(edge_host.clone());
            Some(match mode {
                EdgeLossMode::Bce => bce(tape, edge_logits, edge_target),
                EdgeLossMode::Balanced => {
                    balanced_bce(tape, edge_logits, edge_target, &edge_host)
                }
                EdgeLossMode::None => unreachable!(),
            })
        }
    };

    let mut total = tape.scale(final_part, weights.final_w);
    let g = tape.scale(global_part, weights.global_w);
    total = tape.add(total, g);
    let l = tape.scale(local_part, weights.local_w);
    total = tape.add(total, l);
    if let Some(e) = edge_part {
        let e = tape.scale(e, weights.edge_w);
        total = tape.add(total, e);
    }

    LossNodes { total, final_part, global_part, local_part, edge_part }
}
