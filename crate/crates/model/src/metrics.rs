//! Pixel-level evaluation. Counts accumulate across images so a whole
//! split is scored as one pool of pixels (micro averaging); a prediction
//! counts as positive when its logit clears zero, i.e. probability one half.

use crackseg_core::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add_logits<T: Scalar>(&mut self, logits: &[T], target: &[T]) {
        assert_eq!(logits.len(), target.len(), "shape mismatch: logits vs target");
        for (&z, &y) in logits.iter().zip(target) {
            let pred = z.to_f64() > 0.0;
            let pos = y.to_f64() > 0.5;
            match (pred, pos) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// True when neither the prediction nor the target has any positive
    /// pixel; the scores below treat that as a perfect match.
    fn both_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn precision(&self) -> f64 {
        let den = self.tp + self.fp;
        if den == 0 {
            return if self.both_empty() { 1.0 } else { 0.0 };
        }
        self.tp as f64 / den as f64
    }

    pub fn recall(&self) -> f64 {
        let den = self.tp + self.fn_;
        if den == 0 {
            return if self.both_empty() { 1.0 } else { 0.0 };
        }
        self.tp as f64 / den as f64
    }

    pub fn iou(&self) -> f64 {
        if self.both_empty() {
            return 1.0;
        }
        self.tp as f64 / (self.tp + self.fp + self.fn_) as f64
    }

    pub fn f1(&self) -> f64 {
        let iou = self.iou();
        2.0 * iou / (1.0 + iou)
    }
}
