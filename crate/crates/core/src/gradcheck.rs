//! Central finite-difference verification of the backward pass.
//!
//! Two drivers cover the two ways graphs get built here: [`check_gradients`]
//! perturbs free-standing input tensors (op-level tests), while
//! [`check_store_gradients`] perturbs entries of a [`ParamStore`]
//! (block- and whole-model tests, where exhaustive probing is too slow and
//! coordinates are sampled instead).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamStore, Session};
use crate::tape::{NodeId, Tape};
use crate::tensor::TensorData;

/// Relative disagreement between an analytic and a numeric derivative,
/// guarded so that a pair of near-zero values compares as equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + 1e-8)
}

#[derive(Debug, Clone)]
pub struct FdOptions {
    /// Central-difference step. When a probe disagrees with the analytic
    /// value and the two one-sided slopes also disagree with each other,
    /// the step straddles a kink (ReLU boundary, bilinear corner) and the
    /// probe is retried at `eps / 100` and `eps / 10000` before judging.
    pub eps: f64,
    /// Maximum accepted [`rel_err`].
    pub tol: f64,
    /// Absolute disagreement below this always passes. Central differences
    /// bottom out at roundoff of order `machine eps * |f| / eps`, so a
    /// derivative that is analytically zero (e.g. a shift-invariant bias)
    /// reads as noise at that scale and needs a floor, not a ratio.
    pub abs_tol: f64,
    /// Probe at most this many coordinates per tensor (`None` = all).
    pub max_coords: Option<usize>,
    /// Seed for coordinate sampling when `max_coords` kicks in.
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self { eps: 1e-6, tol: 1e-5, abs_tol: 0.0, max_coords: None, seed: 0 }
    }
}

/// One coordinate whose derivative disagreed.
#[derive(Debug, Clone)]
pub struct FdFailure {
    /// Input position (op driver) or parameter name (store driver).
    pub input: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl std::fmt::Display for FdFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gradient mismatch at {}[{}]: analytic {:.6e}, finite-diff {:.6e}, rel err {:.3e}",
            self.input, self.coord, self.analytic, self.numeric, self.rel_err
        )
    }
}

enum CoordVerdict {
    /// Agreed; the relative error goes into the running maximum.
    Pass(f64),
    /// Disagreement below the absolute floor; not counted.
    Negligible,
    Fail { numeric: f64, err: f64 },
}

/// Judge one coordinate. `eval_at` evaluates the graph with the coordinate
/// displaced by the given delta; `f0` is the undisplaced value. A genuinely
/// wrong analytic derivative disagrees with the central difference at every
/// step size, so shrinking on a detected kink straddle loses no power.
fn probe_coord(
    f0: f64,
    analytic: f64,
    opts: &FdOptions,
    eval_at: &mut dyn FnMut(f64) -> f64,
) -> CoordVerdict {
    let mut eps = opts.eps;
    for level in 0..3 {
        let up = eval_at(eps);
        let down = eval_at(-eps);
        let numeric = (up - down) / (2.0 * eps);
        if (analytic - numeric).abs() <= opts.abs_tol {
            return CoordVerdict::Negligible;
        }
        let err = rel_err(analytic, numeric);
        if err <= opts.tol {
            return CoordVerdict::Pass(err);
        }
        // Smooth functions have equal one-sided slopes up to O(eps)
        // curvature; a gross spread means the step crossed a kink and the
        // central difference says nothing about the point itself.
        let right = (up - f0) / eps;
        let left = (f0 - down) / eps;
        let spread = (right - left).abs();
        let scale = right.abs().max(left.abs()).max(1e-3);
        if level < 2 && spread > 0.1 * scale {
            eps /= 100.0;
            continue;
        }
        return CoordVerdict::Fail { numeric, err };
    }
    unreachable!("probe levels exhausted without a verdict");
}

fn coords_to_probe(numel: usize, opts: &FdOptions, salt: u64) -> Vec<usize> {
    match opts.max_coords {
        Some(k) if k < numel => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9e37_79b9));
            let mut picked = sample(&mut rng, numel, k).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..numel).collect(),
    }
}

/// Check `build`'s gradients with respect to every tensor in `inputs`.
/// `build` receives leaves in the given order and must return a scalar.
/// Returns the largest relative error seen, or the first offending
/// coordinate.
pub fn check_gradients<F>(
    inputs: &[TensorData<f64>],
    opts: &FdOptions,
    build: F,
) -> Result<f64, FdFailure>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
{
    let eval = |tensors: &[TensorData<f64>]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &leaves);
        assert!(tape.numel(loss) == 1, "finite-diff target must be scalar");
        tape.data(loss)[0]
    };

    let mut tape = Tape::new();
    let leaves: Vec<NodeId> =
        inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &leaves);
    tape.backward(loss).expect("finite-diff target must be scalar");
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(&leaf, t)| tape.grad(leaf).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut probe = inputs.to_vec();
    let f0 = eval(&probe);
    let mut max_err = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for coord in coords_to_probe(t.numel(), opts, i as u64) {
            let orig = probe[i].data()[coord];
            let a = analytic[i][coord];
            let mut eval_at = |delta: f64| {
                probe[i].data_mut()[coord] = orig + delta;
                let v = eval(&probe);
                probe[i].data_mut()[coord] = orig;
                v
            };
            match probe_coord(f0, a, opts, &mut eval_at) {
                CoordVerdict::Pass(err) => max_err = max_err.max(err),
                CoordVerdict::Negligible => {}
                CoordVerdict::Fail { numeric, err } => {
                    return Err(FdFailure {
                        input: format!("input{i}"),
                        coord,
                        analytic: a,
                        numeric,
                        rel_err: err,
                    });
                }
            }
        }
    }
    Ok(max_err)
}

/// Same as [`check_gradients`] but the differentiated quantities live in a
/// [`ParamStore`]; `build` opens the graph on a fresh session each call.
pub fn check_store_gradients<F>(
    store: &mut ParamStore<f64>,
    opts: &FdOptions,
    build: F,
) -> Result<f64, FdFailure>
where
    F: Fn(&mut Session<'_, f64>) -> NodeId,
{
    let analytic: Vec<Vec<f64>> = {
        let mut sess = Session::new(store);
        let loss = build(&mut sess);
        sess.backward(loss).expect("finite-diff target must be scalar");
        store
            .ids()
            .map(|id| {
                sess.grad(id)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; store.value(id).numel()])
            })
            .collect()
    };

    let ids: Vec<_> = store.ids().collect();
    let f0 = eval_store(store, &build);
    let mut max_err = 0.0f64;
    for (i, &id) in ids.iter().enumerate() {
        let numel = store.value(id).numel();
        for coord in coords_to_probe(numel, opts, i as u64) {
            let orig = store.value(id).data()[coord];
            let a = analytic[i][coord];
            let mut eval_at = |delta: f64| {
                store.value_mut(id).data_mut()[coord] = orig + delta;
                let v = eval_store(store, &build);
                store.value_mut(id).data_mut()[coord] = orig;
                v
            };
            match probe_coord(f0, a, opts, &mut eval_at) {
                CoordVerdict::Pass(err) => max_err = max_err.max(err),
                CoordVerdict::Negligible => {}
                CoordVerdict::Fail { numeric, err } => {
                    return Err(FdFailure {
                        input: store.name(id).to_string(),
                        coord,
                        analytic: a,
                        numeric,
                        rel_err: err,
                    });
                }
            }
        }
    }
    Ok(max_err)
}

fn eval_store<F>(store: &ParamStore<f64>, build: &F) -> f64
where
    F: Fn(&mut Session<'_, f64>) -> NodeId,
{
    let mut sess = Session::new(store);
    let loss = build(&mut sess);
    assert!(sess.tape.numel(loss) == 1, "finite-diff target must be scalar");
    sess.tape.data(loss)[0]
}
