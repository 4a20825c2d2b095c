//! Finite-difference verification at block and whole-model granularity.
//!
//! Ops are checked exhaustively in the core crate; here the structured
//! blocks and the assembled network run against central differences with
//! sampled coordinates. Inputs are registered in the store alongside the
//! weights so they get probed too.

use crackseg_core::gradcheck::{check_store_gradients, FdFailure, FdOptions};
use crackseg_core::tensor::TensorData;
use crackseg_core::{NodeId, ParamStore, Session, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cofuse::CoFuseLevel;
use crate::config::{ModelConfig, Stripe};
use crate::decm::DecoupledHead;
use crate::global_stream::TBlock;
use crate::model::Model;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteError {
    pub name: String,
    pub failure: FdFailure,
}

impl std::fmt::Display for SuiteError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.name, self.failure)
    }
}

impl std::error::Error for SuiteError {}

/// Tolerances for composite graphs: long chains in f64 with sampled probes,
/// and an absolute floor above the finite-difference noise so that
/// analytically-zero derivatives (shift-invariant biases) pass.
fn block_opts(seed: u64, max_coords: usize) -> FdOptions {
    FdOptions { eps: 1e-6, tol: 1e-3, abs_tol: 1e-6, max_coords: Some(max_coords), seed }
}

fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> TensorData<f64> {
    let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(lo..hi)).collect();
    TensorData::new(shape.to_vec(), data)
}

/// Collapse any node to a scalar with fixed non-uniform weights, so that
/// index mix-ups in backward cannot cancel out of the probe.
fn readout<T: crackseg_core::Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let shape = tape.shape(x).to_vec();
    let n = tape.numel(x);
    let w: Vec<T> = (0..n as u64)
        .map(|i| {
            let h = (i.wrapping_mul(0x9e37_79b9_7f4a_7c15)).rotate_left(17) % 2000;
            T::from_f64(h as f64 / 1000.0 - 1.0 + 0.1)
        })
        .collect();
    let wn = tape.constant(TensorData::new(shape, w));
    let p = tape.mul(x, wn);
    tape.sum_all(p)
}

fn run_check<F>(
    name: &str,
    store: &mut ParamStore<f64>,
    opts: &FdOptions,
    build: F,
) -> Result<CheckReport, SuiteError>
where
    F: Fn(&mut Session<'_, f64>) -> NodeId,
{
    check_store_gradients(store, opts, build)
        .map(|max_rel_err| CheckReport { name: name.to_string(), max_rel_err })
        .map_err(|failure| SuiteError { name: name.to_string(), failure })
}

fn check_tblock(seed: u64, stripe: Stripe, name: &str) -> Result<CheckReport, SuiteError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (2, 4, 8);
    let mut store = ParamStore::<f64>::new();
    let block = TBlock::build(&mut store, &mut rng, "blk", c, 2, stripe, 2);
    let x_id = store.add("x", rand_tensor(&mut rng, &[1, h * w, c], -0.9, 0.9));
    run_check(name, &mut store, &block_opts(seed, 3), |sess| {
        let x = sess.param(x_id);
        let mut trace = Vec::new();
        let y = block.forward(sess, x, h, w, &mut trace);
        readout(&mut sess.tape, y)
    })
}

fn check_cofuse(seed: u64) -> Result<CheckReport, SuiteError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = ModelConfig::toy();
    cfg.fuse_channels = 8;
    cfg.se_reduction = 4;
    let mut store = ParamStore::<f64>::new();
    let level = CoFuseLevel::build(&mut store, &mut rng, "fuse", 8, 4, &cfg);
    let g_id = store.add("g", rand_tensor(&mut rng, &[1, 8, 2, 2], -0.9, 0.9));
    let l_id = store.add("l", rand_tensor(&mut rng, &[1, 4, 4, 4], -0.9, 0.9));
    run_check("fusion level", &mut store, &block_opts(seed, 3), |sess| {
        let g = sess.param(g_id);
        let l = sess.param(l_id);
        let out = level.forward(sess, g, l, 4, 4);
        readout(&mut sess.tape, out.fused)
    })
}

/// The displacement conv starts all-zero, which parks every sample on an
/// integer lattice point where bilinear weights have corners that central
/// differences straddle; move the bias to fractional offsets and the
/// weights off zero before probing.
fn nudge_flow_off_lattice(store: &mut ParamStore<f64>) {
    let flow_w = store.find("decm.flow.w").expect("flow conv weight");
    for (i, v) in store.value_mut(flow_w).data_mut().iter_mut().enumerate() {
        *v = ((i as f64 * 0.7311).sin()) * 0.005;
    }
    let flow_b = store.find("decm.flow.b").expect("flow conv bias");
    store.value_mut(flow_b).data_mut().copy_from_slice(&[0.31, -0.43]);
}

fn check_decm(seed: u64) -> Result<CheckReport, SuiteError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let head = DecoupledHead::build(&mut store, &mut rng, "decm", 8, 8);
    nudge_flow_off_lattice(&mut store);
    let trunk_id = store.add("trunk", rand_tensor(&mut rng, &[1, 8, 4, 4], -0.9, 0.9));
    let low_id = store.add("low", rand_tensor(&mut rng, &[1, 8, 4, 4], -0.9, 0.9));
    run_check("decoupling head", &mut store, &block_opts(seed, 3), |sess| {
        let trunk = sess.param(trunk_id);
        let low = sess.param(low_id);
        let out = head.forward(sess, trunk, low);
        readout(&mut sess.tape, out.combined)
    })
}

/// Check the structured blocks one by one. Returns per-block worst errors,
/// or the first coordinate that disagreed.
pub fn check_blocks(seed: u64) -> Result<Vec<CheckReport>, SuiteError> {
    Ok(vec![
        check_tblock(seed, Stripe::Fixed(1), "striped attention block")?,
        check_tblock(seed.wrapping_add(1), Stripe::Full, "full-window attention block")?,
        check_cofuse(seed.wrapping_add(2))?,
        check_decm(seed.wrapping_add(3))?,
    ])
}

/// Differentiate a weighted readout of every output head of the toy model
/// on a 32x32 input through all parameters, a few coordinates each.
pub fn check_model(seed: u64) -> Result<CheckReport, SuiteError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::toy();
    let mut store = ParamStore::<f64>::new();
    let model = Model::build(&cfg, &mut store, &mut rng);
    nudge_flow_off_lattice(&mut store);
    let x_id = store.add("input.x", rand_tensor(&mut rng, &[1, cfg.in_channels, 32, 32], -0.9, 0.9));
    let opts = block_opts(seed, 2);
    run_check("toy model", &mut store, &opts, |sess| {
        let x = sess.param(x_id);
        let fwd = model.forward(sess, x);
        let mut total = readout(&mut sess.tape, fwd.final_logits);
        let g = readout(&mut sess.tape, fwd.global_logits);
        let g = sess.tape.scale(g, 0.5);
        total = sess.tape.add(total, g);
        let l = readout(&mut sess.tape, fwd.local_logits);
        let l = sess.tape.scale(l, 0.25);
        total = sess.tape.add(total, l);
        if let (Some(b), Some(e)) = (fwd.body_logits, fwd.edge_logits) {
            let b = readout(&mut sess.tape, b);
            let b = sess.tape.scale(b, 0.125);
            total = sess.tape.add(total, b);
            let e = readout(&mut sess.tape, e);
            let e = sess.tape.scale(e, 0.125);
            total = sess.tape.add(total, e);
        }
        total
    })
}
