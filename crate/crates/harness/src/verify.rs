//! The `gradcheck` subcommand: run the finite-difference suites and print
//! one line per check. Op-level graphs probe every coordinate; block- and
//! model-level runs sample coordinates (see the model crate's suite).

use anyhow::{bail, Result};
use crackseg_core::gradcheck::{check_gradients, FdOptions};
use crackseg_core::tensor::TensorData;
use crackseg_core::{NodeId, PadMode, Tape};
use crackseg_model::gradsuite::{check_blocks, check_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> TensorData<f64> {
    let n: usize = shape.iter().product();
    TensorData::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Weighted scalar collapse so that misrouted gradients cannot cancel.
fn readout(tape: &mut Tape<f64>, x: NodeId) -> NodeId {
    let shape = tape.shape(x).to_vec();
    let n = tape.numel(x);
    let w: Vec<f64> = (0..n as u64)
        .map(|i| ((i.wrapping_mul(0x9e37_79b9_7f4a_7c15)).rotate_left(17) % 2000) as f64 / 1000.0 - 0.9)
        .collect();
    let wn = tape.constant(TensorData::new(shape, w));
    let p = tape.mul(x, wn);
    tape.sum_all(p)
}

fn run_ops(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = FdOptions::default();

    type Build = Box<dyn Fn(&mut Tape<f64>, &[NodeId]) -> NodeId>;
    let cases: Vec<(&str, Vec<TensorData<f64>>, Build)> = vec![
        (
            "conv2d stride 2 grouped",
            vec![tensor(&mut rng, &[1, 4, 5, 5], -0.9, 0.9), tensor(&mut rng, &[6, 2, 3, 3], -0.5, 0.5), tensor(&mut rng, &[6], -0.2, 0.2)],
            Box::new(|tape, xs| {
                let p = tape.pad2d(xs[0], 2, 0, 2, 0, PadMode::Replicate);
                let y = tape.conv2d(p, xs[1], Some(xs[2]), 2, 0, 2);
                readout(tape, y)
            }),
        ),
        (
            "softmax attention core",
            vec![tensor(&mut rng, &[2, 3, 4], -0.9, 0.9), tensor(&mut rng, &[2, 3, 4], -0.9, 0.9), tensor(&mut rng, &[2, 3, 4], -0.9, 0.9)],
            Box::new(|tape, xs| {
                let kt = tape.permute(xs[1], &[0, 2, 1]);
                let scores = tape.bmm(xs[0], kt);
                let probs = tape.softmax(scores, 2);
                let ctx = tape.bmm(probs, xs[2]);
                readout(tape, ctx)
            }),
        ),
        (
            "layer norm",
            vec![tensor(&mut rng, &[2, 5, 6], -2.0, 2.0), tensor(&mut rng, &[6], 0.5, 1.5), tensor(&mut rng, &[6], -0.3, 0.3)],
            Box::new(|tape, xs| {
                let y = tape.layer_norm(xs[0], xs[1], xs[2]);
                readout(tape, y)
            }),
        ),
        (
            "grid sample",
            vec![tensor(&mut rng, &[1, 2, 4, 4], -0.9, 0.9), tensor(&mut rng, &[1, 2, 4, 4], 0.2, 0.45)],
            Box::new(|tape, xs| {
                let y = tape.grid_sample(xs[0], xs[1]);
                readout(tape, y)
            }),
        ),
        (
            "bilinear resize",
            vec![tensor(&mut rng, &[1, 2, 3, 3], -0.9, 0.9)],
            Box::new(|tape, xs| {
                let y = tape.bilinear_resize(xs[0], 5, 7);
                readout(tape, y)
            }),
        ),
        (
            "pooling pair",
            vec![tensor(&mut rng, &[1, 2, 4, 4], -0.9, 0.9)],
            Box::new(|tape, xs| {
                let a = tape.avg_pool2d(xs[0], 2, 2);
                let m = tape.max_pool2d(xs[0], 2, 2);
                let s = tape.add(a, m);
                readout(tape, s)
            }),
        ),
    ];

    for (name, inputs, build) in cases {
        match check_gradients(&inputs, &opts, build.as_ref()) {
            Ok(err) => println!("ok   op  {name} (worst rel err {err:.2e})"),
            Err(failure) => bail!("op {name}: {failure}"),
        }
    }
    Ok(())
}

fn run_blocks(seed: u64) -> Result<()> {
    match check_blocks(seed) {
        Ok(reports) => {
            for r in reports {
                println!("ok   blk {} (worst rel err {:.2e})", r.name, r.max_rel_err);
            }
            Ok(())
        }
        Err(e) => bail!("{e}"),
    }
}

fn run_model_scope(seed: u64) -> Result<()> {
    match check_model(seed) {
        Ok(r) => {
            println!("ok   net {} (worst rel err {:.2e})", r.name, r.max_rel_err);
            Ok(())
        }
        Err(e) => bail!("{e}"),
    }
}

pub fn run(scope: &str, seed: u64) -> Result<()> {
    match scope {
        "ops" => run_ops(seed),
        "blocks" => run_blocks(seed),
        "model" => run_model_scope(seed),
        "all" => {
            run_ops(seed)?;
            run_blocks(seed)?;
            run_model_scope(seed)
        }
        other => bail!("unknown scope {other:?} (expected ops, blocks, model, or all)"),
    }
}
