//! The training loop: one image per step, composite loss, Adam updates,
//! a CSV loss log, and a checkpoint per epoch. Every source of order or
//! randomness is keyed off the seed, so a run is a pure function of
//! (config, data, options) and can be reproduced or resumed byte for byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use crackseg_core::{ParamStore, Session};
use crackseg_model::{composite_loss, EdgeLossMode, LossWeights, Model, ModelConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{Adam, AdamConfig};
use crate::checkpoint;
use crate::dataset::Sample;

pub struct TrainOpts {
    pub epochs: u64,
    pub lr: f64,
    pub seed: u64,
    pub edge_mode: EdgeLossMode,
    pub weights: LossWeights,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    /// Stop after this many optimizer steps regardless of epochs.
    pub max_steps: Option<u64>,
    /// Print a progress line per epoch.
    pub quiet: bool,
}

pub struct TrainReport {
    pub steps: u64,
    pub first_total: f64,
    pub last_total: f64,
    pub log_path: PathBuf,
    pub final_checkpoint: PathBuf,
}

/// Order of samples for one epoch: a seed-keyed shuffle that depends only
/// on (seed, epoch), never on the path taken to reach that epoch.
fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let key = seed ^ (epoch + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
    order
}

pub fn train(cfg: &ModelConfig, data: &[Sample], opts: &TrainOpts) -> Result<TrainReport> {
    if data.is_empty() {
        bail!("training set is empty");
    }
    std::fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("creating {}", opts.out_dir.display()))?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = ParamStore::<f32>::new();
    let model = Model::build(cfg, &mut store, &mut init_rng);
    let mut adam = Adam::new(AdamConfig { lr: opts.lr, ..Default::default() }, &store);

    let mut epoch_start = 0;
    if let Some(ckpt) = &opts.resume {
        epoch_start = checkpoint::load(ckpt, cfg, &mut store, Some(&mut adam))
            .with_context(|| format!("resuming from {}", ckpt.display()))?;
        if !opts.quiet {
            println!("resumed from {} at epoch {epoch_start}", ckpt.display());
        }
    }

    let log_path = opts.out_dir.join("train_log.csv");
    let mut log = BufWriter::new(File::create(&log_path)?);
    writeln!(log, "step,L_all,L_final,L_global,L_local,L_edge")?;

    let weights = opts.weights.clone();
    let mut first_total = f64::NAN;
    let mut last_total = f64::NAN;

    'epochs: for epoch in epoch_start..opts.epochs {
        for &idx in &epoch_order(data.len(), opts.seed, epoch) {
            let sample = &data[idx];
            let mask = sample.mask_batch();
            let mut sess = Session::new(&store);
            let x = sess.constant(sample.image_batch());
            let fwd = model.forward(&mut sess, x);
            let losses = composite_loss(&mut sess.tape, &fwd, &mask, opts.edge_mode, &weights);

            let total = sess.tape.data(losses.total)[0] as f64;
            if !total.is_finite() {
                bail!("loss went non-finite at step {} on {}", adam.step_count() + 1, sample.name);
            }
            let part = |sess: &Session<'_, f32>, n| sess.tape.data(n)[0] as f64;
            let l_final = part(&sess, losses.final_part);
            let l_global = part(&sess, losses.global_part);
            let l_local = part(&sess, losses.local_part);
            let l_edge = losses.edge_part.map(|n| part(&sess, n));

            sess.backward(losses.total).expect("loss is a scalar");
            let grads: Vec<Option<Vec<f32>>> =
                store.ids().map(|id| sess.grad(id).map(<[f32]>::to_vec)).collect();
            drop(sess);
            adam.step(&mut store, &grads);

            if first_total.is_nan() {
                first_total = total;
            }
            last_total = total;
            let edge_cell = l_edge.map(|v| format!("{v:.6e}")).unwrap_or_default();
            writeln!(
                log,
                "{},{:.6e},{:.6e},{:.6e},{:.6e},{}",
                adam.step_count(),
                total,
                l_final,
                l_global,
                l_local,
                edge_cell
            )?;

            if opts.max_steps.is_some_and(|cap| adam.step_count() >= cap) {
                break 'epochs;
            }
        }
        let ckpt = opts.out_dir.join(format!("ckpt_{:04}.bin", epoch + 1));
        checkpoint::save(&ckpt, cfg, &store, &adam, epoch + 1)?;
        if !opts.quiet {
            println!(
                "epoch {}/{}: {} steps, last L_all {:.4}",
                epoch + 1,
                opts.epochs,
                adam.step_count(),
                last_total
            );
        }
    }

    let final_checkpoint = opts.out_dir.join("ckpt_final.bin");
    checkpoint::save(&final_checkpoint, cfg, &store, &adam, opts.epochs.max(epoch_start))?;
    log.flush()?;

    Ok(TrainReport {
        steps: adam.step_count(),
        first_total,
        last_total,
        log_path,
        final_checkpoint,
    })
}
