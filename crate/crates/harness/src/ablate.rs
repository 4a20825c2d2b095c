//! Component ablations. Two families of variants: the fusion gates with
//! the decoupling head removed, and the head/edge-supervision choices with
//! fusion fully on. Every variant trains from the same seed on the same
//! data, so score differences trace back to the switched component.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Result;
use crackseg_core::ParamStore;
use crackseg_model::{Confusion, EdgeLossMode, LossWeights, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Sample;
use crate::evaluate::evaluate;
use crate::train::{train, TrainOpts};

pub struct Variant {
    pub table: &'static str,
    pub name: &'static str,
    pub cfg: ModelConfig,
    pub edge_mode: EdgeLossMode,
}

/// The ablation grid, derived from a base configuration. The fusion family
/// grows the plain two-stream concat one gate at a time; the head family
/// varies the decoupling head and its edge supervision.
pub fn variants(base: &ModelConfig) -> Vec<Variant> {
    let fusion = |name, gf: bool, lf: bool, corr: bool| {
        let mut cfg = base.clone();
        cfg.decm = false;
        cfg.gf_filter = gf;
        cfg.lf_filter = lf;
        cfg.corr_fuse = corr;
        Variant { table: "fusion", name, cfg, edge_mode: EdgeLossMode::None }
    };
    let head = |name, decm: bool, edge_mode| {
        let mut cfg = base.clone();
        cfg.decm = decm;
        Variant { table: "head", name, cfg, edge_mode }
    };

    vec![
        fusion("plain-concat", false, false, false),
        fusion("channel-gate-only", true, false, false),
        fusion("spatial-gate-only", false, true, false),
        fusion("correlation-only", false, false, true),
        fusion("both-gates", true, true, false),
        fusion("all-gates", true, true, true),
        head("trunk-only", false, EdgeLossMode::None),
        head("decoupled-no-edge-loss", true, EdgeLossMode::None),
        head("decoupled-edge-bce", true, EdgeLossMode::Bce),
        head("decoupled-edge-balanced", true, EdgeLossMode::Balanced),
    ]
}

pub struct AblationRow {
    pub table: &'static str,
    pub variant: &'static str,
    pub params: usize,
    /// Pooled confusion on the validation split; absent when epochs = 0
    /// (parameter audit only).
    pub confusion: Option<Confusion>,
}

/// Count parameters without training.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Model::build(cfg, &mut store, &mut rng);
    store.scalar_count()
}

/// Train and score each variant. `epochs = 0` skips training and only
/// audits parameter counts.
pub fn run_ablation(
    base: &ModelConfig,
    train_data: &[Sample],
    val_data: &[Sample],
    epochs: u64,
    lr: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for variant in variants(base) {
        let params = param_count(&variant.cfg);
        let confusion = if epochs == 0 {
            None
        } else {
            let sub = out_dir.join(format!("{}_{}", variant.table, variant.name));
            let report = train(
                &variant.cfg,
                train_data,
                &TrainOpts {
                    epochs,
                    lr,
                    seed,
                    edge_mode: variant.edge_mode,
                    weights: LossWeights::default(),
                    out_dir: sub.clone(),
                    resume: None,
                    max_steps: None,
                    quiet: true,
                },
            )?;
            let mut store = ParamStore::<f32>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = Model::build(&variant.cfg, &mut store, &mut rng);
            crate::checkpoint::load(&report.final_checkpoint, &variant.cfg, &mut store, None)?;
            let (_, pooled) = evaluate(&model, &store, val_data);
            Some(pooled)
        };
        println!(
            "ablation {}/{}: {} params{}",
            variant.table,
            variant.name,
            params,
            confusion.map(|c| format!(", f1 {:.4}", c.f1())).unwrap_or_default()
        );
        rows.push(AblationRow { table: variant.table, variant: variant.name, params, confusion });
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "table,variant,params,precision,recall,iou,f1")?;
    for row in rows {
        match &row.confusion {
            Some(c) => writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                row.table,
                row.variant,
                row.params,
                c.precision(),
                c.recall(),
                c.iou(),
                c.f1()
            )?,
            None => writeln!(out, "{},{},{},,,,", row.table, row.variant, row.params)?,
        }
    }
    out.flush()?;
    Ok(())
}
