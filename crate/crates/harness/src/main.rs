use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crackseg_core::ParamStore;
use crackseg_harness::{ablate, checkpoint, config, dataset, evaluate, synth, train, verify};
use crackseg_model::{EdgeLossMode, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "crackseg", about = "Train, evaluate, and inspect the crack segmentation network")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgeLossArg {
    None,
    Bce,
    Balanced,
}

impl From<EdgeLossArg> for EdgeLossMode {
    fn from(v: EdgeLossArg) -> Self {
        match v {
            EdgeLossArg::None => EdgeLossMode::None,
            EdgeLossArg::Bce => EdgeLossMode::Bce,
            EdgeLossArg::Balanced => EdgeLossMode::Balanced,
        }
    }
}

/// How the model is configured. A config file wins over the preset; the
/// switch flags then apply on top of either.
#[derive(Args)]
struct ModelArgs {
    /// Config file of key = value overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in starting point when no config file is given.
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    /// Drop the channel gate on the transformer branch of each fusion level.
    #[arg(long)]
    no_gf_filter: bool,
    /// Drop the spatial gate on the convolutional branch of each fusion level.
    #[arg(long)]
    no_lf_filter: bool,
    /// Fuse by plain concatenation instead of correlation weighting.
    #[arg(long)]
    no_corr_fuse: bool,
    /// Classify straight off the trunk without body/edge decoupling.
    #[arg(long)]
    no_decm: bool,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(path) => config::load_model_config(path)?,
            None => match self.preset {
                Preset::Toy => ModelConfig::toy(),
                Preset::Full => ModelConfig::full(),
            },
        };
        if self.no_gf_filter {
            cfg.gf_filter = false;
        }
        if self.no_lf_filter {
            cfg.lf_filter = false;
        }
        if self.no_corr_fuse {
            cfg.corr_fuse = false;
        }
        if self.no_decm {
            cfg.decm = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic crack dataset (images/ + masks/ PNG pairs).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 10)]
        epochs: u64,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "balanced")]
        edge_loss: EdgeLossArg,
        /// Joint scale on the final head's structural loss.
        #[arg(long, default_value_t = crackseg_model::LossWeights::default().omega)]
        omega: f64,
        /// Weight of the edge supervision term.
        #[arg(long, default_value_t = crackseg_model::LossWeights::default().edge_w)]
        w_edge: f64,
        /// Weight of the auxiliary logit heads (transformer and conv branches).
        #[arg(long, default_value_t = crackseg_model::LossWeights::default().global_w)]
        w_aux: f64,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Score a checkpoint over a dataset; writes eval.csv.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Predict one image; writes probability map and overlay PNGs.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train and score every component variant; writes ablation.csv.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        /// Validation split; defaults to the training dataset.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 2)]
        epochs: u64,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        /// ops, blocks, model, or all.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_model(
    args: &ModelArgs,
    ckpt: &std::path::Path,
) -> Result<(ModelConfig, ParamStore<f32>, Model)> {
    let cfg = args.resolve()?;
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::build(&cfg, &mut store, &mut rng);
    checkpoint::load(ckpt, &cfg, &mut store, None)
        .with_context(|| format!("loading {}", ckpt.display()))?;
    Ok((cfg, store, model))
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Synth { out, count, size, seed } => {
            anyhow::ensure!(size % ModelConfig::INPUT_MULTIPLE == 0, "size must be a multiple of 32");
            synth::write_dataset(&out, count, size, seed)?;
            println!("wrote {count} scenes of {size}x{size} under {}", out.display());
        }
        Cmd::Train {
            dataset,
            out,
            model,
            epochs,
            lr,
            seed,
            edge_loss,
            omega,
            w_edge,
            w_aux,
            resume,
            max_steps,
        } => {
            let cfg = model.resolve()?;
            let data = dataset::load_dir(&dataset)?;
            let weights = crackseg_model::LossWeights {
                omega,
                edge_w: w_edge,
                global_w: w_aux,
                local_w: w_aux,
                ..Default::default()
            };
            let report = train::train(
                &cfg,
                &data,
                &train::TrainOpts {
                    epochs,
                    lr,
                    seed,
                    edge_mode: edge_loss.into(),
                    weights,
                    out_dir: out,
                    resume,
                    max_steps,
                    quiet: false,
                },
            )?;
            println!(
                "trained {} steps: L_all {:.4} -> {:.4}; log {}, checkpoint {}",
                report.steps,
                report.first_total,
                report.last_total,
                report.log_path.display(),
                report.final_checkpoint.display()
            );
        }
        Cmd::Eval { dataset, checkpoint: ckpt, out, model } => {
            let (_, store, net) = load_model(&model, &ckpt)?;
            let data = dataset::load_dir(&dataset)?;
            std::fs::create_dir_all(&out)?;
            let (rows, pooled) = evaluate::evaluate(&net, &store, &data);
            let csv = out.join("eval.csv");
            evaluate::write_eval_csv(&csv, &rows, &pooled)?;
            println!(
                "{} images: precision {:.4}, recall {:.4}, iou {:.4}, f1 {:.4} ({})",
                rows.len(),
                pooled.precision(),
                pooled.recall(),
                pooled.iou(),
                pooled.f1(),
                csv.display()
            );
        }
        Cmd::Infer { input, checkpoint: ckpt, out, model } => {
            let (_, store, net) = load_model(&model, &ckpt)?;
            let (image, orig_h, orig_w) = dataset::load_image(&input)?;
            let name = input
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("input.png")
                .to_string();
            let mask = crackseg_core::TensorData::zeros(&[1, image.shape()[1], image.shape()[2]]);
            let sample = dataset::Sample { name, image, mask, orig_h, orig_w };
            std::fs::create_dir_all(&out)?;
            let probs = evaluate::predict_probabilities(&net, &store, &sample);
            let (prob_path, overlay_path) = evaluate::write_prediction_images(&out, &sample, &probs)?;
            let positive = probs.iter().filter(|p| **p > 0.5).count();
            println!(
                "{} of {} pixels flagged; wrote {} and {}",
                positive,
                probs.len(),
                prob_path.display(),
                overlay_path.display()
            );
        }
        Cmd::Ablate { dataset, val, out, model, epochs, lr, seed } => {
            let cfg = model.resolve()?;
            let train_data = dataset::load_dir(&dataset)?;
            let val_data = match &val {
                Some(dir) => dataset::load_dir(dir)?,
                None => dataset::load_dir(&dataset)?,
            };
            std::fs::create_dir_all(&out)?;
            let rows = ablate::run_ablation(&cfg, &train_data, &val_data, epochs, lr, seed, &out)?;
            let csv = out.join("ablation.csv");
            ablate::write_ablation_csv(&csv, &rows)?;
            println!("wrote {}", csv.display());
        }
        Cmd::Gradcheck { scope, seed } => {
            verify::run(&scope, seed)?;
            println!("gradient checks passed");
        }
    }
    Ok(())
}
