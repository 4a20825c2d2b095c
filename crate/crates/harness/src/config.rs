//! Model configuration files: flat `key = value` lines, `#` comments,
//! applied as overrides on top of a preset. Unknown keys are errors, not
//! warnings, so a typo cannot silently train the wrong network.

use std::path::Path;

use anyhow::{bail, Context, Result};
use crackseg_model::{ModelConfig, Stripe};

pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_model_config(&text).with_context(|| format!("in config {}", path.display()))
}

pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::toy();
    // the preset must come first so later overrides land on top of it
    let mut seen_other_key = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key = value, got {raw:?}", lineno + 1);
        };
        let (key, value) = (key.trim(), value.trim());
        let parse = |what: &str| -> Result<usize> {
            value.parse::<usize>().with_context(|| {
                format!("line {}: {what} wants an integer, got {value:?}", lineno + 1)
            })
        };
        match key {
            "preset" => {
                if seen_other_key {
                    bail!("line {}: preset must come before other keys", lineno + 1);
                }
                cfg = match value {
                    "toy" => ModelConfig::toy(),
                    "full" => ModelConfig::full(),
                    other => bail!("line {}: unknown preset {other:?}", lineno + 1),
                };
                continue;
            }
            "in_channels" => cfg.in_channels = parse("in_channels")?,
            "base_channels" => cfg.base_channels = parse("base_channels")?,
            "mlp_ratio" => cfg.mlp_ratio = parse("mlp_ratio")?,
            "fuse_channels" => cfg.fuse_channels = parse("fuse_channels")?,
            "trunk_channels" => cfg.trunk_channels = parse("trunk_channels")?,
            "se_reduction" => cfg.se_reduction = parse("se_reduction")?,
            "depths" => cfg.depths = four(value, lineno)?,
            "heads" => cfg.heads = four(value, lineno)?,
            "local_channels" => cfg.local_channels = four(value, lineno)?,
            "stripes" => cfg.stripes = stripes(value, lineno)?,
            "gf_filter" => cfg.gf_filter = flag(value, lineno)?,
            "lf_filter" => cfg.lf_filter = flag(value, lineno)?,
            "corr_fuse" => cfg.corr_fuse = flag(value, lineno)?,
            "decm" => cfg.decm = flag(value, lineno)?,
            other => bail!("line {}: unknown key {other:?}", lineno + 1),
        }
        seen_other_key = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn four(value: &str, lineno: usize) -> Result<[usize; 4]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("line {}: expected four integers, got {value:?}", lineno + 1))?;
    let arr: [usize; 4] = parts
        .try_into()
        .map_err(|_| anyhow::anyhow!("line {}: expected exactly four values", lineno + 1))?;
    Ok(arr)
}

fn stripes(value: &str, lineno: usize) -> Result<[Stripe; 4]> {
    let parts: Vec<Stripe> = value
        .split(',')
        .map(|p| {
            let p = p.trim();
            if p.eq_ignore_ascii_case("full") {
                Ok(Stripe::Full)
            } else {
                p.parse::<usize>()
                    .map(Stripe::Fixed)
                    .with_context(|| format!("line {}: bad stripe {p:?}", lineno + 1))
            }
        })
        .collect::<Result<_>>()?;
    let arr: [Stripe; 4] = parts
        .try_into()
        .map_err(|_| anyhow::anyhow!("line {}: expected exactly four stripes", lineno + 1))?;
    Ok(arr)
}

fn flag(value: &str, lineno: usize) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        other => bail!("line {}: expected true/false, got {other:?}", lineno + 1),
    }
}
