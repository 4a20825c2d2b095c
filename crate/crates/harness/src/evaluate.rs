//! Scoring a trained model over a dataset and rendering predictions.
//! Metrics are computed on the original (pre-padding) pixel extents.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Result;
use crackseg_core::{ParamStore, Session};
use crackseg_model::{Confusion, Model};

use crate::dataset::{crop_logits, Sample};

pub struct EvalRow {
    pub name: String,
    pub confusion: Confusion,
}

/// Per-image confusions plus the micro-averaged pool over all pixels.
pub fn evaluate(model: &Model, store: &ParamStore<f32>, data: &[Sample]) -> (Vec<EvalRow>, Confusion) {
    let mut rows = Vec::with_capacity(data.len());
    let mut pooled = Confusion::default();
    for sample in data {
        let mut sess = Session::new(store);
        let x = sess.constant(sample.image_batch());
        let fwd = model.forward(&mut sess, x);
        let padded_w = sample.image.shape()[2];
        let logits = crop_logits(sess.tape.data(fwd.final_logits), padded_w, sample.orig_h, sample.orig_w);
        let target = crop_logits(sample.mask.data(), padded_w, sample.orig_h, sample.orig_w);
        let mut c = Confusion::default();
        c.add_logits(&logits, &target);
        pooled.merge(&c);
        rows.push(EvalRow { name: sample.name.clone(), confusion: c });
    }
    (rows, pooled)
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow], pooled: &Confusion) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "image,precision,recall,iou,f1")?;
    for row in rows {
        let c = &row.confusion;
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            row.name,
            c.precision(),
            c.recall(),
            c.iou(),
            c.f1()
        )?;
    }
    writeln!(
        out,
        "ALL,{:.6},{:.6},{:.6},{:.6}",
        pooled.precision(),
        pooled.recall(),
        pooled.iou(),
        pooled.f1()
    )?;
    out.flush()?;
    Ok(())
}

/// Crack probability per original pixel, row-major.
pub fn predict_probabilities(model: &Model, store: &ParamStore<f32>, sample: &Sample) -> Vec<f32> {
    let mut sess = Session::new(store);
    let x = sess.constant(sample.image_batch());
    let fwd = model.forward(&mut sess, x);
    let padded_w = sample.image.shape()[2];
    let logits = crop_logits(sess.tape.data(fwd.final_logits), padded_w, sample.orig_h, sample.orig_w);
    logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect()
}

/// Write a grayscale probability map and a red-tinted overlay next to each
/// other under `out_dir`, named after the sample.
pub fn write_prediction_images(
    out_dir: &Path,
    sample: &Sample,
    probs: &[f32],
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let (h, w) = (sample.orig_h, sample.orig_w);
    let stem = Path::new(&sample.name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("prediction");

    let prob_path = out_dir.join(format!("{stem}_prob.png"));
    let mut gray = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            gray.put_pixel(x as u32, y as u32, image::Luma([(probs[y * w + x] * 255.0) as u8]));
        }
    }
    gray.save(&prob_path)?;

    let overlay_path = out_dir.join(format!("{stem}_overlay.png"));
    let padded_w = sample.image.shape()[2];
    let padded_hw = sample.image.shape()[1] * padded_w;
    let img = sample.image.data();
    let mut overlay = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let p = probs[y * w + x];
            let src = |c: usize| img[c * padded_hw + y * padded_w + x].clamp(0.0, 1.0);
            let blend = |c: usize, tint: f32| {
                let v = if p > 0.5 { src(c) * 0.4 + tint * 0.6 } else { src(c) };
                (v * 255.0) as u8
            };
            overlay.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([blend(0, 1.0), blend(1, 0.0), blend(2, 0.0)]),
            );
        }
    }
    overlay.save(&overlay_path)?;
    Ok((prob_path, overlay_path))
}
