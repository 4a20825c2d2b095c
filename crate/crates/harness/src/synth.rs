//! Synthetic crack scenes: noisy concrete-gray plates with dark meandering
//! fissures, plus exact masks. Everything is driven by the caller's RNG so
//! a seed fully determines the dataset.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use crackseg_core::tensor::TensorData;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// One rendered scene: RGB image in [0,1] as [3,S,S] and a {0,1} mask as
/// [1,S,S].
pub struct Scene {
    pub image: TensorData<f32>,
    pub mask: TensorData<f32>,
}

/// Largest fraction of crack pixels a scene is allowed to carry; stamping
/// stops once it is reached.
pub const MAX_POSITIVE_FRACTION: f64 = 0.2;

pub fn synth_scene<R: Rng>(rng: &mut R, size: usize) -> Scene {
    let s = size;
    // plate: mid-gray with per-pixel grain and a soft illumination ripple
    let (fx, fy) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut gray = vec![0.0f32; s * s];
    for y in 0..s {
        for x in 0..s {
            let ripple = 0.06
                * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / s as f64 + phase)
                    .sin();
            let grain = rng.gen_range(-0.07..0.07);
            gray[y * s + x] = (0.62 + ripple as f32 + grain).clamp(0.05, 0.95);
        }
    }

    let mut mask = vec![0.0f32; s * s];
    let mut positives = 0usize;
    let budget = ((s * s) as f64 * MAX_POSITIVE_FRACTION) as usize;
    let cracks = rng.gen_range(1..=3);
    for _ in 0..cracks {
        let mut x = rng.gen_range(0.0..s as f64);
        let mut y = rng.gen_range(0.0..s as f64);
        let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let radius = if rng.gen_bool(0.7) { 0i64 } else { 1 };
        let steps = (s as f64 * rng.gen_range(1.0..2.0)) as usize;
        for _ in 0..steps {
            if positives >= budget {
                break;
            }
            heading += rng.gen_range(-0.3..0.3);
            x += heading.cos();
            y += heading.sin();
            if x < 0.0 || y < 0.0 || x >= s as f64 || y >= s as f64 {
                break;
            }
            let (cx, cy) = (x as i64, y as i64);
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (px, py) = (cx + dx, cy + dy);
                    if px < 0 || py < 0 || px >= s as i64 || py >= s as i64 {
                        continue;
                    }
                    let i = py as usize * s + px as usize;
                    if mask[i] == 0.0 {
                        mask[i] = 1.0;
                        positives += 1;
                        gray[i] *= 0.3 + rng.gen_range(0.0..0.15);
                    }
                }
            }
        }
    }
    // a walk can leave the frame immediately; guarantee at least one crack
    if positives == 0 {
        let row = s / 2;
        for x in 0..s {
            let i = row * s + x;
            mask[i] = 1.0;
            gray[i] *= 0.35;
        }
    }

    // gray plate with a faint per-channel tint
    let mut image = vec![0.0f32; 3 * s * s];
    for c in 0..3 {
        let tint = rng.gen_range(-0.02..0.02f32);
        for i in 0..s * s {
            image[c * s * s + i] = (gray[i] + tint).clamp(0.0, 1.0);
        }
    }
    Scene {
        image: TensorData::new(vec![3, s, s], image),
        mask: TensorData::new(vec![1, s, s], mask),
    }
}

/// Render `count` scenes under `dir/images` and `dir/masks` as PNG pairs
/// with matching stems.
pub fn write_dataset(dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&masks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let scene = synth_scene(&mut rng, size);
        let name = format!("synth_{i:04}.png");
        save_rgb(&images.join(&name), &scene.image)
            .with_context(|| format!("writing image {name}"))?;
        save_mask(&masks.join(&name), &scene.mask)
            .with_context(|| format!("writing mask {name}"))?;
    }
    Ok(())
}

pub fn save_rgb(path: &Path, image: &TensorData<f32>) -> Result<()> {
    let shape = image.shape();
    anyhow::ensure!(shape.len() == 3 && shape[0] == 3, "image tensor must be [3,H,W]");
    let (h, w) = (shape[1], shape[2]);
    let data = image.data();
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |c: usize| (data[c * h * w + y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            out.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
        }
    }
    out.save(path)?;
    Ok(())
}

pub fn save_mask(path: &Path, mask: &TensorData<f32>) -> Result<()> {
    let shape = mask.shape();
    anyhow::ensure!(shape.len() == 3 && shape[0] == 1, "mask tensor must be [1,H,W]");
    let (h, w) = (shape[1], shape[2]);
    let data = mask.data();
    let mut out = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(x as u32, y as u32, image::Luma([if data[y * w + x] > 0.5 { 255 } else { 0 }]));
        }
    }
    out.save(path)?;
    Ok(())
}
