//! On-disk dataset layout: `root/images/*.png` with a same-stem mask under
//! `root/masks/`. Images load as RGB in [0,1]; masks binarize at half
//! intensity. Sizes off the 32-pixel ladder are reflect-padded on the
//! bottom/right at load time and predictions are cropped back.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crackseg_core::tensor::TensorData;
use crackseg_model::ModelConfig;

const INPUT_MULTIPLE: usize = ModelConfig::INPUT_MULTIPLE;

pub struct Sample {
    pub name: String,
    /// [3, H, W] padded to the input ladder.
    pub image: TensorData<f32>,
    /// [1, H, W] padded alongside the image.
    pub mask: TensorData<f32>,
    pub orig_h: usize,
    pub orig_w: usize,
}

impl Sample {
    /// The image as a batch of one.
    pub fn image_batch(&self) -> TensorData<f32> {
        let s = self.image.shape();
        TensorData::new(vec![1, s[0], s[1], s[2]], self.image.data().to_vec())
    }

    /// The mask as a batch of one.
    pub fn mask_batch(&self) -> TensorData<f32> {
        let s = self.mask.shape();
        TensorData::new(vec![1, s[0], s[1], s[2]], self.mask.data().to_vec())
    }
}

fn round_up(n: usize, mult: usize) -> usize {
    n.div_ceil(mult) * mult
}

/// Mirror index about the edges without repeating them, folding any
/// distance back into [0, n).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = (i as i64).rem_euclid(period);
    if m < n as i64 {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Pad planes of [c, h, w] to [c, th, tw] by mirroring rows/columns.
fn reflect_pad(data: &[f32], c: usize, h: usize, w: usize, th: usize, tw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; c * th * tw];
    for ch in 0..c {
        let src = &data[ch * h * w..][..h * w];
        let dst = &mut out[ch * th * tw..][..th * tw];
        for y in 0..th {
            let sy = reflect(y, h);
            for x in 0..tw {
                dst[y * tw + x] = src[sy * w + reflect(x, w)];
            }
        }
    }
    out
}

pub fn load_image(path: &Path) -> Result<(TensorData<f32>, usize, usize)> {
    let img = image::open(path).with_context(|| format!("opening {}", path.display()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                data[c * h * w + y * w + x] = px.0[c] as f32 / 255.0;
            }
        }
    }
    let (th, tw) = (round_up(h, INPUT_MULTIPLE), round_up(w, INPUT_MULTIPLE));
    let padded = if (th, tw) == (h, w) { data } else { reflect_pad(&data, 3, h, w, th, tw) };
    Ok((TensorData::new(vec![3, th, tw], padded), h, w))
}

pub fn load_mask(path: &Path, orig_h: usize, orig_w: usize) -> Result<TensorData<f32>> {
    let img = image::open(path).with_context(|| format!("opening {}", path.display()))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (h, w) != (orig_h, orig_w) {
        bail!("mask is {w}x{h} but its image is {orig_w}x{orig_h}");
    }
    let mut data = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = if img.get_pixel(x as u32, y as u32).0[0] >= 128 { 1.0 } else { 0.0 };
        }
    }
    let (th, tw) = (round_up(h, INPUT_MULTIPLE), round_up(w, INPUT_MULTIPLE));
    let padded = if (th, tw) == (h, w) { data } else { reflect_pad(&data, 1, h, w, th, tw) };
    Ok(TensorData::new(vec![1, th, tw], padded))
}

/// Load every image/mask pair under `root`, sorted by stem.
pub fn load_dir(root: &Path) -> Result<Vec<Sample>> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    if !images_dir.is_dir() {
        bail!("no images/ directory under {}", root.display());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&images_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .png images under {}", images_dir.display());
    }
    let mut samples = Vec::with_capacity(paths.len());
    for path in paths {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .map(str::to_string)
            .context("non-utf8 file name")?;
        let mask_path = masks_dir.join(&name);
        if !mask_path.is_file() {
            bail!("image {name} has no mask at {}", mask_path.display());
        }
        let (image, orig_h, orig_w) = load_image(&path)?;
        let mask = load_mask(&mask_path, orig_h, orig_w)?;
        samples.push(Sample { name, image, mask, orig_h, orig_w });
    }
    Ok(samples)
}

/// Cut the padding back off a full-resolution map [1, 1, H, W].
pub fn crop_logits(logits: &[f32], padded_w: usize, orig_h: usize, orig_w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(orig_h * orig_w);
    for y in 0..orig_h {
        out.extend_from_slice(&logits[y * padded_w..][..orig_w]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn reflect_folds_like_a_mirror() {
        // n = 4: 0 1 2 3 | 2 1 0 1 2 3 ...
        let got: Vec<usize> = (0..9).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn round_trip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        synth::write_dataset(dir.path(), 2, 32, 5).unwrap();
        let samples = load_dir(dir.path()).unwrap();
        assert_eq!(samples.len(), 2);
        for s in &samples {
            assert_eq!(s.image.shape(), &[3, 32, 32]);
            assert_eq!(s.mask.shape(), &[1, 32, 32]);
            assert!(s.mask.data().iter().all(|v| *v == 0.0 || *v == 1.0));
            assert!(s.mask.data().iter().any(|v| *v == 1.0));
        }
    }

    #[test]
    fn odd_sizes_pad_up_and_crop_back() {
        let dir = tempfile::tempdir().unwrap();
        synth::write_dataset(dir.path(), 1, 50, 6).unwrap();
        let samples = load_dir(dir.path()).unwrap();
        let s = &samples[0];
        assert_eq!((s.orig_h, s.orig_w), (50, 50));
        assert_eq!(s.image.shape(), &[3, 64, 64]);
        // padded band must mirror the interior rather than go black
        let d = s.image.data();
        let tw = 64usize;
        for y in 0..50 {
            // column 50 mirrors column 48 (reflection skips the edge itself)
            assert_eq!(d[y * tw + 50], d[y * tw + 48]);
        }
        let logits: Vec<f32> = (0..64 * 64).map(|i| i as f32).collect();
        let cropped = crop_logits(&logits, 64, 50, 50);
        assert_eq!(cropped.len(), 50 * 50);
        assert_eq!(cropped[0], 0.0);
        assert_eq!(cropped[50 * 50 - 1], (49 * 64 + 49) as f32);
    }

    #[test]
    fn missing_mask_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        synth::write_dataset(dir.path(), 1, 32, 7).unwrap();
        std::fs::remove_file(dir.path().join("masks/synth_0000.png")).unwrap();
        assert!(load_dir(dir.path()).is_err());
    }
}
