//! Checkpoint files: weights plus optimizer moments plus a digest of the
//! architecture they belong to. The format is little-endian and written in
//! parameter registration order, so the same state always produces the
//! same bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use crackseg_core::ParamStore;
use crackseg_model::ModelConfig;
use sha2::{Digest, Sha256};

use crate::adam::Adam;

const MAGIC: &[u8; 4] = b"DFFM";
const VERSION: u32 = 1;

fn config_digest(cfg: &ModelConfig) -> [u8; 32] {
    Sha256::digest(cfg.canonical_string().as_bytes()).into()
}

pub fn save(
    path: &Path,
    cfg: &ModelConfig,
    store: &ParamStore<f32>,
    adam: &Adam,
    epoch: u64,
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&config_digest(cfg))?;
    w.write_all(&epoch.to_le_bytes())?;
    w.write_all(&adam.step_count().to_le_bytes())?;
    let ids: Vec<_> = store.ids().collect();
    w.write_all(&(ids.len() as u32).to_le_bytes())?;
    for &id in &ids {
        let name = store.name(id).as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let t = store.value(id);
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let (m, v) = adam.moments();
    for (mi, vi) in m.iter().zip(v) {
        for x in mi {
            w.write_all(&x.to_le_bytes())?;
        }
        for x in vi {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).context("checkpoint truncated")?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(f32::from_le_bytes(self.bytes()?));
        }
        Ok(out)
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 4096 {
            bail!("checkpoint corrupt: implausible name length {len}");
        }
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf).context("checkpoint truncated")?;
        String::from_utf8(buf).context("checkpoint corrupt: non-utf8 name")
    }
}

/// Load weights (and, when `adam` is given, optimizer moments) saved by
/// [`save`]. The checkpoint must describe exactly the architecture of
/// `cfg`/`store`: same digest, same parameters in the same order with the
/// same shapes. Returns the stored epoch counter.
pub fn load(
    path: &Path,
    cfg: &ModelConfig,
    store: &mut ParamStore<f32>,
    adam: Option<&mut Adam>,
) -> Result<u64> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = Reader { inner: BufReader::new(file) };
    if &r.bytes::<4>()? != MAGIC {
        bail!("{} is not a checkpoint (bad magic)", path.display());
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!("checkpoint version {version} is not supported (expected {VERSION})");
    }
    if r.bytes::<32>()? != config_digest(cfg) {
        bail!("checkpoint was written for a different model configuration");
    }
    let epoch = r.u64()?;
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let ids: Vec<_> = store.ids().collect();
    if count != ids.len() {
        bail!("checkpoint has {count} parameters, the model has {}", ids.len());
    }
    let mut widths = Vec::with_capacity(count);
    for &id in &ids {
        let name = r.string()?;
        if name != store.name(id) {
            bail!("checkpoint parameter {:?} does not match the model's {:?}", name, store.name(id));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        if shape != store.value(id).shape() {
            bail!("checkpoint shape {shape:?} for {name} does not match {:?}", store.value(id).shape());
        }
        let numel: usize = shape.iter().product();
        let values = r.f32s(numel)?;
        store.value_mut(id).data_mut().copy_from_slice(&values);
        widths.push(numel);
    }
    if let Some(adam) = adam {
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for &n in &widths {
            m.push(r.f32s(n)?);
            v.push(r.f32s(n)?);
        }
        adam.restore(step, m, v);
    }
    Ok(epoch)
}
