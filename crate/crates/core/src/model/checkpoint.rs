//! `LXCK` container: magic, format version, model config, then named
//! little-endian `f32` tensors. Model checkpoints store exactly the model
//! parameters; training-run checkpoints append optimizer tensors under an
//! `optim.` prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::transformer::Model;
use crate::autodiff::Tensor;
use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"LXCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            tensors: model.named_params().map(|(n, t)| (n.to_string(), t.cast())).collect(),
        }
    }

    /// Splits off the model parameters, ignoring extra (`optim.*`) tensors.
    pub fn into_model<T: Scalar>(self) -> Result<Model<T>> {
        let named = self
            .tensors
            .into_iter()
            .filter(|(n, _)| !n.starts_with("optim."))
            .map(|(n, t)| (n, t.cast()))
            .collect();
        Model::from_parts(self.config, named)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let c = &self.config;
        for v in [
            c.n_layers,
            c.d_model,
            c.n_heads,
            c.d_ffn,
            c.vocab_phoneme,
            c.vocab_audio,
            c.vocab_special,
            c.part_text,
            c.part_prompt,
            c.part_gen,
        ] {
            put_u32(w, v)?;
        }
        w.write_all(&c.rope_base.to_le_bytes())?;
        put_u32(w, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            put_u32(w, t.rank())?;
            for &d in t.shape() {
                put_u32(w, d)?;
            }
            let mut buf = Vec::with_capacity(t.numel() * 4);
            for x in t.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        ensure!(&magic == MAGIC, Format, "bad magic {magic:?}");
        let version = get_u32(r)?;
        ensure!(version == FORMAT_VERSION as usize, Format, "unsupported format version {version}");
        let mut f = [0usize; 10];
        for v in f.iter_mut() {
            *v = get_u32(r)?;
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let config = ModelConfig {
            n_layers: f[0],
            d_model: f[1],
            n_heads: f[2],
            d_ffn: f[3],
            vocab_phoneme: f[4],
            vocab_audio: f[5],
            vocab_special: f[6],
            part_text: f[7],
            part_prompt: f[8],
            part_gen: f[9],
            rope_base: f64::from_le_bytes(b8),
        };
        let count = get_u32(r)?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = get_u32(r)?;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            let rank = get_u32(r)?;
            let shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * 4];
            r.read_exact(&mut raw)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model).save(path)
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    Checkpoint::load(path)?.into_model()
}
