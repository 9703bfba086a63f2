use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::bytes::{put_f64, put_u32, put_u64, ByteReader};
use crate::graph::Normalizer;
use crate::ilp::Codec;
use crate::numerics::{Matrix, Precision, Real};
use crate::simulator::{ModelConfig, ModelParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained model plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub train: TrainConfig,
    pub model: ModelParams<T>,
    /// Optimizer updates applied.
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    train: TrainConfig,
    model: ModelConfig,
}

fn precision_tag(p: Precision) -> u8 {
    match p {
        Precision::Single => 0,
        Precision::Double => 1,
    }
}

/// Layout (little-endian): magic, version `u32`, precision `u8`, JSON
/// header length `u32` and bytes, step `u64`, normalizer (`u32` dims then
/// `f64` means and stds), tensor count `u32`, then per tensor a `u32` name
/// length, the name, a `u64` element count and the elements in the model's
/// precision; finally a `u8` flag and, if set, the `f64` pseudo-inverse with
/// `u32` rows and cols.
impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        out.push(precision_tag(T::PRECISION));
        let header = Header {
            train: self.train.clone(),
            model: self.model.config.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
        put_u32(&mut out, json.len() as u32);
        out.extend_from_slice(&json);
        put_u64(&mut out, self.step);
        let norm = &self.model.normalizer;
        put_u32(&mut out, norm.mean.len() as u32);
        for x in norm.mean.iter().chain(&norm.std) {
            put_f64(&mut out, *x);
        }
        let tensors = self.model.named_tensors();
        put_u32(&mut out, tensors.len() as u32);
        for (name, data) in tensors {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u64(&mut out, data.len() as u64);
            for x in data {
                match T::PRECISION {
                    Precision::Single => out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes()),
                    Precision::Double => put_f64(&mut out, x.to_f64()),
                }
            }
        }
        match &self.model.codec {
            Codec::Ilp(p) => {
                out.push(1);
                let pinv = p.pinv();
                put_u32(&mut out, pinv.rows() as u32);
                put_u32(&mut out, pinv.cols() as u32);
                for x in pinv.as_slice() {
                    put_f64(&mut out, *x);
                }
            }
            Codec::Mlp(_) => out.push(0),
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(0, format!("bad checkpoint magic {magic:?}")));
        }
        let at = r.offset();
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                at,
                format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let at = r.offset();
        let tag = r.u8("precision")?;
        if tag != precision_tag(T::PRECISION) {
            return Err(Error::format(
                at,
                format!("checkpoint precision tag {tag} does not match requested {}", T::PRECISION),
            ));
        }
        let len = r.u32("header length")? as usize;
        let at = r.offset();
        let header: Header = serde_json::from_slice(r.take(len, "header")?)
            .map_err(|e| Error::format(at, format!("bad header: {e}")))?;
        let step = r.u64("step")?;
        let dims = r.u32("normalizer dims")? as usize;
        let mut vals = Vec::with_capacity(2 * dims);
        for _ in 0..2 * dims {
            vals.push(r.f64("normalizer")?);
        }
        let normalizer = Normalizer {
            mean: vals[..dims].to_vec(),
            std: vals[dims..].to_vec(),
        };

        // Shape skeleton; every tensor is overwritten below.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = ModelParams::<T>::init(header.model, normalizer, &mut rng)
            .map_err(|e| Error::format(at, format!("header describes an invalid model: {e}")))?;
        let expected: Vec<(String, usize)> = model
            .named_tensors()
            .iter()
            .map(|(n, t)| (n.clone(), t.len()))
            .collect();
        let at = r.offset();
        let count = r.u32("tensor count")? as usize;
        if count != expected.len() {
            return Err(Error::format(
                at,
                format!("checkpoint holds {count} tensors, model needs {}", expected.len()),
            ));
        }
        let mut views = model.tensors_mut();
        for ((name, len), dst) in expected.iter().zip(views.iter_mut()) {
            let at = r.offset();
            let nlen = r.u32("tensor name length")? as usize;
            let got = r.take(nlen, "tensor name")?;
            if got != name.as_bytes() {
                return Err(Error::format(
                    at,
                    format!("expected tensor '{name}', found '{}'", String::from_utf8_lossy(got)),
                ));
            }
            let at = r.offset();
            let n = r.u64("tensor length")? as usize;
            if n != *len {
                return Err(Error::format(at, format!("tensor '{name}' has {n} entries, expected {len}")));
            }
            for x in dst.iter_mut() {
                *x = match T::PRECISION {
                    Precision::Single => T::from_f64(r.f32(name)? as f64),
                    Precision::Double => T::from_f64(r.f64(name)?),
                };
            }
        }
        drop(views);
        let at = r.offset();
        let has_pinv = r.u8("pseudo-inverse flag")?;
        match (&mut model.codec, has_pinv) {
            (Codec::Ilp(p), 1) => {
                let rows = r.u32("pinv rows")? as usize;
                let cols = r.u32("pinv cols")? as usize;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    data.push(r.f64("pseudo-inverse")?);
                }
                p.set_pinv(Matrix::from_vec(rows, cols, data)?)
                    .map_err(|e| Error::format(at, e.to_string()))?;
            }
            (Codec::Mlp(_), 0) => {}
            _ => return Err(Error::format(at, "pseudo-inverse flag does not match codec")),
        }
        r.expect_end()?;
        Ok(Self {
            train: header.train,
            model,
            step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// Precision recorded in a checkpoint file, read without decoding the rest.
pub fn checkpoint_precision(buf: &[u8]) -> Result<Precision> {
    let mut r = ByteReader::new(buf);
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    r.u32("version")?;
    let at = r.offset();
    match r.u8("precision")? {
        0 => Ok(Precision::Single),
        1 => Ok(Precision::Double),
        t => Err(Error::format(at, format!("unknown precision tag {t}"))),
    }
}
