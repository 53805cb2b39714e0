//! Binary checkpoint format.
//!
//! ```text
//! "PVFE-CKPT" | version u32 | family u8 | K u32 | M u32
//! | (len u64, len x f64) per tensor | CRC32 u32
//! ```
//!
//! All integers and floats are little-endian. Tensors appear in the order
//! of [`ModelParams::tensors`]; the CRC covers every preceding byte.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Family, ModelParams, Prior};
use crate::error::{Error, Result};
use crate::io_util::{write_atomic, Reader};

pub const CHECKPOINT_MAGIC: &[u8] = b"PVFE-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(params.family().tag());
    buf.extend_from_slice(&(params.latent_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(params.input_dim() as u32).to_le_bytes());
    for t in params.tensors() {
        buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes, path)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let mut r = Reader::new(bytes, path);
    if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "checkpoint",
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            kind: "checkpoint",
            version,
        });
    }
    let tag = r.u8("family tag")?;
    let family = Family::from_tag(tag)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown family tag {tag} in {}", path.display())))?;
    let k = r.u32("K")? as usize;
    let m = r.u32("M")? as usize;

    let mut read_tensor = |expected: usize, what: &'static str| -> Result<Vec<f64>> {
        let len = r.u64(what)? as usize;
        if len != expected {
            return Err(Error::Shape(format!("{what}: {len} values, expected {expected}")));
        }
        (0..len).map(|_| r.f64(what)).collect()
    };
    let rows = match family {
        Family::Poisson => k,
        Family::RectifiedGaussian => 2 * k,
    };
    let enc = read_tensor(rows * m, "encoder")?;
    let dict = read_tensor(m * k, "dictionary")?;
    let prior = match family {
        Family::Poisson => Prior::Poisson {
            log_rates: Array1::from(read_tensor(k, "prior log-rates")?),
        },
        Family::RectifiedGaussian => Prior::Gaussian {
            mu: Array1::from(read_tensor(k, "prior mean")?),
            log_sigma: Array1::from(read_tensor(k, "prior log-scale")?),
        },
    };
    r.verify_crc()?;
    Ok(ModelParams {
        enc_weights: Array2::from_shape_vec((rows, m), enc).expect("length checked"),
        dictionary: Array2::from_shape_vec((m, k), dict).expect("length checked"),
        prior,
    })
}
