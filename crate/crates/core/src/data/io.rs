//! Patch file format and PGM ingestion.
//!
//! ```text
//! "PVFE-PATCH" | version u32 = 1 | N u32 | side u32
//! | N * side^2 f32 (row-major) | CRC32 u32
//! ```
//!
//! Little-endian throughout; the CRC covers every byte before it.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PatchBatch;
use crate::error::{Error, Result};
use crate::io_util::{write_atomic, Reader};

pub const PATCH_MAGIC: &[u8] = b"PVFE-PATCH";
pub const PATCH_VERSION: u32 = 1;

pub fn encode_patches(patches: &PatchBatch) -> Result<Vec<u8>> {
    let side = patches.require_side()?;
    let mut buf = Vec::with_capacity(PATCH_MAGIC.len() + 16 + 4 * patches.data.len());
    buf.extend_from_slice(PATCH_MAGIC);
    buf.extend_from_slice(&PATCH_VERSION.to_le_bytes());
    buf.extend_from_slice(&(patches.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(side as u32).to_le_bytes());
    for v in patches.data.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

/// Writes patches as `f32`; values are rounded to single precision.
pub fn save_patches(patches: &PatchBatch, path: &Path) -> Result<()> {
    write_atomic(path, &encode_patches(patches)?)
}

pub fn load_patches(path: &Path) -> Result<PatchBatch> {
    let bytes = fs::read(path)?;
    decode_patches(&bytes, path)
}

pub fn decode_patches(bytes: &[u8], path: &Path) -> Result<PatchBatch> {
    let mut r = Reader::new(bytes, path);
    if r.take(PATCH_MAGIC.len(), "magic")? != PATCH_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "patch",
        });
    }
    let version = r.u32("version")?;
    if version != PATCH_VERSION {
        return Err(Error::BadVersion { kind: "patch", version });
    }
    let n = r.u32("N")? as usize;
    let side = r.u32("side")? as usize;
    let m = side * side;
    let mut data = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        data.push(r.f32("pixel data")? as f64);
    }
    r.verify_crc()?;
    let data = Array2::from_shape_vec((n, m), data).expect("length checked");
    PatchBatch::new(data, side)
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Random `side x side` crops from the 8-bit PGM images in `dir`, scaled to
/// `[0, 1]`. Image choice and crop offsets come from `seed`.
pub fn extract_pgm_patches(dir: &Path, n: usize, side: usize, seed: u64) -> Result<PatchBatch> {
    let files = pgm_files(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .pgm files in {}", dir.display())));
    }
    let images = files
        .iter()
        .map(|p| {
            let img = image::open(p).map_err(|e| Error::Image(format!("{}: {e}", p.display())))?;
            let gray = img.to_luma8();
            if (gray.width() as usize) < side || (gray.height() as usize) < side {
                return Err(Error::Image(format!(
                    "{} is {}x{}, smaller than a {side}x{side} patch",
                    p.display(),
                    gray.width(),
                    gray.height()
                )));
            }
            Ok(gray)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array2::zeros((n, side * side));
    for mut row in data.rows_mut() {
        let img = &images[rng.random_range(0..images.len())];
        let x0 = rng.random_range(0..=(img.width() as usize - side)) as u32;
        let y0 = rng.random_range(0..=(img.height() as usize - side)) as u32;
        for y in 0..side as u32 {
            for x in 0..side as u32 {
                row[(y as usize) * side + x as usize] = img.get_pixel(x0 + x, y0 + y)[0] as f64 / 255.0;
            }
        }
    }
    PatchBatch::new(data, side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_patches;

    #[test]
    fn round_trip_is_bitwise_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let mut b = synth_patches(10, 4, 2.0, 1).unwrap();
        b.data.mapv_inplace(|v| v as f32 as f64);
        save_patches(&b, &path).unwrap();
        let back = load_patches(&path).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn corruption_errors_are_distinct() {
        let b = synth_patches(3, 4, 2.0, 1).unwrap();
        let bytes = encode_patches(&b).unwrap();
        let path = Path::new("mem");

        let mut crc = bytes.clone();
        let last = crc.len() - 1;
        crc[last] ^= 1;
        assert!(matches!(decode_patches(&crc, path), Err(Error::CrcMismatch { .. })));

        let mut magic = bytes.clone();
        magic[3] = b'?';
        assert!(matches!(decode_patches(&magic, path), Err(Error::BadMagic { .. })));

        assert!(matches!(
            decode_patches(&bytes[..bytes.len() - 10], path),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn pgm_crops() {
        let dir = tempfile::tempdir().unwrap();
        let (w, h) = (20u32, 18u32);
        let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
        pgm.extend((0..w * h).map(|i| (i % 251) as u8));
        fs::write(dir.path().join("a.pgm"), &pgm).unwrap();
        fs::write(dir.path().join("ignored.txt"), b"x").unwrap();

        let a = extract_pgm_patches(dir.path(), 12, 8, 5).unwrap();
        let b = extract_pgm_patches(dir.path(), 12, 8, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.side(), Some(8));
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));

        assert!(extract_pgm_patches(dir.path(), 1, 32, 5).is_err());
        let empty = tempfile::tempdir().unwrap();
        assert!(extract_pgm_patches(empty.path(), 1, 8, 5).is_err());
    }
}
