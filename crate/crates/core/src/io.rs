//! On-disk formats: PDNX tensors, PGM frames and model checkpoints.
//!
//! PDNX layout: `b"PDNX1\0"`, `u32` version (1), `u32` ndims, `u64` dims,
//! little-endian `f64` payload in row-major order, then the payload length in
//! bytes as a trailing `u64`. All integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{HybridModel, ModelConfig};
use crate::solvers::PdeConfig;
use crate::tensor::Tensor;

pub const PDNX_MAGIC: &[u8; 6] = b"PDNX1\0";
pub const PDNX_VERSION: u32 = 1;

pub fn encode_pdnx(t: &Tensor<f64>) -> Vec<u8> {
    let payload = t.len() * 8;
    let mut out = Vec::with_capacity(6 + 8 + 8 * t.ndim() + payload + 8);
    out.extend_from_slice(PDNX_MAGIC);
    out.extend_from_slice(&PDNX_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(payload as u64).to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated PDNX file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_pdnx(bytes: &[u8]) -> Result<Tensor<f64>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(6)? != PDNX_MAGIC {
        return Err(Error::Format("bad PDNX magic".into()));
    }
    let version = r.u32()?;
    if version != PDNX_VERSION {
        return Err(Error::Format(format!("unsupported PDNX version {version}")));
    }
    let ndims = r.u32()? as usize;
    let mut shape = Vec::with_capacity(ndims.min(16));
    for _ in 0..ndims {
        shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Format("dimension overflows usize".into()))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let payload = r.take(count)?;
    let declared = r.u64()?;
    if declared != count as u64 {
        return Err(Error::Format(format!("payload length {declared} does not match dims ({count} bytes)")));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after PDNX payload".into()));
    }
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::new(shape, data)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_pdnx(path: &Path, t: &Tensor<f64>) -> Result<()> {
    write_atomic(path, &encode_pdnx(t))
}

pub fn read_pdnx(path: &Path) -> Result<Tensor<f64>> {
    decode_pdnx(&fs::read(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Serializes rows with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header_if_empty: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header_if_empty).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, &bytes)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Min-max bounds used to quantize a frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameBounds {
    pub min: f64,
    pub max: f64,
}

/// Binary 8-bit grayscale image of a `[H, W]` field scaled to its own range;
/// a constant field maps to mid gray.
pub fn encode_pgm(field: &Tensor<f64>) -> Result<(Vec<u8>, FrameBounds)> {
    if field.ndim() != 2 {
        return Err(Error::InvalidShape {
            shape: field.shape().to_vec(),
            reason: "PGM frames are two-dimensional".into(),
        });
    }
    if !field.is_finite() {
        return Err(Error::NonFinite { op: "encode_pgm".into() });
    }
    let (h, w) = (field.shape()[0], field.shape()[1]);
    let min = field.data().iter().copied().fold(f64::INFINITY, f64::min);
    let max = field.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let span = max - min;
    out.extend(field.data().iter().map(|&v| {
        if span > 0.0 {
            ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    }));
    Ok((out, FrameBounds { min, max }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the flat parameter blob.
    pub offset: usize,
}

/// JSON side of a checkpoint; the values live in `params_file`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub version: u32,
    pub pde: PdeConfig,
    pub model: ModelConfig,
    pub seed: u64,
    pub params_file: String,
    pub parameters: Vec<ParamEntry>,
}

/// Writes `<stem>.json` and `<stem>.pdnx`; returns the manifest path.
pub fn save_checkpoint(dir: &Path, stem: &str, model: &HybridModel<f64>, seed: u64) -> Result<PathBuf> {
    let params = model.params();
    let mut offset = 0;
    let parameters = params
        .names()
        .iter()
        .zip(params.values())
        .map(|(name, v)| {
            let e = ParamEntry {
                name: name.clone(),
                shape: v.shape().to_vec(),
                offset,
            };
            offset += v.len();
            e
        })
        .collect();
    let blob = format!("{stem}.pdnx");
    write_pdnx(&dir.join(&blob), &Tensor::new(vec![offset], params.flatten())?)?;
    let manifest = CheckpointManifest {
        version: 1,
        pde: model.pde().clone(),
        model: model.config().clone(),
        seed,
        params_file: blob,
        parameters,
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Rebuilds the model described by a manifest and loads its parameters.
pub fn load_checkpoint(manifest_path: &Path) -> Result<HybridModel<f64>> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut model = HybridModel::new(&manifest.pde, &manifest.model, manifest.seed)?;
    let blob = read_pdnx(&dir.join(&manifest.params_file))?;
    let params = model.params();
    let mut offset = 0;
    if params.len() != manifest.parameters.len() {
        return Err(Error::Format("checkpoint parameter list does not match the model".into()));
    }
    for ((name, v), e) in params.names().iter().zip(params.values()).zip(&manifest.parameters) {
        if *name != e.name || v.shape() != e.shape.as_slice() || e.offset != offset {
            return Err(Error::Format(format!("checkpoint entry {} does not match model parameter {name}", e.name)));
        }
        offset += v.len();
    }
    model.params_mut().load_flat(blob.data())?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdnx_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let b = encode_pdnx(&t);
        assert_eq!(&b[..6], b"PDNX1\0");
        assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[10..14].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[14..22].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[30..38].try_into().unwrap()), 1.5);
        assert_eq!(u64::from_le_bytes(b[b.len() - 8..].try_into().unwrap()), 16);
        assert_eq!(b.len(), 6 + 4 + 4 + 16 + 16 + 8);
        assert_eq!(decode_pdnx(&b).unwrap(), t);
    }

    #[test]
    fn pdnx_rejects_corruption() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = encode_pdnx(&t);
        assert!(decode_pdnx(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_pdnx(&bad).is_err());
        let mut bad = b.clone();
        let n = bad.len();
        bad[n - 8] = 9;
        assert!(decode_pdnx(&bad).is_err());
        let mut long = b;
        long.push(0);
        assert!(decode_pdnx(&long).is_err());
    }

    #[test]
    fn pgm_constant_is_gray() {
        let (bytes, bounds) = encode_pgm(&Tensor::full(&[2, 3], 4.0)).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert!(bytes[bytes.len() - 6..].iter().all(|&p| p == 128));
        assert_eq!(bounds, FrameBounds { min: 4.0, max: 4.0 });
        let (bytes, _) = encode_pgm(&Tensor::new(vec![1, 2], vec![-1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0, 255]);
    }
}
