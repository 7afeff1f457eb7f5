//! Parameter blob plus JSON sidecar.
//!
//! Blob layout (little endian): `b"SQDN"`, `u32` version, `u32` tensor count,
//! then per tensor a `u32` name length, the UTF-8 name, a `u32` rank, `u64`
//! dims and the `f64` data.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::SequenceModel;
use crate::distributions::ElementKind;
use crate::error::{Error, Result};
use crate::params::Tensor;

const MAGIC: &[u8; 4] = b"SQDN";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub global: u64,
    pub init: u64,
    pub data: u64,
    pub noise: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub step: u64,
    pub param_count: usize,
    pub seeds: SeedLineage,
    pub model: ModelConfig,
    pub kinds: Vec<ElementKind>,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated parameter blob".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.u64().map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
        out.push(Tensor { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

/// Writes `path` (parameters) and `path` with a `.json` extension (metadata).
pub fn save_checkpoint(model: &SequenceModel, path: impl AsRef<Path>, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensors(model.params().tensors())).map_err(|e| Error::io(path, e))?;
    let side = sidecar(path);
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(SequenceModel, CheckpointMeta)> {
    let path = path.as_ref();
    let side = sidecar(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode_tensors(&bytes)?;
    let mut model = SequenceModel::new(&meta.model, &meta.kinds, meta.seeds.init)?;
    model.params_mut().load_from(tensors)?;
    if model.params().num_scalars() != meta.param_count {
        return Err(Error::Checkpoint(format!(
            "sidecar records {} parameters, blob holds {}",
            meta.param_count,
            model.params().num_scalars()
        )));
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;

    #[test]
    fn blob_round_trip() {
        let t = vec![
            Tensor {
                name: "a".into(),
                shape: vec![2, 2],
                data: vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5],
            },
            Tensor {
                name: "b".into(),
                shape: vec![1],
                data: vec![7.0],
            },
        ];
        let back = decode_tensors(&encode_tensors(&t)).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in t.iter().zip(&back) {
            assert_eq!(x.name, y.name);
            let xb: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let t = vec![Tensor {
            name: "a".into(),
            shape: vec![3],
            data: vec![1.0, 2.0, 3.0],
        }];
        let bytes = encode_tensors(&t);
        assert!(decode_tensors(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_tensors(b"XXXX").is_err());
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let kinds = vec![ElementKind::Continuous; 3];
        let cfg = ModelConfig::new(Family::FRnn, 4, 4).with_components(2);
        let mut model = SequenceModel::new(&cfg, &kinds, 3).unwrap();
        *model.params_mut().flat_mut(5) = 0.123;
        let meta = CheckpointMeta {
            config_hash: "h".into(),
            step: 9,
            param_count: model.params().num_scalars(),
            seeds: SeedLineage {
                global: 1,
                init: 3,
                data: 4,
                noise: 5,
            },
            model: cfg,
            kinds,
        };
        let p = dir.path().join("m.bin");
        save_checkpoint(&model, &p, &meta).unwrap();
        let (back, m2) = load_checkpoint(&p).unwrap();
        assert_eq!(m2, meta);
        assert_eq!(back.params(), model.params());
    }
}
