//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DDLVADCK"            magic
//! u32                    format version
//! u64                    header length in bytes
//! [u8; header length]    JSON header
//! [f64]                  tensor payload in header order
//! u64                    FNV-1a 64 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState, Param, MODEL_VERSION};
use crate::pseudo::AnomalyWeight;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DDLVADCK";
pub const FORMAT_VERSION: u32 = 1;

/// Optimizer and sampler state needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ResumeState {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    /// Present for runs with a pseudo-anomaly branch.
    pub weight: Option<AnomalyWeight>,
    pub resume: Option<ResumeState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model_version: String,
    config: ModelConfig,
    weight: Option<AnomalyWeight>,
    params: Vec<TensorEntry>,
    resume_meta: Option<serde_json::Value>,
    resume_tensors: Vec<TensorEntry>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn entry(name: &str, t: &Tensor, trainable: bool) -> TensorEntry {
    TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), trainable }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model_version: self.model.version.clone(),
            config: self.model.config.clone(),
            weight: self.weight,
            params: self.model.params.iter().map(|p| entry(&p.name, &p.value, p.trainable)).collect(),
            resume_meta: self.resume.as_ref().map(|r| r.meta.clone()),
            resume_tensors: self
                .resume
                .iter()
                .flat_map(|r| r.tensors.iter().map(|(n, t)| entry(n, t, false)))
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("serializable header");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let tensors = self
            .model
            .params
            .iter()
            .map(|p| &p.value)
            .chain(self.resume.iter().flat_map(|r| r.tensors.iter().map(|(_, t)| t)));
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Ingest(format!("checkpoint: {msg}"));
        if bytes.len() < 28 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let body = &bytes[..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        if fnv1a(body) != stored {
            return Err(bad("checksum mismatch (file is corrupt or truncated)"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let json = body.get(20..20 + hlen).ok_or_else(|| bad("header runs past end of file"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
        if header.model_version != MODEL_VERSION {
            return Err(bad(&format!("model version {}, expected {MODEL_VERSION}", header.model_version)));
        }
        let mut payload = body[20 + hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |e: &TensorEntry| -> Result<Tensor> {
            let n = e.shape.iter().product();
            let data: Vec<f64> = payload.by_ref().take(n).collect();
            if data.len() != n {
                return Err(bad(&format!("payload ends inside tensor {}", e.name)));
            }
            Tensor::from_vec(&e.shape, data)
        };
        let params = header
            .params
            .iter()
            .map(|e| Ok(Param { name: e.name.clone(), value: take(e)?, trainable: e.trainable }))
            .collect::<Result<Vec<_>>>()?;
        let resume_tensors = header
            .resume_tensors
            .iter()
            .map(|e| Ok((e.name.clone(), take(e)?)))
            .collect::<Result<Vec<_>>>()?;
        if payload.next().is_some() || !(body.len() - 20 - hlen).is_multiple_of(8) {
            return Err(bad("trailing bytes after payload"));
        }
        header.config.validate().map_err(|e| bad(&e.to_string()))?;
        let model = ModelState { config: header.config, params, version: header.model_version };
        model.verify_layout()?;
        let resume = header.resume_meta.map(|meta| ResumeState { meta, tensors: resume_tensors });
        Ok(Checkpoint { model, weight: header.weight, resume })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Ingest(m) => Error::Ingest(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn small() -> Checkpoint {
        let cfg = ModelConfig { base_channels: 4, depth: 2, seed: 3, ..ModelConfig::default() };
        Checkpoint {
            model: init_params(&cfg).unwrap(),
            weight: Some(AnomalyWeight { ell: -0.37, trainable: true }),
            resume: Some(ResumeState {
                meta: serde_json::json!({"step": 4}),
                tensors: vec![("m.x".into(), Tensor::full(&[2, 3], 1.0 / 3.0))],
            }),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = small();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        for (a, b) in ck.model.params.iter().zip(&back.model.params) {
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = small().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Ingest(_))));
        let bytes = small().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]), Err(Error::Ingest(_))));
        assert!(matches!(Checkpoint::from_bytes(b"hello"), Err(Error::Ingest(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut ck = small();
        ck.model.version = "c3dsu/0".into();
        let err = Checkpoint::from_bytes(&ck.to_bytes()).unwrap_err();
        assert!(matches!(err, Error::Ingest(ref m) if m.contains("model version")));
        let mut bytes = small().to_bytes();
        bytes[8] = 9;
        let n = bytes.len() - 8;
        let sum = fnv1a(&bytes[..n]);
        bytes[n..].copy_from_slice(&sum.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Ingest(ref m) if m.contains("format version")));
    }
}
