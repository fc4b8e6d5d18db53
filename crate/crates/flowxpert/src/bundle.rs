//! Model file format: save and load a trained detector.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   magic  b"FLOWXPT1"
//! offset 8   u32    header length H
//! offset 12  [u8;H] header, compact JSON (format version, architecture,
//!                   scaler, protocol vocabulary, margin, tensor table,
//!                   training manifest)
//! offset 12+H       tensor payload: raw f32 little-endian values, one
//!                   tensor after another in the order of the header's
//!                   tensor table; every trainable tensor precedes every
//!                   non-trainable one, so the learned parameters form a
//!                   single contiguous block
//! last 4     u32    CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Encoding the same bundle twice yields identical bytes; there is no
//! wall-clock field anywhere in the file.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::nets::{ClassifierHead, EmbeddingNet, EncoderNet, TensorSpec};
use crate::nn::optim::OptimizerKind;
use crate::preprocess::Scaler;
use crate::util::{crc32, Crc32};

pub const MODEL_MAGIC: &[u8; 8] = b"FLOWXPT1";
pub const FORMAT_VERSION: u32 = 1;

/// Hard cap on the declared header length; real headers are a few KB.
const MAX_HEADER_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("CorruptModelFile: {0}")]
    CorruptModelFile(String),
}

fn corrupt(msg: impl Into<String>) -> ModelIoError {
    ModelIoError::CorruptModelFile(msg.into())
}

/// Everything recorded about how a model was produced. Deliberately free
/// of timestamps so retraining with the same inputs reproduces the same
/// file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub tool_version: String,
    pub seed: u64,
    pub dataset_hash: String,
    pub eps: f64,
    pub min_pts: usize,
    pub downsample_rate: f64,
    pub margin: f64,
    pub embed_epochs: usize,
    pub embed_batch: usize,
    pub embed_lr: f64,
    pub detector_epochs: usize,
    pub detector_batch: usize,
    pub detector_lr: f64,
    pub optimizer: OptimizerKind,
}

impl TrainingManifest {
    /// Manifest for models assembled outside the training pipeline
    /// (tests, tooling).
    pub fn placeholder() -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: 0,
            dataset_hash: String::new(),
            eps: 0.0,
            min_pts: 0,
            downsample_rate: 0.0,
            margin: 0.0,
            embed_epochs: 0,
            embed_batch: 0,
            embed_lr: 0.0,
            detector_epochs: 0,
            detector_batch: 0,
            detector_lr: 0.0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// A trained detector plus everything needed to run it on raw records.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub scaler: Scaler,
    pub protocols: Vec<String>,
    pub margin: f64,
    pub embedding: EmbeddingNet<f32>,
    pub encoder: EncoderNet<f32>,
    pub head: ClassifierHead<f32>,
    pub manifest: TrainingManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Arch {
    input_dim: usize,
    embed_hidden: usize,
    embed_dim: usize,
    encoder_dims: [usize; 3],
    num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    arch: Arch,
    protocols: Vec<String>,
    margin: f64,
    scaler: Scaler,
    tensors: Vec<TensorEntry>,
    manifest: TrainingManifest,
}

impl ModelBundle {
    /// Number of learned (trainable) parameters.
    pub fn param_count(&self) -> usize {
        self.ordered_tensors()
            .iter()
            .filter(|(s, _)| s.trainable)
            .map(|(_, v)| v.len())
            .sum()
    }

    fn arch(&self) -> Arch {
        Arch {
            input_dim: self.embedding.in_dim(),
            embed_hidden: self.embedding.hidden_dim(),
            embed_dim: self.embedding.out_dim(),
            encoder_dims: self.encoder.dims(),
            num_classes: self.head.l.out_dim(),
        }
    }

    /// All tensors of all three networks in file order: trainables first
    /// (stable within each network), then the batch-norm running stats.
    fn ordered_tensors(&self) -> Vec<(TensorSpec, &[f32])> {
        let mut all = self.embedding.tensors();
        all.extend(self.encoder.tensors());
        all.extend(self.head.tensors());
        let (trainable, frozen): (Vec<_>, Vec<_>) =
            all.into_iter().partition(|(s, _)| s.trainable);
        trainable.into_iter().chain(frozen).collect()
    }

    fn ordered_tensors_mut(&mut self) -> Vec<(TensorSpec, &mut [f32])> {
        let mut all = self.embedding.tensors_mut();
        all.extend(self.encoder.tensors_mut());
        all.extend(self.head.tensors_mut());
        let (trainable, frozen): (Vec<_>, Vec<_>) =
            all.into_iter().partition(|(s, _)| s.trainable);
        trainable.into_iter().chain(frozen).collect()
    }
}

/// Serialize a bundle to the on-disk byte layout.
pub fn encode_model(bundle: &ModelBundle) -> Vec<u8> {
    let tensors = bundle.ordered_tensors();
    let table: Vec<TensorEntry> = tensors
        .iter()
        .map(|(s, _)| TensorEntry {
            name: s.name.clone(),
            shape: s.shape.clone(),
            trainable: s.trainable,
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        arch: bundle.arch(),
        protocols: bundle.protocols.clone(),
        margin: bundle.margin,
        scaler: bundle.scaler.clone(),
        tensors: table,
        manifest: bundle.manifest.clone(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serialization cannot fail");

    let payload_len: usize = tensors.iter().map(|(_, v)| v.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + header_json.len() + payload_len + 4);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, values) in &tensors {
        for v in *values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut crc = Crc32::new();
    crc.update(&out);
    out.extend_from_slice(&crc.finish().to_le_bytes());
    out
}

/// Parse a bundle from bytes, verifying magic, checksum, version, and
/// that the tensor table matches the declared architecture exactly.
pub fn decode_model(bytes: &[u8]) -> Result<ModelBundle, ModelIoError> {
    if bytes.len() < 12 + 4 {
        return Err(corrupt("file shorter than fixed framing"));
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(corrupt("bad magic, not a model file"));
    }
    let declared = crc32(&bytes[..bytes.len() - 4]);
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if declared != stored {
        return Err(corrupt(format!(
            "checksum mismatch: computed {declared:#010x}, stored {stored:#010x}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if header_len > MAX_HEADER_LEN || 12 + header_len + 4 > bytes.len() {
        return Err(corrupt("header length out of bounds"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| corrupt(format!("header parse: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let a = &header.arch;
    if header.scaler.mins.len() != header.scaler.maxs.len() {
        return Err(corrupt("scaler min/max length mismatch"));
    }

    // Build zero-initialized networks of the declared shape, then
    // overwrite every tensor from the payload.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut bundle = ModelBundle {
        scaler: header.scaler,
        protocols: header.protocols,
        margin: header.margin,
        embedding: EmbeddingNet::init(a.input_dim, a.embed_hidden, a.embed_dim, &mut rng),
        encoder: EncoderNet::init(a.input_dim + a.embed_dim, a.encoder_dims, &mut rng),
        head: ClassifierHead::init(a.encoder_dims[2], a.num_classes, &mut rng),
        manifest: header.manifest,
    };

    let mut offset = 12 + header_len;
    let payload_end = bytes.len() - 4;
    {
        let tensors = bundle.ordered_tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(corrupt(format!(
                "tensor table mismatch: {} entries declared, {} expected",
                header.tensors.len(),
                tensors.len()
            )));
        }
        for ((spec, values), entry) in tensors.into_iter().zip(&header.tensors) {
            if spec.name != entry.name || spec.shape != entry.shape || spec.trainable != entry.trainable
            {
                return Err(corrupt(format!(
                    "tensor table mismatch at {:?}: declared {:?} {:?} trainable={}",
                    spec.name, entry.name, entry.shape, entry.trainable
                )));
            }
            let n = values.len() * 4;
            if offset + n > payload_end {
                return Err(corrupt(format!("payload truncated in tensor {:?}", spec.name)));
            }
            for (dst, chunk) in values.iter_mut().zip(bytes[offset..offset + n].chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            offset += n;
        }
    }
    if offset != payload_end {
        return Err(corrupt(format!(
            "trailing bytes: payload ends at {offset}, checksum starts at {payload_end}"
        )));
    }
    Ok(bundle)
}

pub fn save_model(path: impl AsRef<Path>, bundle: &ModelBundle) -> Result<(), ModelIoError> {
    Ok(std::fs::write(path, encode_model(bundle))?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle, ModelIoError> {
    decode_model(&std::fs::read(path)?)
}
