//! Binary model checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every parameter buffer as little-endian `f64` in parameter
//! order. Shapes live in the header, so loading is exact.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::FeatureWidths;

use super::{ModelConfig, ModelError, ModelRegistry, TrendPredictor};

const MAGIC: &[u8; 8] = b"CTCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("config hash mismatch: header says {stored}, contents hash to {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error("parameter {index} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything needed to rebuild a model and the pipeline that fed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub widths: FeatureWidths,
    /// Free-form pipeline settings (split, labeling, feature caps).
    pub run: serde_json::Value,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    checkpoint: Checkpoint,
    shapes: Vec<Vec<usize>>,
}

fn config_hash(model: &str, config: &ModelConfig, widths: &FeatureWidths, run: &serde_json::Value) -> String {
    let payload = serde_json::to_vec(&(model, config, widths, run)).expect("config serializes");
    let digest = Sha256::digest(&payload);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint<W: Write>(
    mut out: W,
    model: &dyn TrendPredictor,
    widths: FeatureWidths,
    seed: u64,
    run: serde_json::Value,
) -> Result<Checkpoint, CheckpointError> {
    let checkpoint = Checkpoint {
        model: model.name().to_owned(),
        seed,
        config: *model.config(),
        widths,
        config_hash: config_hash(model.name(), model.config(), &widths, &run),
        run,
    };
    let params = model.parameters();
    let header = Header {
        checkpoint: checkpoint.clone(),
        shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
    };
    let header = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for p in params {
        for v in p.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(checkpoint)
}

pub fn load_checkpoint<R: Read>(
    mut input: R,
    registry: &ModelRegistry,
) -> Result<(Checkpoint, Box<dyn TrendPredictor>), CheckpointError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut header)?;
    let Header { checkpoint, shapes } = serde_json::from_slice(&header)?;

    let computed = config_hash(&checkpoint.model, &checkpoint.config, &checkpoint.widths, &checkpoint.run);
    if computed != checkpoint.config_hash {
        return Err(CheckpointError::HashMismatch {
            stored: checkpoint.config_hash,
            computed,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(checkpoint.seed);
    let mut model = registry.create(&checkpoint.model, &checkpoint.config, checkpoint.widths, &mut rng)?;
    {
        let params = model.parameters_mut();
        if params.len() != shapes.len() {
            return Err(CheckpointError::ShapeMismatch {
                index: params.len().min(shapes.len()),
                expected: vec![params.len()],
                found: vec![shapes.len()],
            });
        }
        let mut buf = [0u8; 8];
        for (index, (p, shape)) in params.into_iter().zip(shapes).enumerate() {
            if p.shape() != shape.as_slice() {
                return Err(CheckpointError::ShapeMismatch {
                    index,
                    expected: p.shape().to_vec(),
                    found: shape,
                });
            }
            for v in p.data_mut() {
                input.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
    }
    Ok((checkpoint, model))
}
