//! Parameter files: a manifest of tensor names and shapes plus one flat value dump.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Hyper;
use crate::nn::Parameters;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format {found}, expected {FORMAT_VERSION}")]
    Version { found: u32 },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    Kind { found: String, expected: String },
    #[error("manifest mismatch: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub seed: u64,
    pub hyper: Hyper,
    pub tensors: Vec<TensorEntry>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn capture<P: Parameters>(kind: &str, params: &P, hyper: &Hyper, seed: u64) -> Self {
        let mut tensors = Vec::new();
        params.visit(&mut |name, shape, _| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: shape.to_vec(),
            })
        });
        Checkpoint {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            seed,
            hyper: hyper.clone(),
            tensors,
            values: params.flatten(),
        }
    }

    /// Load values into `params`, whose layout must match the manifest exactly.
    pub fn restore<P: Parameters>(&self, kind: &str, params: &mut P) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::Kind {
                found: self.kind.clone(),
                expected: kind.to_string(),
            });
        }
        let mut expected = Vec::new();
        params.visit(&mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
        if expected.len() != self.tensors.len() {
            return Err(CheckpointError::Manifest(format!(
                "{} tensors, expected {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape {
                return Err(CheckpointError::Manifest(format!(
                    "{} {:?}, expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
        }
        let total: usize = self.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if total != self.values.len() {
            return Err(CheckpointError::Manifest(format!(
                "{} values for {total} entries",
                self.values.len()
            )));
        }
        params.load_flat(&self.values);
        Ok(())
    }
}

/// Write through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = serde_json::to_vec(ck)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
    if ck.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: ck.format_version,
        });
    }
    Ok(ck)
}
