//! Self-describing binary checkpoint.
//!
//! Layout (little endian):
//!   bytes 0..4    magic "SQCK"
//!   bytes 4..8    u32 format version (currently 1)
//!   bytes 8..16   u64 header length H
//!   bytes 16..16+H  JSON header: model variant, dimensions, vocabulary,
//!                 decode cap, epoch counter, optimizer step, and the array
//!                 manifest (name + shape per array, in file order)
//!   remainder     f64 arrays in row-major order, concatenated in manifest
//!                 order
//!
//! Model parameters use their `named_params` names; optimizer first and
//! second moments are stored as `optim.m.<name>` / `optim.v.<name>`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::Adam;
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SQCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: String,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub classes: Vec<String>,
    pub max_decode_len: usize,
    pub epoch: usize,
    pub optimizer_step: u64,
    pub arrays: Vec<ArrayInfo>,
}

#[derive(Debug, Clone)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Validation(format!("checkpoint missing array '{name}'")))
    }

    /// Copy stored values into a live parameter list by name.
    pub fn load_params(&self, params: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in params {
            let stored = self.array(name)?;
            if stored.shape != tensor.shape() {
                return Err(Error::Validation(format!(
                    "checkpoint array '{name}' has shape {:?}, expected {:?}",
                    stored.shape,
                    tensor.shape()
                )));
            }
            tensor.set_values(&stored.values);
        }
        Ok(())
    }

    /// Restore optimizer moments stored alongside the parameters, if any.
    pub fn load_optimizer(&self, params: &[(String, Tensor)], opt: &mut Adam) -> Result<bool> {
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (name, _) in params {
            let (Ok(ma), Ok(va)) = (
                self.array(&format!("optim.m.{name}")),
                self.array(&format!("optim.v.{name}")),
            ) else {
                return Ok(false);
            };
            m.push(ma.values.clone());
            v.push(va.values.clone());
        }
        opt.restore(self.header.optimizer_step, m, v);
        Ok(true)
    }
}

/// Assemble a checkpoint from named parameters and optional optimizer
/// state.
pub fn build_checkpoint(
    model: &str,
    feature_dim: usize,
    hidden_dim: usize,
    classes: Vec<String>,
    max_decode_len: usize,
    epoch: usize,
    params: &[(String, Tensor)],
    optimizer: Option<&Adam>,
) -> Checkpoint {
    let mut arrays: Vec<NamedArray> = params
        .iter()
        .map(|(name, t)| NamedArray {
            name: name.clone(),
            shape: t.shape(),
            values: t.values(),
        })
        .collect();
    let mut optimizer_step = 0;
    if let Some(opt) = optimizer {
        let (step, m, v) = opt.state();
        optimizer_step = step;
        for ((name, t), values) in params.iter().zip(m) {
            arrays.push(NamedArray {
                name: format!("optim.m.{name}"),
                shape: t.shape(),
                values: values.clone(),
            });
        }
        for ((name, t), values) in params.iter().zip(v) {
            arrays.push(NamedArray {
                name: format!("optim.v.{name}"),
                shape: t.shape(),
                values: values.clone(),
            });
        }
    }
    let header = CheckpointHeader {
        version: VERSION,
        model: model.to_string(),
        feature_dim,
        hidden_dim,
        classes,
        max_decode_len,
        epoch,
        optimizer_step,
        arrays: arrays
            .iter()
            .map(|a| ArrayInfo {
                name: a.name.clone(),
                shape: a.shape.clone(),
            })
            .collect(),
    };
    Checkpoint { header, arrays }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header =
        serde_json::to_vec(&ckpt.header).map_err(|e| Error::Validation(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for array in &ckpt.arrays {
        for v in &array.values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Validation(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Validation(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut len_bytes = [0u8; 8];
    input.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    input.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Validation(format!("checkpoint header: {e}")))?;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    let mut buf = [0u8; 8];
    for info in &header.arrays {
        let n: usize = info.shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        arrays.push(NamedArray {
            name: info.name.clone(),
            shape: info.shape.clone(),
            values,
        });
    }
    Ok(Checkpoint { header, arrays })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ActionVocabulary, SeqForecaster};
    use crate::rng::init_stream;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let vocab = ActionVocabulary::from_labels(["x", "y"]).unwrap();
        let model = SeqForecaster::new(&mut init_stream(8), vocab, 3, 4, 7);
        let params = model.named_params();
        let mut opt = Adam::new(1e-3, &model.params());
        opt.step_count = 42;
        let ckpt = build_checkpoint(
            "seqforecast",
            3,
            4,
            vec!["x".into(), "y".into()],
            7,
            5,
            &params,
            Some(&opt),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.header.model, "seqforecast");
        assert_eq!(loaded.header.epoch, 5);
        assert_eq!(loaded.header.optimizer_step, 42);
        assert_eq!(loaded.arrays.len(), ckpt.arrays.len());
        for (a, b) in ckpt.arrays.iter().zip(&loaded.arrays) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert!(a
                .values
                .iter()
                .zip(&b.values)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        // Loading back into a fresh model reproduces parameters bit-exactly.
        let vocab2 = ActionVocabulary::from_labels(["x", "y"]).unwrap();
        let fresh = SeqForecaster::new(&mut init_stream(999), vocab2, 3, 4, 7);
        loaded.load_params(&fresh.named_params()).unwrap();
        for ((_, a), (_, b)) in params.iter().zip(fresh.named_params()) {
            assert!(a
                .values()
                .iter()
                .zip(&b.values())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn bad_magic_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Validation(_))
        ));
    }
}
