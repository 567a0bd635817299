//! `CMID` checkpoint files.
//!
//! Layout: magic `CMID`, `u32` LE version, `u32` LE header length, a JSON
//! header (model config, element precision, tensor names and shapes), then
//! every tensor's elements as little-endian floats in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"CMID";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    precision: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let header = Header {
        precision: T::NAME.to_string(),
        config: model.config().clone(),
        tensors: model
            .names()
            .iter()
            .zip(model.params())
            .map(|(name, p)| TensorEntry {
                name: name.clone(),
                shape: p.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header.len() + model.param_count() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params() {
        for &v in p.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

fn read_payload<S: Scalar, T: Scalar>(payload: &[u8], header: &Header) -> Result<Vec<Tensor<T>>> {
    let expected: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum::<usize>()
        * S::BYTES;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header describes {expected}",
            payload.len()
        )));
    }
    let mut chunks = payload.chunks_exact(S::BYTES);
    header
        .tensors
        .iter()
        .map(|t| {
            let n = t.shape.iter().product();
            let data = chunks
                .by_ref()
                .take(n)
                .map(|b| T::from_f64(S::read_le(b).as_f64()))
                .collect();
            Tensor::new(t.shape.clone(), data)
        })
        .collect()
}

/// Parses a checkpoint, converting elements to `T` if stored at another precision.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing CMID magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    let specs = header.config.param_specs();
    if specs.len() != header.tensors.len()
        || specs
            .iter()
            .zip(&header.tensors)
            .any(|((n, s), t)| *n != t.name || *s != t.shape)
    {
        return Err(Error::Format("tensor list does not match model config".into()));
    }
    let payload = &bytes[12 + header_len..];
    let params = match header.precision.as_str() {
        "f32" => read_payload::<f32, T>(payload, &header)?,
        "f64" => read_payload::<f64, T>(payload, &header)?,
        other => return Err(Error::Format(format!("unknown precision `{other}`"))),
    };
    Model::from_params(header.config, params).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks that its head predicts `num_classes` classes.
pub fn load_checkpoint_for<T: Scalar>(path: impl AsRef<Path>, num_classes: usize) -> Result<Model<T>> {
    let model = load_checkpoint::<T>(path)?;
    if model.num_classes() != num_classes {
        return Err(Error::Format(format!(
            "layer head.weight predicts {} classes but the task has {num_classes}",
            model.num_classes()
        )));
    }
    Ok(model)
}
