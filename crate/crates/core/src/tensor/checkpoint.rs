//! Flat `name -> {shape, values}` JSON map for tensors.
//!
//! Floats are written with the shortest decimal that parses back to the same
//! bits, and parsed with correct rounding, so a write/read cycle is bit-exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl From<&Tensor> for TensorRecord {
    fn from(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            values: t.data().to_vec(),
        }
    }
}

impl TryFrom<TensorRecord> for Tensor {
    type Error = Error;

    fn try_from(r: TensorRecord) -> Result<Self> {
        let t = Tensor::new(&r.shape, r.values)?;
        if !t.is_finite() {
            return Err(Error::Contract("checkpoint tensor holds non-finite values".into()));
        }
        Ok(t)
    }
}

pub fn write_checkpoint_map(tensors: &BTreeMap<String, Tensor>) -> Result<String> {
    let records: BTreeMap<&str, TensorRecord> = tensors
        .iter()
        .map(|(k, v)| (k.as_str(), TensorRecord::from(v)))
        .collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

pub fn read_checkpoint_map(text: &str) -> Result<BTreeMap<String, Tensor>> {
    let records: BTreeMap<String, TensorRecord> = serde_json::from_str(text)?;
    records
        .into_iter()
        .map(|(k, r)| Ok((k, Tensor::try_from(r)?)))
        .collect()
}
