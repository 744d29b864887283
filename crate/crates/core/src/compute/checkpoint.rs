//! Versioned JSON checkpoint: named parameters, optimizer moments, seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AdamState, Tensor};
use crate::scalar::Scalar;

pub const MAGIC: &str = "RACv1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("bad magic {found:?}, expected {MAGIC:?}")]
    Magic { found: String },
    #[error("parameter `{0}` missing from checkpoint")]
    MissingParam(String),
    #[error("parameter `{name}`: {detail}")]
    Shape { name: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub t: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub seed: u64,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerRecord>,
    /// Free-form model metadata (hyperparameters, embedding source, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn named<T: Scalar>(name: &str, t: &Tensor<T>) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|x| x.to_f64_lossy()).collect(),
    }
}

impl NamedTensor {
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>, CheckpointError> {
        let data = self.data.iter().map(|&x| T::lit(x)).collect();
        Tensor::new(self.shape.clone(), data).map_err(|e| CheckpointError::Shape {
            name: self.name.clone(),
            detail: e.to_string(),
        })
    }
}

impl Checkpoint {
    pub fn new<'a, T: Scalar>(
        seed: u64,
        params: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
        optimizer: Option<&AdamState<T>>,
        meta: serde_json::Value,
    ) -> Self {
        let params: Vec<NamedTensor> = params.into_iter().map(|(n, t)| named(n, t)).collect();
        let optimizer = optimizer.map(|st| OptimizerRecord {
            t: st.t,
            m: st.m.iter().zip(&params).map(|(t, p)| named(&p.name, t)).collect(),
            v: st.v.iter().zip(&params).map(|(t, p)| named(&p.name, t)).collect(),
        });
        Self {
            magic: MAGIC.to_string(),
            seed,
            params,
            optimizer,
            meta,
        }
    }

    pub fn param<T: Scalar>(&self, name: &str) -> Result<Tensor<T>, CheckpointError> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| CheckpointError::MissingParam(name.to_string()))?
            .to_tensor()
    }

    pub fn adam_state<T: Scalar>(&self) -> Result<Option<AdamState<T>>, CheckpointError> {
        let Some(rec) = &self.optimizer else {
            return Ok(None);
        };
        let m = rec.m.iter().map(NamedTensor::to_tensor).collect::<Result<_, _>>()?;
        let v = rec.v.iter().map(NamedTensor::to_tensor).collect::<Result<_, _>>()?;
        Ok(Some(AdamState { t: rec.t, m, v }))
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.magic != MAGIC {
            return Err(CheckpointError::Magic { found: ck.magic });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()?).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let s = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&s)
    }
}
