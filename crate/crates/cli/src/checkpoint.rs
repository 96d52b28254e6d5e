//! Training checkpoints: config echo, step, parameters, optimizer moments
//! and RNG state, as a JSON document.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use oplas_core::fsutil::write_atomic;
use oplas_core::nn::{AdamConfig, AdamState, NamedArrays};
use oplas_core::rng::RngState;
use oplas_core::Array;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Array> for ArrayRecord {
    fn from(a: &Array) -> Self {
        Self {
            rows: a.rows(),
            cols: a.cols(),
            data: a.data().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngRecord {
    pub seed: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerRecord {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: BTreeMap<String, ArrayRecord>,
    pub second: BTreeMap<String, ArrayRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub step: u64,
    pub rng: RngRecord,
    pub params: BTreeMap<String, ArrayRecord>,
    pub optimizer: OptimizerRecord,
}

fn records(arrays: &NamedArrays) -> BTreeMap<String, ArrayRecord> {
    arrays
        .iter()
        .map(|(k, v)| (k.clone(), ArrayRecord::from(v)))
        .collect()
}

fn arrays(records: &BTreeMap<String, ArrayRecord>, field: &str) -> CliResult<NamedArrays> {
    records
        .iter()
        .map(|(k, r)| {
            Array::new(r.rows, r.cols, r.data.clone())
                .map(|a| (k.clone(), a))
                .map_err(|e| CliError::Config(format!("{field}.{k}: {e}")))
        })
        .collect()
}

impl Checkpoint {
    pub fn new(
        config: &ExperimentConfig,
        step: u64,
        rng: RngState,
        params: &NamedArrays,
        adam: &AdamState,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            step,
            rng: RngRecord {
                seed: rng.seed,
                word_pos: rng.word_pos,
            },
            params: records(params),
            optimizer: OptimizerRecord {
                lr: adam.config.lr,
                beta1: adam.config.beta1,
                beta2: adam.config.beta2,
                eps: adam.config.eps,
                step: adam.step,
                first: records(&adam.first),
                second: records(&adam.second),
            },
        }
    }

    pub fn params(&self) -> CliResult<NamedArrays> {
        arrays(&self.params, "params")
    }

    pub fn adam(&self) -> CliResult<AdamState> {
        let o = &self.optimizer;
        Ok(AdamState {
            config: AdamConfig {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            },
            step: o.step,
            first: arrays(&o.first, "optimizer.first")?,
            second: arrays(&o.second, "optimizer.second")?,
        })
    }

    pub fn rng_state(&self) -> RngState {
        RngState {
            seed: self.rng.seed,
            word_pos: self.rng.word_pos,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let ck: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            CliError::Config(format!("checkpoint field {}: {}", e.path(), e.inner()))
        })?;
        de.end()
            .map_err(|e| CliError::Config(format!("checkpoint has trailing data: {e}")))?;
        if ck.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "checkpoint field schema_version: expected {SCHEMA_VERSION}, found {}",
                ck.schema_version
            )));
        }
        ck.params()?;
        ck.adam()?;
        Ok(ck)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> CliResult<()> {
    write_atomic(path, checkpoint.to_json().as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    Checkpoint::from_json(&text)
}
