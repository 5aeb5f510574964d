//! Trained scores on disk. Reals are stored as IEEE bit patterns so a
//! checkpoint reloads bit-exactly; weights are regenerated from the spec seed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sltgnn::config::{spec_from_kv, spec_to_kv, KeyValues};
use sltgnn::model::BatchNorm;
use sltgnn::{DenseMatrix, Model};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub gamma: Vec<u32>,
    pub beta: Vec<u32>,
    pub running_mean: Vec<u32>,
    pub running_var: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: KeyValues,
    pub scores: Vec<Tensor>,
    pub norms: Vec<NormState>,
}

fn to_bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn from_bits(v: &[u32]) -> Vec<f32> {
    v.iter().map(|&b| f32::from_bits(b)).collect()
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>) -> Self {
        Self {
            spec: spec_to_kv(&model.spec),
            scores: model.scores.iter().map(|s| Tensor { rows: s.rows(), cols: s.cols(), bits: to_bits(s.data()) }).collect(),
            norms: model
                .norms
                .iter()
                .map(|n| NormState {
                    gamma: to_bits(&n.gamma),
                    beta: to_bits(&n.beta),
                    running_mean: to_bits(&n.running_mean),
                    running_var: to_bits(&n.running_var),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> CliResult<Model<f32>> {
        let spec = spec_from_kv(&self.spec)?;
        let fresh = Model::<f32>::new(spec.clone())?;
        let scores = self
            .scores
            .iter()
            .map(|t| DenseMatrix::from_vec(t.rows, t.cols, from_bits(&t.bits)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut norms = fresh.norms.clone();
        if norms.len() != self.norms.len() {
            return Err(CliError::Data(format!("checkpoint has {} norms, spec implies {}", self.norms.len(), norms.len())));
        }
        for (n, s) in norms.iter_mut().zip(&self.norms) {
            let w = n.width();
            if [&s.gamma, &s.beta, &s.running_mean, &s.running_var].iter().any(|v| v.len() != w) {
                return Err(CliError::Data(format!("checkpoint norm state does not have width {w}")));
            }
            *n = BatchNorm {
                gamma: from_bits(&s.gamma),
                beta: from_bits(&s.beta),
                running_mean: from_bits(&s.running_mean),
                running_var: from_bits(&s.running_var),
                ..n.clone()
            };
        }
        Ok(Model::from_parts(spec, fresh.weights, scores, norms)?)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string(self).map_err(|e| CliError::io(path, e))?;
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::in_file(path, e))
    }
}
