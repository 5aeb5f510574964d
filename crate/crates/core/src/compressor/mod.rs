//! Packed models: seeds instead of weights, nested bitmaps instead of scores.
//!
//! A trained model only needs the coat counts of each score set. Weights are
//! regenerated from their [`InitSpec`] seeds, so the file holds the model
//! description, one seed record per weight set, the nested coat bitmaps and
//! the batch-norm reals.

mod format;
mod report;

pub use format::{decode_nested, encode_nested, FORMAT_VERSION, MAGIC};
pub use report::{aggregation_macs, dwl_bytes, linear_macs, memory_report, to_mib, MemoryReport};

use crate::error::{config_err, Result};
use crate::graph::Graph;
use crate::matrix::{CsrMatrix, DenseMatrix};
use crate::model::{effective_weights, forward, BatchNorm, Layout, Mode, Model, ModelSpec, WeightSet};
use crate::rand_init::InitSpec;
use crate::supermask::CoatMaskSum;

/// Shape and regeneration recipe of one frozen weight tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PackedWeightSet {
    pub init: InitSpec,
    pub rows: usize,
    pub cols: usize,
}

/// Coat counts of one score set with the sparsity list they were cut at.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedMask {
    pub sparsities: Vec<f64>,
    pub counts: CoatMaskSum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PackedModel {
    pub spec: ModelSpec,
    pub weight_sets: Vec<PackedWeightSet>,
    pub masks: Vec<PackedMask>,
    pub norms: Vec<BatchNorm<f32>>,
}

/// Captures the final masks of `model` under its plan's sparsity list.
pub fn pack(model: &Model<f32>) -> Result<PackedModel> {
    let sparsities = model.spec.plan.sparsities.clone();
    let masks = model.masks(&sparsities)?;
    Ok(PackedModel {
        spec: model.spec.clone(),
        weight_sets: model
            .weights
            .iter()
            .map(|w| PackedWeightSet { init: w.init, rows: w.w_rand.rows(), cols: w.w_rand.cols() })
            .collect(),
        masks: masks.into_iter().map(|counts| PackedMask { sparsities: sparsities.clone(), counts }).collect(),
        norms: model.norms.clone(),
    })
}

/// Regenerated weights plus fixed masks: runs inference, cannot train.
#[derive(Clone, Debug)]
pub struct Executable {
    pub spec: ModelSpec,
    pub layout: Layout,
    pub weights: Vec<WeightSet<f32>>,
    pub masks: Vec<CoatMaskSum>,
    pub norms: Vec<BatchNorm<f32>>,
}

impl Executable {
    pub fn effective_weights(&self) -> Result<Vec<DenseMatrix<f32>>> {
        effective_weights(&self.layout, &self.weights, &self.masks)
    }

    /// Dense masked forward, same path as [`Model::logits_with_masks`].
    pub fn logits(&self, graph: &Graph<f32>) -> Result<DenseMatrix<f32>> {
        let effective = self.effective_weights()?;
        Ok(forward(&self.spec, &self.layout, graph, &effective, &self.norms, Mode::Eval)?.0)
    }

    /// Each effective weight as CSR holding only surviving, count-scaled entries.
    pub fn sparse_weights(&self) -> Result<Vec<CsrMatrix<f32>>> {
        Ok(self.effective_weights()?.iter().map(CsrMatrix::from_dense).collect())
    }

    /// Forward pass whose linear layers are all sparse-dense products.
    pub fn sparse_logits(&self, graph: &Graph<f32>) -> Result<DenseMatrix<f32>> {
        let ops = self.sparse_weights()?;
        Ok(forward(&self.spec, &self.layout, graph, &ops, &self.norms, Mode::Eval)?.0)
    }
}

impl PackedModel {
    /// Checks that every section agrees with the layout implied by the spec.
    pub fn validate(&self) -> Result<Layout> {
        let layout = self.spec.layout()?;
        let wshapes: Vec<_> = self.weight_sets.iter().map(|w| (w.rows, w.cols)).collect();
        let mshapes: Vec<_> = self.masks.iter().map(|m| (m.counts.rows(), m.counts.cols())).collect();
        let nwidths: Vec<_> = self.norms.iter().map(|n| n.width()).collect();
        if wshapes != layout.weight_shapes || mshapes != layout.score_shapes || nwidths != layout.norm_widths {
            return config_err("packed sections do not match the layout implied by the spec");
        }
        for m in &self.masks {
            if m.sparsities.len() != m.counts.coats() {
                return config_err("sparsity list length differs from the coat count");
            }
        }
        Ok(layout)
    }

    /// Rebuilds every weight from its seed.
    pub fn unpack(&self) -> Result<Executable> {
        let layout = self.validate()?;
        let weights = self
            .weight_sets
            .iter()
            .map(|w| WeightSet::generate(w.init, w.rows, w.cols))
            .collect::<Result<Vec<_>>>()?;
        Ok(Executable {
            spec: self.spec.clone(),
            layout,
            weights,
            masks: self.masks.iter().map(|m| m.counts.clone()).collect(),
            norms: self.norms.clone(),
        })
    }
}

pub fn unpack(packed: &PackedModel) -> Result<Executable> {
    packed.unpack()
}

pub fn sparse_inference(packed: &PackedModel, graph: &Graph<f32>) -> Result<DenseMatrix<f32>> {
    packed.unpack()?.sparse_logits(graph)
}
