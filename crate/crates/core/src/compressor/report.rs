//! Memory, parameter and multiply-accumulate accounting.

use super::PackedModel;
use crate::graph::Graph;
use crate::model::{Architecture, ModelSpec};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::supermask::bits_per_weight;

/// Size figures of a packed model.
///
/// `mask_bits` is the exact nested-bitmap size; `paper_formula_bits` is the
/// analytic `|S|·(1 + Σ_{n<N} kₙ)` figure. Both are kept because they differ
/// for multicoated masks.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryReport {
    pub mask_bits: u64,
    pub paper_formula_bits: f64,
    /// Batch-norm reals at 32 bits each.
    pub stored_real_bits: u64,
    /// `⌈(mask_bits + stored_real_bits)/8⌉`.
    pub total_bytes: u64,
    /// Dense 32-bit weights plus the same stored reals.
    pub dwl_bytes: u64,
    /// Mask bits by the analytic formula plus stored reals.
    pub params_total: u64,
    /// Linear-layer MACs over all nodes; aggregation excluded.
    pub macs_linear: u64,
}

impl MemoryReport {
    pub fn mask_bytes(&self) -> f64 {
        self.mask_bits as f64 / 8.0
    }

    pub fn paper_formula_bytes(&self) -> f64 {
        self.paper_formula_bits / 8.0
    }
}

pub fn to_mib(bytes: f64) -> f64 {
    bytes / (1u64 << 20) as f64
}

pub fn memory_report(packed: &PackedModel, num_nodes: usize) -> MemoryReport {
    let mut mask_bits = 0u64;
    let mut paper_formula_bits = 0.0;
    for m in &packed.masks {
        let len = m.counts.len() as u64;
        let coats = m.counts.coats();
        mask_bits += len + (0..coats.saturating_sub(1)).map(|n| m.counts.coat_popcount(n) as u64).sum::<u64>();
        paper_formula_bits += len as f64 * bits_per_weight(&m.sparsities);
    }
    let reals: u64 = packed.norms.iter().map(|n| 4 * n.width() as u64).sum();
    let stored_real_bits = 32 * reals;
    MemoryReport {
        mask_bits,
        paper_formula_bits,
        stored_real_bits,
        total_bytes: (mask_bits + stored_real_bits).div_ceil(8),
        dwl_bytes: dwl_bytes(&packed.spec).unwrap_or(0) + 4 * reals,
        params_total: paper_formula_bits.round() as u64 + reals,
        macs_linear: linear_macs(packed, num_nodes),
    }
}

/// 32 bits per dense weight of the layout, stored reals excluded.
pub fn dwl_bytes(spec: &ModelSpec) -> Result<u64> {
    Ok(spec.layout()?.weight_shapes.iter().map(|&(r, c)| 4 * (r * c) as u64).sum())
}

/// `|V| · Σ_links (surviving weights)`: every masked linear layer costs one
/// MAC per node and surviving weight.
pub fn linear_macs(packed: &PackedModel, num_nodes: usize) -> u64 {
    let Ok(layout) = packed.spec.layout() else { return 0 };
    layout.links.iter().map(|l| num_nodes as u64 * packed.masks[l.score].counts.nonzero() as u64).sum()
}

/// Sparse aggregation cost `Σ nnz(Â)·F_in` over the layers that aggregate.
pub fn aggregation_macs<T: Scalar>(spec: &ModelSpec, graph: &Graph<T>) -> Result<u64> {
    let layout = spec.layout()?;
    let widths: Vec<usize> = match spec.architecture {
        Architecture::Gcn => layout.weight_shapes.iter().map(|s| s.0).collect(),
        Architecture::Gin => layout.weight_shapes.iter().step_by(2).map(|s| s.0).collect(),
        Architecture::ResGcn => {
            let mut w = vec![spec.in_dim];
            w.extend(std::iter::repeat_n(spec.width, spec.layers));
            w
        }
    };
    let nnz = match spec.architecture {
        Architecture::Gin => graph.sum_adjacency.nnz(),
        _ => graph.adjacency.nnz(),
    } as u64;
    Ok(widths.iter().map(|&f| nnz * f as u64).sum())
}
