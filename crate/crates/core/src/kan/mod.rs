//! Kolmogorov-Arnold networks built from B-spline edge activations.
//!
//! A layer maps `in_dim` inputs to `out_dim` outputs; output `j` is the sum
//! over inputs `i` of `phi_ij(x_i)` where
//! `phi(x) = omega * (silu(x) + sum_m c_m B_m(x))`. Layers compose in order.

mod cost;
mod network;
mod prune;
mod spline;
mod symbolic;
mod train;

use serde::{Deserialize, Serialize};

pub use cost::{op_count, op_count_symbolic, OpCount};
pub use network::{EdgeStats, FeatureKind, FeatureScale, InputNorm, KanLayer, KanNetwork, OutputNorm};
pub use prune::{prune, PruneReport};
pub use spline::{bspline_basis, silu, silu_deriv, Grid, SplineActivation, MAX_ORDER};
pub use symbolic::{fit_family, symbolic_export, EdgeFit, Expr, Family, SymbolicEdge, SymbolicLayer, SymbolicModel};
pub use train::{train, Optimizer, TrainConfig, TrainData, TrainReport};

/// Layer layout between the input and output widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// One hidden layer of width `2 * in + 1`.
    TwoLayer,
    /// A single `in -> out` layer.
    Direct,
    /// Explicit hidden widths.
    Hidden(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KanConfig {
    pub architecture: Architecture,
    pub grid_intervals: usize,
    pub order: usize,
    /// Spline coefficients start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Padding added around observed hidden ranges, as a fraction of the width.
    pub hidden_margin: f64,
}

impl Default for KanConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::TwoLayer,
            grid_intervals: 5,
            order: 3,
            init_scale: 0.1,
            hidden_margin: 0.1,
        }
    }
}

impl KanConfig {
    pub fn dims(&self, in_dim: usize, out_dim: usize) -> Vec<usize> {
        let mut d = vec![in_dim];
        match &self.architecture {
            Architecture::TwoLayer => d.push(2 * in_dim + 1),
            Architecture::Direct => {}
            Architecture::Hidden(h) => d.extend_from_slice(h),
        }
        d.push(out_dim);
        d
    }
}
