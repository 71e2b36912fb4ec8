use serde::{Deserialize, Serialize};

use super::network::KanNetwork;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    /// Edges masked by this call, as `(layer, input, output)`.
    pub masked: Vec<(usize, usize, usize)>,
    /// Output nodes whose incoming edges were all below the threshold and
    /// were therefore left untouched.
    pub rolled_back: Vec<usize>,
    /// Sum over masked edges of their mean `|phi|`.
    pub masked_importance: f64,
    pub active_before: usize,
    pub active_after: usize,
}

/// Masks edges whose mean absolute output over the training inputs (from
/// [`KanNetwork::record_stats`]) is below `threshold`.
///
/// Output nodes are never cut off completely: if every incoming edge of an
/// output node falls below the threshold, that node keeps its edges and a
/// warning is logged. Hidden nodes left without active outgoing edges then
/// have their incoming edges masked as well, since nothing reads them.
pub fn prune(net: &mut KanNetwork, threshold: f64) -> Result<PruneReport> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(invalid("prune threshold must be non-negative"));
    }
    let stats = net.stats.clone().ok_or_else(|| invalid("network has no edge statistics; train it first"))?;
    let active_before = net.active_edges();
    let last = net.layers.len() - 1;
    let mut masked = Vec::new();
    let mut rolled_back = Vec::new();
    let mut masked_importance = 0.0;

    for (l, layer) in net.layers.iter_mut().enumerate() {
        let imp = &stats.importance[l];
        for j in 0..layer.out_dim {
            let cut: Vec<usize> = (0..layer.in_dim)
                .filter(|&i| layer.mask[layer.edge(i, j)] && imp[layer.edge(i, j)] < threshold)
                .collect();
            let live = (0..layer.in_dim).filter(|&i| layer.mask[layer.edge(i, j)]).count();
            if l == last && !cut.is_empty() && cut.len() == live {
                log::warn!("threshold {threshold} would disconnect output {j}; keeping its edges");
                rolled_back.push(j);
                continue;
            }
            for i in cut {
                let e = layer.edge(i, j);
                layer.mask[e] = false;
                masked_importance += imp[e];
                masked.push((l, i, j));
            }
        }
    }

    // Drop inputs of hidden nodes that no longer feed anything.
    for l in (0..last).rev() {
        let (head, tail) = net.layers.split_at_mut(l + 1);
        let (layer, next) = (&mut head[l], &tail[0]);
        for h in 0..layer.out_dim {
            let feeds = (0..next.out_dim).any(|j| next.mask[next.edge(h, j)]);
            if feeds {
                continue;
            }
            for i in 0..layer.in_dim {
                let e = layer.edge(i, h);
                if layer.mask[e] {
                    layer.mask[e] = false;
                    masked.push((l, i, h));
                }
            }
        }
    }

    Ok(PruneReport { masked, rolled_back, masked_importance, active_before, active_after: net.active_edges() })
}
