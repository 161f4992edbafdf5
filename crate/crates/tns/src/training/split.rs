//! Chronological train/validation/test splitting of the event stream.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::graph_store::TemporalGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    /// Per-node flag: true when the node has no train-range edge.
    pub inductive_nodes: Vec<bool>,
}

impl Split {
    pub fn is_inductive_event(&self, src: u32, dst: u32) -> bool {
        self.inductive_nodes[src as usize] || self.inductive_nodes[dst as usize]
    }
}

/// Splits the edge stream at the given cumulative-ratio positions
/// (boundaries rounded to edge positions). Edges sharing a boundary
/// timestamp all fall on the earlier side, so split boundaries always
/// align with a strict timestamp increase.
pub fn split_chronological(graph: &TemporalGraph, ratios: (f64, f64, f64)) -> Result<Split> {
    let (r_train, r_val, r_test) = ratios;
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!("split ratios must sum to 1, got {ratios:?}")));
    }
    if r_train <= 0.0 || r_val <= 0.0 || r_test <= 0.0 {
        return Err(Error::Param("all split ratios must be positive".into()));
    }
    let n = graph.num_edges();
    if n < 10 {
        return Err(Error::Data(format!("too few edges to split: {n} < 10")));
    }
    let ts = |i: usize| graph.edge(i).timestamp;
    // Push a nominal boundary right until the timestamp strictly
    // increases, keeping ties on the earlier side.
    let advance = |nominal: usize| -> usize {
        let mut b = nominal.clamp(1, n);
        while b < n && ts(b) == ts(b - 1) {
            b += 1;
        }
        b
    };
    let b1 = advance((r_train * n as f64).round() as usize);
    let b2 = advance(((r_train + r_val) * n as f64).round() as usize).max(b1);

    if b1 == 0 || b1 >= b2 || b2 >= n {
        return Err(Error::Data(format!(
            "degenerate chronological split (boundaries {b1}, {b2} of {n}): \
             timestamps do not change across a split boundary"
        )));
    }

    let mut seen = vec![false; graph.num_nodes() as usize];
    for e in &graph.edges()[..b1] {
        seen[e.src as usize] = true;
        seen[e.dst as usize] = true;
    }
    let inductive_nodes = seen.into_iter().map(|s| !s).collect();

    Ok(Split { train: 0..b1, val: b1..b2, test: b2..n, inductive_nodes })
}
