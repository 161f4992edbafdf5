//! Batched task losses with optional gradient accumulation.
//!
//! Edge prediction scores (h_src ‖ h_dst) pairs through the edge head
//! with one uniformly drawn negative destination per positive; node
//! classification scores h_src through the node head against the event's
//! state label. Both use binary cross-entropy on logits. Every embedding
//! in a batch shares one tape, so the backward pass is a single sweep.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph_store::TemporalGraph;
use crate::linalg::concat;
use crate::model::{backward, embed, EmbeddingRequest, ModelConfig, Params, Tape};

/// Numerically stable binary cross-entropy on a logit.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) + (1.0 + (-z.abs()).exp()).ln() - y * z
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Scores, labels, and per-sample losses of one evaluated batch.
#[derive(Debug, Clone, Default)]
pub struct BatchResult {
    /// Mean per-sample loss.
    pub loss: f64,
    /// (sample id = global edge index, loss) per positive event.
    pub per_sample: Vec<(u64, f64)>,
    /// Sigmoid scores; positives first, then negatives (edge task).
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    /// Post-truncation expansion rates observed in the forward pass
    /// (one per learned-rate module application).
    pub rates: Vec<f64>,
}

/// Draws one negative destination per positive event, uniformly from the
/// observed destination pool, never equal to the event's own destination.
pub fn draw_negatives(
    graph: &TemporalGraph,
    events: &[usize],
    pool: &[u32],
    rng: &mut impl Rng,
) -> Result<Vec<u32>> {
    if pool.len() < 2 {
        return Err(Error::Data("destination pool too small for negative sampling".into()));
    }
    events
        .iter()
        .map(|&e| {
            let dst = graph.edge(e).dst;
            loop {
                let cand = pool[rng.gen_range(0..pool.len())];
                if cand != dst {
                    return Ok(cand);
                }
            }
        })
        .collect()
}

fn collect_rates(tape: &Tape, out: &mut Vec<f64>) {
    for node in &tape.nodes {
        if let Some(rt) = &node.rate_tape {
            out.push(rt.rate.value);
        }
    }
}

/// Binary cross-entropy edge-prediction loss over a batch of positive
/// events with precomputed negatives. All embeddings see interactions
/// strictly before `horizon`. When `grads` is given, parameter gradients
/// of the mean loss are accumulated.
#[allow(clippy::too_many_arguments)]
pub fn edge_prediction_loss(
    graph: &TemporalGraph,
    params: &Params,
    mcfg: &ModelConfig,
    events: &[usize],
    negatives: &[u32],
    horizon: f64,
    rng: &mut impl Rng,
    mut grads: Option<&mut Params>,
) -> Result<BatchResult> {
    if events.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if negatives.len() != events.len() {
        return Err(Error::Contract("one negative per positive event required".into()));
    }
    let mut tape = Tape::new();
    let mut result = BatchResult::default();
    let mut head_tapes = Vec::with_capacity(events.len());
    let inv_batch = 1.0 / events.len() as f64;

    for (&e, &neg) in events.iter().zip(negatives) {
        let edge = graph.edge(e);
        let t = edge.timestamp;
        let src_idx =
            embed(graph, params, mcfg, &EmbeddingRequest { node: edge.src, time: t, horizon }, &mut tape, rng)?;
        let dst_idx =
            embed(graph, params, mcfg, &EmbeddingRequest { node: edge.dst, time: t, horizon }, &mut tape, rng)?;
        let neg_idx =
            embed(graph, params, mcfg, &EmbeddingRequest { node: neg, time: t, horizon }, &mut tape, rng)?;

        let pos_in = concat(tape.output(src_idx), tape.output(dst_idx));
        let (pos_out, pos_tape) = params.edge_head.forward(&pos_in);
        let neg_in = concat(tape.output(src_idx), tape.output(neg_idx));
        let (neg_out, neg_tape) = params.edge_head.forward(&neg_in);
        let (z_pos, z_neg) = (pos_out[0], neg_out[0]);

        let sample_loss = 0.5 * (bce_with_logit(z_pos, 1.0) + bce_with_logit(z_neg, 0.0));
        result.per_sample.push((edge.edge_idx as u64, sample_loss));
        result.loss += sample_loss * inv_batch;
        result.scores.push(sigmoid(z_pos));
        result.labels.push(1);
        result.scores.push(sigmoid(z_neg));
        result.labels.push(0);
        head_tapes.push((src_idx, dst_idx, neg_idx, pos_tape, neg_tape, z_pos, z_neg));
    }

    if let Some(grads) = grads.as_deref_mut() {
        let d_o = mcfg.dims.d_o;
        let mut seeds: Vec<(usize, Vec<f64>)> = Vec::with_capacity(3 * events.len());
        for (src_idx, dst_idx, neg_idx, pos_tape, neg_tape, z_pos, z_neg) in &head_tapes {
            // d(mean loss)/dz, with the 0.5 pair weight folded in.
            let d_zpos = 0.5 * inv_batch * (sigmoid(*z_pos) - 1.0);
            let d_zneg = 0.5 * inv_batch * sigmoid(*z_neg);
            let d_pos_in =
                params.edge_head.backward(pos_tape, &[d_zpos], &mut grads.edge_head);
            let d_neg_in =
                params.edge_head.backward(neg_tape, &[d_zneg], &mut grads.edge_head);
            seeds.push((*src_idx, d_pos_in[..d_o].to_vec()));
            seeds.push((*dst_idx, d_pos_in[d_o..].to_vec()));
            seeds.push((*src_idx, d_neg_in[..d_o].to_vec()));
            seeds.push((*neg_idx, d_neg_in[d_o..].to_vec()));
        }
        backward(&tape, params, &seeds, grads)?;
    }
    collect_rates(&tape, &mut result.rates);
    Ok(result)
}

/// Binary cross-entropy node-classification loss against per-event state
/// labels (which must be 0 or 1).
pub fn node_classification_loss(
    graph: &TemporalGraph,
    params: &Params,
    mcfg: &ModelConfig,
    events: &[usize],
    horizon: f64,
    rng: &mut impl Rng,
    mut grads: Option<&mut Params>,
) -> Result<BatchResult> {
    if events.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut tape = Tape::new();
    let mut result = BatchResult::default();
    let mut head_tapes = Vec::with_capacity(events.len());
    let inv_batch = 1.0 / events.len() as f64;

    for &e in events {
        let edge = graph.edge(e);
        let label = edge.state_label;
        if label != 0.0 && label != 1.0 {
            return Err(Error::Data(format!(
                "non-binary state label {label} on event {e}"
            )));
        }
        let t = edge.timestamp;
        let src_idx =
            embed(graph, params, mcfg, &EmbeddingRequest { node: edge.src, time: t, horizon }, &mut tape, rng)?;
        let (out, htape) = params.node_head.forward(tape.output(src_idx));
        let z = out[0];
        let sample_loss = bce_with_logit(z, label);
        result.per_sample.push((edge.edge_idx as u64, sample_loss));
        result.loss += sample_loss * inv_batch;
        result.scores.push(sigmoid(z));
        result.labels.push(label as u8);
        head_tapes.push((src_idx, htape, z, label));
    }

    if let Some(grads) = grads.as_deref_mut() {
        let mut seeds = Vec::with_capacity(events.len());
        for (src_idx, htape, z, label) in &head_tapes {
            let d_z = inv_batch * (sigmoid(*z) - label);
            let d_in = params.node_head.backward(htape, &[d_z], &mut grads.node_head);
            seeds.push((*src_idx, d_in));
        }
        backward(&tape, params, &seeds, grads)?;
    }
    collect_rates(&tape, &mut result.rates);
    Ok(result)
}
