//! Forward pass: time encoding, message construction, rate learning, and
//! the stacked embedding computation with a replayable tape.
//!
//! Sampling and aggregation share one code path for every strategy; a
//! learned rate of exactly 1 therefore reproduces most-recent sampling
//! bit for bit. Two-layer requests evaluate inner embeddings lazily with
//! memoization per (node, time, horizon, layer) inside one [`Tape`], so a
//! batch never recomputes a shared neighbor embedding.

use std::collections::HashMap;

use rand::Rng;

use super::{Aggregation, ModelConfig, Params, TimeEncoding};
use crate::error::{Error, Result};
use crate::graph_store::TemporalGraph;
use crate::interp::{interpolate, InterpTape, MessageMatrix};
use crate::linalg::{concat, relu};
use crate::sampler::{
    expanded_indices, recent_indices, tns_indices, truncate_rate, uniform_indices, ExpansionRate,
    SamplePlan, Strategy,
};

/// φ(dt)_k = cos(omega_k·dt + beta_k) for an elapsed time dt >= 0.
pub fn time_encode(enc: &TimeEncoding, dt: f64) -> Result<Vec<f64>> {
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::Contract(format!("time encoding needs dt >= 0, got {dt}")));
    }
    Ok(enc.omega.iter().zip(&enc.beta).map(|(w, b)| (w * dt + b).cos()).collect())
}

/// Forward intermediates of one aggregation block.
#[derive(Debug, Clone)]
pub struct AggrTape {
    pub mean: Vec<f64>,
    pub pre1: Vec<f64>,
    pub hhat: Vec<f64>,
    /// h_self ‖ hhat, the input of the output affine.
    pub cat: Vec<f64>,
}

/// ĥ = ReLU(W1·mean(sampled) + b1); out = W2·(h_self ‖ ĥ) + b2.
/// An empty neighborhood contributes the zero mean vector.
pub fn mean_aggregate(
    block: &Aggregation,
    h_self: &[f64],
    sampled: &[Vec<f64>],
) -> Result<(Vec<f64>, AggrTape)> {
    let d_m = block.w1.cols;
    let mut mean = vec![0.0; d_m];
    if !sampled.is_empty() {
        for row in sampled {
            if row.len() != d_m {
                return Err(Error::Contract(format!(
                    "sampled message has dim {}, block expects {d_m}",
                    row.len()
                )));
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let inv = 1.0 / sampled.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
    }
    let mut pre1 = block.w1.matvec(&mean);
    for (p, b) in pre1.iter_mut().zip(&block.b1) {
        *p += b;
    }
    let hhat = relu(&pre1);
    let cat = concat(h_self, &hhat);
    if cat.len() != block.w2.cols {
        return Err(Error::Contract(format!(
            "h_self dim {} + hidden {} != output affine input {}",
            h_self.len(),
            hhat.len(),
            block.w2.cols
        )));
    }
    let mut out = block.w2.matvec(&cat);
    for (o, b) in out.iter_mut().zip(&block.b2) {
        *o += b;
    }
    Ok((out, AggrTape { mean, pre1, hhat, cat }))
}

/// Forward intermediates of the expansion-learning module.
#[derive(Debug, Clone)]
pub struct RateTape {
    /// Count of most-recent messages fed in, min(S, N).
    pub s_used: usize,
    pub aggr: AggrTape,
    pub rate: ExpansionRate,
}

/// Predicts a layer's expansion rate from the target's own representation
/// and its min(S, N) most recent messages, then clamps it into the valid
/// range for (N, S).
pub fn learn_rate(
    rate_block: &Aggregation,
    h_self: &[f64],
    recent: &[Vec<f64>],
    n: usize,
    s: usize,
) -> Result<(ExpansionRate, RateTape)> {
    if recent.len() != n.min(s) {
        return Err(Error::Contract(format!(
            "expansion module fed {} messages, expected min(S={s}, N={n})",
            recent.len()
        )));
    }
    let (out, aggr) = mean_aggregate(rate_block, h_self, recent)?;
    let rate = truncate_rate(out[0], n, s);
    Ok((rate, RateTape { s_used: recent.len(), aggr, rate }))
}

/// Provenance of one materialized message row.
#[derive(Debug, Clone)]
pub struct MsgRowMeta {
    pub neighbor: u32,
    pub edge_idx: usize,
    pub dt: f64,
    /// Tape index of the neighbor's previous-layer embedding, when that
    /// embedding was itself computed by the model (layer >= 2).
    pub child: Option<usize>,
}

/// Builds message rows h_prev(η) ‖ e ‖ φ(t - t_o) for the given 1-based
/// time-order positions (ascending). `h_prev` supplies the previous-layer
/// representation of a neighbor and, optionally, the tape index it came
/// from.
pub fn build_message_rows(
    graph: &TemporalGraph,
    enc: &TimeEncoding,
    node: u32,
    time: f64,
    horizon: f64,
    positions: &[usize],
    d_m: usize,
    mut h_prev: impl FnMut(u32) -> Result<(Vec<f64>, Option<usize>)>,
) -> Result<(MessageMatrix, Vec<MsgRowMeta>)> {
    let max_pos = positions.last().copied().unwrap_or(0);
    let events = graph.neighbors_before(node, horizon, max_pos)?;
    if max_pos > events.len() {
        return Err(Error::Contract(format!(
            "window position {max_pos} exceeds N = {}",
            events.len()
        )));
    }
    let mut rows = Vec::with_capacity(positions.len());
    let mut metas = Vec::with_capacity(positions.len());
    for &p in positions {
        let ev = &events[p - 1];
        let dt = time - ev.time;
        let phi = time_encode(enc, dt)?;
        let (h, child) = h_prev(ev.neighbor)?;
        let mut row = Vec::with_capacity(h.len() + ev.features.len() + phi.len());
        row.extend_from_slice(&h);
        row.extend_from_slice(ev.features);
        row.extend_from_slice(&phi);
        if row.len() != d_m {
            return Err(Error::Contract(format!(
                "message row dim {} != expected {d_m}",
                row.len()
            )));
        }
        rows.push(row);
        metas.push(MsgRowMeta { neighbor: ev.neighbor, edge_idx: ev.edge_idx, dt, child });
    }
    let matrix = MessageMatrix::new(rows, positions.to_vec(), d_m)?;
    Ok((matrix, metas))
}

/// Integer message positions a plan needs: every integral index itself,
/// the ⌊n⌋/⌊n⌋+1 bracket of every fractional index, plus the 1..=prefix
/// block that feeds the expansion module.
fn plan_positions(plan: &SamplePlan, prefix: usize) -> Vec<usize> {
    let mut set = std::collections::BTreeSet::new();
    set.extend(1..=prefix);
    for &n in &plan.indices {
        let floor = n.floor();
        if n == floor {
            set.insert(floor as usize);
        } else {
            set.insert(floor as usize);
            set.insert(floor as usize + 1);
        }
    }
    set.into_iter().collect()
}

/// One embedding to compute: node at `time`, seeing interactions strictly
/// before `horizon` (<= time). Training batches pass the batch-start time
/// as the horizon; ad-hoc queries leave horizon == time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingRequest {
    pub node: u32,
    pub time: f64,
    pub horizon: f64,
}

impl EmbeddingRequest {
    pub fn at(node: u32, time: f64) -> Self {
        EmbeddingRequest { node, time, horizon: time }
    }
}

/// Cached forward state of one (node, time, layer) embedding; everything
/// the backward pass needs to replay the computation exactly.
#[derive(Debug, Clone)]
pub struct LayerTape {
    pub layer: usize,
    pub node: u32,
    pub time: f64,
    /// N(node, horizon) at plan time.
    pub n_count: usize,
    pub plan: SamplePlan,
    pub messages: MessageMatrix,
    pub row_meta: Vec<MsgRowMeta>,
    pub itape: InterpTape,
    pub sampled: Vec<Vec<f64>>,
    pub aggr: AggrTape,
    pub h_self: Vec<f64>,
    pub self_child: Option<usize>,
    pub out: Vec<f64>,
    pub rate_tape: Option<RateTape>,
}

/// Arena of layer tapes for one batch. Children always precede parents,
/// so a single reverse sweep back-propagates through the whole DAG.
#[derive(Debug, Default)]
pub struct Tape {
    pub nodes: Vec<LayerTape>,
    memo: HashMap<(u32, u64, u64, u8), usize>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn output(&self, idx: usize) -> &[f64] {
        &self.nodes[idx].out
    }
}

fn node_input(graph: &TemporalGraph, d_v: usize, node: u32) -> Result<Vec<f64>> {
    match graph.node_features() {
        Some(feats) => {
            let row = &feats[node as usize];
            if row.len() != d_v {
                return Err(Error::Config(format!(
                    "node features have dim {}, model expects d_v = {d_v}",
                    row.len()
                )));
            }
            Ok(row.clone())
        }
        None => Ok(vec![0.0; d_v]),
    }
}

/// Computes the request's embedding at the model's top layer, recording
/// every intermediate into `tape`. Returns the tape index of the result.
pub fn embed(
    graph: &TemporalGraph,
    params: &Params,
    cfg: &ModelConfig,
    req: &EmbeddingRequest,
    tape: &mut Tape,
    rng: &mut impl Rng,
) -> Result<usize> {
    if graph.d_e() != cfg.dims.d_e {
        return Err(Error::Config(format!(
            "dataset edge features have dim {}, model expects d_e = {}",
            graph.d_e(),
            cfg.dims.d_e
        )));
    }
    if req.horizon > req.time {
        return Err(Error::Contract(format!(
            "horizon {} is after the embedding time {}",
            req.horizon, req.time
        )));
    }
    embed_layer(graph, params, cfg, req.node, req.time, req.horizon, cfg.layers, tape, rng)
}

#[allow(clippy::too_many_arguments)]
fn embed_layer(
    graph: &TemporalGraph,
    params: &Params,
    cfg: &ModelConfig,
    node: u32,
    time: f64,
    horizon: f64,
    layer: usize,
    tape: &mut Tape,
    rng: &mut impl Rng,
) -> Result<usize> {
    let key = (node, time.to_bits(), horizon.to_bits(), layer as u8);
    if let Some(&idx) = tape.memo.get(&key) {
        return Ok(idx);
    }

    let dims = &cfg.dims;
    let s_budget = cfg.budget;
    let n_count = graph.neighbor_count(node, horizon)?;
    let d_m = dims.d_m(layer);

    let (h_self, self_child) = if layer == 1 {
        (node_input(graph, dims.d_v, node)?, None)
    } else {
        let child = embed_layer(graph, params, cfg, node, time, horizon, layer - 1, tape, rng)?;
        (tape.nodes[child].out.clone(), Some(child))
    };

    let lp = &params.layers[layer - 1];

    // Row builder for this layer; at layer >= 2 it recurses one layer down
    // (at the same time and horizon) and records the child tape index.
    macro_rules! build_rows {
        ($positions:expr) => {{
            let positions: &[usize] = $positions;
            if layer == 1 {
                build_message_rows(graph, &params.time_enc, node, time, horizon, positions, d_m, |nb| {
                    Ok((node_input(graph, dims.d_v, nb)?, None))
                })
            } else {
                build_message_rows(graph, &params.time_enc, node, time, horizon, positions, d_m, |nb| {
                    let child =
                        embed_layer(graph, params, cfg, nb, time, horizon, layer - 1, tape, rng)?;
                    Ok((tape.nodes[child].out.clone(), Some(child)))
                })
            }
        }};
    }

    let (plan, rate_tape, messages, row_meta) = match cfg.strategy {
        Strategy::Recent => {
            let plan = recent_indices(n_count, s_budget);
            let positions = plan_positions(&plan, 0);
            let (messages, row_meta) = build_rows!(&positions)?;
            (plan, None, messages, row_meta)
        }
        Strategy::Uniform => {
            let plan = uniform_indices(n_count, s_budget, rng);
            let positions = plan_positions(&plan, 0);
            let (messages, row_meta) = build_rows!(&positions)?;
            (plan, None, messages, row_meta)
        }
        Strategy::Expanded(r) => {
            let plan = expanded_indices(n_count, s_budget, r)?;
            let positions = plan_positions(&plan, 0);
            let (messages, row_meta) = build_rows!(&positions)?;
            (plan, None, messages, row_meta)
        }
        Strategy::Tns => {
            // The expansion module reads the most recent min(S, N) rows,
            // which also seeds the final window.
            let s_used = n_count.min(s_budget);
            let prefix: Vec<usize> = (1..=s_used).collect();
            let (prefix_matrix, prefix_meta) = build_rows!(&prefix)?;
            let (rate, rtape) =
                learn_rate(&lp.rate, &h_self, prefix_matrix.rows(), n_count, s_budget)?;
            let plan = tns_indices(&rate, n_count, s_budget)?;
            let positions = plan_positions(&plan, s_used);
            if positions == prefix {
                (plan, Some(rtape), prefix_matrix, prefix_meta)
            } else {
                let (messages, row_meta) = build_rows!(&positions)?;
                (plan, Some(rtape), messages, row_meta)
            }
        }
    };

    let (sampled, itape) = interpolate(&messages, &plan)?;
    let (out, aggr) = mean_aggregate(&lp.aggr, &h_self, &sampled)?;

    let idx = tape.nodes.len();
    tape.nodes.push(LayerTape {
        layer,
        node,
        time,
        n_count,
        plan,
        messages,
        row_meta,
        itape,
        sampled,
        aggr,
        h_self,
        self_child,
        out,
        rate_tape,
    });
    tape.memo.insert(key, idx);
    Ok(idx)
}
