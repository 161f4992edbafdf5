//! Reverse pass over a batch tape.
//!
//! Children always precede parents in the arena, so one reverse sweep
//! with per-tape upstream accumulators back-propagates through the whole
//! embedding DAG: output affine → ReLU block → mean → interpolation
//! (messages and indices) → expansion module via the index-to-rate chain
//! rule dL/dr = Σ_s (s-1)·dL/dn_s, masked to zero whenever the rate
//! truncation clamped → time encoding and child embeddings.

use super::embed::Tape;
use super::{Aggregation, AggrTape, Params};
use crate::error::{Error, Result};
use crate::interp::{backward_indices, backward_messages};
use crate::linalg::{axpy, relu_backward};

/// Backward through one aggregation block. Accumulates parameter
/// gradients and returns (d_h_self, d_mean).
fn aggr_backward(
    block: &Aggregation,
    tape: &AggrTape,
    d_in: usize,
    d_out: &[f64],
    grads: &mut Aggregation,
) -> (Vec<f64>, Vec<f64>) {
    grads.w2.outer_acc(d_out, &tape.cat);
    axpy(1.0, d_out, &mut grads.b2);
    let mut d_cat = vec![0.0; block.w2.cols];
    block.w2.matvec_t_acc(d_out, &mut d_cat);
    let d_h_self = d_cat[..d_in].to_vec();
    let d_pre1 = relu_backward(&tape.pre1, &d_cat[d_in..]);
    grads.w1.outer_acc(&d_pre1, &tape.mean);
    axpy(1.0, &d_pre1, &mut grads.b1);
    let mut d_mean = vec![0.0; block.w1.cols];
    block.w1.matvec_t_acc(&d_pre1, &mut d_mean);
    (d_h_self, d_mean)
}

/// Back-propagates the seeded output gradients through every tape entry,
/// accumulating parameter gradients into `grads` (which must be shaped
/// like `params`, e.g. from [`Params::zeros_like`]).
pub fn backward(
    tape: &Tape,
    params: &Params,
    seeds: &[(usize, Vec<f64>)],
    grads: &mut Params,
) -> Result<()> {
    let n = tape.nodes.len();
    let mut upstream: Vec<Vec<f64>> =
        tape.nodes.iter().map(|t| vec![0.0; t.out.len()]).collect();
    for (idx, seed) in seeds {
        if *idx >= n || seed.len() != upstream[*idx].len() {
            return Err(Error::Contract("seed does not match the tape".into()));
        }
        axpy(1.0, seed, &mut upstream[*idx]);
    }

    let d_t = params.time_enc.omega.len();
    for idx in (0..n).rev() {
        let u = std::mem::take(&mut upstream[idx]);
        if u.iter().all(|&x| x == 0.0) {
            continue;
        }
        let lt = &tape.nodes[idx];
        let layer_params = &params.layers[lt.layer - 1];
        let d_in = lt.h_self.len();
        let d_m = lt.messages.d_m();
        let d_e = d_m - d_in - d_t;

        let (mut d_h_self, d_mean) = {
            let gl = &mut grads.layers[lt.layer - 1];
            aggr_backward(&layer_params.aggr, &lt.aggr, d_in, &u, &mut gl.aggr)
        };

        // Mean over the realized sampled messages.
        let realized = lt.plan.realized;
        let d_sampled: Vec<Vec<f64>> = if realized > 0 {
            let scale = 1.0 / realized as f64;
            vec![d_mean.iter().map(|v| v * scale).collect(); realized]
        } else {
            Vec::new()
        };
        let mut d_rows = backward_messages(&lt.itape, &d_sampled)?;

        // Learned-rate chain: index gradients fold into a single scalar
        // per tape, zeroed whenever the truncation clamp saturated.
        if let Some(rt) = &lt.rate_tape {
            let d_raw = if rt.rate.in_range {
                let g_idx = backward_indices(&lt.itape, &lt.messages, &d_sampled)?;
                g_idx.iter().enumerate().map(|(k, g)| k as f64 * g).sum()
            } else {
                0.0
            };
            if d_raw != 0.0 {
                let gl = &mut grads.layers[lt.layer - 1];
                let (d_h_self_r, d_mean_r) =
                    aggr_backward(&layer_params.rate, &rt.aggr, d_in, &[d_raw], &mut gl.rate);
                if rt.s_used > 0 {
                    let scale = 1.0 / rt.s_used as f64;
                    for slot in 0..rt.s_used {
                        debug_assert_eq!(lt.messages.positions()[slot], slot + 1);
                        axpy(scale, &d_mean_r, &mut d_rows[slot]);
                    }
                }
                axpy(1.0, &d_h_self_r, &mut d_h_self);
            }
        }

        // Split each row gradient into neighbor-embedding, edge-feature
        // (data, dropped) and time-encoding parts.
        for (slot, meta) in lt.row_meta.iter().enumerate() {
            let d_row = &d_rows[slot];
            if d_row.iter().all(|&x| x == 0.0) {
                continue;
            }
            let d_phi = &d_row[d_in + d_e..];
            for k in 0..d_t {
                let s = (params.time_enc.omega[k] * meta.dt + params.time_enc.beta[k]).sin();
                grads.time_enc.omega[k] += -meta.dt * s * d_phi[k];
                grads.time_enc.beta[k] += -s * d_phi[k];
            }
            if let Some(child) = meta.child {
                axpy(1.0, &d_row[..d_in], &mut upstream[child]);
            }
        }

        if let Some(sc) = lt.self_child {
            axpy(1.0, &d_h_self, &mut upstream[sc]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_store::TemporalGraph;
    use crate::model::{embed, init_params, Dims, EmbeddingRequest, ModelConfig};
    use crate::sampler::Strategy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain_graph(events: usize) -> TemporalGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut rows = Vec::new();
        for i in 0..events {
            let src = rng.gen_range(0..6u32);
            let dst = rng.gen_range(6..12u32);
            rows.push((src, dst, i as f64, 0.0, vec![
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]));
        }
        TemporalGraph::from_events(rows).unwrap()
    }

    fn cfg(layers: usize) -> ModelConfig {
        ModelConfig {
            layers,
            budget: 3,
            strategy: Strategy::Tns,
            dims: Dims { d_v: 2, d_e: 2, d_t: 3, d_h: 4, d_hr: 4, d_o: 4 },
            sigma_init: 0.01,
        }
    }

    /// Params adjusted so every learned rate sits strictly inside its
    /// clamp range and all strided indices are comfortably fractional.
    fn smooth_params(cfg: &ModelConfig, seed: u64) -> crate::model::Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = init_params(cfg, &mut rng).unwrap();
        for layer in &mut p.layers {
            layer.rate.b2 = vec![1.7];
        }
        p
    }

    fn loss(
        graph: &TemporalGraph,
        params: &crate::model::Params,
        cfg: &ModelConfig,
        probes: &[(u32, f64)],
        u: &[f64],
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = crate::model::Tape::new();
        let mut total = 0.0;
        for &(node, t) in probes {
            let idx =
                embed(graph, params, cfg, &EmbeddingRequest::at(node, t), &mut tape, &mut rng)
                    .unwrap();
            total += crate::linalg::dot(tape.output(idx), u);
        }
        total
    }

    fn analytic_grads(
        graph: &TemporalGraph,
        params: &crate::model::Params,
        cfg: &ModelConfig,
        probes: &[(u32, f64)],
        u: &[f64],
    ) -> crate::model::Params {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = crate::model::Tape::new();
        let mut seeds = Vec::new();
        for &(node, t) in probes {
            let idx =
                embed(graph, params, cfg, &EmbeddingRequest::at(node, t), &mut tape, &mut rng)
                    .unwrap();
            seeds.push((idx, u.to_vec()));
        }
        let mut grads = params.zeros_like();
        backward(&tape, params, &seeds, &mut grads).unwrap();
        grads
    }

    #[test]
    fn zero_upstream_yields_zero_gradients() {
        let g = chain_graph(40);
        let cfg = cfg(1);
        let params = smooth_params(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = crate::model::Tape::new();
        let idx = embed(&g, &params, &cfg, &EmbeddingRequest::at(0, 35.0), &mut tape, &mut rng)
            .unwrap();
        let mut grads = params.zeros_like();
        backward(&tape, &params, &[(idx, vec![0.0; 4])], &mut grads).unwrap();
        for t in grads.visit() {
            assert!(t.data.iter().all(|&v| v == 0.0), "{} not zero", t.name);
        }
    }

    #[test]
    fn saturated_truncation_blocks_expansion_gradients() {
        let g = chain_graph(60);
        let cfg = cfg(1);
        let mut params = smooth_params(&cfg, 8);
        // Push the raw rate far above any (N-1)/(S-1) bound in this graph.
        for layer in &mut params.layers {
            layer.rate.w2.data.iter_mut().for_each(|w| *w = 0.0);
            layer.rate.b2 = vec![500.0];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = crate::model::Tape::new();
        let idx = embed(&g, &params, &cfg, &EmbeddingRequest::at(1, 55.0), &mut tape, &mut rng)
            .unwrap();
        let rt = tape.nodes[idx].rate_tape.as_ref().unwrap();
        assert!(!rt.rate.in_range);
        let mut grads = params.zeros_like();
        backward(&tape, &params, &[(idx, vec![1.0; 4])], &mut grads).unwrap();
        for t in grads.visit() {
            if t.name.contains(".rate.") {
                assert!(t.data.iter().all(|&v| v == 0.0), "{} leaked gradient", t.name);
            }
        }
        // ... while the backbone still receives signal.
        let aggr_total: f64 = grads
            .visit()
            .iter()
            .filter(|t| t.name.contains(".aggr."))
            .flat_map(|t| t.data.iter())
            .map(|v| v.abs())
            .sum();
        assert!(aggr_total > 0.0);
    }

    fn run_fd_check(layers: usize, probes: &[(u32, f64)]) {
        let g = chain_graph(60);
        let cfg = cfg(layers);
        let params = smooth_params(&cfg, 42);
        let u: Vec<f64> = vec![0.9, -1.3, 0.4, 0.7];

        // Confirm the probe configuration is smooth: rates strictly inside
        // bounds, strided indices away from integers.
        {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut tape = crate::model::Tape::new();
            for &(node, t) in probes {
                embed(&g, &params, &cfg, &EmbeddingRequest::at(node, t), &mut tape, &mut rng)
                    .unwrap();
            }
            for node in &tape.nodes {
                if let Some(rt) = &node.rate_tape {
                    if rt.rate.in_range {
                        for (k, &idx) in node.plan.indices.iter().enumerate() {
                            if k > 0 {
                                assert!(
                                    (idx - idx.round()).abs() > 0.05,
                                    "index {idx} too close to integral"
                                );
                            }
                        }
                    }
                }
            }
        }

        let analytic = analytic_grads(&g, &params, &cfg, probes, &u);
        let mut probe_params = params.clone();
        let eps = 1e-6;
        let mut checked = 0usize;
        let n_tensors = probe_params.visit().len();
        for ti in 0..n_tensors {
            let len = probe_params.visit()[ti].data.len();
            for ci in (0..len).step_by(3) {
                let orig = probe_params.visit()[ti].data[ci];
                probe_params.visit_mut()[ti].data[ci] = orig + eps;
                let f1 = loss(&g, &probe_params, &cfg, probes, &u);
                probe_params.visit_mut()[ti].data[ci] = orig - eps;
                let f2 = loss(&g, &probe_params, &cfg, probes, &u);
                probe_params.visit_mut()[ti].data[ci] = orig;
                let fd = (f1 - f2) / (2.0 * eps);
                let a = analytic.visit()[ti].data[ci];
                let denom = fd.abs().max(a.abs()).max(1e-3);
                assert!(
                    (fd - a).abs() / denom <= 2e-3,
                    "{}[{ci}]: fd {fd} vs analytic {a}",
                    analytic.visit()[ti].name
                );
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn gradients_match_finite_differences_single_layer() {
        run_fd_check(1, &[(0, 55.0), (2, 50.0), (7, 58.0)]);
    }

    #[test]
    fn gradients_match_finite_differences_two_layers() {
        run_fd_check(2, &[(0, 55.0), (8, 52.0)]);
    }
}
