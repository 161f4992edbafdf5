//! Immutable temporal interaction store.
//!
//! Events are loaded once from a JODIE-style CSV and served as per-node
//! reverse-chronological neighbor sequences with point-in-time cutoffs.
//! Adjacency is built at load as ascending-time arrays per node; a query
//! binary-searches the cutoff and reads backwards, so `neighbors_before`
//! costs O(log deg + S).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "src,dst,timestamp,state_label,features";

/// One interaction event. `edge_idx` is the ordinal position in the global
/// event stream and doubles as the tie-breaker for equal timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEdge {
    pub src: u32,
    pub dst: u32,
    pub timestamp: f64,
    pub state_label: f64,
    pub features: Vec<f64>,
    pub edge_idx: usize,
}

#[derive(Debug, Clone, Copy)]
struct AdjEntry {
    neighbor: u32,
    time: f64,
    edge_idx: usize,
}

/// A neighbor interaction returned by a point-in-time query, most recent
/// first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEvent<'a> {
    pub neighbor: u32,
    pub time: f64,
    pub features: &'a [f64],
    pub edge_idx: usize,
}

/// Sidecar metadata written next to a dataset (`<name>.meta.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphMeta {
    pub num_nodes: u32,
    pub d_e: usize,
    pub num_edges: usize,
    /// Chronological split boundaries `[train_end, val_end)` once computed.
    pub split_boundaries: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct TemporalGraph {
    edges: Vec<TemporalEdge>,
    /// Per-node interactions sorted ascending by (time, edge_idx); both
    /// endpoints of every edge receive the interaction.
    adj: Vec<Vec<AdjEntry>>,
    num_nodes: u32,
    d_e: usize,
    node_features: Option<Vec<Vec<f64>>>,
}

impl TemporalGraph {
    /// Builds a graph from an event list already sorted by
    /// (timestamp, edge_idx). `edge_idx` fields are assigned here.
    pub fn from_events(events: Vec<(u32, u32, f64, f64, Vec<f64>)>) -> Result<Self> {
        let d_e = events.first().map(|e| e.4.len()).unwrap_or(0);
        let mut edges = Vec::with_capacity(events.len());
        let mut prev_t = f64::NEG_INFINITY;
        for (i, (src, dst, timestamp, state_label, features)) in events.into_iter().enumerate() {
            let line = i + 2; // 1-based, after the header line
            if features.len() != d_e {
                return Err(Error::Format {
                    line,
                    msg: format!("expected {} features, found {}", d_e, features.len()),
                });
            }
            if timestamp < 0.0 || !timestamp.is_finite() {
                return Err(Error::Format { line, msg: format!("bad timestamp {timestamp}") });
            }
            if timestamp < prev_t {
                return Err(Error::Ordering {
                    line,
                    msg: format!("timestamp {timestamp} decreases from {prev_t}"),
                });
            }
            prev_t = timestamp;
            edges.push(TemporalEdge { src, dst, timestamp, state_label, features, edge_idx: i });
        }

        let num_nodes = edges.iter().map(|e| e.src.max(e.dst) + 1).max().unwrap_or(0);
        let mut adj: Vec<Vec<AdjEntry>> = vec![Vec::new(); num_nodes as usize];
        for e in &edges {
            adj[e.src as usize].push(AdjEntry {
                neighbor: e.dst,
                time: e.timestamp,
                edge_idx: e.edge_idx,
            });
            if e.dst != e.src {
                adj[e.dst as usize].push(AdjEntry {
                    neighbor: e.src,
                    time: e.timestamp,
                    edge_idx: e.edge_idx,
                });
            }
        }
        // Insertion order is already ascending (time, edge_idx).

        Ok(TemporalGraph { edges, adj, num_nodes, d_e, node_features: None })
    }

    /// Loads a JODIE-style CSV: header line ignored, rows
    /// `src,dst,timestamp,state_label,f_1,…,f_{d_e}` with non-decreasing
    /// timestamps. The feature dimension is inferred from the first data row.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            if idx == 0 {
                continue; // header
            }
            let line = idx + 1;
            if raw.is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() < 4 {
                return Err(Error::Format {
                    line,
                    msg: format!("expected at least 4 fields, found {}", fields.len()),
                });
            }
            let parse_u32 = |s: &str, what: &str| -> Result<u32> {
                s.trim().parse::<u32>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("non-numeric {what} field `{s}`"),
                })
            };
            let parse_f64 = |s: &str, what: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("non-numeric {what} field `{s}`"),
                })
            };
            let src = parse_u32(fields[0], "src")?;
            let dst = parse_u32(fields[1], "dst")?;
            let timestamp = parse_f64(fields[2], "timestamp")?;
            let state_label = parse_f64(fields[3], "state_label")?;
            let mut features = Vec::with_capacity(fields.len() - 4);
            for f in &fields[4..] {
                features.push(parse_f64(f, "feature")?);
            }
            events.push((src, dst, timestamp, state_label, features));
        }
        Self::from_events(events)
    }

    /// Canonical serialization: fixed header, floats in shortest
    /// round-trip decimal form. `parse_csv(serialize_csv(g))` reproduces
    /// the rows bit-exactly.
    pub fn serialize_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for e in &self.edges {
            let _ = write!(out, "{},{},{},{}", e.src, e.dst, e.timestamp, e.state_label);
            for f in &e.features {
                let _ = write!(out, ",{f}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.serialize_csv())?;
        Ok(())
    }

    pub fn meta(&self, split_boundaries: Option<(usize, usize)>) -> GraphMeta {
        GraphMeta {
            num_nodes: self.num_nodes,
            d_e: self.d_e,
            num_edges: self.edges.len(),
            split_boundaries,
        }
    }

    pub fn num_nodes(&self) -> u32 {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn edges(&self) -> &[TemporalEdge] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &TemporalEdge {
        &self.edges[idx]
    }

    pub fn node_features(&self) -> Option<&Vec<Vec<f64>>> {
        self.node_features.as_ref()
    }

    pub fn with_node_features(mut self, feats: Vec<Vec<f64>>) -> Result<Self> {
        if feats.len() != self.num_nodes as usize {
            return Err(Error::Data(format!(
                "node feature rows {} != num_nodes {}",
                feats.len(),
                self.num_nodes
            )));
        }
        self.node_features = Some(feats);
        Ok(self)
    }

    fn check_node(&self, i: u32) -> Result<()> {
        if i >= self.num_nodes {
            return Err(Error::NodeRange { node: i, num_nodes: self.num_nodes });
        }
        Ok(())
    }

    /// Index of the first adjacency entry at or after the cutoff `t`
    /// (entries strictly before `t` precede it).
    fn cut(&self, i: u32, t: f64) -> usize {
        self.adj[i as usize].partition_point(|e| e.time < t)
    }

    /// Number of interactions of node `i` strictly before time `t`.
    pub fn neighbor_count(&self, i: u32, t: f64) -> Result<usize> {
        self.check_node(i)?;
        Ok(self.cut(i, t))
    }

    /// The first `min(limit, N(i,t))` entries of node `i`'s temporal
    /// neighborhood at cutoff `t`: most recent interaction first, ties at
    /// equal timestamps broken by descending `edge_idx`.
    pub fn neighbors_before(&self, i: u32, t: f64, limit: usize) -> Result<Vec<NeighborEvent<'_>>> {
        self.check_node(i)?;
        let cut = self.cut(i, t);
        let take = limit.min(cut);
        let mut out = Vec::with_capacity(take);
        for k in 0..take {
            let entry = &self.adj[i as usize][cut - 1 - k];
            out.push(NeighborEvent {
                neighbor: entry.neighbor,
                time: entry.time,
                features: &self.edges[entry.edge_idx].features,
                edge_idx: entry.edge_idx,
            });
        }
        Ok(out)
    }

    /// Distinct destination node ids, ascending. Used by the negative
    /// sampler, which draws uniformly from observed destinations.
    pub fn destination_pool(&self) -> Vec<u32> {
        let mut dsts: Vec<u32> = self.edges.iter().map(|e| e.dst).collect();
        dsts.sort_unstable();
        dsts.dedup();
        dsts
    }
}

pub fn write_meta(path: impl AsRef<Path>, meta: &GraphMeta) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_meta(path: impl AsRef<Path>) -> Result<GraphMeta> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn csv(rows: &[&str]) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    /// Brute-force oracle: scan the raw event list for interactions of `i`
    /// strictly before `t`, most recent first, ties by descending edge_idx.
    fn scan_neighbors(g: &TemporalGraph, i: u32, t: f64) -> Vec<(u32, f64, usize)> {
        let mut hits: Vec<(u32, f64, usize)> = g
            .edges()
            .iter()
            .filter(|e| (e.src == i || e.dst == i) && e.timestamp < t)
            .map(|e| (if e.src == i { e.dst } else { e.src }, e.timestamp, e.edge_idx))
            .collect();
        hits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(b.2.cmp(&a.2)));
        hits
    }

    #[test]
    fn load_small_file_and_read_back() {
        let text = csv(&["0,1,1,0,0.5,-2", "0,2,5,0,1,3", "1,2,9,1,0,0"]);
        let g = TemporalGraph::parse_csv(&text).unwrap();
        assert_eq!(g.num_edges(), 3);
        assert_eq!(g.d_e(), 2);
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.edge(0).features, vec![0.5, -2.0]);
        assert_eq!(g.edge(2).state_label, 1.0);
    }

    #[test]
    fn empty_file_yields_empty_graph() {
        let g = TemporalGraph::parse_csv("").unwrap();
        assert_eq!(g.num_edges(), 0);
        assert_eq!(g.num_nodes(), 0);
        let g = TemporalGraph::parse_csv(&csv(&[])).unwrap();
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn ragged_feature_row_is_a_format_error_naming_the_line() {
        let text = csv(&["0,1,1,0,0.5,-2", "0,2,5,0,1"]);
        match TemporalGraph::parse_csv(&text) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn decreasing_timestamps_are_an_ordering_error() {
        let text = csv(&["0,1,5,0,1", "0,2,1,0,1"]);
        match TemporalGraph::parse_csv(&text) {
            Err(Error::Ordering { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected ordering error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_is_a_parse_error() {
        let text = csv(&["0,1,x,0,1"]);
        match TemporalGraph::parse_csv(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn neighbors_before_is_strict_and_reverse_chronological() {
        // node 0 interacts at t ∈ {1, 5, 9}
        let text = csv(&["0,1,1,0,1", "0,2,5,0,1", "0,3,9,0,1"]);
        let g = TemporalGraph::parse_csv(&text).unwrap();
        let ns = g.neighbors_before(0, 6.0, 10).unwrap();
        assert_eq!(ns.iter().map(|n| n.time).collect::<Vec<_>>(), vec![5.0, 1.0]);
        assert!(g.neighbors_before(0, 1.0, 10).unwrap().is_empty());
        assert_eq!(g.neighbor_count(0, 9.0).unwrap(), 2);
        assert_eq!(g.neighbor_count(0, 100.0).unwrap(), 3);
    }

    #[test]
    fn unknown_node_is_a_range_error() {
        let g = TemporalGraph::parse_csv(&csv(&["0,1,1,0,1"])).unwrap();
        assert!(matches!(g.neighbors_before(9, 1.0, 1), Err(Error::NodeRange { node: 9, .. })));
        assert!(matches!(g.neighbor_count(9, 1.0), Err(Error::NodeRange { .. })));
    }

    #[test]
    fn equal_timestamps_break_ties_by_descending_edge_idx() {
        let text = csv(&["0,1,3,0,1", "0,2,3,0,1", "0,3,3,0,1"]);
        let g = TemporalGraph::parse_csv(&text).unwrap();
        let ns = g.neighbors_before(0, 4.0, 10).unwrap();
        assert_eq!(ns.iter().map(|n| n.edge_idx).collect::<Vec<_>>(), vec![2, 1, 0]);
        // against the linear-scan oracle
        let oracle = scan_neighbors(&g, 0, 4.0);
        let got: Vec<_> = ns.iter().map(|n| (n.neighbor, n.time, n.edge_idx)).collect();
        assert_eq!(got, oracle);
    }

    fn random_graph(rng: &mut ChaCha8Rng, nodes: u32, edges: usize) -> TemporalGraph {
        let mut t = 0.0;
        let mut events = Vec::new();
        for _ in 0..edges {
            t += rng.gen_range(0.0..2.0_f64).floor(); // frequent ties
            let src = rng.gen_range(0..nodes);
            let dst = rng.gen_range(0..nodes);
            events.push((src, dst, t, 0.0, vec![rng.gen_range(-1.0..1.0)]));
        }
        TemporalGraph::from_events(events).unwrap()
    }

    #[test]
    fn indexed_queries_match_linear_scan_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = random_graph(&mut rng, 12, 50);
        for _ in 0..20 {
            let i = rng.gen_range(0..12);
            let t = rng.gen_range(0.0..30.0);
            let oracle = scan_neighbors(&g, i, t);
            assert_eq!(g.neighbor_count(i, t).unwrap(), oracle.len());
            let got: Vec<_> = g
                .neighbors_before(i, t, usize::MAX)
                .unwrap()
                .iter()
                .map(|n| (n.neighbor, n.time, n.edge_idx))
                .collect();
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn thousand_random_queries_equal_naive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_graph(&mut rng, 30, 400);
        for _ in 0..1000 {
            let i = rng.gen_range(0..30);
            let t = rng.gen_range(0.0..500.0);
            let oracle = scan_neighbors(&g, i, t);
            let got: Vec<_> = g
                .neighbors_before(i, t, usize::MAX)
                .unwrap()
                .iter()
                .map(|n| (n.neighbor, n.time, n.edge_idx))
                .collect();
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn neighbor_count_is_monotone_in_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(&mut rng, 10, 120);
        for i in 0..10 {
            let mut prev = 0;
            for k in 0..50 {
                let c = g.neighbor_count(i, k as f64).unwrap();
                assert!(c >= prev);
                prev = c;
            }
        }
    }

    #[test]
    fn neighbor_times_are_non_increasing_and_below_cutoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_graph(&mut rng, 10, 120);
        for i in 0..10 {
            let t = 40.0;
            let ns = g.neighbors_before(i, t, usize::MAX).unwrap();
            for w in ns.windows(2) {
                assert!(w[0].time >= w[1].time);
            }
            assert!(ns.iter().all(|n| n.time < t));
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = random_graph(&mut rng, 8, 60);
        let text = g.serialize_csv();
        let g2 = TemporalGraph::parse_csv(&text).unwrap();
        assert_eq!(g2.serialize_csv(), text);
        for (a, b) in g.edges().iter().zip(g2.edges()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn meta_sidecar_round_trips() {
        let g = TemporalGraph::parse_csv(&csv(&["0,1,1,0,1,2"])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.meta.json");
        write_meta(&path, &g.meta(Some((70, 85)))).unwrap();
        let m = read_meta(&path).unwrap();
        assert_eq!(m.num_edges, 1);
        assert_eq!(m.d_e, 2);
        assert_eq!(m.split_boundaries, Some((70, 85)));
    }
}
