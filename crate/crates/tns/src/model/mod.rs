//! Temporal embedding model: parameters, initialization, and checkpoints.
//!
//! An embedding stack has L mean-aggregation layers. Each layer carries
//! its aggregation weights (a two-affine block with a ReLU in between)
//! and a scalar-output twin, the expansion-learning module, that predicts
//! the layer's neighbor-sampling rate from the same inputs. A shared
//! cosine time encoding and the two task heads (edge scorer, node scorer)
//! complete the parameter set.

mod backward;
mod embed;

pub use backward::backward;
pub use embed::{
    build_message_rows, embed, learn_rate, mean_aggregate, time_encode, AggrTape, EmbeddingRequest,
    LayerTape, MsgRowMeta, RateTape, Tape,
};

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::sampler::Strategy;

/// Which optimizer group a tensor belongs to. Expansion-module tensors are
/// stepped at `alpha` times the base learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Expansion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    /// Node (input) feature dimension; zero-filled when the dataset
    /// carries none.
    pub d_v: usize,
    /// Edge feature dimension; must match the dataset.
    pub d_e: usize,
    /// Time-encoding dimension.
    pub d_t: usize,
    /// Hidden width of the aggregation blocks and heads.
    pub d_h: usize,
    /// Hidden width of the expansion-learning module.
    pub d_hr: usize,
    /// Embedding (output) dimension of every layer.
    pub d_o: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims { d_v: 8, d_e: 1, d_t: 16, d_h: 100, d_hr: 100, d_o: 100 }
    }
}

impl Dims {
    /// Input embedding dimension at layer `l` (1-based): raw node features
    /// feed layer 1, layer outputs feed the rest.
    pub fn d_in(&self, layer: usize) -> usize {
        if layer == 1 {
            self.d_v
        } else {
            self.d_o
        }
    }

    /// Message dimension at layer `l`: previous-layer embedding, edge
    /// features, and time encoding concatenated.
    pub fn d_m(&self, layer: usize) -> usize {
        self.d_in(layer) + self.d_e + self.d_t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of stacked aggregation layers; 1 or 2.
    pub layers: usize,
    /// Neighbor budget S.
    pub budget: usize,
    pub strategy: Strategy,
    pub dims: Dims,
    /// Std-dev of the expansion-module output-layer weight init.
    pub sigma_init: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.layers == 1 || self.layers == 2) {
            return Err(Error::Config(format!("layers must be 1 or 2, got {}", self.layers)));
        }
        if self.budget < 1 {
            return Err(Error::Config("budget must be >= 1".into()));
        }
        if self.dims.d_t < 1 {
            return Err(Error::Config("d_t must be >= 1".into()));
        }
        if self.dims.d_h < 1 || self.dims.d_hr < 1 || self.dims.d_o < 1 {
            return Err(Error::Config("hidden/output dims must be >= 1".into()));
        }
        if !(self.sigma_init > 0.0) {
            return Err(Error::Config("sigma_init must be > 0".into()));
        }
        self.strategy.validate()
    }
}

/// Learnable cosine time encoding: φ(dt)_k = cos(omega_k·dt + beta_k).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncoding {
    pub omega: Vec<f64>,
    pub beta: Vec<f64>,
}

/// One two-affine aggregation block:
/// out = W2·(h_self ‖ ReLU(W1·mean + b1)) + b2.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl Aggregation {
    fn zeros(d_hidden: usize, d_m: usize, d_out: usize, d_in: usize) -> Self {
        Aggregation {
            w1: Mat::zeros(d_hidden, d_m),
            b1: vec![0.0; d_hidden],
            w2: Mat::zeros(d_out, d_in + d_hidden),
            b2: vec![0.0; d_out],
        }
    }
}

/// Per-layer parameters: the aggregation block plus its scalar-output
/// expansion-learning twin.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub aggr: Aggregation,
    pub rate: Aggregation,
}

/// Two-layer perceptron head: out = W2·ReLU(W1·x + b1) + b2.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpTape {
    pub x: Vec<f64>,
    pub pre1: Vec<f64>,
    pub hhat: Vec<f64>,
}

impl Mlp {
    fn zeros(d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Mlp {
            w1: Mat::zeros(d_hidden, d_in),
            b1: vec![0.0; d_hidden],
            w2: Mat::zeros(d_out, d_hidden),
            b2: vec![0.0; d_out],
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpTape) {
        let mut pre1 = self.w1.matvec(x);
        for (pi, bi) in pre1.iter_mut().zip(&self.b1) {
            *pi += bi;
        }
        let hhat = crate::linalg::relu(&pre1);
        let mut out = self.w2.matvec(&hhat);
        for (oi, bi) in out.iter_mut().zip(&self.b2) {
            *oi += bi;
        }
        (out, MlpTape { x: x.to_vec(), pre1, hhat })
    }

    /// Accumulates parameter gradients into `grads` and returns d_x.
    pub fn backward(&self, tape: &MlpTape, d_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        grads.w2.outer_acc(d_out, &tape.hhat);
        crate::linalg::axpy(1.0, d_out, &mut grads.b2);
        let mut d_hhat = vec![0.0; tape.hhat.len()];
        self.w2.matvec_t_acc(d_out, &mut d_hhat);
        let d_pre1 = crate::linalg::relu_backward(&tape.pre1, &d_hhat);
        grads.w1.outer_acc(&d_pre1, &tape.x);
        crate::linalg::axpy(1.0, &d_pre1, &mut grads.b1);
        let mut d_x = vec![0.0; tape.x.len()];
        self.w1.matvec_t_acc(&d_pre1, &mut d_x);
        d_x
    }
}

/// The full learnable parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub time_enc: TimeEncoding,
    pub layers: Vec<LayerParams>,
    pub edge_head: Mlp,
    pub node_head: Mlp,
}

/// Borrowed view of one parameter tensor, used by the optimizer, the
/// gradient checker, and the checkpoint writer.
pub struct TensorRef<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
    pub group: ParamGroup,
}

pub struct TensorMut<'a> {
    pub name: String,
    pub data: &'a mut Vec<f64>,
    pub group: ParamGroup,
}

fn visit_block<'a>(out: &mut Vec<TensorRef<'a>>, prefix: &str, b: &'a Aggregation, group: ParamGroup) {
    out.push(TensorRef { name: format!("{prefix}.w1"), rows: b.w1.rows, cols: b.w1.cols, data: &b.w1.data, group });
    out.push(TensorRef { name: format!("{prefix}.b1"), rows: b.b1.len(), cols: 1, data: &b.b1, group });
    out.push(TensorRef { name: format!("{prefix}.w2"), rows: b.w2.rows, cols: b.w2.cols, data: &b.w2.data, group });
    out.push(TensorRef { name: format!("{prefix}.b2"), rows: b.b2.len(), cols: 1, data: &b.b2, group });
}

fn visit_block_mut<'a>(out: &mut Vec<TensorMut<'a>>, prefix: &str, b: &'a mut Aggregation, group: ParamGroup) {
    let Aggregation { w1, b1, w2, b2 } = b;
    out.push(TensorMut { name: format!("{prefix}.w1"), data: &mut w1.data, group });
    out.push(TensorMut { name: format!("{prefix}.b1"), data: b1, group });
    out.push(TensorMut { name: format!("{prefix}.w2"), data: &mut w2.data, group });
    out.push(TensorMut { name: format!("{prefix}.b2"), data: b2, group });
}

fn visit_mlp<'a>(out: &mut Vec<TensorRef<'a>>, prefix: &str, m: &'a Mlp) {
    let g = ParamGroup::Backbone;
    out.push(TensorRef { name: format!("{prefix}.w1"), rows: m.w1.rows, cols: m.w1.cols, data: &m.w1.data, group: g });
    out.push(TensorRef { name: format!("{prefix}.b1"), rows: m.b1.len(), cols: 1, data: &m.b1, group: g });
    out.push(TensorRef { name: format!("{prefix}.w2"), rows: m.w2.rows, cols: m.w2.cols, data: &m.w2.data, group: g });
    out.push(TensorRef { name: format!("{prefix}.b2"), rows: m.b2.len(), cols: 1, data: &m.b2, group: g });
}

fn visit_mlp_mut<'a>(out: &mut Vec<TensorMut<'a>>, prefix: &str, m: &'a mut Mlp) {
    let g = ParamGroup::Backbone;
    let Mlp { w1, b1, w2, b2 } = m;
    out.push(TensorMut { name: format!("{prefix}.w1"), data: &mut w1.data, group: g });
    out.push(TensorMut { name: format!("{prefix}.b1"), data: b1, group: g });
    out.push(TensorMut { name: format!("{prefix}.w2"), data: &mut w2.data, group: g });
    out.push(TensorMut { name: format!("{prefix}.b2"), data: b2, group: g });
}

impl Params {
    /// All tensors in a fixed, deterministic order.
    pub fn visit(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        out.push(TensorRef {
            name: "time.omega".into(),
            rows: self.time_enc.omega.len(),
            cols: 1,
            data: &self.time_enc.omega,
            group: ParamGroup::Backbone,
        });
        out.push(TensorRef {
            name: "time.beta".into(),
            rows: self.time_enc.beta.len(),
            cols: 1,
            data: &self.time_enc.beta,
            group: ParamGroup::Backbone,
        });
        for (i, layer) in self.layers.iter().enumerate() {
            visit_block(&mut out, &format!("layer{}.aggr", i + 1), &layer.aggr, ParamGroup::Backbone);
            visit_block(&mut out, &format!("layer{}.rate", i + 1), &layer.rate, ParamGroup::Expansion);
        }
        visit_mlp(&mut out, "edge_head", &self.edge_head);
        visit_mlp(&mut out, "node_head", &self.node_head);
        out
    }

    /// Mutable tensor views in the same order as [`Params::visit`].
    pub fn visit_mut(&mut self) -> Vec<TensorMut<'_>> {
        let Params { time_enc, layers, edge_head, node_head } = self;
        let mut out = Vec::new();
        out.push(TensorMut {
            name: "time.omega".into(),
            data: &mut time_enc.omega,
            group: ParamGroup::Backbone,
        });
        out.push(TensorMut {
            name: "time.beta".into(),
            data: &mut time_enc.beta,
            group: ParamGroup::Backbone,
        });
        for (i, layer) in layers.iter_mut().enumerate() {
            let LayerParams { aggr, rate } = layer;
            visit_block_mut(&mut out, &format!("layer{}.aggr", i + 1), aggr, ParamGroup::Backbone);
            visit_block_mut(&mut out, &format!("layer{}.rate", i + 1), rate, ParamGroup::Expansion);
        }
        visit_mlp_mut(&mut out, "edge_head", edge_head);
        visit_mlp_mut(&mut out, "node_head", node_head);
        out
    }

    pub fn zeros_like(&self) -> Params {
        let mut copy = self.clone();
        for t in copy.visit_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        copy
    }

    pub fn num_params(&self) -> usize {
        self.visit().iter().map(|t| t.data.len()).sum()
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Mat { rows, cols, data }
}

/// Initializes the full parameter set: Glorot-uniform weights with zero
/// biases everywhere, except each expansion module's output layer, whose
/// weights are drawn from N(0, sigma_init²) and whose bias is exactly 1 so
/// that the initial learned rates sit at 1 and sampling starts from the
/// plain most-recent scheme.
pub fn init_params(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Params> {
    cfg.validate()?;
    let d = &cfg.dims;

    let omega = glorot(d.d_t, 1, rng).data;
    let beta = vec![0.0; d.d_t];

    let normal = Normal::new(0.0, cfg.sigma_init).map_err(|e| Error::Config(e.to_string()))?;
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 1..=cfg.layers {
        let d_in = d.d_in(l);
        let d_m = d.d_m(l);
        let mut aggr = Aggregation::zeros(d.d_h, d_m, d.d_o, d_in);
        aggr.w1 = glorot(d.d_h, d_m, rng);
        aggr.w2 = glorot(d.d_o, d_in + d.d_h, rng);

        let mut rate = Aggregation::zeros(d.d_hr, d_m, 1, d_in);
        rate.w1 = glorot(d.d_hr, d_m, rng);
        rate.w2 = Mat {
            rows: 1,
            cols: d_in + d.d_hr,
            data: (0..d_in + d.d_hr).map(|_| normal.sample(rng)).collect(),
        };
        rate.b2 = vec![1.0];

        layers.push(LayerParams { aggr, rate });
    }

    let mut edge_head = Mlp::zeros(2 * d.d_o, d.d_h, 1);
    edge_head.w1 = glorot(d.d_h, 2 * d.d_o, rng);
    edge_head.w2 = glorot(1, d.d_h, rng);
    let mut node_head = Mlp::zeros(d.d_o, d.d_h, 1);
    node_head.w1 = glorot(d.d_h, d.d_o, rng);
    node_head.w2 = glorot(1, d.d_h, rng);

    Ok(Params { time_enc: TimeEncoding { omega, beta }, layers, edge_head, node_head })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TNSCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a checkpoint: magic, version, then per tensor a name, explicit
/// shape header, and little-endian f64 payload.
pub fn save_checkpoint(params: &Params, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let tensors = params.visit();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.rows as u64).to_le_bytes())?;
        w.write_all(&(t.cols as u64).to_le_bytes())?;
        for v in t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Loads a checkpoint into a freshly shaped parameter set built from
/// `cfg`; names and shapes must match exactly.
pub fn load_checkpoint(cfg: &ModelConfig, path: impl AsRef<Path>) -> Result<Params> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data("not a checkpoint file (bad magic)".into()));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut buf4)?;
    let count = u32::from_le_bytes(buf4) as usize;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut params = init_params(cfg, &mut rng)?;
    let mut tensors = params.visit_mut();
    if tensors.len() != count {
        return Err(Error::Data(format!(
            "checkpoint has {count} tensors, model expects {}",
            tensors.len()
        )));
    }
    let mut buf8 = [0u8; 8];
    for t in tensors.iter_mut() {
        r.read_exact(&mut buf4)?;
        let name_len = u32::from_le_bytes(buf4) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Data("bad tensor name".into()))?;
        if name != t.name {
            return Err(Error::Data(format!("tensor `{name}` where `{}` expected", t.name)));
        }
        r.read_exact(&mut buf8)?;
        let rows = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf8)?;
        let cols = u64::from_le_bytes(buf8) as usize;
        if rows * cols != t.data.len() {
            return Err(Error::Data(format!(
                "tensor `{name}` shape {rows}x{cols} does not match model ({} values)",
                t.data.len()
            )));
        }
        for v in t.data.iter_mut() {
            r.read_exact(&mut buf8)?;
            *v = f64::from_le_bytes(buf8);
        }
    }
    drop(tensors);
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            layers: 2,
            budget: 4,
            strategy: Strategy::Tns,
            dims: Dims { d_v: 3, d_e: 2, d_t: 4, d_h: 5, d_hr: 5, d_o: 6 },
            sigma_init: 1e-5,
        }
    }

    #[test]
    fn init_shapes_and_prescribed_output_layer() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_params(&cfg, &mut rng).unwrap();
        assert_eq!(p.layers.len(), 2);
        // layer 1 message dim: d_v + d_e + d_t = 9
        assert_eq!(p.layers[0].aggr.w1.cols, 9);
        // layer 2 message dim: d_o + d_e + d_t = 12
        assert_eq!(p.layers[1].aggr.w1.cols, 12);
        assert_eq!(p.layers[0].aggr.w2.rows, 6);
        assert_eq!(p.layers[0].rate.w2.rows, 1);
        for layer in &p.layers {
            assert_eq!(layer.rate.b2, vec![1.0]);
            assert!(layer.rate.w2.data.iter().all(|w| w.abs() < 1e-4));
            assert!(layer.aggr.b1.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn visit_orders_match_and_groups_are_tagged() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = init_params(&cfg, &mut rng).unwrap();
        let names: Vec<String> = p.visit().iter().map(|t| t.name.clone()).collect();
        let names_mut: Vec<String> = p.visit_mut().iter().map(|t| t.name.clone()).collect();
        assert_eq!(names, names_mut);
        let expansion: Vec<&String> = names.iter().filter(|n| n.contains(".rate.")).collect();
        assert_eq!(expansion.len(), 8);
        for t in p.visit() {
            assert_eq!(t.group == ParamGroup::Expansion, t.name.contains(".rate."));
            assert_eq!(t.rows * t.cols, t.data.len());
        }
    }

    #[test]
    fn zeros_like_preserves_shape_and_zeroes_data() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_params(&cfg, &mut rng).unwrap();
        let z = p.zeros_like();
        assert_eq!(p.num_params(), z.num_params());
        assert!(z.visit().iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = init_params(&cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&cfg, &path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = small_cfg();
        cfg.layers = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.budget = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.sigma_init = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.strategy = Strategy::Expanded(0.2);
        assert!(cfg.validate().is_err());
    }
}
