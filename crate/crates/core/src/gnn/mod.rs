//! Node embedding networks: an input projection followed by K propagation
//! layers, either graph attention (GAT) or edge-conditioned message passing
//! with a GRU update.

mod layers;

pub use layers::{
    glorot, AttentionRoutes, BatchNormParams, GatHead, GatLayerParams, GatOutput, GruGate, GruLayerParams, Linear, Mlp,
    NormMode, ATTENTION_SLOPE,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, BatchStats, Checkpoint, NamedTensor, ParamSet, Tape, Tensor, Var};
use crate::graph::Graph;
use crate::learned::CostHead;

/// Slope of the activation applied between GAT layers.
pub const INTER_LAYER_SLOPE: f64 = 0.2;
/// Weight of the current batch in the running batch-norm averages.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum GnnError {
    #[error("graph `{graph}` has node attributes of width {found}, model expects {expected}")]
    Dimension { graph: String, expected: usize, found: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gat,
    Gru,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gat" => Ok(Variant::Gat),
            "gru" => Ok(Variant::Gru),
            other => Err(format!("unknown variant `{other}` (expected gat or gru)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Gat => "gat",
            Variant::Gru => "gru",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub input_dim: usize,
    /// Width of the hidden layer of every two-layer MLP.
    pub mlp_hidden: usize,
    /// Width of the learned edge features (GRU only).
    pub edge_feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Gru,
            layers: 3,
            hidden_dim: 64,
            heads: 4,
            input_dim: 2,
            mlp_hidden: 16,
            edge_feature_dim: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        let bad = |m: String| Err(GnnError::Config(m));
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.hidden_dim == 0 || self.input_dim == 0 || self.mlp_hidden == 0 || self.edge_feature_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.variant == Variant::Gat {
            if self.heads == 0 {
                return bad("heads must be at least 1".into());
            }
            if self.layers > 1 && self.hidden_dim % self.heads != 0 {
                return bad(format!("hidden_dim {} is not divisible by {} heads", self.hidden_dim, self.heads));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Propagation {
    Gat(Vec<GatLayerParams>),
    Gru { edge_feature_net: Mlp, layers: Vec<GruLayerParams> },
}

/// Every learnable tensor of the model plus the batch-norm running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub input_embed: Linear,
    pub propagation: Propagation,
    pub cost_head: CostHead,
    /// `(mean, variance)` per batch-norm layer.
    pub running: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Glorot-uniform weights, zero biases, unit batch-norm scale. Deterministic
/// per seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams, GnnError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let h = config.hidden_dim;
    let input_embed = Linear::init(&mut ps, &mut rng, "input", config.input_dim, h, true);
    let mut running = Vec::new();
    let propagation = match config.variant {
        Variant::Gat => {
            let mut layers = Vec::with_capacity(config.layers);
            for k in 0..config.layers {
                let last = k + 1 == config.layers;
                let layer = GatLayerParams::init(&mut ps, &mut rng, &format!("gat{k}"), h, h, config.heads, last, running.len());
                if layer.batch_norm.is_some() {
                    running.push((vec![0.0; h], vec![1.0; h]));
                }
                layers.push(layer);
            }
            Propagation::Gat(layers)
        }
        Variant::Gru => {
            let edge_feature_net = Mlp::init(&mut ps, &mut rng, "edge_features", (h, config.mlp_hidden, config.edge_feature_dim));
            let layers = (0..config.layers)
                .map(|k| GruLayerParams::init(&mut ps, &mut rng, &format!("gru{k}"), h, config.edge_feature_dim, config.mlp_hidden))
                .collect();
            Propagation::Gru { edge_feature_net, layers }
        }
    };
    let cost_head = CostHead::init(&mut ps, &mut rng, h, config.mlp_hidden);
    Ok(ModelParams {
        config: config.clone(),
        params: ps,
        input_embed,
        propagation,
        cost_head,
        running,
    })
}

/// Per-node embeddings of one graph, with the raw attributes kept for the
/// spatial cost term.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub graph_id: String,
    /// `[n, hidden_dim]`
    pub values: Tensor,
    /// `[n, input_dim]`
    pub raw: Tensor,
}

impl NodeEmbeddings {
    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Result of a forward pass recorded on a tape.
#[derive(Debug)]
pub struct EmbedOutput {
    pub embeddings: Var,
    /// Batch statistics per batch-norm slot (train mode only).
    pub stats: Vec<(usize, BatchStats)>,
    /// Attention coefficients per GAT layer and head.
    pub attention: Vec<Vec<Var>>,
}

/// Node attributes as an `[n, input_dim]` tensor.
pub fn raw_attributes(g: &Graph, input_dim: usize) -> Result<Tensor, GnnError> {
    if let Some(d) = g.node_dim() {
        if d != input_dim {
            return Err(GnnError::Dimension {
                graph: g.id.clone(),
                expected: input_dim,
                found: d,
            });
        }
    }
    Ok(Tensor::from_rows(&g.nodes, input_dim)?)
}

/// `e_vu = MLP(|h1_v - h1_u|)` for every `(u, v)` pair in `src`/`dst`.
pub fn compute_edge_features(
    tape: &mut Tape,
    vars: &[Var],
    net: &Mlp,
    h1: Var,
    src: &[usize],
    dst: &[usize],
) -> Result<Var, AutodiffError> {
    let d = edge_differences(tape, h1, src, dst)?;
    net.forward(tape, vars, d)
}

/// `|h1_v - h1_u|` per directed edge: the edge-feature MLP input.
pub fn edge_differences(tape: &mut Tape, h1: Var, src: &[usize], dst: &[usize]) -> Result<Var, AutodiffError> {
    let a = tape.gather_rows(h1, dst)?;
    let b = tape.gather_rows(h1, src)?;
    let d = tape.sub(a, b)?;
    Ok(tape.abs(d))
}

impl ModelParams {
    /// Records the forward pass for `g` on `tape`; `vars` are the bound
    /// parameters.
    pub fn embed_on_tape(&self, tape: &mut Tape, vars: &[Var], g: &Graph, mode: Mode) -> Result<EmbedOutput, GnnError> {
        let h = self.config.hidden_dim;
        let raw = raw_attributes(g, self.config.input_dim)?;
        let n = g.num_nodes();
        if n == 0 {
            let embeddings = tape.constant(Tensor::zeros(&[0, h]));
            return Ok(EmbedOutput {
                embeddings,
                stats: vec![],
                attention: vec![],
            });
        }
        let x = tape.constant(raw);
        let mut state = self.input_embed.forward(tape, vars, x)?;
        let directed = g.directed_edges();
        let mut stats = Vec::new();
        let mut attention = Vec::new();
        let norm = match mode {
            Mode::Train => NormMode::Train,
            Mode::Eval => NormMode::Eval(&self.running),
        };
        match &self.propagation {
            Propagation::Gat(layers) => {
                let routes = AttentionRoutes::new(n, &directed);
                for (k, layer) in layers.iter().enumerate() {
                    let out = layer.forward(tape, vars, state, &routes, norm)?;
                    stats.extend(out.stats);
                    attention.push(out.attention);
                    state = if k + 1 < layers.len() {
                        tape.leaky_relu(out.out, INTER_LAYER_SLOPE)
                    } else {
                        out.out
                    };
                }
            }
            Propagation::Gru { edge_feature_net, layers } => {
                let src: Vec<usize> = directed.iter().map(|e| e.0).collect();
                let dst: Vec<usize> = directed.iter().map(|e| e.1).collect();
                let feats = compute_edge_features(tape, vars, edge_feature_net, state, &src, &dst)?;
                for layer in layers {
                    state = layer.forward(tape, vars, state, &src, &dst, feats)?;
                }
            }
        }
        Ok(EmbedOutput {
            embeddings: state,
            stats,
            attention,
        })
    }

    /// Embeds several graphs as one disjoint union, so that train-mode batch
    /// norm sees the nodes of all of them, and returns one row block per graph.
    pub fn embed_batch_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        graphs: &[&Graph],
        mode: Mode,
    ) -> Result<(Vec<Var>, Vec<(usize, BatchStats)>), GnnError> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut offsets = Vec::with_capacity(graphs.len());
        for g in graphs {
            raw_attributes(g, self.config.input_dim)?;
            let off = nodes.len();
            offsets.push((off, g.num_nodes()));
            nodes.extend(g.nodes.iter().cloned());
            edges.extend(g.edges.iter().map(|&(a, b)| (a + off, b + off)));
        }
        let union = Graph::new("batch", nodes, edges, None).map_err(|e| GnnError::Config(e.to_string()))?;
        let out = self.embed_on_tape(tape, vars, &union, mode)?;
        let blocks = offsets
            .into_iter()
            .map(|(off, n)| tape.slice_rows(out.embeddings, off, n))
            .collect::<Result<_, _>>()?;
        Ok((blocks, out.stats))
    }

    /// Forward pass without gradients.
    pub fn embed(&self, g: &Graph, mode: Mode) -> Result<NodeEmbeddings, GnnError> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let out = self.embed_on_tape(&mut tape, &vars, g, mode)?;
        Ok(NodeEmbeddings {
            graph_id: g.id.clone(),
            values: tape.value(out.embeddings).clone(),
            raw: raw_attributes(g, self.config.input_dim)?,
        })
    }

    /// Parameters recorded as constants, for inference.
    pub fn bind_constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.ids().map(|id| tape.constant(self.params.get(id).clone())).collect()
    }

    /// Folds batch statistics into the running averages. Statistics for the
    /// same slot are averaged first, in order.
    pub fn update_running(&mut self, stats: &[(usize, BatchStats)]) {
        for slot in 0..self.running.len() {
            let batch: Vec<&BatchStats> = stats.iter().filter(|s| s.0 == slot).map(|s| &s.1).collect();
            if batch.is_empty() {
                continue;
            }
            let k = batch.len() as f64;
            let (mean, var) = &mut self.running[slot];
            for j in 0..mean.len() {
                let bm = batch.iter().map(|b| b.mean[j]).sum::<f64>() / k;
                let bv = batch.iter().map(|b| b.var[j]).sum::<f64>() / k;
                mean[j] = (1.0 - BN_MOMENTUM) * mean[j] + BN_MOMENTUM * bm;
                var[j] = (1.0 - BN_MOMENTUM) * var[j] + BN_MOMENTUM * bv;
            }
        }
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut tensors = self.params.to_named();
        for (slot, (mean, var)) in self.running.iter().enumerate() {
            for (kind, v) in [("mean", mean), ("var", var)] {
                tensors.push(NamedTensor {
                    name: format!("running.{slot}.{kind}"),
                    shape: vec![v.len()],
                    dtype: "f64".into(),
                    decay: false,
                    data: v.clone(),
                });
            }
        }
        let meta = serde_json::json!({ "model": self.config, "extra": extra });
        Checkpoint::new(meta, tensors)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, GnnError> {
        let config: ModelConfig = serde_json::from_value(ck.meta["model"].clone())
            .map_err(|e| AutodiffError::Checkpoint(format!("model config: {e}")))?;
        let mut model = init_params(&config, 0)?;
        let lookup = |name: &str| {
            ck.tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing tensor `{name}`")))
        };
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let t = lookup(model.params.name(id))?;
            let slot = model.params.get_mut(id);
            if t.shape != slot.shape() {
                return Err(AutodiffError::Checkpoint(format!("tensor `{}` has shape {:?}, expected {:?}", t.name, t.shape, slot.shape())).into());
            }
            *slot = Tensor::new(t.shape.clone(), t.data.clone())?;
        }
        for (slot, (mean, var)) in model.running.iter_mut().enumerate() {
            for (kind, v) in [("mean", mean), ("var", var)] {
                let t = lookup(&format!("running.{slot}.{kind}"))?;
                if t.data.len() != v.len() {
                    return Err(AutodiffError::Checkpoint(format!("tensor `{}` has the wrong length", t.name)).into());
                }
                v.clone_from(&t.data);
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodePermutation;
    use rand::Rng;

    fn random_graph(rng: &mut impl Rng, n: usize) -> Graph {
        let nodes = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(0.3) {
                    edges.push((a, b));
                }
            }
        }
        Graph::new("r", nodes, edges, None).unwrap()
    }

    fn small(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            layers: 3,
            hidden_dim: 8,
            heads: 2,
            input_dim: 2,
            mlp_hidden: 4,
            edge_feature_dim: 3,
        }
    }

    fn assert_rows_permuted(a: &Tensor, b: &Tensor, p: &NodePermutation, tol: f64) {
        for i in 0..a.shape()[0] {
            for (x, y) in a.row(i).iter().zip(b.row(p.apply(i))) {
                assert!((x - y).abs() <= tol, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(&mut rng, 21);
        for variant in [Variant::Gat, Variant::Gru] {
            let cfg = ModelConfig { variant, ..ModelConfig::default() };
            let m = init_params(&cfg, 1).unwrap();
            let a = m.embed(&g, Mode::Eval).unwrap();
            assert_eq!(a.values.shape(), &[21, 64]);
            let b = m.embed(&g, Mode::Eval).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn init_is_seeded_and_glorot_bounded() {
        let cfg = small(Variant::Gru);
        let a = init_params(&cfg, 5).unwrap();
        assert_eq!(a, init_params(&cfg, 5).unwrap());
        assert_ne!(a.params, init_params(&cfg, 6).unwrap().params);
        let w = a.params.get(a.input_embed.weight);
        let bound = (6.0f64 / 10.0).sqrt();
        assert!(w.data().iter().all(|x| x.abs() <= bound));
        assert!(a.params.get(a.input_embed.bias.unwrap()).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for variant in [Variant::Gat, Variant::Gru] {
            let m = init_params(&small(variant), 2).unwrap();
            for _ in 0..5 {
                let n = rng.random_range(1..12);
                let g = random_graph(&mut rng, n);
                let p = NodePermutation::random(n, &mut rng);
                let gp = g.permute(&p).unwrap();
                for mode in [Mode::Train, Mode::Eval] {
                    let a = m.embed(&g, mode).unwrap();
                    let b = m.embed(&gp, mode).unwrap();
                    assert_rows_permuted(&a.values, &b.values, &p, 1e-9);
                }
            }
        }
    }

    #[test]
    fn attention_sums_to_one_and_isolated_node_attends_to_itself() {
        let m = init_params(&small(Variant::Gat), 4).unwrap();
        let g = Graph::new("g", vec![vec![0.1, 0.2], vec![0.5, 0.5], vec![0.9, 0.3], vec![0.4, 0.8]], vec![(0, 1), (1, 2)], None).unwrap();
        let mut tape = Tape::new();
        let vars = m.bind_constants(&mut tape);
        let out = m.embed_on_tape(&mut tape, &vars, &g, Mode::Eval).unwrap();
        let routes = AttentionRoutes::new(4, &g.directed_edges());
        for layer in &out.attention {
            for &head in layer {
                let alpha = tape.value(head).data();
                let mut sums = [0.0; 4];
                for (e, &d) in routes.dst.iter().enumerate() {
                    sums[d] += alpha[e];
                }
                sums.iter().for_each(|s| assert!((s - 1.0).abs() < 1e-12));
                let self3 = routes.src.iter().zip(&routes.dst).position(|(&s, &d)| s == 3 && d == 3).unwrap();
                assert_eq!(alpha[self3], 1.0);
            }
        }
    }

    #[test]
    fn isolated_gat_node_is_norm_of_residual_plus_projection() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = GatLayerParams::init(&mut ps, &mut rng, "l", 3, 4, 1, false, 0);
        let mut tape = Tape::new();
        let vars = ps.bind(&mut tape);
        let h = Tensor::matrix(2, 3, vec![0.3, -0.1, 0.7, 1.0, 0.2, -0.5]);
        let hv = tape.constant(h.clone());
        let routes = AttentionRoutes::new(2, &[]);
        let running = vec![(vec![0.1, 0.0, -0.2, 0.3], vec![1.0, 2.0, 0.5, 1.5])];
        let out = layer.forward(&mut tape, &vars, hv, &routes, NormMode::Eval(&running)).unwrap();
        let w = ps.get(layer.heads[0].weight);
        let r = ps.get(layer.residual.unwrap());
        for i in 0..2 {
            for j in 0..4 {
                let mut y = 0.0;
                for k in 0..3 {
                    y += h.at2(i, k) * (w.at2(k, j) + r.at2(k, j));
                }
                let (mean, var) = (&running[0].0, &running[0].1);
                let expect = (y - mean[j]) / (var[j] + crate::autodiff::BATCH_NORM_EPS).sqrt();
                assert!((tape.value(out.out).at2(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_cell_with_zero_weights_depends_on_biases_only() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = GruLayerParams::init(&mut ps, &mut rng, "g", 1, 1, 1);
        let ids: Vec<_> = ps.ids().collect();
        for id in ids {
            ps.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let set = |ps: &mut ParamSet, id, v| ps.get_mut(id).data_mut()[0] = v;
        set(&mut ps, layer.reset.input_bias, 0.5);
        set(&mut ps, layer.reset.hidden_bias, -1.5);
        set(&mut ps, layer.update.input_bias, 1.0);
        set(&mut ps, layer.candidate.input_bias, 0.2);
        set(&mut ps, layer.candidate.hidden_bias, 0.6);
        let mut tape = Tape::new();
        let vars = ps.bind(&mut tape);
        let h = tape.constant(Tensor::matrix(1, 1, vec![2.0]));
        let m = tape.constant(Tensor::matrix(1, 1, vec![0.0]));
        let out = layer.cell(&mut tape, &vars, h, m).unwrap();
        // r = sigmoid(-1) = 0.268941..., z = sigmoid(1) = 0.731058...
        // n = tanh(0.2 + r * 0.6) = tanh(0.361364...) = 0.346415...
        // h' = n + z * (2 - n) = 1.555282...
        let r = 1.0 / (1.0 + 1.0f64.exp());
        let z = 1.0 / (1.0 + (-1.0f64).exp());
        let n = (0.2 + r * 0.6).tanh();
        let expect = n + z * (2.0 - n);
        assert!((tape.value(out).item() - expect).abs() < 1e-15);
        assert!((expect - 1.555_282_679).abs() < 1e-9);
    }

    #[test]
    fn gru_isolated_node_gets_zero_message() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = GruLayerParams::init(&mut ps, &mut rng, "g", 2, 2, 3);
        let mut tape = Tape::new();
        let vars = ps.bind(&mut tape);
        let h = tape.constant(Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let feats = tape.constant(Tensor::matrix(2, 2, vec![0.5, -0.5, 0.5, -0.5]));
        let full = layer.forward(&mut tape, &vars, h, &[0, 1], &[1, 0], feats).unwrap();
        let zero = tape.constant(Tensor::zeros(&[3, 2]));
        let silent = layer.cell(&mut tape, &vars, h, zero).unwrap();
        assert_eq!(tape.value(full).row(2), tape.value(silent).row(2));
        assert_ne!(tape.value(full).row(0), tape.value(silent).row(0));
    }

    #[test]
    fn edge_features_are_direction_symmetric() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::init(&mut ps, &mut rng, "e", (2, 3, 2));
        let mut tape = Tape::new();
        let vars = ps.bind(&mut tape);
        let h1 = tape.constant(Tensor::matrix(3, 2, vec![0.1, 0.9, -0.4, 0.3, 0.7, 0.7]));
        let f = compute_edge_features(&mut tape, &vars, &net, h1, &[0, 1, 1, 2], &[1, 0, 2, 1]).unwrap();
        let f = tape.value(f);
        assert_eq!(f.row(0), f.row(1));
        assert_eq!(f.row(2), f.row(3));
    }

    #[test]
    fn edge_difference_before_the_mlp() {
        let mut tape = Tape::new();
        let h1 = tape.constant(Tensor::matrix(2, 1, vec![1.0, -2.0]));
        let d = edge_differences(&mut tape, h1, &[0, 1], &[1, 0]).unwrap();
        assert_eq!(tape.value(d).data(), &[3.0, 3.0]);
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_graph(&mut rng, 6);
        for variant in [Variant::Gat, Variant::Gru] {
            let m = init_params(&small(variant), 8).unwrap();
            let inputs: Vec<Tensor> = m.params.ids().map(|id| m.params.get(id).clone()).collect();
            let report = crate::autodiff::finite_difference_check(
                |tape, vars| {
                    let out = m.embed_on_tape(tape, vars, &g, Mode::Train).map_err(|e| match e {
                        GnnError::Autodiff(a) => a,
                        other => AutodiffError::Shape(other.to_string()),
                    })?;
                    let s = tape.tanh(out.embeddings);
                    let s = tape.mul(s, s)?;
                    tape.reduce_sum(s, None)
                },
                &inputs,
                1e-6,
                0.0,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{variant}: {report:?}");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut m = init_params(&small(Variant::Gat), 3).unwrap();
        m.running[0].0[1] = 0.25;
        let ck = m.to_checkpoint(serde_json::json!({"seed": 3}));
        let back = ModelParams::from_checkpoint(&Checkpoint::from_json(&ck.to_json()).unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn dimension_mismatch() {
        let m = init_params(&small(Variant::Gru), 0).unwrap();
        let g = Graph::new("x", vec![vec![1.0, 2.0, 3.0]], vec![], None).unwrap();
        assert!(matches!(m.embed(&g, Mode::Eval), Err(GnnError::Dimension { expected: 2, found: 3, .. })));
    }

    #[test]
    fn bad_head_count() {
        let cfg = ModelConfig { variant: Variant::Gat, hidden_dim: 10, heads: 4, ..ModelConfig::default() };
        assert!(init_params(&cfg, 0).is_err());
    }
}
