//! Browser demo: two editable point graphs side by side with their HED, AED,
//! exact and learned edit distances, plus the learned node correspondence.
//!
//! Build with `wasm-pack build --target web --out-dir www/pkg crates/wasm-demo`
//! and serve `crates/wasm-demo/www/`.

use ged_core::autodiff::Checkpoint;
use ged_core::classic::{aed, exact_ged, hed, CostModel};
use ged_core::dataset::knn_edges;
use ged_core::gnn::{init_params, ModelConfig, ModelParams, Variant};
use ged_core::graph::Graph;
use ged_core::learned::{graph_distance, DistanceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Exact GED is attempted only up to this many nodes per graph.
pub const EXACT_LIMIT: usize = 8;
const MAX_NODES: usize = 40;

#[wasm_bindgen]
pub struct Demo {
    graphs: [Graph; 2],
    model: ModelParams,
    dist: DistanceConfig,
    cost: CostModel,
    rng: ChaCha8Rng,
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| vec![rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]).collect()
}

fn build(id: &str, nodes: Vec<Vec<f64>>, edges: Vec<(usize, usize)>) -> Result<Graph, String> {
    Graph::new(id, nodes, edges, None).map_err(|e| e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// Two random 3-NN graphs and an untrained GAT model, all from `seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Demo {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig { variant: Variant::Gat, layers: 3, hidden_dim: 16, heads: 4, input_dim: 2, ..ModelConfig::default() };
        let model = init_params(&cfg, seed).expect("demo model config is valid");
        let mut make = |id: &str, n: usize| {
            let pts = random_points(&mut rng, n);
            let edges = knn_edges(&pts, 2);
            build(id, pts, edges).expect("random graph is valid")
        };
        let graphs = [make("A", 7), make("B", 6)];
        Demo {
            graphs,
            model,
            dist: DistanceConfig::default(),
            cost: CostModel::uniform(0.5, 0.5, 0.5),
            rng,
        }
    }

    fn check(&self, which: usize) -> Result<(), String> {
        if which > 1 {
            return Err(format!("graph index {which} is not 0 or 1"));
        }
        Ok(())
    }

    /// Replaces graph `which` with a fresh random graph of `n` nodes.
    pub fn randomize(&mut self, which: usize, n: usize) -> Result<(), String> {
        self.check(which)?;
        let n = n.clamp(1, MAX_NODES);
        let pts = random_points(&mut self.rng, n);
        let edges = knn_edges(&pts, 2);
        self.graphs[which] = build(&self.graphs[which].id.clone(), pts, edges)?;
        Ok(())
    }

    /// Overwrites graph `to` with a copy of graph `from`.
    pub fn copy_graph(&mut self, from: usize, to: usize) -> Result<(), String> {
        self.check(from)?;
        self.check(to)?;
        let mut g = self.graphs[from].clone();
        g.id = self.graphs[to].id.clone();
        self.graphs[to] = g;
        Ok(())
    }

    /// Moves a node; edges are kept.
    pub fn move_node(&mut self, which: usize, node: usize, x: f64, y: f64) -> Result<(), String> {
        self.check(which)?;
        let g = &mut self.graphs[which];
        let p = g.nodes.get_mut(node).ok_or_else(|| format!("no node {node}"))?;
        p[0] = x.clamp(0.0, 1.0);
        p[1] = y.clamp(0.0, 1.0);
        Ok(())
    }

    /// Adds a node at `(x, y)` linked to its two nearest nodes.
    pub fn add_node(&mut self, which: usize, x: f64, y: f64) -> Result<(), String> {
        self.check(which)?;
        let g = &self.graphs[which];
        if g.num_nodes() >= MAX_NODES {
            return Err(format!("at most {MAX_NODES} nodes"));
        }
        let mut nodes = g.nodes.clone();
        let mut edges = g.edges.clone();
        let new = nodes.len();
        let mut near: Vec<(f64, usize)> = nodes.iter().enumerate().map(|(i, p)| ((p[0] - x).hypot(p[1] - y), i)).collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        edges.extend(near.iter().take(2).map(|&(_, i)| (i, new)));
        nodes.push(vec![x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)]);
        self.graphs[which] = build(&g.id.clone(), nodes, edges)?;
        Ok(())
    }

    /// Deletes a node with its incident edges.
    pub fn remove_node(&mut self, which: usize, node: usize) -> Result<(), String> {
        self.check(which)?;
        let g = &self.graphs[which];
        if node >= g.num_nodes() {
            return Err(format!("no node {node}"));
        }
        let shift = |i: usize| if i > node { i - 1 } else { i };
        let nodes: Vec<Vec<f64>> = g.nodes.iter().enumerate().filter(|(i, _)| *i != node).map(|(_, p)| p.clone()).collect();
        let edges = g.edges.iter().filter(|&&(a, b)| a != node && b != node).map(|&(a, b)| (shift(a), shift(b))).collect();
        self.graphs[which] = build(&g.id.clone(), nodes, edges)?;
        Ok(())
    }

    /// Node insertion/deletion cost for the classical distances; also the
    /// learned insertion/deletion offset, which only applies with spatial blend.
    pub fn set_tau(&mut self, tau: f64) -> Result<(), String> {
        if !(tau > 0.0) {
            return Err("tau must be positive".into());
        }
        self.dist.tau_insert = tau;
        self.dist.tau_delete = tau;
        self.cost = CostModel::uniform(0.5, tau, tau);
        Ok(())
    }

    pub fn set_spatial_blend(&mut self, on: bool) {
        self.dist.spatial_blend = on;
    }

    pub fn spatial_blend(&self) -> bool {
        self.dist.spatial_blend
    }

    pub fn tau(&self) -> f64 {
        self.dist.tau_insert
    }

    /// Replaces the model with a checkpoint written by `ged train`.
    pub fn load_checkpoint(&mut self, json: &str) -> Result<String, String> {
        let ck = Checkpoint::from_json(json).map_err(|e| e.to_string())?;
        let model = ModelParams::from_checkpoint(&ck).map_err(|e| e.to_string())?;
        if model.config.input_dim != 2 {
            return Err(format!("the demo needs 2-d node attributes, checkpoint expects {}", model.config.input_dim));
        }
        if let Some(d) = ck.meta.get("extra").and_then(|x| x.get("distance")) {
            if let Ok(d) = serde_json::from_value(d.clone()) {
                self.dist = d;
            }
        }
        let c = &model.config;
        let summary = format!("{} K={} hidden={}", c.variant, c.layers, c.hidden_dim);
        self.model = model;
        Ok(summary)
    }

    /// `{"nodes": [[x, y], ...], "edges": [[a, b], ...]}`
    pub fn graph(&self, which: usize) -> Result<String, String> {
        self.check(which)?;
        let g = &self.graphs[which];
        Ok(json!({ "nodes": g.nodes, "edges": g.edges }).to_string())
    }

    /// All distances and the learned correspondence as JSON. `exact` is null
    /// above the exact-search node limit.
    pub fn evaluate(&self) -> Result<String, String> {
        let [a, b] = &self.graphs;
        let exact = exact_ged(a, b, &self.cost, EXACT_LIMIT).ok();
        let (learned, corr) = graph_distance(&self.model, a, b, &self.dist).map_err(|e| e.to_string())?;
        Ok(json!({
            "hed": hed(a, b, &self.cost),
            "aed": aed(a, b, &self.cost),
            "exact": exact,
            "learned": learned,
            "correspondence": corr.to_json(),
        })
        .to_string())
    }
}
