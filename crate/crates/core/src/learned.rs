//! Learned Hausdorff edit distance over node embeddings.
//!
//! ```text
//! d(g1, g2) = [ sum_{u in V1+eps} min_{v in V2+eps} c(u, v)
//!             + sum_{v in V2+eps} min_{u in V1+eps} c(u, v) ] / (|V1| + |V2|)
//! ```
//!
//! Substitution costs half the embedding distance, deletion and insertion cost
//! `|phi(h)|` with one shared head, and `c(eps, eps) = 0`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamSet, Tape, Tensor, Var};
use crate::gnn::{GnnError, Mlp, Mode, ModelParams, NodeEmbeddings};
use crate::graph::Graph;

#[derive(Debug, Error, PartialEq)]
pub enum DistanceError {
    #[error("distance between two empty graphs is undefined")]
    BothEmpty,
    #[error("negative tau ({0})")]
    NegativeTau(f64),
    #[error("embedding widths differ: {0} vs {1}")]
    Width(usize, usize),
    #[error("thread pool: {0}")]
    Threads(String),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Insertion/deletion cost head: a two-layer MLP followed by `abs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostHead {
    pub mlp: Mlp,
}

impl CostHead {
    pub fn init<R: Rng + ?Sized>(ps: &mut ParamSet, rng: &mut R, hidden_dim: usize, mlp_hidden: usize) -> Self {
        Self {
            mlp: Mlp::init(ps, rng, "cost_head", (hidden_dim, mlp_hidden, 1)),
        }
    }

    /// `[n, 1]` non-negative costs.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], h: Var) -> Result<Var, AutodiffError> {
        let y = self.mlp.forward(tape, vars, h)?;
        Ok(tape.abs(y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceConfig {
    /// Add the Euclidean distance between raw node attributes to the
    /// substitution cost, and the fixed minima below to insertion/deletion.
    pub spatial_blend: bool,
    pub tau_insert: f64,
    pub tau_delete: f64,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            spatial_blend: false,
            tau_insert: 0.5,
            tau_delete: 0.5,
        }
    }
}

impl DistanceConfig {
    pub fn validate(&self) -> Result<(), DistanceError> {
        for t in [self.tau_insert, self.tau_delete] {
            if !(t >= 0.0) {
                return Err(DistanceError::NegativeTau(t));
            }
        }
        Ok(())
    }

    fn delete_offset(&self) -> f64 {
        if self.spatial_blend {
            self.tau_delete
        } else {
            0.0
        }
    }

    fn insert_offset(&self) -> f64 {
        if self.spatial_blend {
            self.tau_insert
        } else {
            0.0
        }
    }
}

/// One node as seen by the cost function.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'a> {
    pub embedding: &'a [f64],
    pub raw: &'a [f64],
    /// Head output after `abs`.
    pub indel: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cost of one entry of the eps-augmented matrix; `None` stands for eps.
pub fn cost_theta(u: Option<NodeView>, v: Option<NodeView>, cfg: &DistanceConfig) -> f64 {
    match (u, v) {
        (Some(u), Some(v)) => {
            let d = euclidean(u.embedding, v.embedding);
            if cfg.spatial_blend {
                (d + euclidean(u.raw, v.raw)) / 2.0
            } else {
                d / 2.0
            }
        }
        (Some(u), None) => u.indel + cfg.delete_offset(),
        (None, Some(v)) => v.indel + cfg.insert_offset(),
        (None, None) => 0.0,
    }
}

/// Directed arg-min choices; `None` is eps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    pub forward: Vec<Option<usize>>,
    pub backward: Vec<Option<usize>>,
}

impl Correspondence {
    /// `{"forward": [[0, 2], [1, "eps"]], "backward": [...]}`
    pub fn to_json(&self) -> serde_json::Value {
        let side = |m: &[Option<usize>]| {
            m.iter()
                .enumerate()
                .map(|(i, t)| match t {
                    Some(j) => serde_json::json!([i, j]),
                    None => serde_json::json!([i, "eps"]),
                })
                .collect::<Vec<_>>()
        };
        serde_json::json!({ "forward": side(&self.forward), "backward": side(&self.backward) })
    }
}

/// Embeddings of one graph together with its head costs, ready for repeated
/// distance evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGraph {
    pub embeddings: NodeEmbeddings,
    pub indel: Vec<f64>,
}

impl PreparedGraph {
    pub fn node(&self, i: usize) -> NodeView<'_> {
        NodeView {
            embedding: self.embeddings.values.row(i),
            raw: self.embeddings.raw.row(i),
            indel: self.indel[i],
        }
    }

    pub fn len(&self) -> usize {
        self.indel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indel.is_empty()
    }
}

impl ModelParams {
    pub fn head_costs(&self, emb: &NodeEmbeddings) -> Result<Vec<f64>, AutodiffError> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let h = tape.constant(emb.values.clone());
        let c = self.cost_head.forward(&mut tape, &vars, h)?;
        Ok(tape.value(c).data().to_vec())
    }

    pub fn prepare(&self, g: &Graph, mode: Mode) -> Result<PreparedGraph, DistanceError> {
        let embeddings = self.embed(g, mode)?;
        let indel = self.head_costs(&embeddings)?;
        Ok(PreparedGraph { embeddings, indel })
    }
}

/// Distance and correspondence between two prepared graphs.
pub fn learned_hed(a: &PreparedGraph, b: &PreparedGraph, cfg: &DistanceConfig) -> Result<(f64, Correspondence), DistanceError> {
    let (n1, n2) = (a.len(), b.len());
    if n1 + n2 == 0 {
        return Err(DistanceError::BothEmpty);
    }
    let (w1, w2) = (a.embeddings.values.shape()[1], b.embeddings.values.shape()[1]);
    if w1 != w2 {
        return Err(DistanceError::Width(w1, w2));
    }
    let mut sub = vec![0.0; n1 * n2];
    for i in 0..n1 {
        let u = a.node(i);
        for j in 0..n2 {
            sub[i * n2 + j] = cost_theta(Some(u), Some(b.node(j)), cfg);
        }
    }
    let mut forward = Vec::with_capacity(n1);
    let mut total_fwd = 0.0;
    for i in 0..n1 {
        let mut best = (cost_theta(Some(a.node(i)), None, cfg), None);
        for j in (0..n2).rev() {
            if sub[i * n2 + j] <= best.0 {
                best = (sub[i * n2 + j], Some(j));
            }
        }
        total_fwd += best.0;
        forward.push(best.1);
    }
    let mut backward = Vec::with_capacity(n2);
    let mut total_bwd = 0.0;
    for j in 0..n2 {
        let mut best = (cost_theta(None, Some(b.node(j)), cfg), None);
        for i in (0..n1).rev() {
            if sub[i * n2 + j] <= best.0 {
                best = (sub[i * n2 + j], Some(i));
            }
        }
        total_bwd += best.0;
        backward.push(best.1);
    }
    Ok(((total_fwd + total_bwd) / (n1 + n2) as f64, Correspondence { forward, backward }))
}

/// Differentiable distance between two embedded graphs on a shared tape.
/// The eps row and column are appended to the substitution block and the
/// minima are taken with arg-min routing.
#[allow(clippy::too_many_arguments)]
pub fn learned_hed_on_tape(
    tape: &mut Tape,
    vars: &[Var],
    model: &ModelParams,
    e1: Var,
    raw1: &Tensor,
    e2: Var,
    raw2: &Tensor,
    cfg: &DistanceConfig,
) -> Result<(Var, Correspondence), DistanceError> {
    let (n1, n2) = (tape.shape(e1)[0], tape.shape(e2)[0]);
    if n1 + n2 == 0 {
        return Err(DistanceError::BothEmpty);
    }
    let d = tape.pairwise_dist(e1, e2)?;
    let sub = if cfg.spatial_blend {
        let r1 = tape.constant(raw1.clone());
        let r2 = tape.constant(raw2.clone());
        let dr = tape.pairwise_dist(r1, r2)?;
        let s = tape.add(d, dr)?;
        tape.scale(s, 0.5)
    } else {
        tape.scale(d, 0.5)
    };
    let del = model.cost_head.forward(tape, vars, e1)?;
    let del = tape.add_scalar(del, cfg.delete_offset());
    let ins = model.cost_head.forward(tape, vars, e2)?;
    let ins = tape.add_scalar(ins, cfg.insert_offset());
    let ins_row = tape.reshape(ins, &[1, n2])?;

    let rows = tape.concat(&[sub, del], 1)?;
    let (row_min, row_arg) = tape.min_axis(rows, 1)?;
    let cols = tape.concat(&[sub, ins_row], 0)?;
    let (col_min, col_arg) = tape.min_axis(cols, 0)?;
    let a = tape.reduce_sum(row_min, None)?;
    let b = tape.reduce_sum(col_min, None)?;
    let s = tape.add(a, b)?;
    let dist = tape.scale(s, 1.0 / (n1 + n2) as f64);
    let corr = Correspondence {
        forward: row_arg.into_iter().map(|j| (j < n2).then_some(j)).collect(),
        backward: col_arg.into_iter().map(|i| (i < n1).then_some(i)).collect(),
    };
    Ok((dist, corr))
}

/// Embeds both graphs and returns their distance.
pub fn graph_distance(model: &ModelParams, g1: &Graph, g2: &Graph, cfg: &DistanceConfig) -> Result<(f64, Correspondence), DistanceError> {
    let a = model.prepare(g1, Mode::Eval)?;
    let b = model.prepare(g2, Mode::Eval)?;
    learned_hed(&a, &b, cfg)
}

/// Runs `f` on a dedicated pool of `jobs` threads so parallel iterators inside
/// it use exactly that many.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, DistanceError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DistanceError::Threads(e.to_string()))?;
    Ok(pool.install(f))
}

/// `m[i][j] = d(queries[i], gallery[j])`. Every graph is embedded once.
pub fn pairwise_distance_matrix(
    queries: &[Graph],
    gallery: &[Graph],
    model: &ModelParams,
    cfg: &DistanceConfig,
    jobs: usize,
) -> Result<Vec<Vec<f64>>, DistanceError> {
    cfg.validate()?;
    with_jobs(jobs, || {
        let prep = |gs: &[Graph]| -> Result<Vec<PreparedGraph>, DistanceError> {
            gs.par_iter().map(|g| model.prepare(g, Mode::Eval)).collect()
        };
        let q = prep(queries)?;
        let g = prep(gallery)?;
        distance_matrix_prepared(&q, &g, cfg)
    })?
}

pub fn distance_matrix_prepared(q: &[PreparedGraph], g: &[PreparedGraph], cfg: &DistanceConfig) -> Result<Vec<Vec<f64>>, DistanceError> {
    q.par_iter()
        .map(|a| g.iter().map(|b| learned_hed(a, b, cfg).map(|r| r.0)).collect())
        .collect()
}
