//! Layer parameter handles and their forward passes. Parameters live in a
//! shared [`ParamSet`]; the handles here only hold [`ParamId`]s, and forward
//! passes read the tape variables bound for them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, BatchStats, ParamId, ParamSet, RunningStats, Tape, Tensor, Var};

/// Slope of the attention LeakyReLU.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Glorot/Xavier uniform matrix of shape `[fan_in, fan_out]`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::matrix(fan_in, fan_out, data)
}

/// `y = x W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(ps: &mut ParamSet, rng: &mut R, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let weight = ps.add(format!("{name}.weight"), glorot(rng, fan_in, fan_out), true);
        let bias = bias.then(|| ps.add(format!("{name}.bias"), Tensor::zeros(&[1, fan_out]), false));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, AutodiffError> {
        let y = tape.matmul(x, vars[self.weight.0])?;
        match self.bias {
            Some(b) => tape.add(y, vars[b.0]),
            None => Ok(y),
        }
    }
}

/// Two linear layers with a tanh in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(ps: &mut ParamSet, rng: &mut R, name: &str, dims: (usize, usize, usize)) -> Self {
        Self {
            hidden: Linear::init(ps, rng, &format!("{name}.0"), dims.0, dims.1, true),
            output: Linear::init(ps, rng, &format!("{name}.1"), dims.1, dims.2, true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, AutodiffError> {
        let h = self.hidden.forward(tape, vars, x)?;
        let h = tape.tanh(h);
        self.output.forward(tape, vars, h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index into the model's running statistics.
    pub stats_slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatHead {
    /// `[in, out]`
    pub weight: ParamId,
    /// `[2*out, 1]`: first half scores the destination node, second half the
    /// source node.
    pub attention: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatLayerParams {
    pub heads: Vec<GatHead>,
    pub head_dim: usize,
    /// Concatenate heads (intermediate layers) or average them (last layer).
    pub concat: bool,
    pub residual: Option<ParamId>,
    pub batch_norm: Option<BatchNormParams>,
}

/// Directed message routes for a GAT layer: both directions of every edge
/// plus one self-loop per node.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRoutes {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl AttentionRoutes {
    pub fn new(n: usize, directed_edges: &[(usize, usize)]) -> Self {
        let mut src: Vec<usize> = directed_edges.iter().map(|e| e.0).collect();
        let mut dst: Vec<usize> = directed_edges.iter().map(|e| e.1).collect();
        src.extend(0..n);
        dst.extend(0..n);
        Self { src, dst }
    }
}

/// Batch-norm behaviour of a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a> {
    /// Normalise with batch statistics and report them.
    Train,
    /// Normalise with the given running statistics.
    Eval(&'a [(Vec<f64>, Vec<f64>)]),
}

#[derive(Debug)]
pub struct GatOutput {
    pub out: Var,
    /// Attention coefficients `[E, 1]` per head, aligned with the routes.
    pub attention: Vec<Var>,
    pub stats: Option<(usize, BatchStats)>,
}

impl GatLayerParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        heads: usize,
        last: bool,
        stats_slot: usize,
    ) -> Self {
        let head_dim = if last { out_dim } else { out_dim / heads };
        let heads = (0..heads)
            .map(|h| GatHead {
                weight: ps.add(format!("{name}.head{h}.weight"), glorot(rng, in_dim, head_dim), true),
                attention: ps.add(format!("{name}.head{h}.attention"), glorot(rng, 2 * head_dim, 1), true),
            })
            .collect();
        let residual = (in_dim != out_dim).then(|| ps.add(format!("{name}.residual"), glorot(rng, in_dim, out_dim), true));
        let batch_norm = (!last).then(|| BatchNormParams {
            gamma: ps.add(format!("{name}.bn.gamma"), Tensor::full(&[out_dim], 1.0), false),
            beta: ps.add(format!("{name}.bn.beta"), Tensor::zeros(&[out_dim]), false),
            stats_slot,
        });
        Self {
            heads,
            head_dim,
            concat: !last,
            residual,
            batch_norm,
        }
    }

    pub fn out_dim(&self) -> usize {
        if self.concat {
            self.head_dim * self.heads.len()
        } else {
            self.head_dim
        }
    }

    /// Multi-head attention aggregation, residual connection, then batch norm
    /// when the layer has one.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        h: Var,
        routes: &AttentionRoutes,
        mode: NormMode,
    ) -> Result<GatOutput, AutodiffError> {
        let n = tape.shape(h)[0];
        let o = self.head_dim;
        let mut head_out = Vec::with_capacity(self.heads.len());
        let mut attention = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let wh = tape.matmul(h, vars[head.weight.0])?;
            let a_dst = tape.slice_rows(vars[head.attention.0], 0, o)?;
            let a_src = tape.slice_rows(vars[head.attention.0], o, o)?;
            let s_dst = tape.matmul(wh, a_dst)?;
            let s_src = tape.matmul(wh, a_src)?;
            let e_dst = tape.gather_rows(s_dst, &routes.dst)?;
            let e_src = tape.gather_rows(s_src, &routes.src)?;
            let logits = tape.add(e_dst, e_src)?;
            let logits = tape.leaky_relu(logits, ATTENTION_SLOPE);
            let alpha = tape.segment_softmax(logits, &routes.dst, n)?;
            let msgs = tape.gather_rows(wh, &routes.src)?;
            let weighted = tape.mul(msgs, alpha)?;
            head_out.push(tape.segment_sum(weighted, &routes.dst, n)?);
            attention.push(alpha);
        }
        let agg = if self.concat {
            tape.concat(&head_out, 1)?
        } else {
            let mut acc = head_out[0];
            for &x in &head_out[1..] {
                acc = tape.add(acc, x)?;
            }
            tape.scale(acc, 1.0 / self.heads.len() as f64)
        };
        let residual = match self.residual {
            Some(p) => tape.matmul(h, vars[p.0])?,
            None => h,
        };
        let y = tape.add(agg, residual)?;
        let (out, stats) = match &self.batch_norm {
            None => (y, None),
            Some(bn) => match mode {
                NormMode::Train => {
                    let (v, s) = tape.batch_norm_train(y, vars[bn.gamma.0], vars[bn.beta.0])?;
                    (v, Some((bn.stats_slot, s)))
                }
                NormMode::Eval(running) => {
                    let (mean, var) = &running[bn.stats_slot];
                    let rs = RunningStats { mean, var };
                    (tape.batch_norm_eval(y, vars[bn.gamma.0], vars[bn.beta.0], rs)?, None)
                }
            },
        };
        Ok(GatOutput { out, attention, stats })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruGate {
    pub input: ParamId,
    pub input_bias: ParamId,
    pub hidden: ParamId,
    pub hidden_bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayerParams {
    /// Maps an edge feature vector to a flattened `d x d` message matrix.
    pub edge_matrix_net: Mlp,
    pub reset: GruGate,
    pub update: GruGate,
    pub candidate: GruGate,
    pub dim: usize,
}

impl GruLayerParams {
    pub fn init<R: Rng + ?Sized>(ps: &mut ParamSet, rng: &mut R, name: &str, dim: usize, edge_dim: usize, mlp_hidden: usize) -> Self {
        let edge_matrix_net = Mlp::init(ps, rng, &format!("{name}.edge_net"), (edge_dim, mlp_hidden, dim * dim));
        let mut gate = |g: &str| GruGate {
            input: ps.add(format!("{name}.{g}.w_input"), glorot(rng, dim, dim), true),
            input_bias: ps.add(format!("{name}.{g}.b_input"), Tensor::zeros(&[1, dim]), false),
            hidden: ps.add(format!("{name}.{g}.w_hidden"), glorot(rng, dim, dim), true),
            hidden_bias: ps.add(format!("{name}.{g}.b_hidden"), Tensor::zeros(&[1, dim]), false),
        };
        let reset = gate("reset");
        let update = gate("update");
        let candidate = gate("candidate");
        Self {
            edge_matrix_net,
            reset,
            update,
            candidate,
            dim,
        }
    }

    /// `m_v = sum_u A(e_vu) h_u`, then `h'_v = GRU(h_v, m_v)`:
    ///
    /// ```text
    /// r  = sigmoid(m W_ir + b_ir + h W_hr + b_hr)
    /// z  = sigmoid(m W_iz + b_iz + h W_hz + b_hz)
    /// n  = tanh(m W_in + b_in + r * (h W_hn + b_hn))
    /// h' = (1 - z) * n + z * h
    /// ```
    ///
    /// `edge_feats` has one row per directed edge in `src`/`dst` order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        h: Var,
        src: &[usize],
        dst: &[usize],
        edge_feats: Var,
    ) -> Result<Var, AutodiffError> {
        let n = tape.shape(h)[0];
        let mats = self.edge_matrix_net.forward(tape, vars, edge_feats)?;
        let hu = tape.gather_rows(h, src)?;
        let msgs = tape.edge_matvec(mats, hu)?;
        let m = tape.segment_sum(msgs, dst, n)?;
        self.cell(tape, vars, h, m)
    }

    /// The GRU update alone.
    pub fn cell(&self, tape: &mut Tape, vars: &[Var], h: Var, m: Var) -> Result<Var, AutodiffError> {
        let lin = |tape: &mut Tape, x: Var, w: ParamId, b: ParamId| -> Result<Var, AutodiffError> {
            let y = tape.matmul(x, vars[w.0])?;
            tape.add(y, vars[b.0])
        };
        let gate = |tape: &mut Tape, g: &GruGate| -> Result<Var, AutodiffError> {
            let a = lin(tape, m, g.input, g.input_bias)?;
            let b = lin(tape, h, g.hidden, g.hidden_bias)?;
            let s = tape.add(a, b)?;
            Ok(tape.sigmoid(s))
        };
        let r = gate(tape, &self.reset)?;
        let z = gate(tape, &self.update)?;
        let c = &self.candidate;
        let xi = lin(tape, m, c.input, c.input_bias)?;
        let xh = lin(tape, h, c.hidden, c.hidden_bias)?;
        let gated = tape.mul(r, xh)?;
        let pre = tape.add(xi, gated)?;
        let cand = tape.tanh(pre);
        let diff = tape.sub(h, cand)?;
        let keep = tape.mul(z, diff)?;
        tape.add(cand, keep)
    }
}
