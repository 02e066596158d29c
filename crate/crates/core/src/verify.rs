//! Self-checks behind `ged verify`: finite-difference gradients per op and per
//! layer, the hed <= exact <= aed ordering, and metric identities of the
//! learned distance.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{finite_difference_check, AutodiffError, RunningStats, Tape, Tensor, Var};
use crate::classic::{aed, exact_ged, hed, CostModel};
use crate::gnn::{init_params, raw_attributes, Mode, ModelConfig, ModelParams, Variant};
use crate::graph::{random_graph, Graph, NodePermutation};
use crate::learned::{graph_distance, learned_hed_on_tape, DistanceConfig};
use crate::train::triplet_loss_on_tape;

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const BOUND_TOLERANCE: f64 = 1e-9;
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
pub const PERMUTATION_TOLERANCE: f64 = 1e-9;
const STEP: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyConfig {
    /// Gradient checks run for seeds `0..seeds`.
    pub seeds: u64,
    /// Random graph pairs for the bound and metric suites.
    pub pairs: usize,
    pub seed: u64,
    /// Added to every analytic gradient entry. Nonzero values must make the
    /// gradient suites fail.
    pub corrupt_gradient: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seeds: 3,
            pairs: 50,
            seed: 0,
            corrupt_gradient: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub limit: f64,
    /// `true` when the check is `value >= limit` rather than `value <= limit`.
    pub lower_limit: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    /// Failures that prevented a check from running at all.
    pub errors: Vec<String>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self {
            suite: suite.to_string(),
            checks: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.errors.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// Records `value <= limit` under `name`, keeping the worst value when
    /// the name repeats.
    fn at_most(&mut self, name: &str, value: f64, limit: f64) {
        let ok = value <= limit;
        match self.checks.iter_mut().find(|c| c.name == name) {
            Some(c) => {
                if value > c.value || value.is_nan() {
                    c.value = value;
                }
                c.passed &= ok;
            }
            None => self.checks.push(Check {
                name: name.to_string(),
                value,
                limit,
                lower_limit: false,
                passed: ok,
            }),
        }
    }

    fn at_least(&mut self, name: &str, value: f64, limit: f64) {
        self.checks.push(Check {
            name: name.to_string(),
            value,
            limit,
            lower_limit: true,
            passed: value >= limit,
        });
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            let _ = writeln!(out, "[{}] {}", if s.passed() { "PASS" } else { "FAIL" }, s.suite);
            for c in &s.checks {
                let _ = writeln!(
                    out,
                    "  {:<4} {:<36} {:>12.3e}  ({} {:.0e})",
                    if c.passed { "ok" } else { "FAIL" },
                    c.name,
                    c.value,
                    if c.lower_limit { ">=" } else { "<=" },
                    c.limit
                );
            }
            for e in &s.errors {
                let _ = writeln!(out, "  error {e}");
            }
        }
        let _ = writeln!(out, "{}", if self.passed() { "all suites passed" } else { "verification FAILED" });
        out
    }
}

pub fn run_all(cfg: &VerifyConfig) -> VerifyReport {
    VerifyReport {
        config: cfg.clone(),
        suites: vec![
            op_gradient_suite(cfg.seeds, cfg.corrupt_gradient),
            layer_gradient_suite(cfg.seeds, cfg.corrupt_gradient),
            bound_suite(cfg.pairs, cfg.seed),
            metric_suite(cfg.pairs, cfg.seed),
        ],
    }
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>>;

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Weighted sum, so every output coordinate reaches the scalar.
fn wsum(t: &mut Tape, x: Var, w: &Tensor) -> Result<Var, AutodiffError> {
    let wv = t.constant(w.clone());
    let p = t.mul(x, wv)?;
    t.reduce_sum(p, None)
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, OpFn, Vec<Tensor>)> {
    let a = random_tensor(rng, &[4, 3]);
    let b = random_tensor(rng, &[3, 2]);
    let row = random_tensor(rng, &[1, 3]);
    let w = random_tensor(rng, &[4, 3]);
    let mut cases: Vec<(&'static str, OpFn, Vec<Tensor>)> = Vec::new();
    let w1 = w.clone();
    cases.push(("matmul", Box::new(|t, v| { let m = t.matmul(v[0], v[1])?; let s = t.tanh(m); t.reduce_sum(s, None) }), vec![a.clone(), b.clone()]));
    cases.push(("add", Box::new(move |t, v| { let s = t.add(v[0], v[1])?; wsum(t, s, &w1) }), vec![a.clone(), row.clone()]));
    let w1 = w.clone();
    cases.push(("sub_mul", Box::new(move |t, v| { let s = t.sub(v[0], v[1])?; let s = t.mul(s, v[0])?; wsum(t, s, &w1) }), vec![a.clone(), row.clone()]));
    let w1 = w.clone();
    cases.push(("leaky_relu", Box::new(move |t, v| { let s = t.leaky_relu(v[0], 0.2); wsum(t, s, &w1) }), vec![a.clone()]));
    let w1 = w.clone();
    cases.push(("sigmoid", Box::new(move |t, v| { let s = t.sigmoid(v[0]); wsum(t, s, &w1) }), vec![a.clone()]));
    let w1 = w.clone();
    cases.push(("abs", Box::new(move |t, v| { let s = t.abs(v[0]); wsum(t, s, &w1) }), vec![a.clone()]));
    let w1 = w.clone();
    cases.push(("scale_shift", Box::new(move |t, v| { let s = t.scale(v[0], -2.5); let s = t.add_scalar(s, 1.0); wsum(t, s, &w1) }), vec![a.clone()]));
    cases.push(("concat", Box::new(|t, v| { let c = t.concat(&[v[0], v[1]], 0)?; let s = t.tanh(c); let q = t.mul(s, s)?; t.reduce_sum(q, None) }), vec![a.clone(), row.clone()]));
    cases.push(("slice_reshape", Box::new(|t, v| { let s = t.slice_rows(v[0], 1, 2)?; let r = t.reshape(s, &[3, 2])?; let m = t.matmul(r, v[1])?; let q = t.mul(m, m)?; t.reduce_mean(q, None) }), vec![a.clone(), random_tensor(rng, &[2, 2])]));
    cases.push(("reduce_sum_axis", Box::new(|t, v| { let s = t.reduce_sum(v[0], Some(0))?; let q = t.mul(s, s)?; t.reduce_sum(q, None) }), vec![a.clone()]));
    cases.push(("reduce_mean_axis", Box::new(|t, v| { let s = t.reduce_mean(v[0], Some(1))?; let q = t.mul(s, s)?; t.reduce_sum(q, None) }), vec![a.clone()]));
    cases.push(("gather_rows", Box::new(|t, v| { let g = t.gather_rows(v[0], &[3, 0, 0, 2, 1])?; let q = t.mul(g, g)?; t.reduce_sum(q, None) }), vec![a.clone()]));
    cases.push(("segment_sum", Box::new(|t, v| { let s = t.segment_sum(v[0], &[1, 1, 0, 2], 4)?; let q = t.tanh(s); let q = t.mul(q, q)?; t.reduce_sum(q, None) }), vec![a.clone()]));
    let w1 = w.clone();
    cases.push(("segment_softmax", Box::new(move |t, v| { let s = t.segment_softmax(v[0], &[1, 1, 0, 1], 2)?; wsum(t, s, &w1) }), vec![a.clone()]));
    let w1 = w.clone();
    cases.push(("batch_norm_train", Box::new(move |t, v| { let (s, _) = t.batch_norm_train(v[0], v[1], v[2])?; let q = t.tanh(s); wsum(t, q, &w1) }), vec![a.clone(), random_tensor(rng, &[3]), random_tensor(rng, &[3])]));
    let w1 = w.clone();
    cases.push(("batch_norm_eval", Box::new(move |t, v| {
        let rs = RunningStats { mean: &[0.1, 0.2, -0.3], var: &[1.5, 0.5, 2.0] };
        let s = t.batch_norm_eval(v[0], v[1], v[2], rs)?;
        wsum(t, s, &w1)
    }), vec![a.clone(), random_tensor(rng, &[3]), random_tensor(rng, &[3])]));
    cases.push(("pairwise_dist", Box::new(|t, v| { let d = t.pairwise_dist(v[0], v[1])?; let q = t.mul(d, d)?; let s = t.add(q, d)?; t.reduce_sum(s, None) }), vec![a.clone(), random_tensor(rng, &[2, 3])]));
    cases.push(("min_axis", Box::new(|t, v| { let (m, _) = t.min_axis(v[0], 1)?; let (n, _) = t.min_axis(v[0], 0)?; let a = t.reduce_sum(m, None)?; let b = t.reduce_sum(n, None)?; t.mul(a, b) }), vec![a.clone()]));
    cases.push(("edge_matvec", Box::new(|t, v| { let m = t.edge_matvec(v[0], v[1])?; let q = t.tanh(m); t.reduce_sum(q, None) }), vec![random_tensor(rng, &[3, 4]), random_tensor(rng, &[3, 2])]));
    cases.push(("triplet_loss", Box::new(|t, v| {
        let s = t.reduce_sum(v[0], None)?;
        let p = t.sigmoid(s);
        let n = t.reduce_mean(v[0], None)?;
        let n = t.tanh(n);
        let n2 = t.add_scalar(n, 0.3);
        triplet_loss_on_tape(t, p, n, n2, 2.0)
    }), vec![a.clone()]));
    cases
}

/// Central differences for every tape op, seeds `0..seeds`. Reports the worst
/// relative error per op.
pub fn op_gradient_suite(seeds: u64, corrupt: f64) -> SuiteReport {
    let mut report = SuiteReport::new("op gradients");
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, f, inputs) in op_cases(&mut rng) {
            match finite_difference_check(&f, &inputs, STEP, corrupt) {
                Ok(r) => report.at_most(name, r.max_rel_error, GRADIENT_TOLERANCE),
                Err(e) => report.errors.push(format!("{name} seed {seed}: {e}")),
            }
        }
    }
    report
}

fn small_model(variant: Variant, seed: u64) -> Result<ModelParams, crate::gnn::GnnError> {
    let cfg = ModelConfig {
        variant,
        layers: 2,
        hidden_dim: 6,
        heads: 2,
        input_dim: 2,
        mlp_hidden: 4,
        edge_feature_dim: 3,
    };
    init_params(&cfg, seed)
}

/// Parameter groups by name prefix (`input`, `gat0`, `gru1`, `cost_head`, ...).
fn layer_groups(model: &ModelParams) -> Vec<(String, Vec<usize>)> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for id in model.params.ids() {
        let prefix = model.params.name(id).split('.').next().unwrap_or("").to_string();
        match groups.iter_mut().find(|(p, _)| *p == prefix) {
            Some((_, ids)) => ids.push(id.0),
            None => groups.push((prefix, vec![id.0])),
        }
    }
    groups
}

/// Distance or triplet loss through the whole model with the parameters in
/// `group` free and the rest held constant.
fn pipeline_check(
    model: &ModelParams,
    group: &[usize],
    graphs: &[Graph; 3],
    dist: &DistanceConfig,
    triplet: bool,
    corrupt: f64,
) -> Result<f64, AutodiffError> {
    let inputs: Vec<Tensor> = group.iter().map(|&i| model.params.get(crate::autodiff::ParamId(i)).clone()).collect();
    let wrap = |e: &dyn std::fmt::Display| AutodiffError::Shape(e.to_string());
    let raws: Vec<Tensor> = graphs
        .iter()
        .map(|g| raw_attributes(g, model.config.input_dim))
        .collect::<Result<_, _>>()
        .map_err(|e| wrap(&e))?;
    let r = finite_difference_check(
        |tape, free| {
            let mut vars: Vec<Var> = Vec::with_capacity(model.params.len());
            for id in model.params.ids() {
                match group.iter().position(|&g| g == id.0) {
                    Some(k) => vars.push(free[k]),
                    None => vars.push(tape.constant(model.params.get(id).clone())),
                }
            }
            let refs: Vec<&Graph> = graphs.iter().collect();
            let (blocks, _) = model.embed_batch_on_tape(tape, &vars, &refs, Mode::Train).map_err(|e| wrap(&e))?;
            let d = |i: usize, j: usize, tape: &mut Tape| {
                learned_hed_on_tape(tape, &vars, model, blocks[i], &raws[i], blocks[j], &raws[j], dist)
                    .map(|r| r.0)
                    .map_err(|e| wrap(&e))
            };
            if triplet {
                let dp = d(0, 1, tape)?;
                let dn = d(0, 2, tape)?;
                let ds = d(1, 2, tape)?;
                triplet_loss_on_tape(tape, dp, dn, ds, 10.0)
            } else {
                d(0, 1, tape)
            }
        },
        &inputs,
        STEP,
        corrupt,
    )?;
    Ok(r.max_rel_error)
}

/// Gradients of the learned distance and of the triplet loss with respect to
/// each layer's parameters, for both variants, seeds `0..seeds`.
pub fn layer_gradient_suite(seeds: u64, corrupt: f64) -> SuiteReport {
    let mut report = SuiteReport::new("layer gradients");
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let graphs: [Graph; 3] = std::array::from_fn(|_| {
            let n = rng.random_range(2..6);
            random_graph(&mut rng, n, 0.5)
        });
        let dist = DistanceConfig {
            spatial_blend: seed % 2 == 1,
            ..Default::default()
        };
        for variant in [Variant::Gat, Variant::Gru] {
            let model = match small_model(variant, seed) {
                Ok(m) => m,
                Err(e) => {
                    report.errors.push(format!("{variant} seed {seed}: {e}"));
                    continue;
                }
            };
            for (prefix, group) in layer_groups(&model) {
                for (kind, triplet) in [("distance", false), ("triplet", true)] {
                    let name = format!("{variant}.{kind}.{prefix}");
                    match pipeline_check(&model, &group, &graphs, &dist, triplet, corrupt) {
                        Ok(err) => report.at_most(&name, err, GRADIENT_TOLERANCE),
                        Err(e) => report.errors.push(format!("{name} seed {seed}: {e}")),
                    }
                }
            }
        }
    }
    report
}

fn random_cost_model(rng: &mut impl Rng) -> CostModel {
    CostModel::uniform(rng.random_range(0.0..=1.0), rng.random_range(0.1..2.0), rng.random_range(0.1..2.0))
}

/// `hed <= exact_ged <= aed` on random pairs with up to 6 nodes and random
/// costs. Also counts pairs where the lower bound is strictly below the
/// upper one.
pub fn bound_suite(pairs: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("bound sandwich");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strict = 0usize;
    report.at_most("hed - exact", f64::NEG_INFINITY, BOUND_TOLERANCE);
    report.at_most("exact - aed", f64::NEG_INFINITY, BOUND_TOLERANCE);
    for k in 0..pairs {
        let (n1, n2) = (rng.random_range(0..=6), rng.random_range(0..=6));
        let p = rng.random_range(0.2..0.8);
        let g1 = random_graph(&mut rng, n1, p);
        let g2 = random_graph(&mut rng, n2, p);
        let c = random_cost_model(&mut rng);
        let lower = hed(&g1, &g2, &c);
        let upper = aed(&g1, &g2, &c);
        match exact_ged(&g1, &g2, &c, 6) {
            Ok(exact) => {
                report.at_most("hed - exact", lower - exact, BOUND_TOLERANCE);
                report.at_most("exact - aed", exact - upper, BOUND_TOLERANCE);
            }
            Err(e) => report.errors.push(format!("pair {k}: {e}")),
        }
        if lower < upper - BOUND_TOLERANCE {
            strict += 1;
        }
    }
    report.at_least("pairs with hed < aed", strict as f64, 1.0);
    report
}

/// Non-negativity, identity, symmetry and permutation invariance of the
/// learned distance for random models of both variants.
pub fn metric_suite(pairs: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("learned metric identities");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65);
    for k in 0..pairs {
        let variant = if k % 2 == 0 { Variant::Gat } else { Variant::Gru };
        let model = match small_model(variant, rng.random()) {
            Ok(m) => m,
            Err(e) => {
                report.errors.push(e.to_string());
                continue;
            }
        };
        // symmetry needs equal insertion and deletion offsets
        let tau = rng.random_range(0.0..1.0);
        let dist = DistanceConfig {
            spatial_blend: rng.random_bool(0.5),
            tau_insert: tau,
            tau_delete: tau,
        };
        let (n1, n2) = (rng.random_range(1..9), rng.random_range(0..9));
        let g1 = random_graph(&mut rng, n1, 0.4);
        let g2 = random_graph(&mut rng, n2, 0.4);
        let perm = NodePermutation::random(n1, &mut rng);
        let run = || -> Result<[f64; 4], String> {
            let d = |a: &Graph, b: &Graph| graph_distance(&model, a, b, &dist).map(|r| r.0).map_err(|e| e.to_string());
            let p1 = g1.permute(&perm).map_err(|e| e.to_string())?;
            let d12 = d(&g1, &g2)?;
            Ok([d12, d(&g2, &g1)?, d(&g1, &g1)?, d(&p1, &g2)?])
        };
        match run() {
            Ok([d12, d21, d11, dp]) => {
                report.at_most("negativity", -d12.min(d21), 0.0);
                report.at_most("self distance", d11.abs(), 0.0);
                report.at_most("asymmetry", (d12 - d21).abs(), SYMMETRY_TOLERANCE);
                report.at_most("permutation change", (d12 - dp).abs(), PERMUTATION_TOLERANCE);
            }
            Err(e) => report.errors.push(format!("pair {k}: {e}")),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_suites_pass() {
        let cfg = VerifyConfig { seeds: 1, pairs: 20, ..Default::default() };
        let r = run_all(&cfg);
        assert!(r.passed(), "{}", r.to_text());
        let layers = &r.suites[1];
        for name in ["gat.distance.input", "gat.distance.gat1", "gru.triplet.gru0", "gru.distance.edge_features", "gru.distance.cost_head"] {
            assert!(layers.checks.iter().any(|c| c.name == name), "missing {name}");
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let r = op_gradient_suite(1, 1e-2);
        assert!(!r.passed());
        let r = layer_gradient_suite(1, 1e-2);
        assert!(!r.passed());
        assert!(r.checks.iter().all(|c| !c.passed));
    }

    #[test]
    fn text_report_lists_each_check() {
        let r = VerifyReport { config: VerifyConfig::default(), suites: vec![bound_suite(5, 1)] };
        let text = r.to_text();
        assert!(text.contains("hed - exact"));
        assert!(text.lines().count() >= 4);
    }
}
