//! Acceptance criteria 1-9. Runs without the libtest harness so every
//! criterion prints exactly one uncaptured PASS / FAIL / SKIP line.
//!
//! Criterion 8 needs the COIL-DEL graphs: point `GED_COIL_DEL` at a directory
//! holding train/valid/test `.cxl` files. Its outcome is reported but never
//! fails the run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ged_core::classic::{aed, exact_ged, hed, solve_assignment, CostModel};
use ged_core::dataset::{generate_synthetic, knn_edges, load_dataset, Layout, SyntheticConfig};
use ged_core::eval::{
    average_precision, mean_average_precision, pair_auc, sample_pairs, sample_triplets, triplet_accuracy, Protocol, RankedList,
};
use ged_core::gnn::{init_params, ModelConfig, ModelParams, Mode, Variant};
use ged_core::graph::{random_graph, Graph, NodePermutation};
use ged_core::learned::{distance_matrix_prepared, graph_distance, learned_hed, DistanceConfig};
use ged_core::train::{prepare_all, train_from, triplet_loss, TrainConfig};
use ged_core::verify::{layer_gradient_suite, op_gradient_suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ASSIGNMENT_BUDGET: Duration = Duration::from_secs(30);
const BOUND_TOL: f64 = 1e-9;
const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_SEEDS: u64 = 20;
const SYMMETRY_TOL: f64 = 1e-12;
const PERMUTATION_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-12;
const DESK_TRIPLET_MIN: f64 = 0.95;
const DESK_AUC_MIN: f64 = 0.90;
const DESK_UNTRAINED_MAX: f64 = 0.65;
const DESK_BUDGET: Duration = Duration::from_secs(600);
const COIL_AUC: f64 = 0.9782;
const COIL_TRIPLET: f64 = 0.9674;
const COIL_BAND: f64 = 0.02;
const SCALING_RANGE: (f64, f64) = (3.0, 6.0);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// ---------------------------------------------------------------- 1

fn brute_force_assignment(c: &[Vec<f64>]) -> f64 {
    fn go(c: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == c.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..c.len() {
            if !used[j] {
                used[j] = true;
                go(c, row + 1, used, acc + c[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; c.len()], 0.0, &mut best);
    best
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut mismatches = 0;
    for k in 0..500 {
        let n = rng.random_range(1..=7);
        let integer = k % 2 == 0;
        let c: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| if integer { rng.random_range(0..50) as f64 } else { rng.random_range(0.0..10.0) })
                    .collect()
            })
            .collect();
        let solved = solve_assignment(&c).expect("finite matrix");
        if solved.total_cost != brute_force_assignment(&c) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && elapsed < ASSIGNMENT_BUDGET,
        format!("500 matrices, {mismatches} mismatches against n! enumeration, {:.2}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_low, mut worst_high, mut strict) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
    for _ in 0..200 {
        let (n1, n2) = (rng.random_range(0..=6), rng.random_range(0..=6));
        let p = rng.random_range(0.2..0.8);
        let g1 = random_graph(&mut rng, n1, p);
        let g2 = random_graph(&mut rng, n2, p);
        let c = CostModel::uniform(rng.random_range(0.0..=1.0), rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
        let (lo, hi) = (hed(&g1, &g2, &c), aed(&g1, &g2, &c));
        let ex = exact_ged(&g1, &g2, &c, 6).expect("within node limit");
        worst_low = worst_low.max(lo - ex);
        worst_high = worst_high.max(ex - hi);
        if lo < hi - BOUND_TOL {
            strict += 1;
        }
    }
    check(
        worst_low <= BOUND_TOL && worst_high <= BOUND_TOL && strict >= 1,
        format!("200 pairs, max(hed-exact)={worst_low:.2e}, max(exact-aed)={worst_high:.2e}, hed<aed on {strict}"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let ops = op_gradient_suite(GRADIENT_SEEDS, 0.0);
    let layers = layer_gradient_suite(GRADIENT_SEEDS, 0.0);
    let worst = |r: &ged_core::verify::SuiteReport| {
        r.checks.iter().map(|c| (c.value, c.name.clone())).fold((0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a })
    };
    let (wo, no) = worst(&ops);
    let (wl, nl) = worst(&layers);
    let errors: Vec<&String> = ops.errors.iter().chain(&layers.errors).collect();
    check(
        ops.passed() && layers.passed() && wo < GRADIENT_TOL && wl < GRADIENT_TOL,
        format!(
            "{GRADIENT_SEEDS} seeds, {} op checks (worst {wo:.2e} {no}), {} layer checks (worst {wl:.2e} {nl}), {} errors",
            ops.checks.len(),
            layers.checks.len(),
            errors.len()
        ),
    )
}

// ---------------------------------------------------------------- 4

fn random_model(rng: &mut ChaCha8Rng, variant: Variant) -> ModelParams {
    let cfg = ModelConfig { variant, layers: 3, hidden_dim: 16, heads: 4, ..ModelConfig::default() };
    let mut m = init_params(&cfg, rng.random()).expect("valid config");
    for (mean, var) in &mut m.running {
        mean.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
        var.iter_mut().for_each(|x| *x = rng.random_range(0.5..2.0));
    }
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        m.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.1..0.1));
    }
    m
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut negative, mut self_nonzero) = (0, 0);
    let (mut asym, mut perm): (f64, f64) = (0.0, 0.0);
    for k in 0..100 {
        let model = random_model(&mut rng, if k % 2 == 0 { Variant::Gat } else { Variant::Gru });
        let tau = rng.random_range(0.0..1.0);
        let cfg = DistanceConfig { spatial_blend: rng.random_bool(0.5), tau_insert: tau, tau_delete: tau };
        let (n1, n2) = (rng.random_range(1..12), rng.random_range(1..12));
        let g1 = random_graph(&mut rng, n1, 0.3);
        let g2 = random_graph(&mut rng, n2, 0.3);
        let d = |a: &Graph, b: &Graph| graph_distance(&model, a, b, &cfg).expect("distance").0;
        let d12 = d(&g1, &g2);
        let d21 = d(&g2, &g1);
        if d12 < 0.0 || d21 < 0.0 {
            negative += 1;
        }
        if d(&g1, &g1) != 0.0 || d(&g2, &g2) != 0.0 {
            self_nonzero += 1;
        }
        asym = asym.max((d12 - d21).abs());
        let p1 = g1.permute(&NodePermutation::random(n1, &mut rng)).unwrap();
        let p2 = g2.permute(&NodePermutation::random(n2, &mut rng)).unwrap();
        perm = perm.max((d(&p1, &p2) - d12).abs());
    }
    check(
        negative == 0 && self_nonzero == 0 && asym <= SYMMETRY_TOL && perm <= PERMUTATION_TOL,
        format!("100 pairs: {negative} negative, {self_nonzero} nonzero self, max asymmetry {asym:.1e}, max permutation change {perm:.1e}"),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let cases = [((0.2, 1.5, 1.4), 0.0), ((0.5, 1.0, 2.0), 0.5), ((0.5, 2.0, 0.8), 0.7)];
    let got: Vec<f64> = cases.iter().map(|&((p, n, s), _)| triplet_loss(p, n, s, 1.0)).collect();
    let ok = cases.iter().zip(&got).all(|(c, g)| *g == c.1);
    check(ok, format!("margin 1: losses {got:?}, expected [0.0, 0.5, 0.7]"))
}

// ---------------------------------------------------------------- 6

/// AP from the definition: mean over relevant ranks of precision at that rank.
fn ap_oracle(rel: &[bool]) -> f64 {
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (i, &r) in rel.iter().enumerate() {
        if r {
            hits += 1.0;
            sum += hits / (i + 1) as f64;
        }
    }
    sum / hits
}

/// AUC by enumerating every (positive, negative) pair.
fn auc_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

fn ranked(rel: &[bool]) -> RankedList {
    let d: Vec<f64> = (0..rel.len()).map(|i| i as f64).collect();
    RankedList::from_distances(&d, rel, &[])
}

fn criterion_6() -> Outcome {
    let mut worst: f64 = 0.0;
    let (t, f) = (true, false);
    for (rel, hand) in [(vec![t, t, f], 1.0), (vec![t, f, t], (1.0 + 2.0 / 3.0) / 2.0), (vec![f, f, t], 1.0 / 3.0)] {
        let ap = average_precision(&ranked(&rel)).unwrap();
        worst = worst.max((ap - hand).abs()).max((ap - ap_oracle(&rel)).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let n = rng.random_range(2..30);
        let mut rel: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        rel[rng.random_range(0..n)] = true;
        worst = worst.max((average_precision(&ranked(&rel)).unwrap() - ap_oracle(&rel)).abs());
    }
    let one = mean_average_precision(
        &[vec![0.0, 1.0, 1.0]],
        &["a".into()],
        &["a".into(), "b".into(), "c".into()],
        Protocol::Individual,
        &[None],
        true,
    )
    .unwrap();
    worst = worst.max((one.map.unwrap() - 1.0).abs());

    let fixture = pair_auc(&[0.9, 0.8, 0.7, 0.85], &[t, t, f, f]).unwrap();
    worst = worst.max((fixture - 0.75).abs());
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let pos: Vec<f64> = scores.iter().zip(&labels).filter(|x| *x.1).map(|x| *x.0).collect();
        let neg: Vec<f64> = scores.iter().zip(&labels).filter(|x| !*x.1).map(|x| *x.0).collect();
        worst = worst.max((pair_auc(&scores, &labels).unwrap() - auc_oracle(&pos, &neg)).abs());
    }

    // combined with one query per label equals individual, bit for bit
    let mut equal = true;
    for _ in 0..50 {
        let (q, g) = (rng.random_range(1..6), rng.random_range(2..15));
        let qlabels: Vec<String> = (0..q).map(|i| format!("k{i}")).collect();
        let mut glabels: Vec<String> = (0..g).map(|_| format!("k{}", rng.random_range(0..q))).collect();
        glabels[0] = "k0".into();
        let d: Vec<Vec<f64>> = (0..q).map(|_| (0..g).map(|_| rng.random::<f64>()).collect()).collect();
        let own = vec![None; q];
        let a = mean_average_precision(&d, &qlabels, &glabels, Protocol::Individual, &own, true).unwrap();
        let b = mean_average_precision(&d, &qlabels, &glabels, Protocol::Combined, &own, true).unwrap();
        equal &= a.map.unwrap().to_bits() == b.map.unwrap().to_bits();
    }
    check(
        worst <= METRIC_TOL && equal,
        format!("max deviation from hand values and oracles {worst:.1e}; combined(t=1) == individual: {equal}"),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut sc = SyntheticConfig::new(5, 50, (10, 20), 0.05, 42);
    sc.layout = Layout::Neighbours;
    let split = generate_synthetic(&sc);
    let mc = ModelConfig { variant: Variant::Gru, layers: 3, hidden_dim: 32, ..ModelConfig::default() };
    let dist = DistanceConfig::default();
    let tc = TrainConfig { margin: 1.0, max_epochs: 50, seed: 42, jobs: 1, ..TrainConfig::default() };

    let labels: Vec<&str> = split.test.iter().map(|g| g.label.as_str()).collect();
    let triplets = sample_triplets(&labels, 500, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let pairs = sample_pairs(&labels, 500, 7).unwrap();
    let score = |m: &ModelParams| {
        let p = prepare_all(m, &split.test, 1).unwrap();
        let d = distance_matrix_prepared(&p, &p, &dist).unwrap();
        let acc = triplet_accuracy(&triplets.iter().map(|t| (d[t.anchor][t.positive], d[t.anchor][t.negative])).collect::<Vec<_>>()).unwrap();
        let s: Vec<f64> = pairs.iter().map(|p| -d[p.0][p.1]).collect();
        let l: Vec<bool> = pairs.iter().map(|p| p.2).collect();
        (acc, pair_auc(&s, &l).unwrap())
    };
    let model = init_params(&mc, tc.seed).unwrap();
    let (u_acc, u_auc) = score(&model);
    let out = train_from(model, &split.train, &split.validation, &dist, &tc, |_| {}).unwrap();
    let (acc, auc) = score(&out.model);
    let elapsed = start.elapsed();
    check(
        acc >= DESK_TRIPLET_MIN && auc >= DESK_AUC_MIN && u_acc <= DESK_UNTRAINED_MAX && u_auc <= DESK_UNTRAINED_MAX && elapsed <= DESK_BUDGET,
        format!(
            "untrained acc {u_acc:.3} auc {u_auc:.3}; trained acc {acc:.3} auc {auc:.3} (best epoch {} of {}); {:.0}s",
            out.best_epoch.map_or("none".to_string(), |e| e.to_string()),
            out.history.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let Some(dir) = std::env::var_os("GED_COIL_DEL") else {
        return Outcome::Skip("set GED_COIL_DEL to a directory with the COIL-DEL train/valid/test .cxl files".into());
    };
    let split = match load_dataset(std::path::Path::new(&dir), None) {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(format!("cannot load COIL-DEL: {e}")),
    };
    let mc = ModelConfig {
        variant: Variant::Gat,
        layers: 3,
        input_dim: split.node_dim().unwrap_or(2),
        ..ModelConfig::default()
    };
    let dist = DistanceConfig::default();
    let epochs = std::env::var("GED_COIL_EPOCHS").ok().and_then(|s| s.parse().ok()).unwrap_or(50);
    let tc = TrainConfig { margin: 1.0, max_epochs: epochs, seed: 0, ..TrainConfig::default() };
    let model = init_params(&mc, tc.seed).unwrap();
    let out = train_from(model, &split.train, &split.validation, &dist, &tc, |r| {
        eprintln!("coil-del epoch {} loss {:.4} val acc {:.4}", r.epoch, r.train_loss, r.val_triplet_acc)
    })
    .unwrap();
    let labels: Vec<&str> = split.test.iter().map(|g| g.label.as_str()).collect();
    let prepared = prepare_all(&out.model, &split.test, tc.jobs).unwrap();
    let d = |a: usize, b: usize| learned_hed(&prepared[a], &prepared[b], &dist).unwrap().0;
    let pairs = sample_pairs(&labels, 1000, 0).unwrap();
    let auc = pair_auc(&pairs.iter().map(|p| -d(p.0, p.1)).collect::<Vec<_>>(), &pairs.iter().map(|p| p.2).collect::<Vec<_>>()).unwrap();
    let triplets = sample_triplets(&labels, 1000, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let acc = triplet_accuracy(&triplets.iter().map(|t| (d(t.anchor, t.positive), d(t.anchor, t.negative))).collect::<Vec<_>>()).unwrap();
    check(
        (auc - COIL_AUC).abs() <= COIL_BAND && (acc - COIL_TRIPLET).abs() <= COIL_BAND,
        format!("pair AUC {:.2} (target 97.82 +-2), triplet accuracy {:.2} (target 96.74 +-2), {} epochs", 100.0 * auc, 100.0 * acc, out.history.len()),
    )
}

// ---------------------------------------------------------------- 9

/// Random geometric graphs with bounded degree, so only the node count grows.
fn sparse_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let edges = knn_edges(&pts, 3);
    Graph::new(format!("s{n}"), pts, edges, None).unwrap()
}

/// Best of five timed passes over all pairs, per pair.
fn per_pair<T>(items: &[(T, T)], f: impl Fn(&T, &T) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut sink = 0.0;
    for _ in 0..5 {
        let t = Instant::now();
        for (a, b) in items {
            sink += f(a, b);
        }
        best = best.min(t.elapsed().as_secs_f64());
    }
    std::hint::black_box(sink);
    best / items.len() as f64
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = CostModel::uniform(0.5, 1.0, 1.0);
    let model = init_params(&ModelConfig::default(), 9).unwrap();
    let dist = DistanceConfig::default();
    let mut ratios = Vec::new();
    let mut timings = Vec::new();
    let mut sizes: Vec<(Vec<(Graph, Graph)>, usize)> = Vec::new();
    for n in [32, 64] {
        let pairs: Vec<(Graph, Graph)> = (0..60).map(|_| (sparse_graph(&mut rng, n), sparse_graph(&mut rng, n))).collect();
        sizes.push((pairs, n));
    }
    let hed_times: Vec<f64> = sizes.iter().map(|(p, _)| per_pair(p, |a, b| hed(a, b, &c))).collect();
    let learned_times: Vec<f64> = sizes
        .iter()
        .map(|(p, _)| {
            let prepared: Vec<_> = p
                .iter()
                .map(|(a, b)| (model.prepare(a, Mode::Eval).unwrap(), model.prepare(b, Mode::Eval).unwrap()))
                .collect();
            per_pair(&prepared, |a, b| learned_hed(a, b, &dist).unwrap().0)
        })
        .collect();
    for (name, t) in [("hed", &hed_times), ("learned_hed", &learned_times)] {
        let r = t[1] / t[0];
        ratios.push(r);
        timings.push(format!("{name} {:.1}us -> {:.1}us (x{r:.2})", t[0] * 1e6, t[1] * 1e6));
    }
    check(
        ratios.iter().all(|r| (SCALING_RANGE.0..=SCALING_RANGE.1).contains(r)),
        format!("32 -> 64 nodes: {}", timings.join(", ")),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, bool); 9] = [
        (1, "assignment oracle", criterion_1, true),
        (2, "bound sandwich", criterion_2, true),
        (3, "gradient suite", criterion_3, true),
        (4, "metric identities", criterion_4, true),
        (5, "loss algebra", criterion_5, true),
        (6, "metric formulas", criterion_6, true),
        (7, "desk-scale learning", criterion_7, true),
        (8, "COIL-DEL reference (stretch)", criterion_8, false),
        (9, "quadratic scaling", criterion_9, true),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f, gate) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Outcome::Fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                if gate {
                    failed += 1;
                }
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id} [{tag}] {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
}
