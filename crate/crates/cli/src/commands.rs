use std::fs;
use std::path::Path;

use ged_core::autodiff::Checkpoint;
use ged_core::classic::{aed_with_mapping, exact_ged_with_mapping, hed, ClassicError, CostModel};
use ged_core::dataset::{generate_synthetic, load_dataset, DatasetError, DatasetSplit, LabeledGraph, SyntheticConfig};
use ged_core::eval::{mean_average_precision, pair_auc, sample_pairs, sample_triplets, triplet_accuracy, EvalReport};
use ged_core::gnn::ModelParams;
use ged_core::io::{graph_to_json, load_graph};
use ged_core::learned::{distance_matrix_prepared, graph_distance, learned_hed, with_jobs, DistanceConfig};
use ged_core::train::{history_csv, prepare_all, train_from, EpochRecord};
use ged_core::verify::{run_all, VerifyConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{apply_distance, create_run_dir, RunConfig};
use crate::{domain, usage, Cli, CliError, Command, DistArgs, EvalArgs, IngestArgs, Method, Metric, Split, SynthArgs, TrainArgs, VerifyArgs};

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest(a) => ingest(&cli, a),
        Command::Synth(a) => synth(&cli, a),
        Command::Train(a) => train(&cli, a),
        Command::Eval(a) => eval(&cli, a),
        Command::Dist(a) => dist(a),
        Command::Verify(a) => verify(&cli, a),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| domain(format!("cannot write {}: {e}", path.display())))
}

fn load(cfg: &RunConfig, flag: Option<&Path>, cli: &Cli) -> Result<DatasetSplit, CliError> {
    let root = cli.global.data_root.as_deref();
    let path = cfg.dataset_path(flag, root)?;
    let graph_root = cfg.graph_root(root)?;
    load_dataset(&path, graph_root.as_deref()).map_err(|e| match e {
        DatasetError::Empty => domain(format!("{}: dataset is empty", path.display())),
        other => domain(format!("{}: {other}", path.display())),
    })
}

fn ingest(cli: &Cli, a: &IngestArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_args(&cli.global)?;
    if a.graph_root.is_some() {
        cfg.dataset.graph_root = a.graph_root.clone();
    }
    let data = load(&cfg, Some(&a.dataset), cli)?;
    let summary = data.summary();
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary).map_err(domain)?);
    } else {
        print!("{summary}");
    }
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<(), CliError> {
    let cfg = RunConfig::from_args(&cli.global)?;
    if a.classes < 2 || a.per_class == 0 || a.min_nodes < 2 || a.min_nodes > a.max_nodes {
        return Err(usage("need at least 2 classes, 1 graph per class and 2 <= min-nodes <= max-nodes"));
    }
    if a.out.exists() && fs::read_dir(&a.out).map_err(domain)?.next().is_some() {
        return Err(usage(format!("{} exists and is not empty", a.out.display())));
    }
    let mut sc = SyntheticConfig::new(a.classes, a.per_class, (a.min_nodes, a.max_nodes), a.jitter, cfg.seed);
    sc.layout = a.layout;
    let data = generate_synthetic(&sc);
    let graphs = a.out.join("graphs");
    fs::create_dir_all(&graphs).map_err(domain)?;
    let mut manifest = format!("# synthetic: {} layout, seed {}\n", layout_name(a.layout), cfg.seed);
    for (split, members) in [("train", &data.train), ("validation", &data.validation), ("test", &data.test)] {
        for g in members {
            let file = format!("{}.json", g.graph.id);
            write(&graphs.join(&file), &graph_to_json(&g.graph))?;
            manifest.push_str(&format!("graphs/{file}\t{}\t{split}\n", g.label));
        }
    }
    write(&a.out.join("manifest.tsv"), &manifest)?;
    print!("{}", data.summary());
    Ok(())
}

fn layout_name(l: ged_core::dataset::Layout) -> &'static str {
    match l {
        ged_core::dataset::Layout::Positions => "positions",
        ged_core::dataset::Layout::Neighbours => "neighbours",
    }
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_args(&cli.global)?;
    cfg.apply_model(&a.model);
    apply_distance(&mut cfg.distance, &a.distance);
    let t = &mut cfg.train;
    if let Some(m) = a.margin {
        t.margin = m;
    }
    if let Some(e) = a.epochs {
        t.max_epochs = e;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = a.lr {
        t.lr = lr;
    }
    if let Some(p) = a.patience {
        t.patience = p;
    }
    if let Some(path) = &a.dataset {
        cfg.dataset.path = Some(path.clone());
    }
    cfg.train.validate().map_err(usage)?;
    cfg.distance.validate().map_err(usage)?;
    let data = load(&cfg, None, cli)?.with_holdout_validation(cfg.dataset.validation_fraction, cfg.seed);
    cfg.model.input_dim = data.node_dim().unwrap_or(cfg.model.input_dim);
    let model = ged_core::gnn::init_params(&cfg.model, cfg.seed).map_err(usage)?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(domain("training needs non-empty train and validation splits"));
    }

    let run = create_run_dir(&cfg.output_dir, cfg.seed)?;
    write(&run.join("config.toml"), &toml::to_string(&cfg).map_err(domain)?)?;
    let history_path = run.join("history.csv");
    let mut history: Vec<EpochRecord> = Vec::new();
    let outcome = train_from(model, &data.train, &data.validation, &cfg.distance, &cfg.train, |r| {
        eprintln!("epoch {:>3}  lr {:.2e}  loss {:.5}  val triplet acc {:.4}", r.epoch, r.lr, r.train_loss, r.val_triplet_acc);
        history.push(r.clone());
        // rewritten every epoch so an interrupted run keeps its history
        let _ = fs::write(&history_path, history_csv(&history));
    })
    .map_err(domain)?;
    write(&history_path, &history_csv(&outcome.history))?;
    let extra = |which: &str| {
        json!({
            "distance": cfg.distance,
            "seed": cfg.seed,
            "best_epoch": outcome.best_epoch,
            "epochs_run": outcome.history.len(),
            "parameters": which,
        })
    };
    write(&run.join("checkpoint.json"), &outcome.model.to_checkpoint(extra("best")).to_json())?;
    write(&run.join("checkpoint-last.json"), &outcome.last.to_checkpoint(extra("last")).to_json())?;
    println!("{}", run.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(ModelParams, DistanceConfig), CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("checkpoint {}: {e}", path.display())))?;
    let ck = Checkpoint::from_json(&text).map_err(|e| domain(format!("checkpoint {}: {e}", path.display())))?;
    let model = ModelParams::from_checkpoint(&ck).map_err(|e| domain(format!("checkpoint {}: {e}", path.display())))?;
    let dist = ck
        .meta
        .get("extra")
        .and_then(|x| x.get("distance"))
        .map(|d| serde_json::from_value(d.clone()))
        .transpose()
        .map_err(|e| domain(format!("checkpoint distance config: {e}")))?
        .unwrap_or_default();
    Ok((model, dist))
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<(), CliError> {
    let cfg = RunConfig::from_args(&cli.global)?;
    let (model, mut dist) = load_checkpoint(&a.checkpoint)?;
    apply_distance(&mut dist, &a.distance);
    dist.validate().map_err(usage)?;
    let data = load(&cfg, a.dataset.as_deref(), cli)?;
    let pick = |s: Split| -> Result<&[LabeledGraph], CliError> {
        let g: &[LabeledGraph] = match s {
            Split::Train => &data.train,
            Split::Validation => &data.validation,
            Split::Test => &data.test,
        };
        if g.is_empty() {
            return Err(domain(format!("the {s:?} split is empty").to_lowercase()));
        }
        Ok(g)
    };
    let graphs = pick(a.split)?;
    let metrics = if a.metric.is_empty() { vec![Metric::Map] } else { a.metric.clone() };
    let labels: Vec<String> = graphs.iter().map(|g| g.label.clone()).collect();
    let prepared = prepare_all(&model, graphs, cfg.jobs).map_err(domain)?;
    let pair_distance = |i: usize, j: usize| learned_hed(&prepared[i], &prepared[j], &dist).map(|r| r.0).map_err(domain);

    let mut report = EvalReport {
        seed: Some(cfg.seed),
        ..Default::default()
    };
    for m in metrics {
        match m {
            Metric::Map => {
                let query_split = a.queries.unwrap_or(a.split);
                let (queries, own) = if query_split == a.split {
                    (prepared.clone(), (0..graphs.len()).map(Some).collect::<Vec<_>>())
                } else {
                    let q = prepare_all(&model, pick(query_split)?, cfg.jobs).map_err(domain)?;
                    let n = q.len();
                    (q, vec![None; n])
                };
                let query_labels: Vec<String> = pick(query_split)?.iter().map(|g| g.label.clone()).collect();
                let matrix = with_jobs(cfg.jobs, || distance_matrix_prepared(&queries, &prepared, &dist))
                    .map_err(domain)?
                    .map_err(domain)?;
                let r = mean_average_precision(&matrix, &query_labels, &labels, a.protocol, &own, !a.include_self)
                    .map_err(|e| match (a.protocol, query_split == a.split) {
                        (ged_core::eval::Protocol::Combined, true) => {
                            domain(format!("{e}; with queries drawn from the gallery the combined protocol excludes every group member, pass --queries with another split"))
                        }
                        _ => domain(e),
                    })?;
                report.protocol = r.protocol;
                report.per_query = r.per_query;
                report.map = r.map;
                report.skipped = r.skipped;
            }
            Metric::PairAuc => {
                let pairs = sample_pairs(&labels, a.pairs, cfg.seed).map_err(domain)?;
                let mut scores = Vec::with_capacity(pairs.len());
                let mut same = Vec::with_capacity(pairs.len());
                for &(i, j, s) in &pairs {
                    scores.push(-pair_distance(i, j)?);
                    same.push(s);
                }
                report.pair_auc = Some(pair_auc(&scores, &same).map_err(domain)?);
            }
            Metric::TripletAcc => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let triplets = sample_triplets(&labels, a.triplets, &mut rng).map_err(domain)?;
                let pairs = triplets
                    .iter()
                    .map(|t| Ok((pair_distance(t.anchor, t.positive)?, pair_distance(t.anchor, t.negative)?)))
                    .collect::<Result<Vec<_>, CliError>>()?;
                report.triplet_accuracy = Some(triplet_accuracy(&pairs).map_err(domain)?);
            }
        }
    }
    let run = create_run_dir(&cfg.output_dir, cfg.seed)?;
    write(&run.join("report.json"), &report.to_json())?;
    let table = report.to_table();
    write(&run.join("report.txt"), &table)?;
    print!("{table}");
    println!("report written to {}", run.display());
    Ok(())
}

fn dist(a: &DistArgs) -> Result<(), CliError> {
    if a.method == Method::Learned && a.checkpoint.is_none() {
        return Err(usage("--method learned requires --checkpoint"));
    }
    let read = |p: &Path| load_graph(p).map_err(|e| domain(format!("{}: {e}", p.display())));
    let (g1, g2) = (read(&a.graph_a)?, read(&a.graph_b)?);
    let cost = || CostModel::new(a.alpha, a.tau_node, a.tau_edge).map_err(usage);
    let map_json = |m: &[Option<usize>]| {
        json!(m
            .iter()
            .enumerate()
            .map(|(u, v)| match v {
                Some(v) => json!([u, v]),
                None => json!([u, "eps"]),
            })
            .collect::<Vec<_>>())
    };
    let (d, mapping) = match a.method {
        Method::Exact => {
            let (d, m) = exact_ged_with_mapping(&g1, &g2, &cost()?, a.node_limit).map_err(|e| match e {
                ClassicError::SizeLimit { .. } => domain(format!("{e} (raise --node-limit to search larger graphs)")),
                other => domain(other),
            })?;
            (d, Some(json!({ "forward": map_json(&m) })))
        }
        Method::Aed => {
            let (d, m) = aed_with_mapping(&g1, &g2, &cost()?);
            (d, Some(json!({ "forward": map_json(&m) })))
        }
        Method::Hed => (hed(&g1, &g2, &cost()?), None),
        Method::Learned => {
            let (model, mut dc) = load_checkpoint(a.checkpoint.as_deref().expect("checked above"))?;
            apply_distance(&mut dc, &a.distance);
            let (d, c) = graph_distance(&model, &g1, &g2, &dc).map_err(domain)?;
            (d, Some(c.to_json()))
        }
    };
    if let Some(path) = &a.correspondence {
        match &mapping {
            Some(m) => write(path, &serde_json::to_string_pretty(m).map_err(domain)?)?,
            None => return Err(usage("hed has no node correspondence; use aed, exact or learned")),
        }
    }
    if a.json {
        let method = format!("{:?}", a.method).to_lowercase();
        let mut out = json!({ "method": method, "distance": d });
        if let Some(m) = mapping {
            out["correspondence"] = m;
        }
        println!("{out}");
    } else {
        println!("{d}");
    }
    Ok(())
}

fn verify(cli: &Cli, a: &VerifyArgs) -> Result<(), CliError> {
    let cfg = RunConfig::from_args(&cli.global)?;
    let vc = VerifyConfig {
        seeds: a.seeds,
        pairs: a.pairs,
        seed: cfg.seed,
        corrupt_gradient: a.corrupt_gradient,
    };
    let report = with_jobs(cfg.jobs, || run_all(&vc)).map_err(domain)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.report {
        write(p, &serde_json::to_string_pretty(&report).map_err(domain)?)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(domain("one or more verification suites failed"))
    }
}
