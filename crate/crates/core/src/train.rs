//! Triplet training of the embedding network and cost head.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, BatchStats, ParamSet, Tape, Tensor, Var};
use crate::dataset::LabeledGraph;
use crate::eval::{sample_triplets, triplet_accuracy, EvalError, Triplet};
use crate::gnn::{init_params, GnnError, Mode, ModelConfig, ModelParams};
use crate::learned::{distance_matrix_prepared, learned_hed_on_tape, with_jobs, DistanceConfig, DistanceError, PreparedGraph};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} parameter tensors but {1} gradients")]
    GradCount(usize, usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub margin: f64,
    pub lr: f64,
    /// Learning-rate factor applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Mini-batches per epoch; 0 means one pass worth of anchors over the
    /// training split.
    pub batches_per_epoch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Size of the fixed validation triplet set.
    pub val_triplets: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            lr: 1e-3,
            lr_decay: 0.95,
            lr_decay_every: 5,
            weight_decay: 5e-4,
            batch_size: 16,
            batches_per_epoch: 0,
            max_epochs: 50,
            patience: 10,
            val_triplets: 300,
            seed: 0,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if self.batch_size == 0 || self.lr_decay_every == 0 {
            return bad("batch size and decay interval must be positive");
        }
        Ok(())
    }

    /// `lr * lr_decay ^ floor(epoch / lr_decay_every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// `max(0, margin + d_pos - min(d_neg, d_neg_swapped))`; the swapped
/// negative distance is measured from the positive.
pub fn triplet_loss(d_pos: f64, d_neg: f64, d_neg_swapped: f64, margin: f64) -> f64 {
    (margin + d_pos - d_neg.min(d_neg_swapped)).max(0.0)
}

fn as_pair(tape: &mut Tape, a: Var, b: Var) -> Result<Var, AutodiffError> {
    let a = tape.reshape(a, &[1, 1])?;
    let b = tape.reshape(b, &[1, 1])?;
    tape.concat(&[a, b], 1)
}

/// Tape version of [`triplet_loss`] on scalar distance variables.
pub fn triplet_loss_on_tape(tape: &mut Tape, d_pos: Var, d_neg: Var, d_neg_swapped: Var, margin: f64) -> Result<Var, AutodiffError> {
    let pair = as_pair(tape, d_neg, d_neg_swapped)?;
    let (hard, _) = tape.min_axis(pair, 1)?;
    let hard = tape.reshape(hard, &[])?;
    let gap = tape.sub(d_pos, hard)?;
    let gap = tape.add_scalar(gap, margin);
    Ok(tape.relu(gap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient of tensors marked for decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::GradCount(params.len(), grads.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let decay = if params.decays(id) { cfg.weight_decay } else { 0.0 };
        let p = params.get_mut(id);
        if p.shape() != grads[k].shape() {
            return Err(AutodiffError::Shape(format!("gradient {:?} for parameter {:?}", grads[k].shape(), p.shape())).into());
        }
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            let g = grads[k].data()[i] + decay * *x;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *x -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_triplet_acc: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_triplet_acc\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, r.val_triplet_acc));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: ModelParams,
    /// Parameters after the last completed epoch.
    pub last: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Loss and gradients of a set of triplets recorded on one tape. The distinct
/// graphs are embedded once, together, so batch norm uses statistics over all
/// of their nodes. Returns the summed loss, its gradients, and the batch
/// statistics.
pub fn triplet_batch_gradients(
    model: &ModelParams,
    graphs: &[LabeledGraph],
    triplets: &[Triplet],
    dist: &DistanceConfig,
    margin: f64,
) -> Result<(f64, Vec<Tensor>, Vec<(usize, BatchStats)>), TrainError> {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let distinct: Vec<usize> = triplets
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let refs: Vec<&crate::graph::Graph> = distinct.iter().map(|&i| &graphs[i].graph).collect();
    let (blocks, stats) = model.embed_batch_on_tape(&mut tape, &vars, &refs, Mode::Train)?;
    let embedded: BTreeMap<usize, Var> = distinct.iter().copied().zip(blocks).collect();
    let raw: BTreeMap<usize, Tensor> = embedded
        .keys()
        .map(|&i| Ok((i, crate::gnn::raw_attributes(&graphs[i].graph, model.config.input_dim)?)))
        .collect::<Result<_, GnnError>>()?;
    let d = |tape: &mut Tape, a: usize, b: usize| -> Result<Var, TrainError> {
        Ok(learned_hed_on_tape(tape, &vars, model, embedded[&a], &raw[&a], embedded[&b], &raw[&b], dist)?.0)
    };
    let mut losses = Vec::with_capacity(triplets.len());
    for t in triplets {
        let dp = d(&mut tape, t.anchor, t.positive)?;
        let dn = d(&mut tape, t.anchor, t.negative)?;
        let ds = d(&mut tape, t.positive, t.negative)?;
        losses.push(triplet_loss_on_tape(&mut tape, dp, dn, ds, margin)?);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    let grads = tape.backward(total)?;
    Ok((tape.value(total).item(), model.params.collect_grads(&vars, &grads), stats))
}

/// Triplet accuracy of `model` on fixed triplets over `graphs`.
pub fn evaluate_triplets(
    model: &ModelParams,
    graphs: &[LabeledGraph],
    triplets: &[Triplet],
    dist: &DistanceConfig,
    jobs: usize,
) -> Result<f64, TrainError> {
    let pairs = triplet_distances(model, graphs, triplets, dist, jobs)?;
    Ok(triplet_accuracy(&pairs)?)
}

/// `(d(anchor, positive), d(anchor, negative))` per triplet, eval mode.
pub fn triplet_distances(
    model: &ModelParams,
    graphs: &[LabeledGraph],
    triplets: &[Triplet],
    dist: &DistanceConfig,
    jobs: usize,
) -> Result<Vec<(f64, f64)>, TrainError> {
    let prepared = prepare_all(model, graphs, jobs)?;
    let pick = |a: usize, b: usize| distance_matrix_prepared(&prepared[a..=a], &prepared[b..=b], dist).map(|m| m[0][0]);
    triplets
        .iter()
        .map(|t| Ok((pick(t.anchor, t.positive)?, pick(t.anchor, t.negative)?)))
        .collect()
}

pub fn prepare_all(model: &ModelParams, graphs: &[LabeledGraph], jobs: usize) -> Result<Vec<PreparedGraph>, TrainError> {
    let r: Result<Vec<PreparedGraph>, DistanceError> =
        with_jobs(jobs, || graphs.par_iter().map(|g| model.prepare(&g.graph, Mode::Eval)).collect())?;
    Ok(r?)
}

/// Mini-batch triplet training with Adam, step-wise learning-rate decay and
/// early stopping on validation triplet accuracy.
pub fn train(
    train_set: &[LabeledGraph],
    validation: &[LabeledGraph],
    model_config: &ModelConfig,
    dist: &DistanceConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let model = init_params(model_config, cfg.seed)?;
    train_from(model, train_set, validation, dist, cfg, |_| {})
}

/// As [`train`], starting from `model` and reporting each epoch to
/// `on_epoch`.
pub fn train_from(
    mut model: ModelParams,
    train_set: &[LabeledGraph],
    validation: &[LabeledGraph],
    dist: &DistanceConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    dist.validate()?;
    let mut outcome = TrainOutcome {
        model: model.clone(),
        last: model.clone(),
        history: vec![],
        best_epoch: None,
        stopped_early: false,
    };
    if cfg.max_epochs == 0 {
        return Ok(outcome);
    }
    let labels: Vec<&str> = train_set.iter().map(|g| g.label.as_str()).collect();
    let val_labels: Vec<&str> = validation.iter().map(|g| g.label.as_str()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e);
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x76_616c);
    let val_triplets = sample_triplets(&val_labels, cfg.val_triplets.max(1), &mut val_rng)?;
    let batches = if cfg.batches_per_epoch > 0 {
        cfg.batches_per_epoch
    } else {
        train_set.len().div_ceil(cfg.batch_size)
    };
    let adam = AdamConfig {
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&model.params);
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        for _ in 0..batches {
            let triplets = sample_triplets(&labels, cfg.batch_size, &mut rng)?;
            let (loss, grads, stats) = batch_step(&model, train_set, &triplets, dist, cfg)?;
            let scaled: Vec<Tensor> = grads
                .into_iter()
                .map(|g| {
                    let shape = g.shape().to_vec();
                    let data = g.into_data().into_iter().map(|x| x / triplets.len() as f64).collect();
                    Tensor::new(shape, data)
                })
                .collect::<Result<_, _>>()?;
            adam_step(&mut model.params, &scaled, &mut state, lr, &adam)?;
            model.update_running(&stats);
            loss_sum += loss / triplets.len() as f64;
        }
        let acc = evaluate_triplets(&model, validation, &val_triplets, dist, cfg.jobs)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            val_triplet_acc: acc,
        };
        log::info!("epoch {epoch}: loss {:.5} val acc {:.4}", record.train_loss, acc);
        on_epoch(&record);
        outcome.history.push(record);
        if acc > best {
            best = acc;
            since_best = 0;
            outcome.model = model.clone();
            outcome.best_epoch = Some(epoch);
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                outcome.stopped_early = true;
                break;
            }
        }
    }
    outcome.last = model;
    Ok(outcome)
}

/// Summed loss and gradients over a batch, split into `jobs` chunks whose
/// tapes run concurrently; chunk results are combined in order.
fn batch_step(
    model: &ModelParams,
    graphs: &[LabeledGraph],
    triplets: &[Triplet],
    dist: &DistanceConfig,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Tensor>, Vec<(usize, BatchStats)>), TrainError> {
    if cfg.jobs <= 1 {
        return triplet_batch_gradients(model, graphs, triplets, dist, cfg.margin);
    }
    let chunk = triplets.len().div_ceil(cfg.jobs);
    let parts: Vec<_> = with_jobs(cfg.jobs, || {
        triplets
            .par_chunks(chunk)
            .map(|c| triplet_batch_gradients(model, graphs, c, dist, cfg.margin))
            .collect::<Vec<_>>()
    })?;
    let mut parts = parts.into_iter();
    let (mut loss, mut grads, mut stats) = parts.next().expect("at least one chunk")?;
    for p in parts {
        let (l, g, s) = p?;
        loss += l;
        for (acc, x) in grads.iter_mut().zip(g) {
            acc.data_mut().iter_mut().zip(x.data()).for_each(|(a, b)| *a += b);
        }
        stats.extend(s);
    }
    Ok((loss, grads, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};
    use crate::gnn::Variant;

    #[test]
    fn loss_fixtures() {
        assert_eq!(triplet_loss(0.2, 1.5, 1.4, 1.0), 0.0);
        assert_eq!(triplet_loss(0.5, 1.0, 2.0, 1.0), 0.5);
        assert!((triplet_loss(0.5, 2.0, 0.8, 1.0) - 0.7).abs() < 1e-15);
        let mut tape = Tape::new();
        let [a, b, c] = [0.5, 2.0, 0.8].map(|x| tape.param(Tensor::scalar(x)));
        let l = triplet_loss_on_tape(&mut tape, a, b, c, 1.0).unwrap();
        assert_eq!(tape.value(l).item(), triplet_loss(0.5, 2.0, 0.8, 1.0));
        let g = tape.backward(l).unwrap();
        assert_eq!((g.wrt(a).item(), g.wrt(b).item(), g.wrt(c).item()), (1.0, 0.0, -1.0));
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(4), 1e-3);
        assert_eq!(cfg.lr_at(5), 1e-3 * 0.95);
        assert_eq!(cfg.lr_at(14), 1e-3 * 0.95f64.powi(2));
    }

    fn one_param(values: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        let n = values.len();
        p.add("x", Tensor::new(vec![n], values).unwrap(), true);
        p
    }

    #[test]
    fn adam_basics() {
        let mut p = one_param(vec![1.0, -2.0]);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, 0.1, &cfg).unwrap();
        assert_eq!(p.get(crate::autodiff::ParamId(0)).data(), &[1.0, -2.0]);

        let mut p = one_param(vec![1.0, -2.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::new(vec![2], vec![3.0, -1e-3]).unwrap()], &mut s, 0.01, &cfg).unwrap();
        let x = p.get(crate::autodiff::ParamId(0)).data();
        assert!((x[0] - (1.0 - 0.01)).abs() < 1e-8);
        assert!((x[1] - (-2.0 + 0.01)).abs() < 1e-7);
    }

    #[test]
    fn adam_on_quadratic_bowl() {
        let mut p = one_param(vec![1.0, -0.5, 0.25]);
        let mut s = AdamState::new(&p);
        let id = crate::autodiff::ParamId(0);
        let mut norms = vec![];
        for _ in 0..200 {
            let x = p.get(id).clone();
            let g = Tensor::new(vec![3], x.data().iter().map(|v| 2.0 * v).collect()).unwrap();
            adam_step(&mut p, &[g], &mut s, 0.01, &AdamConfig::default()).unwrap();
            norms.push(p.get(id).data().iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        assert!(norms.windows(2).skip(10).all(|w| w[1] < w[0]));
        assert!(norms[199] < 0.5 * norms[0]);
    }

    #[test]
    fn weight_decay_skips_unmarked_tensors() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::scalar(1.0), true);
        p.add("b", Tensor::scalar(1.0), false);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { weight_decay: 0.1, ..Default::default() };
        adam_step(&mut p, &[Tensor::scalar(0.0), Tensor::scalar(0.0)], &mut s, 0.01, &cfg).unwrap();
        assert!(p.get(crate::autodiff::ParamId(0)).item() < 1.0);
        assert_eq!(p.get(crate::autodiff::ParamId(1)).item(), 1.0);
    }

    fn tiny() -> (crate::dataset::DatasetSplit, ModelConfig) {
        let split = generate_synthetic(&SyntheticConfig::new(3, 10, (4, 6), 0.05, 1));
        let cfg = ModelConfig {
            variant: Variant::Gru,
            layers: 2,
            hidden_dim: 8,
            heads: 2,
            input_dim: 2,
            mlp_hidden: 4,
            edge_feature_dim: 3,
        };
        (split, cfg)
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (split, mc) = tiny();
        let cfg = TrainConfig { max_epochs: 0, ..Default::default() };
        let out = train(&split.train, &split.validation, &mc, &DistanceConfig::default(), &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.model, init_params(&mc, cfg.seed).unwrap());
    }

    #[test]
    fn training_is_reproducible() {
        let (split, mc) = tiny();
        let cfg = TrainConfig { max_epochs: 2, batch_size: 4, batches_per_epoch: 2, val_triplets: 10, ..Default::default() };
        let a = train(&split.train, &split.validation, &mc, &DistanceConfig::default(), &cfg).unwrap();
        let b = train(&split.train, &split.validation, &mc, &DistanceConfig::default(), &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn parallel_chunks_match_serial_gradients() {
        let (split, mc) = tiny();
        let model = init_params(&mc, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels: Vec<&str> = split.train.iter().map(|g| g.label.as_str()).collect();
        let t = sample_triplets(&labels, 6, &mut rng).unwrap();
        let dist = DistanceConfig::default();
        let serial = batch_step(&model, &split.train, &t, &dist, &TrainConfig::default()).unwrap();
        let par = batch_step(&model, &split.train, &t, &dist, &TrainConfig { jobs: 3, ..Default::default() }).unwrap();
        assert!((serial.0 - par.0).abs() < 1e-12);
        for (a, b) in serial.1.iter().zip(&par.1) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn small_step_reduces_violating_triplet_loss() {
        let (split, mc) = tiny();
        let mut model = init_params(&mc, 4).unwrap();
        let labels: Vec<&str> = split.train.iter().map(|g| g.label.as_str()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dist = DistanceConfig::default();
        let margin = 10.0;
        let t = sample_triplets(&labels, 1, &mut rng).unwrap();
        let (before, grads, _) = triplet_batch_gradients(&model, &split.train, &t, &dist, margin).unwrap();
        assert!(before > 0.0);
        let mut state = AdamState::new(&model.params);
        adam_step(&mut model.params, &grads, &mut state, 1e-4, &AdamConfig::default()).unwrap();
        let (after, _, _) = triplet_batch_gradients(&model, &split.train, &t, &dist, margin).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn history_csv_layout() {
        let h = [EpochRecord { epoch: 0, lr: 0.001, train_loss: 0.5, val_triplet_acc: 0.75 }];
        assert_eq!(history_csv(&h), "epoch,lr,train_loss,val_triplet_acc\n0,0.001,0.5,0.75\n");
    }
}
