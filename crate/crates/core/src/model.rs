//! The full classifier, its training loop and evaluation.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Adam, Matrix, Params, StepLr, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{make_splits, Dataset, Graph, Label, SplitPlan};
use crate::nn::{readout, GcnLayer, GraphOperators, LayerNorm, MlpHead};
use crate::pooling::{spgp_forward, LayerState, SpgpLayer};
use crate::structure::{augment_features, extract_all, PrototypeKind, PrototypeSet};

/// Number of extra feature columns added before the first layer.
pub const AUGMENTED_COLUMNS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Multiclass,
    Multilabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub pooling_ratio: f64,
    pub dropout_rate: f64,
    pub lambda: f64,
    pub decay_step: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub folds: usize,
    pub prototype_kinds: Vec<PrototypeKind>,
    pub task_mode: TaskMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            batch_size: 8,
            hidden_dim: 64,
            num_layers: 2,
            pooling_ratio: 0.8,
            dropout_rate: 0.0,
            lambda: 0.8,
            decay_step: 25,
            weight_decay: 5e-4,
            epochs: 100,
            patience: 30,
            seed: 0,
            folds: 10,
            prototype_kinds: PrototypeKind::ALL.to_vec(),
            task_mode: TaskMode::Multiclass,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.pooling_ratio > 0.0 && self.pooling_ratio <= 1.0) {
            return bad(format!("pooling_ratio {} outside (0, 1]", self.pooling_ratio));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate must be positive and weight_decay non-negative".into());
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("decay_step", self.decay_step),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        Ok(())
    }
}

/// A graph ready for the model: augmented features, dense adjacency and
/// prototypes.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub features: Matrix,
    pub adjacency: Matrix,
    pub prototypes: Vec<PrototypeSet>,
    pub label: Label,
}

/// Prototypes of `kind` in `protos`, or an empty family.
fn family(protos: &[PrototypeSet], kind: PrototypeKind) -> PrototypeSet {
    protos
        .iter()
        .find(|p| p.kind == kind)
        .cloned()
        .unwrap_or_else(|| PrototypeSet::empty(kind))
}

/// Adds the structure feature columns and keeps the prototypes of the
/// configured kinds. Augmentation always uses both kinds.
pub fn prepare_graph(graph: &Graph, prototypes: &[PrototypeSet], kinds: &[PrototypeKind]) -> Result<PreparedGraph> {
    let n = graph.num_nodes();
    if let Some(m) = prototypes.iter().filter_map(PrototypeSet::max_index).max() {
        if m >= n {
            return Err(Error::InvalidArgument(format!("prototype node {m} in a graph of {n} nodes")));
        }
    }
    let bcc = family(prototypes, PrototypeKind::Bcc);
    let cq = family(prototypes, PrototypeKind::Clique);
    let aug = augment_features(graph, &bcc, &cq)?;
    Ok(PreparedGraph {
        features: aug.features().clone(),
        adjacency: graph.dense_adjacency(),
        prototypes: kinds.iter().map(|&k| family(prototypes, k)).collect(),
        label: graph.label().clone(),
    })
}

/// Prepares every graph, extracting prototypes when none are given.
pub fn prepare_dataset(
    dataset: &Dataset,
    prototypes: Option<&[Vec<PrototypeSet>]>,
    kinds: &[PrototypeKind],
) -> Result<Vec<PreparedGraph>> {
    if let Some(p) = prototypes {
        if p.len() != dataset.len() {
            return Err(Error::InvalidArgument(format!(
                "{} prototype entries for {} graphs",
                p.len(),
                dataset.len()
            )));
        }
    }
    dataset
        .graphs()
        .iter()
        .enumerate()
        .map(|(i, g)| match prototypes {
            Some(p) => prepare_graph(g, &p[i], kinds),
            None => prepare_graph(g, &extract_all(g, &PrototypeKind::ALL), kinds),
        })
        .collect()
}

/// Layer handles of the classifier; values live in a separate [`Params`].
#[derive(Debug, Clone)]
pub struct SpgpModel {
    pub config: TrainConfig,
    pub in_dim: usize,
    pub out_dim: usize,
    pub gcns: Vec<GcnLayer>,
    pub norms: Vec<LayerNorm>,
    pub pools: Vec<SpgpLayer>,
    pub head: MlpHead,
}

impl SpgpModel {
    /// Builds the layers with fresh Glorot weights drawn from `seed`.
    /// `in_dim` counts the augmented columns.
    pub fn new(config: &TrainConfig, in_dim: usize, out_dim: usize, seed: u64) -> Result<(Self, Params)> {
        config.validate()?;
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument("model needs positive input and output widths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let d = config.hidden_dim;
        let mut gcns = Vec::new();
        let mut norms = Vec::new();
        let mut pools = Vec::new();
        for i in 0..config.num_layers {
            let d_in = if i == 0 { in_dim } else { d };
            gcns.push(GcnLayer::new(&mut params, &format!("gcn{i}"), d_in, d, &mut rng));
            norms.push(LayerNorm::new(&mut params, &format!("norm{i}"), d));
            pools.push(SpgpLayer::new(
                &mut params,
                &format!("pool{i}"),
                d,
                &config.prototype_kinds,
                config.lambda,
                config.pooling_ratio,
                &mut rng,
            )?);
        }
        let head = MlpHead::new(&mut params, "mlp", 2 * d, d, out_dim, &mut rng);
        Ok((
            Self {
                config: config.clone(),
                in_dim,
                out_dim,
                gcns,
                norms,
                pools,
                head,
            },
            params,
        ))
    }

    /// Logits (`1 x out_dim`) of one graph.
    pub fn forward<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape,
        params: &Params,
        graph: &PreparedGraph,
        train: bool,
        rng: &mut R,
    ) -> Result<Var<'t>> {
        if graph.features.ncols() != self.in_dim {
            return Err(Error::dim(
                "model_forward",
                format!("{} feature columns, model expects {}", graph.features.ncols(), self.in_dim),
            ));
        }
        let mut h = tape.constant(graph.features.clone());
        let mut adjacency = graph.adjacency.clone();
        let mut prototypes = graph.prototypes.clone();
        let mut hs: Option<Var<'t>> = None;
        for i in 0..self.config.num_layers {
            let ops = GraphOperators::from_adjacency(&adjacency);
            let conv = self.gcns[i].forward(tape, params, h, &ops)?;
            let normed = self.norms[i].forward(tape, params, conv)?;
            let state = LayerState::new(normed, adjacency, prototypes)?;
            let (next, _) = spgp_forward(tape, params, &self.pools[i], &state)?;
            let r = readout(next.h)?;
            hs = Some(match hs {
                Some(acc) => acc.add(r)?,
                None => r,
            });
            h = next.h;
            adjacency = next.adjacency;
            prototypes = next.prototypes;
        }
        let hs = hs.expect("at least one layer");
        self.head.forward(tape, params, hs, self.config.dropout_rate, train, rng)
    }

    /// Eval-mode logits as plain numbers.
    pub fn predict(&self, params: &Params, graph: &PreparedGraph) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&tape, params, graph, false, &mut rng)?;
        let v = out.value().row(0).to_vec();
        Ok(v)
    }

    /// Checkpoint metadata: the configuration and the model widths.
    pub fn meta(&self) -> String {
        serde_json::json!({
            "config": self.config,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
        })
        .to_string()
    }

    pub fn save(&self, params: &Params, path: impl AsRef<Path>) -> Result<()> {
        params.save(path, &self.meta())
    }

    /// Rebuilds the model described by a checkpoint and loads its values.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Params)> {
        let (stored, meta) = Params::load(path)?;
        #[derive(Deserialize)]
        struct Meta {
            config: TrainConfig,
            in_dim: usize,
            out_dim: usize,
        }
        let m: Meta = serde_json::from_str(&meta)
            .map_err(|e| Error::InvalidArgument(format!("checkpoint metadata: {e}")))?;
        let (model, mut params) = SpgpModel::new(&m.config, m.in_dim, m.out_dim, 0)?;
        params.load_values_from(&stored)?;
        Ok((model, params))
    }
}

/// Builds an untrained model for `graph` and returns its eval-mode logits.
pub fn model_forward(config: &TrainConfig, graph: &Graph, prototypes: &[PrototypeSet]) -> Result<Vec<f64>> {
    let prepared = prepare_graph(graph, prototypes, &config.prototype_kinds)?;
    let out_dim = match graph.label() {
        Label::Class(c) => (*c + 1).max(2),
        Label::Tasks(t) => t.len().max(1),
    };
    let (model, params) = SpgpModel::new(config, prepared.features.ncols(), out_dim, config.seed)?;
    model.predict(&params, &prepared)
}

fn output_width(dataset: &Dataset) -> usize {
    if dataset.is_multilabel() {
        dataset.num_classes
    } else {
        dataset.num_classes.max(2)
    }
}

fn batch_loss<'t>(logits: Var<'t>, labels: &[&Label], mode: TaskMode) -> Result<Var<'t>> {
    match mode {
        TaskMode::Multiclass => {
            let ys = labels
                .iter()
                .map(|l| {
                    l.class()
                        .ok_or_else(|| Error::InvalidDataset("multiclass mode needs class labels".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            logits.softmax_cross_entropy(&ys)
        }
        TaskMode::Multilabel => {
            let ts = labels
                .iter()
                .map(|l| match l {
                    Label::Tasks(t) => Ok(t.clone()),
                    Label::Class(_) => Err(Error::InvalidDataset("multilabel mode needs task labels".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            logits.bce_with_logits(&ts)
        }
    }
}

/// Average precision of one task; `None` when the task has no positive or
/// no negative example.
pub fn average_precision(scores: &[f64], targets: &[bool]) -> Option<f64> {
    let positives = targets.iter().filter(|&&t| t).count();
    if positives == 0 || positives == targets.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut hits, mut ap) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if targets[i] {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(ap / positives as f64)
}

/// Accuracy and mean loss of a model on some prepared graphs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    /// Accuracy, or mean per-task average precision in multilabel mode.
    pub metric: f64,
    pub loss: f64,
    pub num_graphs: usize,
}

pub fn evaluate_prepared(model: &SpgpModel, params: &Params, graphs: &[&PreparedGraph]) -> Result<Evaluation> {
    if graphs.is_empty() {
        return Err(Error::InvalidDataset("cannot evaluate on zero graphs".into()));
    }
    let mode = model.config.task_mode;
    let mut logits = Vec::with_capacity(graphs.len());
    let mut loss = 0.0;
    for g in graphs {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward(&tape, params, g, false, &mut rng)?;
        loss += batch_loss(out, &[&g.label], mode)?.item();
        logits.push(out.value().row(0).to_vec());
    }
    let metric = match mode {
        TaskMode::Multiclass => {
            let correct = graphs
                .iter()
                .zip(&logits)
                .filter(|(g, l)| g.label.class() == Some(argmax(l)))
                .count();
            correct as f64 / graphs.len() as f64
        }
        TaskMode::Multilabel => {
            let mut aps = Vec::new();
            for t in 0..model.out_dim {
                let (mut s, mut y) = (Vec::new(), Vec::new());
                for (g, l) in graphs.iter().zip(&logits) {
                    if let Label::Tasks(ts) = &g.label {
                        if let Some(v) = ts[t] {
                            s.push(l[t]);
                            y.push(v);
                        }
                    }
                }
                aps.extend(average_precision(&s, &y));
            }
            if aps.is_empty() {
                0.0
            } else {
                aps.iter().sum::<f64>() / aps.len() as f64
            }
        }
    };
    Ok(Evaluation {
        metric,
        loss: loss / graphs.len() as f64,
        num_graphs: graphs.len(),
    })
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub best_epoch: usize,
    pub val_metric: f64,
    pub test_metric: f64,
    pub train_loss: Vec<f64>,
    pub val_curve: Vec<f64>,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub folds: Vec<FoldReport>,
    pub mean: f64,
    pub std: f64,
    pub wall_clock_secs: f64,
}

impl RunReport {
    fn from_folds(folds: Vec<FoldReport>, started: Instant) -> Self {
        let xs: Vec<f64> = folds.iter().map(|f| f.test_metric).collect();
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            folds,
            mean,
            std,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        }
    }
}

/// Result of training one fold: the report and the selected parameters.
#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub report: FoldReport,
    pub model: SpgpModel,
    pub params: Params,
}

fn check_mode(config: &TrainConfig, dataset: &Dataset) -> Result<()> {
    let multilabel = dataset.is_multilabel();
    match (config.task_mode, multilabel) {
        (TaskMode::Multiclass, true) => Err(Error::InvalidArgument(
            "dataset has task labels; set task_mode = \"multilabel\"".into(),
        )),
        (TaskMode::Multilabel, false) => Err(Error::InvalidArgument(
            "dataset has class labels; set task_mode = \"multiclass\"".into(),
        )),
        _ => Ok(()),
    }
}

/// Trains on one fold of `plan`: the fold itself is the test set, the next
/// fold the validation set. The returned parameters are those of the epoch
/// with the best validation metric (earliest on ties).
pub fn train_fold(
    config: &TrainConfig,
    dataset: &Dataset,
    prepared: &[PreparedGraph],
    plan: &SplitPlan,
    fold: usize,
) -> Result<TrainedFold> {
    config.validate()?;
    check_mode(config, dataset)?;
    if prepared.len() != dataset.len() {
        return Err(Error::InvalidArgument("prepared graphs do not match the dataset".into()));
    }
    if fold >= plan.k {
        return Err(Error::InvalidArgument(format!("fold {fold} of {}", plan.k)));
    }
    let in_dim = dataset.feature_dim() + AUGMENTED_COLUMNS;
    let fold_seed = config.seed.wrapping_mul(1_000_003).wrapping_add(fold as u64);
    let (model, mut params) = SpgpModel::new(config, in_dim, output_width(dataset), fold_seed)?;
    let (train_idx, val_idx, test_idx) = plan.train_val_test(fold);
    let pick = |idx: &[usize]| idx.iter().map(|&i| &prepared[i]).collect::<Vec<_>>();
    let (val_set, test_set) = (pick(&val_idx), pick(&test_idx));

    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed ^ 0x5eed);
    let mut adam = Adam::new(&params, config.learning_rate, config.weight_decay);
    let schedule = StepLr::new(config.learning_rate, config.decay_step);

    let mut best = evaluate_prepared(&model, &params, &val_set)?;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut train_loss = Vec::new();
    let mut val_curve = Vec::new();
    let mut since_best = 0;
    let mut order = train_idx.clone();
    for epoch in 0..config.epochs {
        adam.learning_rate = schedule.rate(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let mut rows = Vec::with_capacity(batch.len());
            for &i in batch {
                rows.push(model.forward(&tape, &params, &prepared[i], true, &mut rng)?);
            }
            let logits = concat(0, &rows)?;
            let labels: Vec<&Label> = batch.iter().map(|&i| &prepared[i].label).collect();
            let loss = batch_loss(logits, &labels, config.task_mode)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "fold {fold}, epoch {epoch}: loss is {value}"
                )));
            }
            total += value * batch.len() as f64;
            tape.backward(loss)?.accumulate(&mut params);
            params.fill_missing_grads();
            adam.step(&mut params)?;
        }
        train_loss.push(total / order.len().max(1) as f64);
        let val = evaluate_prepared(&model, &params, &val_set)?;
        val_curve.push(val.metric);
        if val.metric > best.metric || (val.metric == best.metric && val.loss < best.loss) {
            best = val;
            best_params = params.clone();
            best_epoch = epoch + 1;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let test = evaluate_prepared(&model, &best_params, &test_set)?;
    best_params.zero_grads();
    Ok(TrainedFold {
        report: FoldReport {
            fold,
            best_epoch,
            val_metric: best.metric,
            test_metric: test.metric,
            epochs_run: train_loss.len(),
            train_loss,
            val_curve,
        },
        model,
        params: best_params,
    })
}

/// Cross-validated training over the listed folds (all folds when `None`).
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    prototypes: Option<&[Vec<PrototypeSet>]>,
    folds: Option<&[usize]>,
) -> Result<(RunReport, Vec<TrainedFold>)> {
    let started = Instant::now();
    config.validate()?;
    let prepared = prepare_dataset(dataset, prototypes, &config.prototype_kinds)?;
    let plan = make_splits(dataset, config.folds, config.seed)?;
    let all: Vec<usize> = (0..plan.k).collect();
    let mut trained = Vec::new();
    for &f in folds.unwrap_or(&all) {
        trained.push(train_fold(config, dataset, &prepared, &plan, f)?);
    }
    let report = RunReport::from_folds(trained.iter().map(|t| t.report.clone()).collect(), started);
    Ok((report, trained))
}

/// Eval-mode metric of a trained model on every graph of `dataset`.
pub fn evaluate(
    model: &SpgpModel,
    params: &Params,
    dataset: &Dataset,
    prototypes: Option<&[Vec<PrototypeSet>]>,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("cannot evaluate an empty dataset".into()));
    }
    check_mode(&model.config, dataset)?;
    let prepared = prepare_dataset(dataset, prototypes, &model.config.prototype_kinds)?;
    evaluate_prepared(model, params, &prepared.iter().collect::<Vec<_>>())
}
