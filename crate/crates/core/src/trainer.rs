//! The incremental protocol: task-by-task classifier expansion, training,
//! statistics capture, and seen-class evaluation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{FeatureDataset, Split};
use crate::error::{Error, Result};
use crate::loss::{
    mix_seed, sb_loss, variant_loss, ClassBank, ClassifierParams, LossScope, SampleMap, SampleSet,
    Variant, VariantSpec,
};
use crate::optim::{GroupRates, MomentumSgd};
use crate::stats::{FeatureAdapter, Shrinkage, StatsAccumulator};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub initial_lr: f64,
    pub incremental_lr_adapter: f64,
    pub incremental_lr_classifier: f64,
    pub momentum: f64,
    pub epochs_initial: usize,
    pub epochs_incremental: usize,
    pub steps_per_epoch: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-2,
            incremental_lr_adapter: 1e-6,
            incremental_lr_classifier: 5e-3,
            momentum: 0.9,
            epochs_initial: 400,
            epochs_incremental: 200,
            steps_per_epoch: 20,
        }
    }
}

impl OptimizerConfig {
    /// Rates must be non-negative; zero freezes a group.
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("initial_lr", self.initial_lr),
            ("incremental_lr_adapter", self.incremental_lr_adapter),
            ("incremental_lr_classifier", self.incremental_lr_classifier),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::param(name, format!("must be >= 0, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(
                "momentum",
                format!("must be in [0, 1), got {}", self.momentum),
            ));
        }
        if self.epochs_initial == 0 || self.epochs_incremental == 0 || self.steps_per_epoch == 0 {
            return Err(Error::param("epochs", "epoch and step counts must be >= 1"));
        }
        Ok(())
    }
}

/// How old-class statistics are kept between tasks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsMode {
    /// Frozen in the adapter's output space at the end of the class's task.
    #[default]
    FrozenAtSave,
    /// Stored in input space and pushed through the current adapter.
    ReAdapted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub variant: VariantSpec,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    #[serde(default)]
    pub stats_mode: StatsMode,
    #[serde(default)]
    pub shrinkage: Shrinkage,
}

impl ScenarioConfig {
    pub fn new(tasks: usize, classes_per_task: usize, dim: usize, variant: VariantSpec) -> Self {
        Self {
            tasks,
            classes_per_task,
            dim,
            variant,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            stats_mode: StatsMode::default(),
            shrinkage: Shrinkage::default(),
        }
    }

    /// Settings used for the synthetic drift benchmark.
    pub fn benchmark(
        tasks: usize,
        classes_per_task: usize,
        dim: usize,
        variant: VariantSpec,
    ) -> Self {
        let mut c = Self::new(tasks, classes_per_task, dim, variant);
        c.optimizer = OptimizerConfig {
            initial_lr: 1e-2,
            incremental_lr_adapter: 3e-4,
            incremental_lr_classifier: 1e-2,
            momentum: 0.9,
            epochs_initial: 60,
            epochs_incremental: 60,
            steps_per_epoch: 10,
        };
        c
    }

    pub fn num_classes(&self) -> usize {
        self.tasks * self.classes_per_task
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::param("tasks", "must be >= 1"));
        }
        if self.classes_per_task == 0 {
            return Err(Error::param("classes_per_task", "must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::param("dim", "must be >= 1"));
        }
        self.variant.validate()?;
        self.optimizer.validate()
    }
}

/// Training and test features of one task, keyed by internal label.
#[derive(Debug, Clone, Default)]
pub struct TaskData {
    pub train: BTreeMap<usize, Vec<DVector<f64>>>,
    pub test: BTreeMap<usize, Vec<DVector<f64>>>,
}

impl TaskData {
    pub fn labels(&self) -> Vec<usize> {
        self.train.keys().copied().collect()
    }
}

/// Model and memory carried from one task to the next.
#[derive(Debug, Clone)]
pub struct IncrementalState {
    pub params: ClassifierParams,
    pub adapter: FeatureAdapter,
    /// Statistics of every seen class.
    pub saved_stats: ClassBank,
    /// Index of the last trained task (0-based).
    pub task_index: usize,
    /// `label_map[dataset_class] = internal label`.
    pub label_map: Vec<usize>,
}

/// Appends `n_new` classifier columns drawn from `N(0, 1/d)` with zero
/// biases; the existing columns become the old partition.
pub fn expand_classifier(
    params: &ClassifierParams,
    n_new: usize,
    seed: u64,
) -> Result<ClassifierParams> {
    if n_new == 0 {
        return Err(Error::param("n_new", "a task must add at least one class"));
    }
    let d = params.dim();
    let k_old = params.num_classes();
    let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt())
        .map_err(|e| Error::param("dim", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = DMatrix::zeros(d, k_old + n_new);
    weights.columns_mut(0, k_old).copy_from(params.weights());
    for j in k_old..k_old + n_new {
        for i in 0..d {
            weights[(i, j)] = normal.sample(&mut rng);
        }
    }
    let mut biases = DVector::zeros(k_old + n_new);
    biases.rows_mut(0, k_old).copy_from(params.biases());
    ClassifierParams::new(weights, biases, k_old)
}

/// Per-class mini-batch schedule over real features.
struct BatchSchedule {
    order: BTreeMap<usize, Vec<usize>>,
    steps_per_epoch: usize,
    rng: ChaCha8Rng,
}

impl BatchSchedule {
    fn new(data: &BTreeMap<usize, Vec<DVector<f64>>>, steps_per_epoch: usize, seed: u64) -> Self {
        Self {
            order: data
                .iter()
                .map(|(&l, xs)| (l, (0..xs.len()).collect()))
                .collect(),
            steps_per_epoch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn reshuffle(&mut self) {
        for idx in self.order.values_mut() {
            idx.shuffle(&mut self.rng);
        }
    }

    fn batch(&self, data: &BTreeMap<usize, Vec<DVector<f64>>>, step: usize) -> SampleMap {
        self.order
            .iter()
            .map(|(&label, idx)| {
                let n = idx.len();
                let size = n.div_ceil(self.steps_per_epoch).max(1);
                let features = (0..size)
                    .map(|i| data[&label][idx[(step * size + i) % n]].clone())
                    .collect();
                (
                    label,
                    SampleSet {
                        features,
                        tracks_adapter: true,
                    },
                )
            })
            .collect()
    }
}

fn check_task_data(task: &TaskData, dim: usize) -> Result<()> {
    if task.train.is_empty() {
        return Err(Error::Config("task has no classes".into()));
    }
    for (&label, xs) in &task.train {
        if xs.len() < 2 {
            return Err(Error::InsufficientData {
                class_id: label,
                count: xs.len(),
                required: 2,
            });
        }
        if let Some(x) = xs.iter().find(|x| x.len() != dim) {
            return Err(Error::Dimension {
                context: "task features",
                expected: dim,
                received: x.len(),
            });
        }
    }
    Ok(())
}

fn class_stats(
    xs: &[DVector<f64>],
    label: usize,
    adapter: Option<&FeatureAdapter>,
    shrinkage: Shrinkage,
) -> Result<crate::stats::ClassStats> {
    let mut acc = StatsAccumulator::new(label, xs[0].len());
    match adapter {
        Some(a) => {
            let adapted: Vec<DVector<f64>> = xs.iter().map(|x| a.apply(x)).collect();
            acc.update(&adapted)?;
        }
        None => acc.update(xs)?,
    }
    acc.finalize(shrinkage)
}

/// Stores a finished task's class statistics according to `mode`.
fn save_stats(
    bank: &mut ClassBank,
    task: &TaskData,
    adapter: &FeatureAdapter,
    config: &ScenarioConfig,
) -> Result<()> {
    for (&label, xs) in &task.train {
        match config.stats_mode {
            StatsMode::FrozenAtSave => bank.insert_output(
                label,
                class_stats(xs, label, Some(adapter), config.shrinkage)?,
            ),
            StatsMode::ReAdapted => {
                bank.insert_raw(label, class_stats(xs, label, None, config.shrinkage)?)
            }
        }
    }
    Ok(())
}

fn run_seed(config: &ScenarioConfig, task: usize, stream: u64) -> u64 {
    mix_seed(mix_seed(config.seed, task as u64), stream)
}

/// First task: ordinary softmax cross-entropy on real features over the
/// task's own classes, training both the head and the adapter.
pub fn run_initial_task(config: &ScenarioConfig, task: &TaskData) -> Result<IncrementalState> {
    config.validate()?;
    check_task_data(task, config.dim)?;
    let labels = task.labels();
    if labels.iter().enumerate().any(|(i, &l)| i != l) {
        return Err(Error::Config("initial task labels must be 0..N".into()));
    }
    let d = config.dim;
    let mut params = expand_classifier(
        &ClassifierParams::zeros(d, 0),
        labels.len(),
        run_seed(config, 0, 0),
    )?;
    let mut adapter = FeatureAdapter::identity(d);
    let opt_cfg = &config.optimizer;
    let mut opt = MomentumSgd::new(opt_cfg.momentum, d, params.num_classes())?;
    let rates = GroupRates {
        classifier: opt_cfg.initial_lr,
        adapter: opt_cfg.initial_lr,
    };
    let scope = LossScope::new(labels.iter().copied(), labels.iter().copied())?;
    let mut schedule =
        BatchSchedule::new(&task.train, opt_cfg.steps_per_epoch, run_seed(config, 0, 1));
    for _ in 0..opt_cfg.epochs_initial {
        schedule.reshuffle();
        for step in 0..opt_cfg.steps_per_epoch {
            let batch = schedule.batch(&task.train, step);
            let grads = sb_loss(&batch, &params, &adapter, &scope)?;
            opt.step(&mut params, &mut adapter, &grads, rates)?;
        }
    }
    let mut saved_stats = ClassBank::new();
    save_stats(&mut saved_stats, task, &adapter, config)?;
    Ok(IncrementalState {
        params,
        adapter,
        saved_stats,
        task_index: 0,
        label_map: Vec::new(),
    })
}

/// One incremental task under `config.variant`.
///
/// New-class statistics are estimated once on raw features and pushed
/// through the current adapter at every step; old-class statistics come
/// from `state.saved_stats`.
pub fn run_incremental_task(
    state: &IncrementalState,
    task: &TaskData,
    config: &ScenarioConfig,
) -> Result<IncrementalState> {
    config.validate()?;
    check_task_data(task, config.dim)?;
    let task_index = state.task_index + 1;
    let k_old = state.params.num_classes();
    let labels = task.labels();
    if labels.iter().enumerate().any(|(i, &l)| l != k_old + i) {
        return Err(Error::Config(format!(
            "task {task_index} labels must continue the seen range at {k_old}"
        )));
    }

    let mut bank = state.saved_stats.clone();
    for (&label, xs) in &task.train {
        bank.insert_raw(label, class_stats(xs, label, None, config.shrinkage)?);
    }
    let mut params =
        expand_classifier(&state.params, labels.len(), run_seed(config, task_index, 0))?;
    let mut adapter = state.adapter.clone();
    let opt_cfg = &config.optimizer;
    let mut opt = MomentumSgd::new(opt_cfg.momentum, config.dim, params.num_classes())?;
    let rates = GroupRates {
        classifier: opt_cfg.incremental_lr_classifier,
        adapter: opt_cfg.incremental_lr_adapter,
    };
    let uses_samples = config.variant.variant.uses_samples();
    let mut schedule = BatchSchedule::new(
        &task.train,
        opt_cfg.steps_per_epoch,
        run_seed(config, task_index, 1),
    );
    let mut global_step = 0u64;
    for _ in 0..opt_cfg.epochs_incremental {
        if uses_samples {
            schedule.reshuffle();
        }
        for step in 0..opt_cfg.steps_per_epoch {
            let batch = uses_samples.then(|| schedule.batch(&task.train, step));
            let grads = variant_loss(
                &config.variant,
                &bank,
                batch.as_ref(),
                &params,
                &adapter,
                run_seed(config, task_index, 2 + global_step),
            )?;
            opt.step(&mut params, &mut adapter, &grads, rates)?;
            global_step += 1;
        }
    }

    let mut saved_stats = state.saved_stats.clone();
    save_stats(&mut saved_stats, task, &adapter, config)?;
    Ok(IncrementalState {
        params,
        adapter,
        saved_stats,
        task_index,
        label_map: state.label_map.clone(),
    })
}

/// Accuracies after one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Percent correct on each trained task's classes.
    pub per_task: Vec<f64>,
    /// Percent correct over the union of all seen-class test sets.
    pub seen: f64,
}

/// Predicts `argmax_k w_k'(A f + c) + b_k` over every seen label.
pub fn predict(
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    feature: &DVector<f64>,
) -> usize {
    params.logits(&adapter.apply(feature)).argmax().0
}

pub fn evaluate(state: &IncrementalState, tasks: &[TaskData]) -> Result<Evaluation> {
    let k = state.params.num_classes();
    let mut per_task = Vec::with_capacity(tasks.len());
    let (mut correct_all, mut total_all) = (0usize, 0usize);
    for task in tasks {
        let (mut correct, mut total) = (0usize, 0usize);
        for (&label, xs) in &task.test {
            if label >= k {
                return Err(Error::Config(format!(
                    "test label {label} has not been seen (seen classes: {k})"
                )));
            }
            for x in xs {
                if predict(&state.params, &state.adapter, x) == label {
                    correct += 1;
                }
                total += 1;
            }
        }
        per_task.push(percent(correct, total));
        correct_all += correct;
        total_all += total;
    }
    Ok(Evaluation {
        per_task,
        seen: percent(correct_all, total_all),
    })
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

/// Last accuracy and average incremental accuracy.
pub fn compute_metrics(seen_accuracy: &[f64]) -> Result<(f64, f64)> {
    let last = *seen_accuracy
        .last()
        .ok_or_else(|| Error::param("accuracies", "at least one task is required"))?;
    let mean = seen_accuracy.iter().sum::<f64>() / seen_accuracy.len() as f64;
    Ok((last, mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub accuracy_matrix: Vec<Vec<f64>>,
    pub seen_accuracy: Vec<f64>,
    pub la: f64,
    pub aia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultReport {
    pub engine_version: String,
    pub variant: String,
    pub config: ScenarioConfig,
    pub seed: u64,
    /// Row `t` holds the accuracy on each of tasks `1..=t+1` after training
    /// task `t+1` (averaged over runs).
    pub accuracy_matrix: Vec<Vec<f64>>,
    pub seen_accuracy: Vec<f64>,
    pub la: f64,
    pub aia: f64,
    pub runs: Vec<RunSummary>,
}

/// Splits a dataset into per-task train/test features. Dataset classes are
/// assigned to tasks in contiguous label blocks.
pub fn split_tasks(config: &ScenarioConfig, dataset: &FeatureDataset) -> Result<Vec<TaskData>> {
    dataset.validate()?;
    if dataset.dim() != config.dim {
        return Err(Error::Dimension {
            context: "dataset vs scenario",
            expected: config.dim,
            received: dataset.dim(),
        });
    }
    let n = dataset.num_classes();
    if n != config.num_classes() {
        return Err(Error::Config(format!(
            "dataset has {n} classes, scenario needs {} tasks x {} classes",
            config.tasks, config.classes_per_task
        )));
    }
    let mut tasks = vec![TaskData::default(); config.tasks];
    for r in dataset.records() {
        let label = r.label as usize;
        let t = &mut tasks[label / config.classes_per_task];
        let map = match r.split {
            Split::Train => &mut t.train,
            Split::Test => &mut t.test,
        };
        map.entry(label).or_default().push(r.feature_f64());
    }
    Ok(tasks)
}

/// One full run: initial task, `T - 1` incremental tasks, evaluation after
/// every task.
pub fn run_once(config: &ScenarioConfig, tasks: &[TaskData]) -> Result<RunSummary> {
    let mut state = run_initial_task(config, &tasks[0])?;
    state.label_map = (0..config.num_classes()).collect();
    let mut matrix = Vec::with_capacity(tasks.len());
    let mut seen = Vec::with_capacity(tasks.len());
    let eval = evaluate(&state, &tasks[..1])?;
    matrix.push(eval.per_task);
    seen.push(eval.seen);
    for t in 1..tasks.len() {
        state = run_incremental_task(&state, &tasks[t], config)?;
        let eval = evaluate(&state, &tasks[..=t])?;
        matrix.push(eval.per_task);
        seen.push(eval.seen);
    }
    let (la, aia) = compute_metrics(&seen)?;
    Ok(RunSummary {
        seed: config.seed,
        accuracy_matrix: matrix,
        seen_accuracy: seen,
        la,
        aia,
    })
}

pub fn run_scenario(config: &ScenarioConfig, dataset: &FeatureDataset) -> Result<ResultReport> {
    run_scenario_averaged(config, dataset, 1, false)
}

/// Repeats the scenario with training seeds `seed, seed + 1, ...` and
/// reports element-wise means. Runs are independent, so `parallel` does
/// not change the result.
pub fn run_scenario_averaged(
    config: &ScenarioConfig,
    dataset: &FeatureDataset,
    runs: usize,
    parallel: bool,
) -> Result<ResultReport> {
    config.validate()?;
    if runs == 0 {
        return Err(Error::param("runs", "must be >= 1"));
    }
    let tasks = split_tasks(config, dataset)?;
    let run = |i: usize| {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(i as u64);
        run_once(&cfg, &tasks)
    };
    let summaries: Vec<RunSummary> = if parallel {
        (0..runs).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..runs).map(run).collect::<Result<_>>()?
    };
    let r = runs as f64;
    let matrix: Vec<Vec<f64>> = (0..config.tasks)
        .map(|t| {
            (0..=t)
                .map(|j| {
                    summaries
                        .iter()
                        .map(|s| s.accuracy_matrix[t][j])
                        .sum::<f64>()
                        / r
                })
                .collect()
        })
        .collect();
    let seen: Vec<f64> = (0..config.tasks)
        .map(|t| summaries.iter().map(|s| s.seen_accuracy[t]).sum::<f64>() / r)
        .collect();
    Ok(ResultReport {
        engine_version: ENGINE_VERSION.to_string(),
        variant: config.variant.variant.name().to_string(),
        config: config.clone(),
        seed: config.seed,
        accuracy_matrix: matrix,
        seen_accuracy: seen,
        la: summaries.iter().map(|s| s.la).sum::<f64>() / r,
        aia: summaries.iter().map(|s| s.aia).sum::<f64>() / r,
        runs: summaries,
    })
}

/// LA and AIA of one variant, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub la: f64,
    pub aia: f64,
    /// `(seed, la, aia)` for each seed.
    pub per_seed: Vec<(u64, f64, f64)>,
}

/// Runs every variant in `variants` on the same dataset with the same
/// seeds. Only `config.variant.variant` changes between rows; lambda,
/// sample counts and optimizer settings are shared.
pub fn run_ablation(
    config: &ScenarioConfig,
    dataset: &FeatureDataset,
    variants: &[Variant],
    seeds: &[u64],
    parallel: bool,
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::param("seeds", "at least one seed is required"));
    }
    let tasks = split_tasks(config, dataset)?;
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let job = |&(variant, seed): &(Variant, u64)| {
        let mut cfg = config.clone();
        cfg.variant.variant = variant;
        cfg.seed = seed;
        cfg.validate()?;
        run_once(&cfg, &tasks)
    };
    let summaries: Vec<RunSummary> = if parallel {
        jobs.par_iter().map(job).collect::<Result<_>>()?
    } else {
        jobs.iter().map(job).collect::<Result<_>>()?
    };
    let n = seeds.len();
    Ok(variants
        .iter()
        .zip(summaries.chunks(n))
        .map(|(&variant, runs)| AblationRow {
            variant,
            la: runs.iter().map(|r| r.la).sum::<f64>() / n as f64,
            aia: runs.iter().map(|r| r.aia).sum::<f64>() / n as f64,
            per_seed: runs.iter().map(|r| (r.seed, r.la, r.aia)).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_arithmetic() {
        assert_eq!(compute_metrics(&[80.0, 70.0, 60.0]).unwrap(), (60.0, 70.0));
        assert_eq!(compute_metrics(&[42.5]).unwrap(), (42.5, 42.5));
        let (la, aia) = compute_metrics(&[33.0; 4]).unwrap();
        assert_eq!(la, aia);
        assert!(compute_metrics(&[]).is_err());
    }

    #[test]
    fn expand_copies_old_and_is_deterministic() {
        let base = expand_classifier(&ClassifierParams::zeros(4, 0), 5, 1).unwrap();
        assert_eq!(base.old_count(), 0);
        let a = expand_classifier(&base, 5, 9).unwrap();
        let b = expand_classifier(&base, 5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_classes(), 10);
        assert_eq!(a.old_count(), 5);
        assert_eq!(a.weights().columns(0, 5), base.weights().columns(0, 5));
        assert!(a.biases().rows(5, 5).iter().all(|&x| x == 0.0));
        assert!(expand_classifier(&base, 0, 9).is_err());
    }

    #[test]
    fn expand_new_column_scale() {
        let d = 64;
        let p = expand_classifier(&ClassifierParams::zeros(d, 0), 200, 3).unwrap();
        let n = (d * 200) as f64;
        let var = p.weights().iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var - 1.0 / d as f64).abs() < 0.1 / d as f64, "var {var}");
    }

    #[test]
    fn optimizer_config_validation() {
        let mut c = OptimizerConfig::default();
        assert!(c.validate().is_ok());
        c.epochs_incremental = 0;
        assert!(c.validate().is_err());
        let c = OptimizerConfig {
            incremental_lr_adapter: -1.0,
            ..OptimizerConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn scenario_config_rejects_zero_tasks() {
        let c = ScenarioConfig::new(0, 2, 3, VariantSpec::new(Variant::Amgc));
        assert!(c.validate().is_err());
    }
}
