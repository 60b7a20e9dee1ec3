//! Classifier losses and their analytic gradients.
//!
//! Every loss here is a softmax cross-entropy written in terms of the
//! pairwise differences `v_jk = w_j - w_k` and `d_jk = b_j - b_k`:
//!
//! * the sample-based loss averages `log sum_j exp(v_jk' f + d_jk)` over
//!   (real or pseudo) features `f` of each target class `k`;
//! * the distribution-based loss replaces the expectation over
//!   `f ~ N(mu_k, S_k)` by its Gaussian moment-generating bound
//!   `log sum_j exp(v_jk' mu_k + v_jk' S_k v_jk / 2 + d_jk)`;
//! * the adaptive-margin loss is the distribution-based loss evaluated on
//!   variance-enlarged old-class covariances `S_k + lambda diag(S_k)`.
//!
//! Gradients are returned for the classifier head and for the affine
//! feature adapter. Statistics stored in [`StatsSpace::Raw`] are pushed
//! through the adapter on every evaluation, so their terms contribute to
//! the adapter gradient; statistics in [`StatsSpace::Output`] are constants.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{ClassStats, FeatureAdapter};

/// Linear head: one weight column and one bias per seen class.
///
/// Labels `0..old_count` are old classes, `old_count..num_classes` are new.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    weights: DMatrix<f64>,
    biases: DVector<f64>,
    old_count: usize,
}

impl ClassifierParams {
    pub fn new(weights: DMatrix<f64>, biases: DVector<f64>, old_count: usize) -> Result<Self> {
        if weights.ncols() != biases.len() {
            return Err(Error::Dimension {
                context: "classifier biases",
                expected: weights.ncols(),
                received: biases.len(),
            });
        }
        if old_count > biases.len() {
            return Err(Error::param(
                "old_count",
                format!("{old_count} exceeds class count {}", biases.len()),
            ));
        }
        Ok(Self {
            weights,
            biases,
            old_count,
        })
    }

    pub fn zeros(dim: usize, num_classes: usize) -> Self {
        Self {
            weights: DMatrix::zeros(dim, num_classes),
            biases: DVector::zeros(num_classes),
            old_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.biases.len()
    }

    pub fn old_count(&self) -> usize {
        self.old_count
    }

    pub fn new_count(&self) -> usize {
        self.num_classes() - self.old_count
    }

    pub fn old_labels(&self) -> Range<usize> {
        0..self.old_count
    }

    pub fn new_labels(&self) -> Range<usize> {
        self.old_count..self.num_classes()
    }

    pub fn seen_labels(&self) -> Range<usize> {
        0..self.num_classes()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &DVector<f64> {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut DVector<f64> {
        &mut self.biases
    }

    /// Logits `W' f + b` for one feature vector in the head's input space.
    pub fn logits(&self, feature: &DVector<f64>) -> DVector<f64> {
        self.weights.tr_mul(feature) + &self.biases
    }
}

/// Index sets of one loss: the outer (target) sum and the softmax
/// denominator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossScope {
    targets: Vec<usize>,
    denominator: Vec<usize>,
}

impl LossScope {
    pub fn new(
        targets: impl IntoIterator<Item = usize>,
        denominator: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let targets: Vec<usize> = targets.into_iter().collect();
        let denominator: Vec<usize> = denominator.into_iter().collect();
        if targets.is_empty() || denominator.is_empty() {
            return Err(Error::Config(
                "loss scope needs non-empty target and denominator sets".into(),
            ));
        }
        Ok(Self {
            targets,
            denominator,
        })
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn denominator(&self) -> &[usize] {
        &self.denominator
    }

    fn check_labels(&self, num_classes: usize) -> Result<()> {
        if let Some(&l) = self
            .targets
            .iter()
            .chain(&self.denominator)
            .find(|&&l| l >= num_classes)
        {
            return Err(Error::Config(format!(
                "label {l} is outside the seen range 0..{num_classes}"
            )));
        }
        Ok(())
    }
}

/// Where a class's statistics live relative to the feature adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSpace {
    /// Already in the adapter's output space; a constant of the loss.
    Output,
    /// In the adapter's input space; pushed through the adapter on use.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub stats: ClassStats,
    pub space: StatsSpace,
}

/// Per-label class statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassBank {
    entries: BTreeMap<usize, ClassModel>,
}

impl ClassBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: usize, stats: ClassStats, space: StatsSpace) {
        self.entries.insert(label, ClassModel { stats, space });
    }

    pub fn insert_output(&mut self, label: usize, stats: ClassStats) {
        self.insert(label, stats, StatsSpace::Output);
    }

    pub fn insert_raw(&mut self, label: usize, stats: ClassStats) {
        self.insert(label, stats, StatsSpace::Raw);
    }

    pub fn get(&self, label: usize) -> Option<&ClassModel> {
        self.entries.get(&label)
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ClassModel)> {
        self.entries.iter().map(|(&l, m)| (l, m))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, label: usize) -> Result<&ClassModel> {
        self.get(label)
            .ok_or_else(|| Error::Config(format!("no statistics for target class {label}")))
    }

    /// Statistics of `label` in the adapter's output space.
    pub fn effective(&self, label: usize, adapter: &FeatureAdapter) -> Result<ClassStats> {
        let m = self.lookup(label)?;
        match m.space {
            StatsSpace::Output => Ok(m.stats.clone()),
            StatsSpace::Raw => m.stats.adapt(adapter),
        }
    }
}

/// Feature vectors of one class for the sample-based loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub features: Vec<DVector<f64>>,
    /// `true` when `features` are adapter inputs (real raw features or
    /// samples of raw statistics) that must be pushed through the adapter.
    pub tracks_adapter: bool,
}

pub type SampleMap = BTreeMap<usize, SampleSet>;

/// Draws `m` pseudo features for each label from its statistics.
///
/// Raw-space statistics yield raw samples that the loss pushes through the
/// adapter, which is the reparameterized form of sampling the adapted
/// Gaussian. Each class uses its own stream derived from `(seed, label)`.
pub fn draw_pseudo_samples(
    bank: &ClassBank,
    labels: impl IntoIterator<Item = usize>,
    m: usize,
    seed: u64,
) -> Result<SampleMap> {
    if m == 0 {
        return Err(Error::param("M", "must be a positive integer"));
    }
    let mut out = SampleMap::new();
    for label in labels {
        let model = bank.lookup(label)?;
        let sampler = model.stats.sampler()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, label as u64));
        out.insert(
            label,
            SampleSet {
                features: sampler.draw(&mut rng, m),
                tracks_adapter: model.space == StatsSpace::Raw,
            },
        );
    }
    Ok(out)
}

pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Loss value with gradients for every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_weights: DMatrix<f64>,
    pub grad_biases: DVector<f64>,
    pub grad_adapter_matrix: DMatrix<f64>,
    pub grad_adapter_offset: DVector<f64>,
    /// Monte-Carlo standard error of `value` for sample-based losses.
    pub std_error: Option<f64>,
}

impl LossResult {
    pub fn zeros(dim: usize, num_classes: usize) -> Self {
        Self {
            value: 0.0,
            grad_weights: DMatrix::zeros(dim, num_classes),
            grad_biases: DVector::zeros(num_classes),
            grad_adapter_matrix: DMatrix::zeros(dim, dim),
            grad_adapter_offset: DVector::zeros(dim),
            std_error: None,
        }
    }

    fn add(&mut self, other: &LossResult) {
        self.value += other.value;
        self.grad_weights += &other.grad_weights;
        self.grad_biases += &other.grad_biases;
        self.grad_adapter_matrix += &other.grad_adapter_matrix;
        self.grad_adapter_offset += &other.grad_adapter_offset;
        self.std_error = match (self.std_error, other.std_error) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(0.0).hypot(b.unwrap_or(0.0))),
        };
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_weights.iter().all(|x| x.is_finite())
            && self.grad_biases.iter().all(|x| x.is_finite())
            && self.grad_adapter_matrix.iter().all(|x| x.is_finite())
            && self.grad_adapter_offset.iter().all(|x| x.is_finite())
    }
}

/// Modifiers applied inside a distribution-based term.
#[derive(Debug, Clone, Copy, Default)]
struct TermMods {
    /// Variance enlargement factor applied to the target's covariance.
    ve_lambda: f64,
    /// Constant subtracted from the target logit, which in the pairwise
    /// form adds it to every competitor exponent.
    target_margin: f64,
}

fn check_dims(params: &ClassifierParams, adapter: &FeatureAdapter) -> Result<()> {
    if adapter.dim() != params.dim() {
        return Err(Error::Dimension {
            context: "adapter vs classifier",
            expected: params.dim(),
            received: adapter.dim(),
        });
    }
    Ok(())
}

/// `max + ln sum exp(e - max)` and the softmax weights.
fn log_sum_exp(exponents: &[f64]) -> (f64, Vec<f64>) {
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = exponents.iter().map(|&e| (e - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    (max + sum.ln(), probs)
}

/// One target class of a distribution-based loss, accumulated into `out`
/// with weight `scale`. Returns the unscaled per-class term.
#[allow(clippy::too_many_arguments)]
fn db_term(
    bank: &ClassBank,
    k: usize,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    denominator: &[usize],
    mods: TermMods,
    scale: f64,
    out: &mut LossResult,
) -> Result<f64> {
    let model = bank.lookup(k)?;
    if model.stats.dim() != params.dim() {
        return Err(Error::Dimension {
            context: "class statistics vs classifier",
            expected: params.dim(),
            received: model.stats.dim(),
        });
    }
    let tracked = model.space == StatsSpace::Raw;
    let effective = if tracked {
        model.stats.adapt(adapter)?
    } else {
        model.stats.clone()
    };
    let effective = if mods.ve_lambda != 0.0 {
        effective.variance_enlarge(mods.ve_lambda)?
    } else {
        effective
    };
    let mu = effective.mean();
    let sigma = effective.covariance();
    let w = params.weights();
    let b = params.biases();
    let wk = w.column(k);

    let mut diffs = Vec::with_capacity(denominator.len());
    let mut sv = Vec::with_capacity(denominator.len());
    let mut exponents = Vec::with_capacity(denominator.len());
    for &j in denominator {
        let v: DVector<f64> = w.column(j) - wk;
        let s = sigma * &v;
        let mut e = v.dot(mu) + 0.5 * v.dot(&s) + (b[j] - b[k]);
        if j != k && mods.target_margin != 0.0 {
            e += mods.target_margin;
        }
        if !e.is_finite() {
            return Err(Error::non_finite(format!(
                "distribution-based exponent for target class {k}, competitor {j}"
            )));
        }
        diffs.push(v);
        sv.push(s);
        exponents.push(e);
    }
    let (value, probs) = log_sum_exp(&exponents);
    if !value.is_finite() {
        return Err(Error::non_finite(format!(
            "log-sum-exp for target class {k}"
        )));
    }
    out.value += scale * value;

    let d = params.dim();
    let mut grad_mu = DVector::zeros(d);
    let mut grad_sigma = DMatrix::zeros(d, d);
    for (idx, &j) in denominator.iter().enumerate() {
        if j == k {
            continue;
        }
        let p = probs[idx];
        let g = (mu + &sv[idx]) * (scale * p);
        out.grad_weights.column_mut(j).axpy(1.0, &g, 1.0);
        out.grad_weights.column_mut(k).axpy(-1.0, &g, 1.0);
        out.grad_biases[j] += scale * p;
        out.grad_biases[k] -= scale * p;
        if tracked {
            grad_mu.axpy(p, &diffs[idx], 1.0);
            grad_sigma.ger(0.5 * p, &diffs[idx], &diffs[idx], 1.0);
        }
    }
    if tracked {
        if mods.ve_lambda != 0.0 {
            for i in 0..d {
                grad_sigma[(i, i)] *= 1.0 + mods.ve_lambda;
            }
        }
        // mu = A m + c,  S = A R A'  with R the raw covariance.
        let raw = &model.stats;
        let a = adapter.matrix();
        out.grad_adapter_matrix
            .ger(scale, &grad_mu, raw.mean(), 1.0);
        out.grad_adapter_matrix += (&grad_sigma * a * raw.covariance()) * (2.0 * scale);
        out.grad_adapter_offset.axpy(scale, &grad_mu, 1.0);
    }
    Ok(value)
}

fn db_scoped(
    bank: &ClassBank,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    scope: &LossScope,
    mods: TermMods,
) -> Result<LossResult> {
    check_dims(params, adapter)?;
    scope.check_labels(params.num_classes())?;
    let mut out = LossResult::zeros(params.dim(), params.num_classes());
    let scale = 1.0 / scope.targets.len() as f64;
    for &k in &scope.targets {
        db_term(
            bank,
            k,
            params,
            adapter,
            &scope.denominator,
            mods,
            scale,
            &mut out,
        )?;
    }
    Ok(out)
}

/// Distribution-based softmax loss over `scope`.
pub fn db_loss(
    bank: &ClassBank,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    scope: &LossScope,
) -> Result<LossResult> {
    db_scoped(bank, params, adapter, scope, TermMods::default())
}

/// The three distribution-based global-classifier losses of one task.
#[derive(Debug, Clone)]
pub struct DbgcLosses {
    /// New targets, all seen classes in the denominator.
    pub new: LossResult,
    /// Old targets, all seen classes in the denominator; `None` when there
    /// are no old classes.
    pub old: Option<LossResult>,
    /// All seen targets and denominator.
    pub all: LossResult,
}

pub fn dbgc_losses(
    bank: &ClassBank,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
) -> Result<DbgcLosses> {
    if let Some(l) = bank.labels().find(|&l| l >= params.num_classes()) {
        return Err(Error::Config(format!(
            "statistics for label {l} outside the seen range 0..{}",
            params.num_classes()
        )));
    }
    let seen: Vec<usize> = params.seen_labels().collect();
    let new = db_loss(
        bank,
        params,
        adapter,
        &LossScope::new(params.new_labels(), seen.iter().copied())?,
    )?;
    let old = if params.old_count() == 0 {
        None
    } else {
        Some(db_loss(
            bank,
            params,
            adapter,
            &LossScope::new(params.old_labels(), seen.iter().copied())?,
        )?)
    };
    let all = db_loss(
        bank,
        params,
        adapter,
        &LossScope::new(seen.iter().copied(), seen.iter().copied())?,
    )?;
    Ok(DbgcLosses { new, old, all })
}

/// Per-class adaptive margin `(lambda / 2) * sum_i diag[i] * w[i]^2`.
pub fn adaptive_margin(
    weight_column: &DVector<f64>,
    diag: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    if weight_column.len() != diag.len() {
        return Err(Error::Dimension {
            context: "adaptive margin",
            expected: weight_column.len(),
            received: diag.len(),
        });
    }
    if let Some(i) = diag.iter().position(|&x| x.is_nan() || x < 0.0) {
        return Err(Error::Invariant(format!(
            "variance entry {i} is {}, must be non-negative",
            diag[i]
        )));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::param(
            "lambda",
            format!("must be >= 0, got {lambda}"),
        ));
    }
    let quad: f64 = weight_column
        .iter()
        .zip(diag.iter())
        .map(|(w, s)| s * w * w)
        .sum();
    Ok(0.5 * lambda * quad)
}

fn old_seen_scope(params: &ClassifierParams) -> Result<LossScope> {
    if params.old_count() == 0 {
        return Err(Error::EmptyOld);
    }
    LossScope::new(params.old_labels(), params.seen_labels())
}

/// Adaptive-margin loss: the old-class distribution-based loss with every
/// old covariance variance-enlarged by `lambda`.
pub fn amarx_loss(
    bank: &ClassBank,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    lambda: f64,
) -> Result<LossResult> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::param(
            "lambda",
            format!("must be >= 0, got {lambda}"),
        ));
    }
    let scope = old_seen_scope(params)?;
    db_scoped(
        bank,
        params,
        adapter,
        &scope,
        TermMods {
            ve_lambda: lambda,
            target_margin: 0.0,
        },
    )
}

/// The adaptive-margin loss evaluated through its explicit margin
/// decomposition: target logit `w_k' mu_k + b_k - m_k` against competitor
/// logits `w_j' mu_k + b_j + sigma_jk + beta_jk`.
///
/// This is an independent evaluator used to cross-check [`amarx_loss`];
/// it has no gradients.
pub fn margin_form_loss(
    bank: &ClassBank,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    lambda: f64,
) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::param(
            "lambda",
            format!("must be >= 0, got {lambda}"),
        ));
    }
    let scope = old_seen_scope(params)?;
    check_dims(params, adapter)?;
    let w = params.weights();
    let b = params.biases();
    let mut total = 0.0;
    for &k in scope.targets() {
        let stats = bank.effective(k, adapter)?;
        let mu = stats.mean();
        let sigma = stats.covariance();
        let lam = stats.diag();
        let wk: DVector<f64> = w.column(k).into();
        let margin = adaptive_margin(&wk, &lam, lambda)?;
        let target = wk.dot(mu) + b[k] - margin;
        let mut logits = vec![target];
        for &j in scope.denominator() {
            if j == k {
                continue;
            }
            let wj: DVector<f64> = w.column(j).into();
            let v = &wj - &wk;
            let spread = 0.5 * (sigma * &v).dot(&v);
            let lam_wj = lam.component_mul(&wj);
            let lam_wk = lam.component_mul(&wk);
            let high_order = 0.5 * lambda * (wj.dot(&lam_wj) - wj.dot(&lam_wk) - wk.dot(&lam_wj));
            logits.push(wj.dot(mu) + b[j] + spread + high_order);
        }
        let (lse, _) = log_sum_exp(&logits);
        total += lse - target;
    }
    Ok(total / scope.targets().len() as f64)
}

/// Old-class distribution-based loss with a fixed, class-agnostic margin
/// subtracted from each target's logit.
pub fn soft_margin_loss(
    bank: &ClassBank,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    margin: f64,
) -> Result<LossResult> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::param(
            "fixed_margin",
            format!("must be >= 0, got {margin}"),
        ));
    }
    let scope = old_seen_scope(params)?;
    db_scoped(
        bank,
        params,
        adapter,
        &scope,
        TermMods {
            ve_lambda: 0.0,
            target_margin: margin,
        },
    )
}

/// Sample-based softmax cross-entropy over `scope`.
///
/// Each target class contributes the mean loss over its samples; the result
/// is the mean over targets. `std_error` is the plug-in standard error of
/// that estimate.
pub fn sb_loss(
    samples: &SampleMap,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    scope: &LossScope,
) -> Result<LossResult> {
    sb_eval(samples, params, adapter, scope, true)
}

/// Value and standard error of [`sb_loss`] without gradients.
pub fn sb_estimate(
    samples: &SampleMap,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    scope: &LossScope,
) -> Result<(f64, f64)> {
    let r = sb_eval(samples, params, adapter, scope, false)?;
    Ok((r.value, r.std_error.unwrap_or(0.0)))
}

/// [`sb_loss`] on `m` pseudo features per target drawn from `bank`.
pub fn sb_loss_from_stats(
    bank: &ClassBank,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    scope: &LossScope,
    m: usize,
    seed: u64,
) -> Result<LossResult> {
    let samples = draw_pseudo_samples(bank, scope.targets().iter().copied(), m, seed)?;
    sb_loss(&samples, params, adapter, scope)
}

fn sb_eval(
    samples: &SampleMap,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    scope: &LossScope,
    with_grad: bool,
) -> Result<LossResult> {
    check_dims(params, adapter)?;
    scope.check_labels(params.num_classes())?;
    let d = params.dim();
    let mut out = LossResult::zeros(d, params.num_classes());
    let n_targets = scope.targets.len() as f64;
    let w = params.weights();
    let b = params.biases();
    let denom = &scope.denominator;
    let denom_w = w.select_columns(denom.iter());
    let mut variance_sum = 0.0;

    let mut exponents = vec![0.0; denom.len()];
    for &k in &scope.targets {
        let set = samples
            .get(&k)
            .ok_or_else(|| Error::Config(format!("no samples for target class {k}")))?;
        if set.features.is_empty() {
            return Err(Error::param("M", format!("class {k} has no samples")));
        }
        let m = set.features.len() as f64;
        let scale = 1.0 / (n_targets * m);
        let wk = w.column(k);
        let mut sum = 0.0;
        let (mut count, mut running_mean, mut m2) = (0.0, 0.0, 0.0);
        for x in &set.features {
            if x.len() != d {
                return Err(Error::Dimension {
                    context: "sample-based feature",
                    expected: d,
                    received: x.len(),
                });
            }
            let adapted;
            let f = if set.tracks_adapter {
                adapted = adapter.apply(x);
                &adapted
            } else {
                x
            };
            let zk = wk.dot(f) + b[k];
            let z = denom_w.tr_mul(f);
            for (idx, &j) in denom.iter().enumerate() {
                exponents[idx] = z[idx] + b[j] - zk;
            }
            let (value, probs) = log_sum_exp(&exponents);
            if !value.is_finite() {
                return Err(Error::non_finite(format!(
                    "sample-based log-sum-exp for target class {k}"
                )));
            }
            sum += value;
            count += 1.0;
            let delta = value - running_mean;
            running_mean += delta / count;
            m2 += delta * (value - running_mean);
            if !with_grad {
                continue;
            }
            let mut grad_f = DVector::zeros(d);
            for (idx, &j) in denom.iter().enumerate() {
                if j == k {
                    continue;
                }
                let p = probs[idx];
                out.grad_weights.column_mut(j).axpy(scale * p, f, 1.0);
                out.grad_weights.column_mut(k).axpy(-scale * p, f, 1.0);
                out.grad_biases[j] += scale * p;
                out.grad_biases[k] -= scale * p;
                if set.tracks_adapter {
                    grad_f += (w.column(j) - wk) * p;
                }
            }
            if set.tracks_adapter {
                out.grad_adapter_matrix.ger(scale, &grad_f, x, 1.0);
                out.grad_adapter_offset.axpy(scale, &grad_f, 1.0);
            }
        }
        let mean = sum / m;
        out.value += mean / n_targets;
        if m > 1.0 {
            variance_sum += m2 / (m - 1.0) / m;
        }
    }
    out.std_error = Some(variance_sum.sqrt() / n_targets);
    Ok(out)
}

/// The classifier-learning variants compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Sample-based, separate old and new local classifiers.
    Sblc,
    /// Sample-based new classifier, distribution-based old classifier, separate.
    Sbndbolc,
    /// Sample-based global classifier.
    Sbgc,
    /// Distribution-based, separate old and new local classifiers.
    Dblc,
    /// Distribution-based global classifier.
    Dbgc,
    /// Distribution-based global classifier with a fixed old-class margin.
    DbgcSm,
    /// Distribution-based global classifier with the adaptive-margin old term.
    Amgc,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Sblc,
        Variant::Sbndbolc,
        Variant::Sbgc,
        Variant::Dblc,
        Variant::Dbgc,
        Variant::DbgcSm,
        Variant::Amgc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sblc => "sblc",
            Variant::Sbndbolc => "sbndbolc",
            Variant::Sbgc => "sbgc",
            Variant::Dblc => "dblc",
            Variant::Dbgc => "dbgc",
            Variant::DbgcSm => "dbgc-sm",
            Variant::Amgc => "amgc",
        }
    }

    pub fn uses_samples(self) -> bool {
        matches!(self, Variant::Sblc | Variant::Sbndbolc | Variant::Sbgc)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub variant: Variant,
    /// Variance enlargement factor (AMGC only).
    pub lambda: f64,
    /// Pseudo features per class (sample-based variants only; ignored by
    /// the others).
    pub mc_samples: Option<usize>,
    /// Class-agnostic margin (DBGC+SM only).
    pub fixed_margin: f64,
}

impl VariantSpec {
    pub const DEFAULT_LAMBDA: f64 = 0.4;
    pub const DEFAULT_FIXED_MARGIN: f64 = 1.0;
    pub const DEFAULT_MC_SAMPLES: usize = 64;

    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            lambda: Self::DEFAULT_LAMBDA,
            mc_samples: Some(Self::DEFAULT_MC_SAMPLES),
            fixed_margin: Self::DEFAULT_FIXED_MARGIN,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_mc_samples(mut self, m: Option<usize>) -> Self {
        self.mc_samples = m;
        self
    }

    pub fn with_fixed_margin(mut self, m: f64) -> Self {
        self.fixed_margin = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param(
                "lambda",
                format!("must be >= 0, got {}", self.lambda),
            ));
        }
        if !(self.fixed_margin.is_finite() && self.fixed_margin >= 0.0) {
            return Err(Error::param(
                "fixed_margin",
                format!("must be >= 0, got {}", self.fixed_margin),
            ));
        }
        if self.variant.uses_samples() {
            match self.mc_samples {
                None => {
                    return Err(Error::Config(format!(
                        "variant {} needs a pseudo-feature count M",
                        self.variant
                    )))
                }
                Some(0) => return Err(Error::param("M", "must be a positive integer")),
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Evaluates the loss of `spec.variant` for the current task.
///
/// `bank` holds statistics for every seen label; `features` optionally
/// holds real (raw) new-class features, which the sample-based variants use
/// for their new-class term in preference to pseudo features. `seed` drives
/// all pseudo-feature sampling.
pub fn variant_loss(
    spec: &VariantSpec,
    bank: &ClassBank,
    features: Option<&SampleMap>,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    seed: u64,
) -> Result<LossResult> {
    spec.validate()?;
    check_dims(params, adapter)?;
    let old: Vec<usize> = params.old_labels().collect();
    let new: Vec<usize> = params.new_labels().collect();
    let seen: Vec<usize> = params.seen_labels().collect();
    let mut total = LossResult::zeros(params.dim(), params.num_classes());

    let new_samples = |m: usize| -> Result<SampleMap> {
        match features {
            Some(f) if new.iter().all(|l| f.contains_key(l)) => {
                Ok(new.iter().map(|l| (*l, f[l].clone())).collect())
            }
            _ => draw_pseudo_samples(bank, new.iter().copied(), m, mix_seed(seed, 1)),
        }
    };
    let old_samples =
        |m: usize| draw_pseudo_samples(bank, old.iter().copied(), m, mix_seed(seed, 2));
    let scope = |t: &[usize], d: &[usize]| LossScope::new(t.iter().copied(), d.iter().copied());

    match spec.variant {
        Variant::Sblc | Variant::Sbndbolc => {
            let m = spec.mc_samples.unwrap_or_default();
            if !new.is_empty() {
                total.add(&sb_loss(
                    &new_samples(m)?,
                    params,
                    adapter,
                    &scope(&new, &new)?,
                )?);
            }
            if !old.is_empty() {
                let old_scope = scope(&old, &old)?;
                let term = if spec.variant == Variant::Sblc {
                    sb_loss(&old_samples(m)?, params, adapter, &old_scope)?
                } else {
                    db_loss(bank, params, adapter, &old_scope)?
                };
                total.add(&term);
            }
        }
        Variant::Sbgc => {
            let m = spec.mc_samples.unwrap_or_default();
            let mut samples = new_samples(m)?;
            samples.append(&mut old_samples(m)?);
            total.add(&sb_loss(&samples, params, adapter, &scope(&seen, &seen)?)?);
        }
        Variant::Dblc => {
            if !new.is_empty() {
                total.add(&db_loss(bank, params, adapter, &scope(&new, &new)?)?);
            }
            if !old.is_empty() {
                total.add(&db_loss(bank, params, adapter, &scope(&old, &old)?)?);
            }
        }
        Variant::Dbgc | Variant::DbgcSm | Variant::Amgc => {
            if !new.is_empty() {
                total.add(&db_loss(bank, params, adapter, &scope(&new, &seen)?)?);
            }
            if !old.is_empty() {
                let term = match spec.variant {
                    Variant::Dbgc => db_loss(bank, params, adapter, &scope(&old, &seen)?)?,
                    Variant::DbgcSm => soft_margin_loss(bank, params, adapter, spec.fixed_margin)?,
                    _ => amarx_loss(bank, params, adapter, spec.lambda)?,
                };
                total.add(&term);
            }
        }
    }
    Ok(total)
}
