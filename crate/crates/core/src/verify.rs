//! Numerical certification suites.
//!
//! Each suite draws random instances from a seeded generator, checks one
//! mathematical property of the loss engine or the statistics pipeline
//! against an independent computation, and returns a machine-readable
//! verdict. Failures are reported in the verdict, never thrown.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{
    amarx_loss, db_loss, draw_pseudo_samples, margin_form_loss, mix_seed, sb_estimate,
    variant_loss, ClassBank, ClassifierParams, LossResult, LossScope, SampleMap, SampleSet,
    Variant, VariantSpec,
};
use crate::stats::{ClassStats, FeatureAdapter, Shrinkage, StatsAccumulator};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteVerdict {
    pub suite: String,
    pub passed: bool,
    pub summary: String,
    pub details: serde_json::Value,
}

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gauss_vec(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gauss(rng) * scale)
}

/// Random SPD matrix `B B' * scale / d + ridge * I`.
pub fn random_spd(rng: &mut impl Rng, d: usize, scale: f64, ridge: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| gauss(rng));
    let mut m = &b * b.transpose() * (scale / d as f64);
    for i in 0..d {
        m[(i, i)] += ridge;
    }
    m
}

/// Shape of a random loss instance.
#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub dim: usize,
    pub old: usize,
    pub new: usize,
    pub weight_scale: f64,
    pub cov_scale: f64,
    /// New classes get raw statistics and raw features pushed through a
    /// random near-identity adapter.
    pub tracked_new: bool,
    pub features_per_class: usize,
}

/// A random classifier, adapter, class bank, and raw new-class features.
#[derive(Debug, Clone)]
pub struct Instance {
    pub params: ClassifierParams,
    pub adapter: FeatureAdapter,
    pub bank: ClassBank,
    pub features: SampleMap,
}

pub fn random_instance(rng: &mut impl Rng, shape: InstanceShape) -> Instance {
    let d = shape.dim;
    let k = shape.old + shape.new;
    let weights = DMatrix::from_fn(d, k, |_, _| gauss(rng) * shape.weight_scale);
    let biases = gauss_vec(rng, k, 0.5);
    let params = ClassifierParams::new(weights, biases, shape.old).expect("consistent shapes");
    let adapter = if shape.tracked_new {
        let mut a = DMatrix::identity(d, d);
        a += DMatrix::from_fn(d, d, |_, _| gauss(rng) * 0.2 / (d as f64).sqrt());
        FeatureAdapter::new(a, gauss_vec(rng, d, 0.1)).expect("square adapter")
    } else {
        FeatureAdapter::identity(d)
    };
    let mut bank = ClassBank::new();
    let mut features = SampleMap::new();
    for label in 0..k {
        let mean = gauss_vec(rng, d, 1.0);
        let cov = random_spd(rng, d, shape.cov_scale, 0.05 * shape.cov_scale);
        let stats = ClassStats::new(label, 100, mean, cov).expect("valid covariance");
        if label >= shape.old && shape.tracked_new {
            let feats = stats
                .sample_pseudo_features(shape.features_per_class.max(2), rng.random())
                .expect("spd covariance");
            features.insert(
                label,
                SampleSet {
                    features: feats,
                    tracks_adapter: true,
                },
            );
            bank.insert_raw(label, stats);
        } else {
            bank.insert_output(label, stats);
        }
    }
    Instance {
        params,
        adapter,
        bank,
        features,
    }
}

// ---------------------------------------------------------------------------
// Jensen bound

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JensenConfig {
    pub trials: usize,
    pub max_dim: usize,
    pub max_classes: usize,
    pub mc_samples: usize,
    pub cov_scale: f64,
    pub seed: u64,
}

impl Default for JensenConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            max_dim: 8,
            max_classes: 6,
            mc_samples: 200_000,
            cov_scale: 1.0,
            seed: 0x6a65_6e73,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JensenTrial {
    pub dim: usize,
    pub classes: usize,
    pub db: f64,
    pub sb: f64,
    pub std_error: f64,
    /// `db + 3 SE - sb`; negative means a violation.
    pub slack: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JensenVerdict {
    pub trials: Vec<JensenTrial>,
    pub violations: usize,
    pub worst_slack: f64,
    pub mean_gap: f64,
}

fn jensen_trial(cfg: &JensenConfig, trial: usize) -> Result<JensenTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, trial as u64));
    let dim = rng.random_range(1..=cfg.max_dim);
    let classes = rng.random_range(2..=cfg.max_classes.max(2));
    let inst = random_instance(
        &mut rng,
        InstanceShape {
            dim,
            old: 0,
            new: classes,
            weight_scale: 1.0 / (dim as f64).sqrt(),
            cov_scale: cfg.cov_scale,
            tracked_new: false,
            features_per_class: 0,
        },
    );
    let scope = LossScope::new(0..classes, 0..classes)?;
    let db = db_loss(&inst.bank, &inst.params, &inst.adapter, &scope)?.value;
    let samples = draw_pseudo_samples(&inst.bank, 0..classes, cfg.mc_samples, rng.random())?;
    let (sb, se) = sb_estimate(&samples, &inst.params, &inst.adapter, &scope)?;
    Ok(JensenTrial {
        dim,
        classes,
        db,
        sb,
        std_error: se,
        slack: db + 3.0 * se - sb,
    })
}

/// For every random instance, the Monte-Carlo sample-based loss must not
/// exceed the distribution-based loss by more than three standard errors.
pub fn jensen_bound_suite(cfg: &JensenConfig) -> Result<JensenVerdict> {
    let trials: Vec<JensenTrial> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| jensen_trial(cfg, t))
        .collect::<Result<_>>()?;
    let violations = trials.iter().filter(|t| t.slack < 0.0).count();
    let worst_slack = trials.iter().map(|t| t.slack).fold(f64::INFINITY, f64::min);
    let mean_gap = trials.iter().map(|t| t.db - t.sb).sum::<f64>() / trials.len().max(1) as f64;
    Ok(JensenVerdict {
        trials,
        violations,
        worst_slack,
        mean_gap,
    })
}

impl JensenVerdict {
    pub fn verdict(&self) -> SuiteVerdict {
        SuiteVerdict {
            suite: "jensen".into(),
            passed: self.violations == 0,
            summary: format!(
                "{} instances, {} violations of sb <= db + 3 SE, worst slack {:.3e}",
                self.trials.len(),
                self.violations,
                self.worst_slack
            ),
            details: serde_json::json!({
                "violations": self.violations,
                "worst_slack": self.worst_slack,
                "mean_gap": self.mean_gap,
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Margin identity

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginVerdict {
    pub trials: usize,
    pub max_relative: f64,
    pub tolerance: f64,
}

pub const MARGIN_TOLERANCE: f64 = 1e-9;

fn margin_instance(seed: u64, trial: usize) -> (Instance, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
    let dim = rng.random_range(1..=16);
    let k = rng.random_range(1..=20);
    let old = rng.random_range(1..=k);
    let lambda = rng.random_range(0.0..=2.0);
    let tracked = rng.random_bool(0.5);
    let inst = random_instance(
        &mut rng,
        InstanceShape {
            dim,
            old,
            new: k - old,
            weight_scale: 1.0 / (dim as f64).sqrt(),
            cov_scale: 1.0,
            tracked_new: tracked,
            features_per_class: 2,
        },
    );
    (inst, lambda)
}

/// Relative discrepancy between the adaptive-margin loss and its explicit
/// margin decomposition.
pub fn margin_equivalence_suite(trials: usize, seed: u64) -> Result<MarginVerdict> {
    let rel: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (inst, lambda) = margin_instance(seed, t);
            let a = amarx_loss(&inst.bank, &inst.params, &inst.adapter, lambda)?.value;
            let m = margin_form_loss(&inst.bank, &inst.params, &inst.adapter, lambda)?;
            Ok((a - m).abs() / a.abs().max(1.0))
        })
        .collect::<Result<_>>()?;
    Ok(MarginVerdict {
        trials,
        max_relative: rel.into_iter().fold(0.0, f64::max),
        tolerance: MARGIN_TOLERANCE,
    })
}

impl MarginVerdict {
    pub fn verdict(&self) -> SuiteVerdict {
        SuiteVerdict {
            suite: "margin".into(),
            passed: self.max_relative <= self.tolerance,
            summary: format!(
                "{} instances, max relative discrepancy {:.3e} (tolerance {:.0e})",
                self.trials, self.max_relative, self.tolerance
            ),
            details: serde_json::to_value(self).unwrap_or_default(),
        }
    }
}

// ---------------------------------------------------------------------------
// VE monotonicity

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotonicityVerdict {
    pub instances: usize,
    pub grid: Vec<f64>,
    pub violations: usize,
}

/// The adaptive-margin loss on a grid `0, 0.1, ..., 2.0` must be
/// non-decreasing for every instance.
pub fn ve_monotonicity_suite(instances: usize, seed: u64) -> Result<MonotonicityVerdict> {
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 10.0).collect();
    let violations: Vec<usize> = (0..instances)
        .into_par_iter()
        .map(|t| {
            let (inst, _) = margin_instance(seed, t);
            let mut prev = f64::NEG_INFINITY;
            let mut bad = 0;
            for &lambda in &grid {
                let v = amarx_loss(&inst.bank, &inst.params, &inst.adapter, lambda)?.value;
                if v < prev {
                    bad += 1;
                }
                prev = v;
            }
            Ok(bad)
        })
        .collect::<Result<_>>()?;
    Ok(MonotonicityVerdict {
        instances,
        grid,
        violations: violations.into_iter().sum(),
    })
}

impl MonotonicityVerdict {
    pub fn verdict(&self) -> SuiteVerdict {
        SuiteVerdict {
            suite: "monotonicity".into(),
            passed: self.violations == 0,
            summary: format!(
                "{} instances x {} lambda values, {} decreases",
                self.instances,
                self.grid.len(),
                self.violations
            ),
            details: serde_json::to_value(self).unwrap_or_default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Gradients

pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that coordinates whose true
/// gradient is zero are judged on absolute error.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// One trainable scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coord {
    Weight(usize, usize),
    Bias(usize),
    AdapterMatrix(usize, usize),
    AdapterOffset(usize),
}

fn coord_get(params: &ClassifierParams, adapter: &FeatureAdapter, c: Coord) -> f64 {
    match c {
        Coord::Weight(i, j) => params.weights()[(i, j)],
        Coord::Bias(j) => params.biases()[j],
        Coord::AdapterMatrix(i, j) => adapter.matrix()[(i, j)],
        Coord::AdapterOffset(i) => adapter.offset()[i],
    }
}

fn coord_set(params: &mut ClassifierParams, adapter: &mut FeatureAdapter, c: Coord, v: f64) {
    match c {
        Coord::Weight(i, j) => params.weights_mut()[(i, j)] = v,
        Coord::Bias(j) => params.biases_mut()[j] = v,
        Coord::AdapterMatrix(i, j) => adapter.matrix_mut()[(i, j)] = v,
        Coord::AdapterOffset(i) => adapter.offset_mut()[i] = v,
    }
}

pub fn analytic_at(r: &LossResult, c: Coord) -> f64 {
    match c {
        Coord::Weight(i, j) => r.grad_weights[(i, j)],
        Coord::Bias(j) => r.grad_biases[j],
        Coord::AdapterMatrix(i, j) => r.grad_adapter_matrix[(i, j)],
        Coord::AdapterOffset(i) => r.grad_adapter_offset[i],
    }
}

/// Central difference of `f` along one coordinate.
pub fn central_difference<F>(
    f: F,
    params: &ClassifierParams,
    adapter: &FeatureAdapter,
    c: Coord,
    h: f64,
) -> Result<f64>
where
    F: Fn(&ClassifierParams, &FeatureAdapter) -> Result<f64>,
{
    let mut p = params.clone();
    let mut a = adapter.clone();
    let x = coord_get(params, adapter, c);
    coord_set(&mut p, &mut a, c, x + h);
    let up = f(&p, &a)?;
    coord_set(&mut p, &mut a, c, x - h);
    let down = f(&p, &a)?;
    Ok((up - down) / (2.0 * h))
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

fn random_coords(rng: &mut impl Rng, d: usize, k: usize, n: usize) -> Vec<Coord> {
    let mut out = Vec::with_capacity(4 * n);
    for _ in 0..n {
        out.push(Coord::Weight(
            rng.random_range(0..d),
            rng.random_range(0..k),
        ));
        out.push(Coord::Bias(rng.random_range(0..k)));
        out.push(Coord::AdapterMatrix(
            rng.random_range(0..d),
            rng.random_range(0..d),
        ));
        out.push(Coord::AdapterOffset(rng.random_range(0..d)));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantGradients {
    pub variant: Variant,
    pub trials: usize,
    pub probes: usize,
    pub max_relative: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientVerdict {
    pub per_variant: Vec<VariantGradients>,
    pub max_relative: f64,
    pub tolerance: f64,
    /// Local-classifier masking: new columns under the old-only term (and
    /// old columns under the new-only term) have exactly zero analytic and
    /// finite-difference gradient.
    pub masking_ok: bool,
}

fn gradient_spec(variant: Variant) -> VariantSpec {
    VariantSpec::new(variant)
        .with_mc_samples(Some(6))
        .with_lambda(0.4)
        .with_fixed_margin(0.7)
}

fn gradient_instance(seed: u64, trial: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
    let dim = rng.random_range(1..=5);
    let old = rng.random_range(1..=3);
    let new = rng.random_range(1..=3);
    random_instance(
        &mut rng,
        InstanceShape {
            dim,
            old,
            new,
            weight_scale: 0.7,
            cov_scale: 0.5,
            tracked_new: true,
            features_per_class: 5,
        },
    )
}

fn variant_gradients(
    variant: Variant,
    trials: usize,
    probe_count: usize,
    seed: u64,
) -> Result<VariantGradients> {
    let spec = gradient_spec(variant);
    let errs: Vec<(usize, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let inst = gradient_instance(seed, t);
            let loss_seed = mix_seed(seed, 1_000 + t as u64);
            let eval = |p: &ClassifierParams, a: &FeatureAdapter| {
                variant_loss(&spec, &inst.bank, Some(&inst.features), p, a, loss_seed)
            };
            let grads = eval(&inst.params, &inst.adapter)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(loss_seed, 7));
            let coords = random_coords(
                &mut rng,
                inst.params.dim(),
                inst.params.num_classes(),
                probe_count,
            );
            let mut worst: f64 = 0.0;
            for &c in &coords {
                let fd = central_difference(
                    |p, a| eval(p, a).map(|r| r.value),
                    &inst.params,
                    &inst.adapter,
                    c,
                    FD_STEP,
                )?;
                worst = worst.max(relative_error(analytic_at(&grads, c), fd));
            }
            Ok((coords.len(), worst))
        })
        .collect::<Result<_>>()?;
    Ok(VariantGradients {
        variant,
        trials,
        probes: errs.iter().map(|e| e.0).sum(),
        max_relative: errs.iter().map(|e| e.1).fold(0.0, f64::max),
    })
}

/// Checks that a local (old-only or new-only) term leaves the other
/// partition's columns with exactly zero gradient, analytically and by
/// finite differences.
fn masking_check(seed: u64) -> Result<bool> {
    let inst = gradient_instance(seed, 0);
    let p = &inst.params;
    let old: Vec<usize> = p.old_labels().collect();
    let new: Vec<usize> = p.new_labels().collect();
    let mut ok = true;
    for (targets, excluded) in [(&old, &new), (&new, &old)] {
        let scope = LossScope::new(targets.iter().copied(), targets.iter().copied())?;
        let r = db_loss(&inst.bank, p, &inst.adapter, &scope)?;
        for &j in excluded.iter() {
            for i in 0..p.dim() {
                let c = Coord::Weight(i, j);
                let fd = central_difference(
                    |pp, aa| db_loss(&inst.bank, pp, aa, &scope).map(|r| r.value),
                    p,
                    &inst.adapter,
                    c,
                    FD_STEP,
                )?;
                ok &= analytic_at(&r, c) == 0.0 && fd == 0.0;
            }
            ok &= r.grad_biases[j] == 0.0;
        }
    }
    Ok(ok)
}

pub fn gradient_suite(trials: usize, probe_count: usize, seed: u64) -> Result<GradientVerdict> {
    let per_variant: Vec<VariantGradients> = Variant::ALL
        .iter()
        .map(|&v| variant_gradients(v, trials, probe_count, seed))
        .collect::<Result<_>>()?;
    let max_relative = per_variant
        .iter()
        .map(|v| v.max_relative)
        .fold(0.0, f64::max);
    Ok(GradientVerdict {
        per_variant,
        max_relative,
        tolerance: GRADIENT_TOLERANCE,
        masking_ok: masking_check(seed)?,
    })
}

impl GradientVerdict {
    pub fn verdict(&self) -> SuiteVerdict {
        let worst = self
            .per_variant
            .iter()
            .map(|v| format!("{}={:.1e}", v.variant, v.max_relative))
            .collect::<Vec<_>>()
            .join(" ");
        SuiteVerdict {
            suite: "grad".into(),
            passed: self.max_relative <= self.tolerance && self.masking_ok,
            summary: format!(
                "max relative error {:.3e} (tolerance {:.0e}), masking {}; {}",
                self.max_relative,
                self.tolerance,
                if self.masking_ok { "ok" } else { "BROKEN" },
                worst
            ),
            details: serde_json::to_value(self).unwrap_or_default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Statistics

pub const STREAMING_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsVerdict {
    /// Relative Frobenius error of the chunked streaming covariance
    /// against a two-pass computation.
    pub streaming_relative: f64,
    /// Largest |empirical - analytic| / standard error over all mean and
    /// covariance entries of the Monte-Carlo pushforward.
    pub pushforward_max_z: f64,
    pub mc_samples: usize,
}

/// Two-pass sample covariance, kept independent of the streaming code.
pub fn two_pass_covariance(data: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = data[0].len();
    let n = data.len() as f64;
    let mean = data.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n;
    let mut cov = DMatrix::zeros(d, d);
    for x in data {
        let dev = x - &mean;
        cov += &dev * dev.transpose();
    }
    (mean, cov / (n - 1.0))
}

pub fn streaming_vs_two_pass(seed: u64, n: usize, d: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = gauss_vec(&mut rng, d, 5.0);
    let data: Vec<DVector<f64>> = (0..n)
        .map(|_| gauss_vec(&mut rng, d, 2.0) + &shift)
        .collect();
    let mut acc = StatsAccumulator::new(0, d);
    let mut start = 0;
    while start < n {
        let len = rng.random_range(1..=17).min(n - start);
        acc.update(&data[start..start + len])?;
        start += len;
    }
    let streamed = acc.finalize(Shrinkage::Absolute(0.0))?;
    let (_, cov) = two_pass_covariance(&data);
    Ok((streamed.covariance() - &cov).norm() / cov.norm())
}

/// Compares analytic adapted statistics with the empirical moments of
/// `samples` transformed draws.
pub fn pushforward_max_z(seed: u64, d: usize, samples: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = gauss_vec(&mut rng, d, 1.0);
    let cov = random_spd(&mut rng, d, 1.0, 0.1);
    let stats = ClassStats::new(0, samples, mean, cov)?;
    let adapter = FeatureAdapter::new(
        DMatrix::from_fn(d, d, |_, _| gauss(&mut rng)),
        gauss_vec(&mut rng, d, 1.0),
    )?;
    let analytic = stats.adapt(&adapter)?;
    let draws: Vec<DVector<f64>> = stats
        .sample_pseudo_features(samples, rng.random())?
        .iter()
        .map(|x| adapter.apply(x))
        .collect();
    let n = samples as f64;
    let (emp_mean, emp_cov) = two_pass_covariance(&draws);
    let mut max_z: f64 = 0.0;
    for i in 0..d {
        let se = (emp_cov[(i, i)] / n).sqrt();
        max_z = max_z.max((emp_mean[i] - analytic.mean()[i]).abs() / se);
    }
    for i in 0..d {
        for j in i..d {
            // standard error of a sample covariance entry from the variance
            // of the centered products
            let prods: Vec<f64> = draws
                .iter()
                .map(|x| (x[i] - emp_mean[i]) * (x[j] - emp_mean[j]))
                .collect();
            let m = prods.iter().sum::<f64>() / n;
            let var = prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            max_z = max_z.max((emp_cov[(i, j)] - analytic.covariance()[(i, j)]).abs() / se);
        }
    }
    Ok(max_z)
}

pub fn stats_oracle_suite(seed: u64) -> Result<StatsVerdict> {
    let mc_samples = 1_000_000;
    Ok(StatsVerdict {
        streaming_relative: streaming_vs_two_pass(seed, 5_000, 6)?,
        pushforward_max_z: pushforward_max_z(mix_seed(seed, 1), 3, mc_samples)?,
        mc_samples,
    })
}

impl StatsVerdict {
    pub fn verdict(&self) -> SuiteVerdict {
        SuiteVerdict {
            suite: "stats".into(),
            passed: self.streaming_relative <= STREAMING_TOLERANCE && self.pushforward_max_z <= 3.0,
            summary: format!(
                "streaming vs two-pass {:.3e} (tolerance {:.0e}); pushforward max |z| {:.2} over {} samples (limit 3)",
                self.streaming_relative, STREAMING_TOLERANCE, self.pushforward_max_z, self.mc_samples
            ),
            details: serde_json::to_value(self).unwrap_or_default(),
        }
    }
}
