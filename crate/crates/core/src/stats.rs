//! Per-class Gaussian statistics.
//!
//! Class statistics are accumulated in a single pass with a pairwise
//! merge of `(count, mean, comoment)` triples, so any
//! partition of a class's samples into mini-batches finalizes to the same
//! mean and covariance up to round-off. Finalized statistics can be pushed
//! through an affine [`FeatureAdapter`], variance-enlarged, and sampled.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Running `(count, mean, comoment)` for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    class_id: usize,
    count: usize,
    mean: DVector<f64>,
    /// Sum of outer products of deviations from the running mean.
    comoment: DMatrix<f64>,
}

impl StatsAccumulator {
    pub fn new(class_id: usize, dim: usize) -> Self {
        Self {
            class_id,
            count: 0,
            mean: DVector::zeros(dim),
            comoment: DMatrix::zeros(dim, dim),
        }
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn comoment(&self) -> &DMatrix<f64> {
        &self.comoment
    }

    /// Folds one mini-batch into the accumulator.
    ///
    /// The batch's exact mean and comoment are computed with a two-pass
    /// sweep and then merged with the running state. An empty batch leaves
    /// the accumulator untouched.
    pub fn update<'a, I>(&mut self, batch: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a DVector<f64>>,
    {
        let batch: Vec<&DVector<f64>> = batch.into_iter().collect();
        if batch.is_empty() {
            return Ok(());
        }
        let d = self.dim();
        for x in &batch {
            if x.len() != d {
                return Err(Error::Dimension {
                    context: "stream_update",
                    expected: d,
                    received: x.len(),
                });
            }
        }
        let n = batch.len();
        let mut mean = DVector::zeros(d);
        for x in &batch {
            mean += *x;
        }
        mean /= n as f64;
        let mut comoment = DMatrix::zeros(d, d);
        for x in &batch {
            let dev = *x - &mean;
            comoment.ger(1.0, &dev, &dev, 1.0);
        }
        self.merge(&StatsAccumulator {
            class_id: self.class_id,
            count: n,
            mean,
            comoment,
        })
    }

    /// Pairwise merge of two accumulators over disjoint sample sets.
    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::Dimension {
                context: "stats merge",
                expected: self.dim(),
                received: other.dim(),
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean.copy_from(&other.mean);
            self.comoment.copy_from(&other.comoment);
            return Ok(());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean.axpy(nb / n, &delta, 1.0);
        self.comoment += &other.comoment;
        self.comoment.ger(na * nb / n, &delta, &delta, 1.0);
        self.count += other.count;
        Ok(())
    }

    /// Sample covariance (`comoment / (count - 1)`) plus diagonal shrinkage.
    pub fn finalize(&self, shrinkage: Shrinkage) -> Result<ClassStats> {
        if self.count < 2 {
            return Err(Error::InsufficientData {
                class_id: self.class_id,
                count: self.count,
                required: 2,
            });
        }
        let mut cov = symmetrized(&self.comoment) / (self.count as f64 - 1.0);
        let d = self.dim();
        let ridge = shrinkage.amount(&cov)?;
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        Ok(ClassStats {
            class_id: self.class_id,
            count: self.count,
            mean: self.mean.clone(),
            covariance: cov,
        })
    }
}

/// Diagonal ridge added to the covariance at finalize.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Shrinkage {
    /// Add this constant to every diagonal entry.
    Absolute(f64),
    /// Add `factor * trace(cov) / d` to every diagonal entry.
    TraceScaled(f64),
}

impl Default for Shrinkage {
    fn default() -> Self {
        Shrinkage::TraceScaled(1e-4)
    }
}

impl Shrinkage {
    fn amount(&self, cov: &DMatrix<f64>) -> Result<f64> {
        let (value, scale) = match *self {
            Shrinkage::Absolute(s) => (s, 1.0),
            Shrinkage::TraceScaled(f) => (f, cov.trace() / cov.nrows().max(1) as f64),
        };
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::param(
                "shrinkage",
                format!("must be >= 0, got {value}"),
            ));
        }
        Ok(value * scale)
    }
}

/// Finalized Gaussian model of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    class_id: usize,
    count: usize,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl ClassStats {
    /// Builds statistics directly. The covariance is symmetrized and must
    /// have a non-negative diagonal.
    pub fn new(
        class_id: usize,
        count: usize,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    ) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Dimension {
                context: "class covariance",
                expected: d,
                received: if covariance.nrows() != d {
                    covariance.nrows()
                } else {
                    covariance.ncols()
                },
            });
        }
        if count == 0 {
            return Err(Error::param(
                "count",
                "class statistics need at least one sample",
            ));
        }
        let covariance = symmetrized(&covariance);
        if let Some(i) = (0..d).find(|&i| covariance[(i, i)].is_nan() || covariance[(i, i)] < 0.0) {
            return Err(Error::Invariant(format!(
                "class {class_id}: covariance diagonal entry {i} is {}",
                covariance[(i, i)]
            )));
        }
        Ok(Self {
            class_id,
            count,
            mean,
            covariance,
        })
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Per-dimension variances, i.e. the diagonal of the covariance.
    pub fn diag(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }

    pub fn with_class_id(mut self, class_id: usize) -> Self {
        self.class_id = class_id;
        self
    }

    /// Returns `Σ + λ·diag(Σ)`; off-diagonal entries are left untouched.
    pub fn variance_enlarge(&self, lambda: f64) -> Result<ClassStats> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::param(
                "lambda",
                format!("must be >= 0, got {lambda}"),
            ));
        }
        let mut out = self.clone();
        for i in 0..self.dim() {
            out.covariance[(i, i)] += lambda * self.covariance[(i, i)];
        }
        Ok(out)
    }

    /// Exact pushforward through `x -> A x + c`.
    pub fn adapt(&self, adapter: &FeatureAdapter) -> Result<ClassStats> {
        if adapter.dim() != self.dim() {
            return Err(Error::Dimension {
                context: "adapt_stats",
                expected: self.dim(),
                received: adapter.dim(),
            });
        }
        let a = adapter.matrix();
        let mean = a * &self.mean + adapter.offset();
        let covariance = symmetrized(&(a * &self.covariance * a.transpose()));
        Ok(ClassStats {
            class_id: self.class_id,
            count: self.count,
            mean,
            covariance,
        })
    }

    /// Sampler for `N(mean, covariance)`.
    pub fn sampler(&self) -> Result<GaussianSampler> {
        Ok(GaussianSampler {
            mean: self.mean.clone(),
            factor: cholesky_with_jitter(&self.covariance).ok_or(Error::Degenerate {
                class_id: self.class_id,
            })?,
        })
    }

    /// Draws `m` i.i.d. pseudo features, deterministic in `seed`.
    pub fn sample_pseudo_features(&self, m: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        if m == 0 {
            return Err(Error::param("M", "must be a positive integer"));
        }
        let sampler = self.sampler()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(sampler.draw(&mut rng, m))
    }
}

/// Affine map `x -> A x + c` standing in for a trainable feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAdapter {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl FeatureAdapter {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            offset: DVector::zeros(dim),
        }
    }

    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension {
                context: "adapter matrix (must be square)",
                expected: matrix.nrows(),
                received: matrix.ncols(),
            });
        }
        if offset.len() != matrix.nrows() {
            return Err(Error::Dimension {
                context: "adapter offset",
                expected: matrix.nrows(),
                received: offset.len(),
            });
        }
        Ok(Self { matrix, offset })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.matrix
    }

    pub fn offset_mut(&mut self) -> &mut DVector<f64> {
        &mut self.offset
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }

    /// The map `x -> next(self(x))`.
    pub fn then(&self, next: &FeatureAdapter) -> FeatureAdapter {
        FeatureAdapter {
            matrix: &next.matrix * &self.matrix,
            offset: &next.matrix * &self.offset + &next.offset,
        }
    }
}

/// Gaussian sampler built from a lower-triangular covariance factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Vec<DVector<f64>> {
        let d = self.mean.len();
        let mut eps = DVector::zeros(d);
        (0..m)
            .map(|_| {
                for e in eps.iter_mut() {
                    *e = StandardNormal.sample(rng);
                }
                &self.factor * &eps + &self.mean
            })
            .collect()
    }
}

pub(crate) fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

const JITTER_START: f64 = 1e-10;
const JITTER_RETRIES: usize = 5;

/// Lower Cholesky factor, retrying with an increasing diagonal jitter
/// (1e-10, 1e-9, ..., 1e-6). An all-zero covariance factors to zero.
pub(crate) fn cholesky_with_jitter(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if cov.iter().all(|&v| v == 0.0) {
        return Some(DMatrix::zeros(cov.nrows(), cov.ncols()));
    }
    if let Some(ch) = cov.clone().cholesky() {
        return Some(ch.unpack());
    }
    let mut jitter = JITTER_START;
    for _ in 0..JITTER_RETRIES {
        let mut m = cov.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Some(ch.unpack());
        }
        jitter *= 10.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn lcg_data(n: usize, d: usize, mut state: u64) -> Vec<DVector<f64>> {
        (0..n)
            .map(|_| {
                DVector::from_fn(d, |_, _| {
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
                })
            })
            .collect()
    }

    /// Textbook two-pass sample covariance.
    fn two_pass(data: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let d = data[0].len();
        let n = data.len() as f64;
        let mut mean = DVector::zeros(d);
        for x in data {
            mean += x;
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for x in data {
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        (mean, cov / (n - 1.0))
    }

    #[test]
    fn update_single_batch() {
        let mut acc = StatsAccumulator::new(0, 1);
        let data = [v(&[1.0]), v(&[2.0]), v(&[3.0])];
        acc.update(&data).unwrap();
        assert_eq!(acc.count(), 3);
        assert_eq!(acc.mean()[0], 2.0);
    }

    #[test]
    fn empty_batch_is_identity() {
        let mut acc = StatsAccumulator::new(4, 2);
        acc.update(&[v(&[1.0, 2.0]), v(&[0.5, -1.0])]).unwrap();
        let before = acc.clone();
        acc.update(&[]).unwrap();
        assert_eq!(acc, before);

        let fresh = StatsAccumulator::new(1, 3);
        assert!(fresh.mean().iter().all(|&x| x == 0.0));
        assert!(fresh.comoment().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn chunked_equals_single_batch() {
        let data = [v(&[1.0]), v(&[2.0]), v(&[3.0])];
        let mut chunked = StatsAccumulator::new(0, 1);
        chunked.update(&data[..2]).unwrap();
        chunked.update(&data[2..]).unwrap();
        let mut single = StatsAccumulator::new(0, 1);
        single.update(&data).unwrap();
        assert_eq!(chunked.mean(), single.mean());
        assert!((chunked.comoment()[(0, 0)] - single.comoment()[(0, 0)]).abs() < 1e-12);
        // Brute force: sum of squared deviations from 2 is 2.
        assert!((single.comoment()[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut acc = StatsAccumulator::new(0, 2);
        let err = acc.update(&[v(&[1.0, 2.0, 3.0])]).unwrap_err();
        match err {
            Error::Dimension {
                expected, received, ..
            } => assert_eq!((expected, received), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(acc.count(), 0);
    }

    #[test]
    fn finalize_sample_variance() {
        let mut acc = StatsAccumulator::new(0, 1);
        acc.update(&[v(&[1.0]), v(&[2.0]), v(&[3.0])]).unwrap();
        let s = acc.finalize(Shrinkage::Absolute(0.0)).unwrap();
        assert_eq!(s.mean()[0], 2.0);
        assert!((s.covariance()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn finalize_repeated_vector_gives_ridge() {
        let x = v(&[0.3, -1.2]);
        let mut acc = StatsAccumulator::new(0, 2);
        acc.update(&[x.clone(), x.clone(), x.clone(), x]).unwrap();
        let s = acc.finalize(Shrinkage::Absolute(0.25)).unwrap();
        assert!((s.covariance() - DMatrix::identity(2, 2) * 0.25).norm() < 1e-15);
    }

    #[test]
    fn finalize_needs_two_samples() {
        let mut acc = StatsAccumulator::new(7, 2);
        acc.update(&[v(&[1.0, 1.0])]).unwrap();
        assert!(matches!(
            acc.finalize(Shrinkage::default()),
            Err(Error::InsufficientData {
                class_id: 7,
                count: 1,
                ..
            })
        ));
    }

    #[test]
    fn finalize_matches_two_pass() {
        let data = lcg_data(50, 4, 17);
        let mut acc = StatsAccumulator::new(0, 4);
        for chunk in data.chunks(7) {
            acc.update(chunk).unwrap();
        }
        let s = acc.finalize(Shrinkage::Absolute(0.0)).unwrap();
        let (mean, cov) = two_pass(&data);
        assert!((s.mean() - mean).norm() < 1e-12);
        assert!((s.covariance() - &cov).norm() / cov.norm() < 1e-10);
        assert_eq!(s.covariance(), &s.covariance().transpose());
    }

    #[test]
    fn default_shrinkage_makes_rank_deficient_pd() {
        // 3 samples in 5 dimensions: the raw covariance has rank 2.
        let data = lcg_data(3, 5, 3);
        let mut acc = StatsAccumulator::new(0, 5);
        acc.update(&data).unwrap();
        let s = acc.finalize(Shrinkage::default()).unwrap();
        assert!(s.covariance().clone().cholesky().is_some());
        let raw = acc.finalize(Shrinkage::Absolute(0.0)).unwrap();
        assert!(
            raw.covariance().clone().cholesky().is_none()
                || raw.covariance().symmetric_eigenvalues().min() < 1e-12
        );
    }

    #[test]
    fn variance_enlarge_example() {
        let s = ClassStats::new(
            0,
            10,
            v(&[0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
        )
        .unwrap();
        let e = s.variance_enlarge(0.4).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.4, 0.5, 0.5, 2.8]);
        assert!((e.covariance() - expected).norm() < 1e-15);
        assert_eq!(s.variance_enlarge(0.0).unwrap(), s);
        assert!(s.variance_enlarge(-0.1).is_err());
    }

    #[test]
    fn variance_enlarge_touches_only_diagonal() {
        let data = lcg_data(20, 5, 99);
        let mut acc = StatsAccumulator::new(0, 5);
        acc.update(&data).unwrap();
        let s = acc.finalize(Shrinkage::Absolute(0.0)).unwrap();
        let e = s.variance_enlarge(0.7).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    let want = 1.7 * s.covariance()[(i, i)];
                    assert!((e.covariance()[(i, i)] - want).abs() <= 1e-15 * want.abs().max(1.0));
                } else {
                    assert_eq!(
                        e.covariance()[(i, j)].to_bits(),
                        s.covariance()[(i, j)].to_bits()
                    );
                }
            }
        }
        assert_eq!(e.mean(), s.mean());
        assert_eq!(e.count(), s.count());
    }

    #[test]
    fn adapt_identity_and_scaling() {
        let s = ClassStats::new(0, 5, v(&[1.0, -2.0]), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(s.adapt(&FeatureAdapter::identity(2)).unwrap(), s);
        let double = FeatureAdapter::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2)).unwrap();
        let a = s.adapt(&double).unwrap();
        assert_eq!(a.covariance(), &(DMatrix::identity(2, 2) * 4.0));
        assert_eq!(a.mean(), &v(&[2.0, -4.0]));
        assert!(s.adapt(&FeatureAdapter::identity(3)).is_err());
    }

    #[test]
    fn sampling_degenerate_and_deterministic() {
        let s = ClassStats::new(0, 5, v(&[1.5, -0.5]), DMatrix::zeros(2, 2)).unwrap();
        for x in s.sample_pseudo_features(16, 3).unwrap() {
            assert_eq!(x, *s.mean());
        }
        let t = ClassStats::new(
            0,
            5,
            v(&[0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        let a = t.sample_pseudo_features(32, 11).unwrap();
        let b = t.sample_pseudo_features(32, 11).unwrap();
        assert_eq!(a, b);
        assert!(t.sample_pseudo_features(0, 11).is_err());
    }

    #[test]
    fn sampling_moments_1d() {
        let s = ClassStats::new(0, 2, v(&[0.0]), DMatrix::identity(1, 1)).unwrap();
        let xs = s.sample_pseudo_features(100_000, 2024).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / n;
        let var = xs.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        // rank-1 PSD matrix
        let u = v(&[1.0, 2.0, -1.0]);
        let cov = &u * u.transpose();
        let l = cholesky_with_jitter(&cov).expect("jitter should succeed");
        assert!((&l * l.transpose() - &cov).norm() < 1e-4);
        // indefinite matrix cannot be rescued by tiny jitter
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_with_jitter(&bad).is_none());
    }

    #[test]
    fn new_rejects_negative_variance() {
        let err = ClassStats::new(
            0,
            3,
            v(&[0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]),
        );
        assert!(matches!(err, Err(Error::Invariant(_))));
    }
}
