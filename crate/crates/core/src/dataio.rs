//! Feature datasets, the EFCF binary format, a synthetic drift benchmark
//! generator, and report emission.
//!
//! EFCF layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EFCF"
//! 4       4     version (u32) = 1
//! 8       4     d (u32)
//! 12      8     record count (u64)
//! 20      ...   records: label (u32), split (u8: 0 train, 1 test), d x f32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseErrorKind, Result};
use crate::trainer::{AblationRow, ResultReport};

pub const MAGIC: [u8; 4] = *b"EFCF";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub label: u32,
    pub split: Split,
    pub feature: Vec<f32>,
}

impl Record {
    pub fn feature_f64(&self) -> DVector<f64> {
        DVector::from_iterator(self.feature.len(), self.feature.iter().map(|&x| x as f64))
    }
}

/// Per-class record tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    records: Vec<Record>,
}

impl FeatureDataset {
    pub fn new(dim: usize, records: Vec<Record>) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.feature.len() != dim) {
            return Err(Error::Dimension {
                context: "dataset record",
                expected: dim,
                received: r.feature.len(),
            });
        }
        Ok(Self { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record tallies keyed by label.
    pub fn manifest(&self) -> BTreeMap<u32, ClassCounts> {
        let mut m: BTreeMap<u32, ClassCounts> = BTreeMap::new();
        for r in &self.records {
            let c = m.entry(r.label).or_default();
            match r.split {
                Split::Train => c.train += 1,
                Split::Test => c.test += 1,
            }
        }
        m
    }

    pub fn num_classes(&self) -> usize {
        self.manifest().len()
    }

    /// Checks that labels are dense `0..num_classes` and that every class
    /// has at least two training records.
    pub fn validate(&self) -> Result<()> {
        for (expected, (&label, counts)) in self.manifest().iter().enumerate() {
            if label as usize != expected {
                return Err(Error::Config(format!(
                    "labels are not dense: expected {expected}, found {label}"
                )));
            }
            if counts.train < 2 {
                return Err(Error::InsufficientData {
                    class_id: label as usize,
                    count: counts.train,
                    required: 2,
                });
            }
        }
        Ok(())
    }

    /// Features of `label` in `split`, upcast to f64.
    pub fn features(&self, label: usize, split: Split) -> Vec<DVector<f64>> {
        self.records
            .iter()
            .filter(|r| r.label as usize == label && r.split == split)
            .map(Record::feature_f64)
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(HEADER_LEN as usize + self.records.len() * (5 + 4 * self.dim));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.label.to_le_bytes());
            out.push(r.split.tag());
            for x in &r.feature {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                kind: ParseErrorKind::BadMagic(magic),
            });
        }
        let version_at = cur.pos as u64;
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Parse {
                offset: version_at,
                kind: ParseErrorKind::UnsupportedVersion(version),
            });
        }
        let dim = cur.u32()? as usize;
        let count = cur.u64()?;
        let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
        for _ in 0..count {
            let label = cur.u32()?;
            let split_at = cur.pos as u64;
            let split = match cur.take(1)?[0] {
                0 => Split::Train,
                1 => Split::Test,
                other => {
                    return Err(Error::Parse {
                        offset: split_at,
                        kind: ParseErrorKind::BadSplit(other),
                    })
                }
            };
            let raw = cur.take(4 * dim)?;
            let feature = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            records.push(Record {
                label,
                split,
                feature,
            });
        }
        Ok(Self { dim, records })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                kind: ParseErrorKind::Truncated,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_feature_file(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset.to_bytes()).map_err(io_err(path))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    FeatureDataset::from_bytes(&bytes)
}

/// Parameters of the synthetic drift benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Radius of the ball class means are drawn from.
    pub mean_dispersion: f64,
    /// Per-dimension within-class variance.
    pub covariance_scale: f64,
    /// Magnitude of the per-task affine perturbation; 0 disables drift.
    pub drift: f64,
    /// Number of contiguous class blocks that share one perturbation.
    #[serde(default = "default_tasks")]
    pub tasks: usize,
}

fn default_tasks() -> usize {
    1
}

impl SynthConfig {
    /// The 20-class, 32-dimensional, 5-task drift benchmark.
    pub fn drift_benchmark() -> Self {
        Self {
            num_classes: 20,
            dim: 32,
            train_per_class: 200,
            test_per_class: 100,
            mean_dispersion: 4.0,
            covariance_scale: 1.0,
            drift: 0.3,
            tasks: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("dim", self.dim),
            ("train_per_class", self.train_per_class),
            ("test_per_class", self.test_per_class),
            ("tasks", self.tasks),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if !self.num_classes.is_multiple_of(self.tasks) {
            return Err(Error::param(
                "tasks",
                format!(
                    "{} classes cannot be split evenly into {} tasks",
                    self.num_classes, self.tasks
                ),
            ));
        }
        for (name, value) in [
            ("mean_dispersion", self.mean_dispersion),
            ("covariance_scale", self.covariance_scale),
            ("drift", self.drift),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::param(name, format!("must be >= 0, got {value}")));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Generates a Gaussian-mixture feature dataset.
///
/// Class means are uniform in a ball of radius `mean_dispersion`; samples
/// are `N(mean, covariance_scale * I)`. With `drift > 0`, every class of
/// task `t >= 1` (and both its splits) is further mapped through
/// `x -> (I + drift * G_t) x + drift * h_t`, with `G_t` Gaussian with
/// variance `1/d` per entry and `h_t ~ N(0, mean_dispersion^2 / d * I)`.
pub fn gen_synthetic(config: &SynthConfig, seed: u64) -> Result<FeatureDataset> {
    config.validate()?;
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let means: Vec<DVector<f64>> = (0..config.num_classes)
        .map(|_| {
            let dir = DVector::from_fn(d, |_, _| gauss(&mut rng));
            let radius = config.mean_dispersion * rng.random::<f64>().powf(1.0 / d as f64);
            dir.normalize() * radius
        })
        .collect();

    let per_task = config.num_classes / config.tasks;
    let perturb: Vec<Option<(DMatrix<f64>, DVector<f64>)>> = (0..config.tasks)
        .map(|t| {
            if t == 0 || config.drift == 0.0 {
                return None;
            }
            let g = DMatrix::from_fn(d, d, |_, _| gauss(&mut rng) / (d as f64).sqrt());
            let h = DVector::from_fn(d, |_, _| {
                gauss(&mut rng) * config.mean_dispersion / (d as f64).sqrt()
            });
            Some((DMatrix::identity(d, d) + g * config.drift, h * config.drift))
        })
        .collect();

    let sd = config.covariance_scale.sqrt();
    let mut records =
        Vec::with_capacity(config.num_classes * (config.train_per_class + config.test_per_class));
    for (label, mean) in means.iter().enumerate() {
        let map = &perturb[label / per_task];
        for (split, n) in [
            (Split::Train, config.train_per_class),
            (Split::Test, config.test_per_class),
        ] {
            for _ in 0..n {
                let mut x = DVector::from_fn(d, |_, _| gauss(&mut rng) * sd) + mean;
                if let Some((a, c)) = map {
                    x = a * x + c;
                }
                records.push(Record {
                    label: label as u32,
                    split,
                    feature: x.iter().map(|&v| v as f32).collect(),
                });
            }
        }
    }
    FeatureDataset::new(d, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// CSV rows: `task_trained, task_1..task_T, seen_acc`; cells for tasks not
/// yet trained are empty.
pub fn report_csv(report: &ResultReport) -> Result<String> {
    let tasks = report.accuracy_matrix.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["task_trained".to_string()];
    header.extend((1..=tasks).map(|t| format!("task_{t}")));
    header.push("seen_acc".into());
    w.write_record(&header).map_err(csv_err)?;
    for (t, row) in report.accuracy_matrix.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend((0..tasks).map(|j| row.get(j).map(|a| a.to_string()).unwrap_or_default()));
        rec.push(report.seen_accuracy[t].to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialize(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialize(e.to_string())
}

/// One row per variant with its seed-averaged LA and AIA.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "LA", "AIA"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            format!("{:.4}", r.la),
            format!("{:.4}", r.aia),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialize(e.to_string()))
}

pub fn report_json(report: &ResultReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Serialize(e.to_string()))
}

pub fn emit_report(
    report: &ResultReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Json => report_json(report)?,
        ReportFormat::Csv => report_csv(report)?,
    };
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))?;
    if format == ReportFormat::Json {
        f.write_all(b"\n").map_err(io_err(path))?;
    }
    Ok(())
}
