use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use amgc::dataio::{
    ablation_csv, emit_report, gen_synthetic, read_feature_file, write_feature_file, ReportFormat,
    SynthConfig,
};
use amgc::loss::{Variant, VariantSpec};
use amgc::trainer::{run_ablation, run_scenario_averaged, ScenarioConfig, StatsMode};
use amgc::verify::{
    gradient_suite, jensen_bound_suite, margin_equivalence_suite, stats_oracle_suite,
    ve_monotonicity_suite, JensenConfig, SuiteVerdict,
};
use amgc::{Error, ErrorClass, FeatureDataset};

#[derive(Parser)]
#[command(
    name = "amgc",
    version,
    about = "Exemplar-free class-incremental learning with Gaussian class statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic drift benchmark as an EFCF feature file.
    GenSynth {
        /// JSON synthetic-data config; the built-in drift benchmark if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one variant.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_parser = parse_variant, default_value = "amgc")]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Report path; printed to stdout only if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_format, default_value = "json")]
        format: ReportFormat,
    },
    /// Run every variant with shared seeds and write `ablation.csv`.
    Ablate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of seeds: `seed, seed + 1, ...`.
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run numerical certification suites and print a JSON verdict.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smaller instance counts for smoke testing.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of tasks; the dataset's classes are split evenly.
    #[arg(long)]
    tasks: usize,
    #[arg(long, default_value_t = VariantSpec::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = VariantSpec::DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    #[arg(long, default_value_t = VariantSpec::DEFAULT_FIXED_MARGIN)]
    fixed_margin: f64,
    #[arg(long)]
    epochs_initial: Option<usize>,
    #[arg(long)]
    epochs_incremental: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    lr_initial: Option<f64>,
    #[arg(long)]
    lr_classifier: Option<f64>,
    #[arg(long)]
    lr_adapter: Option<f64>,
    #[arg(long)]
    readapt_stats: bool,
    /// Run repetitions serially.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Jensen,
    Margin,
    Grad,
    Stats,
    All,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl ScenarioArgs {
    fn load(&self, variant: Variant, seed: u64) -> amgc::Result<(ScenarioConfig, FeatureDataset)> {
        let dataset = read_feature_file(&self.data)?;
        let classes = dataset.num_classes();
        if self.tasks == 0 || !classes.is_multiple_of(self.tasks) {
            return Err(Error::Config(format!(
                "{classes} classes cannot be split into {} equal tasks",
                self.tasks
            )));
        }
        let spec = VariantSpec::new(variant)
            .with_lambda(self.lambda)
            .with_mc_samples(Some(self.mc_samples))
            .with_fixed_margin(self.fixed_margin);
        let mut c =
            ScenarioConfig::benchmark(self.tasks, classes / self.tasks, dataset.dim(), spec);
        let o = &mut c.optimizer;
        o.epochs_initial = self.epochs_initial.unwrap_or(o.epochs_initial);
        o.epochs_incremental = self.epochs_incremental.unwrap_or(o.epochs_incremental);
        o.steps_per_epoch = self.steps_per_epoch.unwrap_or(o.steps_per_epoch);
        o.initial_lr = self.lr_initial.unwrap_or(o.initial_lr);
        o.incremental_lr_classifier = self.lr_classifier.unwrap_or(o.incremental_lr_classifier);
        o.incremental_lr_adapter = self.lr_adapter.unwrap_or(o.incremental_lr_adapter);
        if self.readapt_stats {
            c.stats_mode = StatsMode::ReAdapted;
        }
        c.seed = seed;
        c.validate()?;
        Ok((c, dataset))
    }
}

fn echo_config(c: &ScenarioConfig, runs: usize, parallel: bool) {
    let o = &c.optimizer;
    eprintln!(
        "tasks={} classes/task={} dim={} lambda={} M={} margin={} seed={} runs={} ({})",
        c.tasks,
        c.classes_per_task,
        c.dim,
        c.variant.lambda,
        c.variant.mc_samples.unwrap_or(0),
        c.variant.fixed_margin,
        c.seed,
        runs,
        if parallel { "parallel" } else { "serial" }
    );
    eprintln!(
        "lr initial={} classifier={} adapter={} momentum={} epochs={}/{} steps/epoch={}",
        o.initial_lr,
        o.incremental_lr_classifier,
        o.incremental_lr_adapter,
        o.momentum,
        o.epochs_initial,
        o.epochs_incremental,
        o.steps_per_epoch
    );
}

fn write_text(path: &Path, text: &str) -> amgc::Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn verify(suite: Suite, seed: u64, quick: bool) -> amgc::Result<Vec<SuiteVerdict>> {
    let scale = |full: usize, small: usize| if quick { small } else { full };
    let mut out = Vec::new();
    if matches!(suite, Suite::Jensen | Suite::All) {
        let cfg = JensenConfig {
            trials: scale(200, 10),
            mc_samples: scale(200_000, 20_000),
            seed,
            ..JensenConfig::default()
        };
        out.push(jensen_bound_suite(&cfg)?.verdict());
    }
    if matches!(suite, Suite::Margin | Suite::All) {
        out.push(margin_equivalence_suite(scale(1000, 50), seed)?.verdict());
        out.push(ve_monotonicity_suite(scale(100, 10), seed)?.verdict());
    }
    if matches!(suite, Suite::Grad | Suite::All) {
        out.push(gradient_suite(scale(50, 3), scale(4, 2), seed)?.verdict());
    }
    if matches!(suite, Suite::Stats | Suite::All) {
        out.push(stats_oracle_suite(seed)?.verdict());
    }
    Ok(out)
}

fn execute(cli: Cli) -> amgc::Result<ExitCode> {
    match cli.command {
        Command::GenSynth { config, seed, out } => {
            let cfg = match config {
                Some(p) => SynthConfig::from_json_file(p)?,
                None => SynthConfig::drift_benchmark(),
            };
            let data = gen_synthetic(&cfg, seed)?;
            write_feature_file(&data, &out)?;
            eprintln!(
                "wrote {} records ({} classes, d={}) to {}",
                data.len(),
                cfg.num_classes,
                cfg.dim,
                out.display()
            );
        }
        Command::Run {
            scenario,
            variant,
            seed,
            runs,
            out,
            format,
        } => {
            let (config, dataset) = scenario.load(variant, seed)?;
            let parallel = !scenario.deterministic;
            echo_config(&config, runs, parallel);
            let report = run_scenario_averaged(&config, &dataset, runs, parallel)?;
            println!("{:<8} {:>8} {:>8}", "variant", "LA", "AIA");
            println!(
                "{:<8} {:>8.2} {:>8.2}",
                report.variant, report.la, report.aia
            );
            if let Some(path) = out {
                emit_report(&report, &path, format)?;
            }
        }
        Command::Ablate {
            scenario,
            seed,
            runs,
            out,
        } => {
            let (config, dataset) = scenario.load(Variant::Amgc, seed)?;
            if runs == 0 {
                return Err(Error::param("runs", "must be >= 1"));
            }
            let parallel = !scenario.deterministic;
            echo_config(&config, runs, parallel);
            let seeds: Vec<u64> = (0..runs as u64).map(|i| seed.wrapping_add(i)).collect();
            let rows = run_ablation(&config, &dataset, &Variant::ALL, &seeds, parallel)?;
            fs::create_dir_all(&out).map_err(|source| Error::Io {
                path: out.clone(),
                source,
            })?;
            write_text(&out.join("ablation.csv"), &ablation_csv(&rows)?)?;
            let json = serde_json::to_string_pretty(
                &json!({ "config": config, "seeds": seeds, "rows": rows }),
            )
            .map_err(|e| Error::Serialize(e.to_string()))?;
            write_text(&out.join("ablation.json"), &json)?;
            println!("{:<10} {:>8} {:>8}", "variant", "LA", "AIA");
            for r in &rows {
                println!("{:<10} {:>8.2} {:>8.2}", r.variant.name(), r.la, r.aia);
            }
        }
        Command::Verify {
            suite,
            seed,
            quick,
            out,
        } => {
            let verdicts = verify(suite, seed, quick)?;
            let passed = verdicts.iter().all(|v| v.passed);
            for v in &verdicts {
                eprintln!(
                    "{} {}: {}",
                    if v.passed { "PASS" } else { "FAIL" },
                    v.suite,
                    v.summary
                );
            }
            let json =
                serde_json::to_string_pretty(&json!({ "passed": passed, "suites": verdicts }))
                    .map_err(|e| Error::Serialize(e.to_string()))?;
            println!("{json}");
            if let Some(path) = out {
                write_text(&path, &json)?;
            }
            if !passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
