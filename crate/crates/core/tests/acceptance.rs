//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use amgc::dataio::{gen_synthetic, write_feature_file, SynthConfig};
use amgc::loss::{Variant, VariantSpec};
use amgc::trainer::{compute_metrics, run_ablation, run_scenario, AblationRow, ScenarioConfig};
use amgc::verify::{
    gradient_suite, jensen_bound_suite, margin_equivalence_suite, stats_oracle_suite,
    ve_monotonicity_suite, JensenConfig, GRADIENT_TOLERANCE, MARGIN_TOLERANCE, STREAMING_TOLERANCE,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(
    id: usize,
    name: &str,
    limit: Option<Duration>,
    f: impl FnOnce() -> amgc::Result<Outcome>,
) -> bool {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(o) => {
            let in_time = limit.is_none_or(|l| elapsed <= l);
            let mut detail = o.detail;
            if let Some(l) = limit {
                detail.push_str(&format!(
                    "; {:.1}s (limit {}s)",
                    elapsed.as_secs_f64(),
                    l.as_secs()
                ));
            }
            (o.passed && in_time, detail)
        }
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} [{id}] {name}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    passed
}

fn benchmark_config(variant: Variant) -> (SynthConfig, ScenarioConfig) {
    let synth = SynthConfig::drift_benchmark();
    let config = ScenarioConfig::benchmark(
        synth.tasks,
        synth.num_classes / synth.tasks,
        synth.dim,
        VariantSpec::new(variant),
    );
    (synth, config)
}

const SEEDS: [u64; 3] = [0, 1, 2];

/// Per seed: the benchmark generated from that seed, every variant trained
/// with that seed.
fn ablation_per_seed() -> amgc::Result<Vec<Vec<AblationRow>>> {
    let (synth, config) = benchmark_config(Variant::Amgc);
    SEEDS
        .iter()
        .map(|&seed| {
            let data = gen_synthetic(&synth, seed)?;
            run_ablation(&config, &data, &Variant::ALL, &[seed], true)
        })
        .collect()
}

fn aia(rows: &[AblationRow], v: Variant) -> f64 {
    rows.iter()
        .find(|r| r.variant == v)
        .map(|r| r.aia)
        .expect("variant present")
}

fn main() -> ExitCode {
    let mut all = true;

    all &= check(
        1,
        "sample loss bounded by distribution loss",
        Some(Duration::from_secs(120)),
        || {
            let v = jensen_bound_suite(&JensenConfig::default())?;
            Ok(Outcome {
                passed: v.violations == 0 && v.trials.len() == 200,
                detail: format!(
                    "{} instances, {} violations, worst slack {:.3e}",
                    v.trials.len(),
                    v.violations,
                    v.worst_slack
                ),
            })
        },
    );

    all &= check(
        2,
        "adaptive-margin identity",
        Some(Duration::from_secs(30)),
        || {
            let v = margin_equivalence_suite(1000, 0x6d61_7267)?;
            Ok(Outcome {
                passed: v.max_relative <= MARGIN_TOLERANCE,
                detail: format!(
                    "1000 instances, max relative discrepancy {:.3e} <= {MARGIN_TOLERANCE:.0e}",
                    v.max_relative
                ),
            })
        },
    );

    all &= check(
        3,
        "analytic gradients match central differences",
        Some(Duration::from_secs(120)),
        || {
            let v = gradient_suite(50, 4, 0x6772_6164)?;
            let per: Vec<String> = v
                .per_variant
                .iter()
                .map(|p| format!("{}={:.1e}", p.variant, p.max_relative))
                .collect();
            Ok(Outcome {
            passed: v.max_relative <= GRADIENT_TOLERANCE && v.masking_ok && v.per_variant.iter().all(|p| p.trials == 50),
            detail: format!(
                "50 instances x {} variants, max relative error {:.2e} <= {GRADIENT_TOLERANCE:.0e}, masking {} ({})",
                v.per_variant.len(),
                v.max_relative,
                if v.masking_ok { "exact" } else { "broken" },
                per.join(" ")
            ),
        })
        },
    );

    all &= check(4, "variance enlarging is monotone in lambda", None, || {
        let v = ve_monotonicity_suite(100, 0x7665)?;
        Ok(Outcome {
            passed: v.violations == 0,
            detail: format!(
                "100 instances x {} lambda values, {} violations",
                v.grid.len(),
                v.violations
            ),
        })
    });

    all &= check(5, "statistics oracles", None, || {
        let v = stats_oracle_suite(0x7374)?;
        Ok(Outcome {
            passed: v.streaming_relative <= STREAMING_TOLERANCE && v.pushforward_max_z <= 3.0,
            detail: format!(
                "streaming vs two-pass {:.2e} <= {STREAMING_TOLERANCE:.0e}; pushforward max |z| {:.2} <= 3 over {} samples",
                v.streaming_relative, v.pushforward_max_z, v.mc_samples
            ),
        })
    });

    let start = Instant::now();
    let ablation = ablation_per_seed();
    let ablation_time = start.elapsed();

    all &= check(6, "ablation ordering on the drift benchmark", None, || {
        let per_seed = ablation
            .as_ref()
            .map_err(|e| amgc::Error::Invariant(e.to_string()))?;
        let mut ordered = true;
        let mut parts = Vec::new();
        let mut gap = 0.0;
        for (seed, rows) in SEEDS.iter().zip(per_seed) {
            let (am, dg, dl, sl) = (
                aia(rows, Variant::Amgc),
                aia(rows, Variant::Dbgc),
                aia(rows, Variant::Dblc),
                aia(rows, Variant::Sblc),
            );
            ordered &= am >= dg && dg > dl && dl > sl;
            gap += am - dg;
            parts.push(format!("seed {seed}: {am:.2}/{dg:.2}/{dl:.2}/{sl:.2}"));
        }
        gap /= SEEDS.len() as f64;
        let in_time = ablation_time <= Duration::from_secs(300);
        Ok(Outcome {
            passed: ordered && gap >= 0.0 && in_time,
            detail: format!(
                "AIA amgc/dbgc/dblc/sblc {}; mean(amgc - dbgc) {gap:.2}; {:.1}s (limit 300s)",
                parts.join(", "),
                ablation_time.as_secs_f64()
            ),
        })
    });

    all &= check(7, "soft margin does not improve on dbgc", None, || {
        let per_seed = ablation
            .as_ref()
            .map_err(|e| amgc::Error::Invariant(e.to_string()))?;
        let n = per_seed.len() as f64;
        let sm = per_seed
            .iter()
            .map(|r| aia(r, Variant::DbgcSm))
            .sum::<f64>()
            / n;
        let dg = per_seed.iter().map(|r| aia(r, Variant::Dbgc)).sum::<f64>() / n;
        Ok(Outcome {
            passed: sm <= dg,
            detail: format!("mean AIA dbgc+sm {sm:.3} vs dbgc {dg:.3}"),
        })
    });

    all &= check(
        8,
        "metric arithmetic and lambda = 0 equivalence",
        None,
        || {
            let (la, aia) = compute_metrics(&[80.0, 70.0, 60.0])?;
            let (synth, mut amgc) = benchmark_config(Variant::Amgc);
            amgc.variant = amgc.variant.with_lambda(0.0);
            let (_, dbgc) = benchmark_config(Variant::Dbgc);
            let data = gen_synthetic(&synth, 0)?;
            let a = run_scenario(&amgc, &data)?;
            let b = run_scenario(&dbgc, &data)?;
            let identical = a.runs == b.runs
                && a.la.to_bits() == b.la.to_bits()
                && a.aia.to_bits() == b.aia.to_bits();
            Ok(Outcome {
                passed: la == 60.0 && aia == 70.0 && identical,
                detail: format!(
                    "[80,70,60] -> LA {la}, AIA {aia}; amgc(lambda=0) vs dbgc runs bitwise {}",
                    if identical { "identical" } else { "different" }
                ),
            })
        },
    );

    all &= check(
        9,
        "deterministic run output is byte-identical",
        None,
        || {
            let dir = std::env::temp_dir().join(format!("amgc-acceptance-{}", std::process::id()));
            std::fs::create_dir_all(&dir).map_err(|source| amgc::Error::Io {
                path: dir.clone(),
                source,
            })?;
            let data = dir.join("bench.efcf");
            let (synth, _) = benchmark_config(Variant::Amgc);
            write_feature_file(&gen_synthetic(&synth, 0)?, &data)?;
            let mut outputs = Vec::new();
            for name in ["a.json", "b.json"] {
                let out = dir.join(name);
                let status = Command::new(env!("CARGO_BIN_EXE_amgc"))
                    .args([
                        "run",
                        "--data",
                        data.to_str().unwrap(),
                        "--tasks",
                        "5",
                        "--variant",
                        "amgc",
                        "--lambda",
                        "0.4",
                        "--seed",
                        "0",
                        "--runs",
                        "3",
                        "--deterministic",
                        "--out",
                        out.to_str().unwrap(),
                    ])
                    .output()
                    .map_err(|source| amgc::Error::Io {
                        path: out.clone(),
                        source,
                    })?;
                if !status.status.success() {
                    return Ok(Outcome {
                        passed: false,
                        detail: format!("run failed: {}", String::from_utf8_lossy(&status.stderr)),
                    });
                }
                outputs.push(std::fs::read(&out).map_err(|source| amgc::Error::Io {
                    path: out.clone(),
                    source,
                })?);
            }
            std::fs::remove_dir_all(&dir).ok();
            Ok(Outcome {
                passed: !outputs[0].is_empty() && outputs[0] == outputs[1],
                detail: format!(
                    "two invocations, {} and {} bytes, identical: {}",
                    outputs[0].len(),
                    outputs[1].len(),
                    outputs[0] == outputs[1]
                ),
            })
        },
    );

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
