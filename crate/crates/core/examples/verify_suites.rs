//! Runs reduced-size versions of the certification suites and prints the
//! JSON verdicts.

use amgc::verify::{
    gradient_suite, jensen_bound_suite, margin_equivalence_suite, stats_oracle_suite,
    ve_monotonicity_suite, JensenConfig,
};

fn main() -> amgc::Result<()> {
    let jensen = JensenConfig {
        trials: 20,
        mc_samples: 50_000,
        ..JensenConfig::default()
    };
    let verdicts = [
        jensen_bound_suite(&jensen)?.verdict(),
        margin_equivalence_suite(200, 1)?.verdict(),
        ve_monotonicity_suite(20, 1)?.verdict(),
        gradient_suite(5, 3, 1)?.verdict(),
        stats_oracle_suite(1)?.verdict(),
    ];
    for v in &verdicts {
        println!("{} {}", if v.passed { "PASS" } else { "FAIL" }, v.summary);
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&verdicts).expect("verdicts serialize")
    );
    Ok(())
}
