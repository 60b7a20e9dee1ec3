//! Runs every loss variant on the synthetic drift benchmark with shared
//! seeds and prints a seed-averaged LA/AIA table.
//!
//! ```text
//! cargo run --release --example ablation
//! ```

use std::time::Instant;

use amgc::dataio::{gen_synthetic, SynthConfig};
use amgc::loss::{Variant, VariantSpec};
use amgc::trainer::{run_ablation, ScenarioConfig};

fn main() -> amgc::Result<()> {
    let synth = SynthConfig::drift_benchmark();
    let dataset = gen_synthetic(&synth, 7)?;
    let config = ScenarioConfig::benchmark(
        synth.tasks,
        synth.num_classes / synth.tasks,
        synth.dim,
        VariantSpec::new(Variant::Amgc),
    );
    let start = Instant::now();
    let rows = run_ablation(&config, &dataset, &Variant::ALL, &[0, 1, 2], true)?;
    println!("{:<10} {:>8} {:>8}   per-seed AIA", "variant", "LA", "AIA");
    for r in &rows {
        let seeds: Vec<String> = r.per_seed.iter().map(|s| format!("{:.2}", s.2)).collect();
        println!(
            "{:<10} {:>8.2} {:>8.2}   {}",
            r.variant.name(),
            r.la,
            r.aia,
            seeds.join(" ")
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
