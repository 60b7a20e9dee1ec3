//! Writes a synthetic dataset to an EFCF feature file, reads it back, and
//! prints its manifest.

use amgc::dataio::{gen_synthetic, read_feature_file, write_feature_file, SynthConfig};

fn main() -> amgc::Result<()> {
    let config = SynthConfig {
        num_classes: 4,
        dim: 3,
        train_per_class: 10,
        test_per_class: 5,
        mean_dispersion: 2.0,
        covariance_scale: 0.5,
        drift: 0.0,
        tasks: 1,
    };
    let data = gen_synthetic(&config, 0)?;
    let path = std::env::temp_dir().join("amgc_example.efcf");
    write_feature_file(&data, &path)?;
    let back = read_feature_file(&path)?;
    assert_eq!(back, data);
    println!(
        "{} records, d = {}, {} bytes",
        back.len(),
        back.dim(),
        back.to_bytes().len()
    );
    for (label, counts) in back.manifest() {
        println!("class {label}: {counts:?}");
    }

    let mut corrupt = back.to_bytes();
    corrupt.truncate(corrupt.len() - 3);
    match amgc::FeatureDataset::from_bytes(&corrupt) {
        Err(e) => println!("truncated file rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    std::fs::remove_file(&path).ok();
    Ok(())
}
