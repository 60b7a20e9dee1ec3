//! Streams class features through an accumulator in uneven batches, then
//! pushes the resulting Gaussian through an affine adapter, enlarges its
//! variance, and draws pseudo features from it.

use amgc::stats::{FeatureAdapter, Shrinkage, StatsAccumulator};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> amgc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<DVector<f64>> = (0..1000)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            DVector::from_vec(vec![2.0 + z, -1.0 + 0.5 * z + 0.3 * e])
        })
        .collect();

    let mut acc = StatsAccumulator::new(0, 2);
    for chunk in data.chunks(37) {
        acc.update(chunk)?;
    }
    let stats = acc.finalize(Shrinkage::default())?;
    println!("n = {}", stats.count());
    println!("mean = {:?}", stats.mean().as_slice());
    println!("cov =\n{}", stats.covariance());

    let adapter = FeatureAdapter::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]),
        DVector::from_vec(vec![0.1, -0.1]),
    )?;
    let adapted = stats.adapt(&adapter)?;
    println!("adapted mean = {:?}", adapted.mean().as_slice());
    println!("adapted cov =\n{}", adapted.covariance());

    let enlarged = adapted.variance_enlarge(0.4)?;
    println!(
        "diag after variance enlarging: {:?}",
        enlarged.diag().as_slice()
    );

    let pseudo = enlarged.sample_pseudo_features(5, 9)?;
    for x in &pseudo {
        println!("pseudo feature {:?}", x.as_slice());
    }
    Ok(())
}
