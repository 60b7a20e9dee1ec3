//! Evaluates the sample-based loss by Monte Carlo and compares it with the
//! distribution-based upper bound and the adaptive-margin loss on a small
//! three-class problem.

use amgc::loss::{
    amarx_loss, db_loss, draw_pseudo_samples, sb_estimate, ClassBank, ClassifierParams, LossScope,
};
use amgc::stats::{ClassStats, FeatureAdapter};
use nalgebra::{DMatrix, DVector};

fn main() -> amgc::Result<()> {
    let weights = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
    let params = ClassifierParams::new(weights, DVector::zeros(3), 2)?;
    let adapter = FeatureAdapter::identity(2);
    let mut bank = ClassBank::new();
    let means = [[2.0, 0.0], [0.0, 2.0], [-1.5, -1.5]];
    for (label, m) in means.iter().enumerate() {
        let cov = DMatrix::from_row_slice(2, 2, &[0.6, 0.1, 0.1, 0.4]);
        bank.insert_output(
            label,
            ClassStats::new(label, 100, DVector::from_row_slice(m), cov)?,
        );
    }
    let scope = LossScope::new(0..3, 0..3)?;

    let db = db_loss(&bank, &params, &adapter, &scope)?;
    println!("distribution-based loss  {:.5}", db.value);
    for m in [100, 10_000, 200_000] {
        let samples = draw_pseudo_samples(&bank, 0..3, m, 3)?;
        let (sb, se) = sb_estimate(&samples, &params, &adapter, &scope)?;
        println!("sample-based, M = {m:>6}   {sb:.5} +/- {se:.5}");
    }
    for lambda in [0.0, 0.4, 1.0, 2.0] {
        let am = amarx_loss(&bank, &params, &adapter, lambda)?;
        println!(
            "adaptive margin on old classes, lambda = {lambda:.1}   {:.5}",
            am.value
        );
    }
    println!(
        "d loss / d w_0 = {:?}",
        db.grad_weights.column(0).iter().collect::<Vec<_>>()
    );
    Ok(())
}
