//! Shows that the variance-enlarged distribution-based loss equals a
//! softmax with an explicit per-class margin, and prints the margins.

use amgc::loss::{adaptive_margin, amarx_loss, margin_form_loss};
use amgc::verify::{random_instance, InstanceShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> amgc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inst = random_instance(
        &mut rng,
        InstanceShape {
            dim: 6,
            old: 4,
            new: 2,
            weight_scale: 0.5,
            cov_scale: 1.0,
            tracked_new: false,
            features_per_class: 0,
        },
    );
    for lambda in [0.0, 0.4, 1.0, 2.0] {
        let direct = amarx_loss(&inst.bank, &inst.params, &inst.adapter, lambda)?.value;
        let margin = margin_form_loss(&inst.bank, &inst.params, &inst.adapter, lambda)?;
        println!(
            "lambda {lambda:.1}: direct {direct:.12}  margin form {margin:.12}  diff {:.1e}",
            (direct - margin).abs()
        );
    }
    for k in inst.params.old_labels() {
        let stats = inst.bank.effective(k, &inst.adapter)?;
        let m = adaptive_margin(
            &inst.params.weights().column(k).into_owned(),
            &stats.diag(),
            0.4,
        )?;
        println!("class {k}: margin at lambda 0.4 = {m:.4}");
    }
    Ok(())
}
