//! Analytic gradients of the SFT, DPO and discriminator losses against
//! central finite differences on small random models.
//!
//! cargo run --release --example gradient_check

use trajforge::training::{gradient_check, LossKind};

fn main() -> trajforge::Result<()> {
    for kind in [LossKind::Sft, LossKind::Dpo, LossKind::Disc] {
        let r = gradient_check(kind, 20, 1e-4, 0)?;
        println!("{kind:?}: {} params over {} models, max relative error {:.2e}", r.params_checked, r.trials, r.max_rel_error);
    }
    Ok(())
}
