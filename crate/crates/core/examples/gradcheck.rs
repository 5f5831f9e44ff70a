//! Finite-difference check of the training objective's gradient on a tiny
//! random network, for both modes and with a deliberately broken gradient.
//!
//!     cargo run --release --example gradcheck

use tmemnn::cli::{gradient_check, GradcheckArgs};
use tmemnn::model::Mode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (mode, corrupt) in [
        (Mode::Point, false),
        (Mode::Variational, false),
        (Mode::Variational, true),
    ] {
        let args = GradcheckArgs {
            mode,
            corrupt,
            ..GradcheckArgs::default()
        };
        let out = gradient_check(&args)?;
        let r = &out.report;
        println!(
            "{:<11} corrupt={corrupt:<5} max rel error {:.2e} at {}[{}] over {} coordinates",
            mode.as_str(),
            r.max_rel_error,
            out.param,
            r.worst.1,
            r.coordinates
        );
    }
    Ok(())
}
