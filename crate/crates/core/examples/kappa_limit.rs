//! Limit law of the rescaled type-i population and a Monte Carlo probe of it.

use splitting_tree::lifespan::{LifespanMeasure, MutationContext};
use splitting_tree::montecarlo::{kappa_empirical, RunOptions};
use splitting_tree::mutation::{kappa_fixed_point_residual, kappa_law};

fn main() -> splitting_tree::Result<()> {
    let ctx = MutationContext::new(LifespanMeasure::exponential(1.0, 2.0)?, 0.25)?;
    let law = kappa_law(&ctx, 1)?;
    println!("{law:?}");
    for a in [0.01, 1.0, 100.0] {
        println!("residual at a={a}: {:.2e}", kappa_fixed_point_residual(&ctx, 1, a)?);
    }
    let probe = kappa_empirical(&ctx, 1, 8.0, &RunOptions::new(2000, 42))?;
    println!(
        "t=8: atom {:.4} (theory {:.4}), conditional mean {:.4} (theory {:.4})",
        probe.atom_freq.mean, law.atom_prob, probe.conditional_mean.mean, law.conditional_mean
    );
    Ok(())
}
