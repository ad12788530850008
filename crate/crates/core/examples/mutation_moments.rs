//! Mean carriers and alleles of each mutation type, with their asymptotic growth.

use splitting_tree::lifespan::{LifespanMeasure, MutationContext};
use splitting_tree::mutation::{k_asymptotics, MutationMoments};

fn main() -> splitting_tree::Result<()> {
    let ctx = MutationContext::new(LifespanMeasure::pure_birth(2.0)?, 0.3)?;
    let moments = MutationMoments::solve(&ctx, 6.0, 1e-3)?;
    for i in 0..4 {
        let asym = k_asymptotics(&ctx, i)?;
        for t in [2.0, 6.0] {
            let k = moments.expected_k(i, t)?;
            let approx = asym.leading_coefficient * t.powi(i as i32) * (asym.eta_p * t).exp();
            println!(
                "i={i} t={t}: E[K]={k:.5} E[L]={:.5} ratio to asymptote {:.4}",
                moments.expected_l(i, t)?,
                k / approx
            );
        }
    }
    Ok(())
}
