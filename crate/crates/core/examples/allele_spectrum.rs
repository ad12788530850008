//! Expected allelic frequency spectrum of a birth-death tree and its long-time limits.

use splitting_tree::lifespan::{LifespanMeasure, MutationContext};
use splitting_tree::scale::{self, ScaleGrid};
use splitting_tree::spectrum::{spectrum_limits, ModelGrids, SpectrumQuery, DEFAULT_TOLERANCE};

fn main() -> splitting_tree::Result<()> {
    let ctx = MutationContext::new(LifespanMeasure::exponential(1.0, 2.0)?, 0.25)?;
    let grids = ModelGrids::solve(&ctx, 4.0, 1e-3)?;
    println!("E[M_t] at t=4: {:.6}", grids.expected_allele_count(4.0)?);

    let eta = scale::malthusian(ctx.measure())?;
    let limit_grid = ScaleGrid::clonal(&ctx, 45.0, 1e-3)?;
    println!("{:>3} {:>12} {:>12} {:>12}", "i", "E[M^{i,4}]", "limit", "fraction");
    for i in 1..=6 {
        let expected = grids.expected_spectrum(&SpectrumQuery::new(i, 4.0, 4.0)?)?;
        let limits = spectrum_limits(&ctx, &limit_grid, i, f64::INFINITY, DEFAULT_TOLERANCE)?;
        println!(
            "{i:>3} {expected:>12.6} {:>12.6} {:>12.6}",
            limits.mean_limit, limits.fraction_limit
        );
    }
    println!("growth rate {eta}");
    Ok(())
}
