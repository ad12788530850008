//! Solve the scale function for each lifespan family and print W, W' and the growth constants.

use splitting_tree::lifespan::LifespanMeasure;
use splitting_tree::scale::{self, ScaleGrid};

fn main() -> splitting_tree::Result<()> {
    let measures = [
        LifespanMeasure::exponential(1.0, 2.0)?,
        LifespanMeasure::pure_birth(1.0)?,
        LifespanMeasure::gamma(2.0, 2.0, 1.5)?,
        LifespanMeasure::uniform(2.0, 1.0)?,
    ];
    for measure in &measures {
        let grid = ScaleGrid::solve(measure, 5.0, 1e-3)?;
        let constants = scale::growth_constants(measure)?;
        println!("{measure} ({})", constants.regime);
        for t in [0.0, 1.0, 2.5, 5.0] {
            println!("  t={t:<4} W={:<12.6} W'={:.6}", grid.w(t)?, grid.w_prime(t)?);
        }
        println!(
            "  extinction probability {:.6}",
            scale::extinction_probability(measure)?
        );
        println!("  population at t=1: {:?}", grid.marginal(1.0)?);
    }
    Ok(())
}
