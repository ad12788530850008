//! Simulate one splitting tree with mutations and summarise the living population.

use splitting_tree::lifespan::{LifespanMeasure, MutationContext};
use splitting_tree::simulator::{simulate, DEFAULT_CAP};

fn main() -> splitting_tree::Result<()> {
    let ctx = MutationContext::new(LifespanMeasure::gamma(2.0, 1.0, 1.5)?, 0.2)?;
    let snapshot = simulate(&ctx, 6.0, 0, DEFAULT_CAP)?;
    println!("alive {} of {} born", snapshot.population(), snapshot.births_total);
    let spectrum = snapshot.spectrum(6.0)?;
    println!("alleles {}", spectrum.total_alleles());
    for (i, &m) in spectrum.counts.iter().enumerate().filter(|(_, &m)| m > 0) {
        println!("  {m} allele(s) with {} carriers", i + 1);
    }
    let types = snapshot.type_counts();
    for i in 0..types.carriers.len() {
        println!(
            "type {i}: {} carriers, {} alleles",
            types.carriers_of(i),
            types.alleles_of(i)
        );
    }
    Ok(())
}
