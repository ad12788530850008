//! Randomized model configurations and the invariants every one of them must satisfy.

#![allow(dead_code)]

use proptest::prelude::*;
use splitting_tree::lifespan::{LifespanFamily, LifespanMeasure, MutationContext};
use splitting_tree::montecarlo::{compare, two_sample_z, Estimate};
use splitting_tree::mutation::MutationMoments;
use splitting_tree::scale::{self, Regime};
use splitting_tree::simulator::{replicate_rng, simulate, simulate_with_rng, SimulationOptions};
use splitting_tree::spectrum::{ModelGrids, SpectrumQuery};

/// Master seed of the randomized suites.
pub const MASTER_SEED: [u8; 32] = *b"splitting-tree-properties-seed42";
pub const CASES: u32 = 200;

pub const STEP: f64 = 1e-3;
pub const HORIZON: f64 = 1.5;

#[derive(Debug, Clone, Copy)]
pub struct Config {
    pub measure: LifespanMeasure,
    pub mutation_prob: f64,
    pub seed: u64,
}

pub fn measure_strategy() -> impl Strategy<Value = LifespanMeasure> {
    prop_oneof![
        (0.5..2.0f64, 0.5..2.5f64).prop_map(|(d, b)| LifespanMeasure::exponential(d, b).unwrap()),
        (0.3..1.5f64).prop_map(|b| LifespanMeasure::pure_birth(b).unwrap()),
        (1.5..4.0f64, 0.5..3.0f64, 0.5..2.0f64).prop_map(|(k, r, b)| LifespanMeasure::gamma(k, r, b).unwrap()),
        (0.5..3.0f64, 0.3..2.0f64).prop_map(|(c, b)| LifespanMeasure::uniform(c, b).unwrap()),
    ]
}

pub fn config_strategy() -> impl Strategy<Value = Config> {
    (measure_strategy(), 0.05..0.5f64, any::<u64>()).prop_map(|(measure, mutation_prob, seed)| Config {
        measure,
        mutation_prob,
        seed,
    })
}

fn ensure(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn lib<T>(r: splitting_tree::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// ψ in closed form agrees with quadrature, and ψ(0) = 0.
pub fn psi_consistency(m: &LifespanMeasure) -> Result<(), String> {
    ensure(lib(m.psi(0.0))?.value.abs() < 1e-12, || format!("{m}: ψ(0) ≠ 0"))?;
    for lambda in [0.1, 0.7, 2.0] {
        let exact = lib(m.psi(lambda))?;
        let quad = lib(m.psi_by_quadrature(lambda))?;
        ensure(
            (exact.value - quad.value).abs() < 1e-8 * (1.0 + exact.value.abs()),
            || format!("{m}: ψ({lambda}) {} vs {}", exact.value, quad.value),
        )?;
        ensure(
            (exact.derivative - quad.derivative).abs() < 1e-7 * (1.0 + exact.derivative.abs()),
            || format!("{m}: ψ'({lambda}) {} vs {}", exact.derivative, quad.derivative),
        )?;
    }
    Ok(())
}

/// W starts at 1 and is increasing, W' = W(0)·b at 0, and the geometric marginals are laws.
pub fn scale_monotone(m: &LifespanMeasure) -> Result<(), String> {
    let grids = lib(scale::ScaleGrid::solve(m, HORIZON, STEP))?;
    let w = grids.values();
    ensure(w[0] == 1.0, || format!("{m}: W(0) = {}", w[0]))?;
    ensure((grids.derivatives()[0] - m.birth_rate()).abs() < 1e-12, || {
        format!("{m}: W'(0) ≠ b")
    })?;
    ensure(w.windows(2).all(|p| p[1] >= p[0]), || format!("{m}: W not increasing"))?;
    ensure(grids.derivatives().iter().all(|&d| d >= 0.0), || {
        format!("{m}: W' negative")
    })?;
    for t in [0.3, 1.0, HORIZON] {
        let law = lib(grids.marginal(t))?;
        let mass: f64 = law.p_zero + (1..4000).map(|n| law.pmf(n)).sum::<f64>();
        ensure((mass - 1.0).abs() < 1e-9, || {
            format!("{m}: marginal at {t} has mass {mass}")
        })?;
        let ext = law.p_zero;
        let next = lib(grids.marginal((t + 0.2).min(HORIZON)))?.p_zero;
        ensure(next >= ext - 1e-12, || {
            format!("{m}: extinction probability decreases after {t}")
        })?;
    }
    let regime = scale::regime(m);
    if regime != Regime::Supercritical {
        ensure(lib(scale::extinction_probability(m))? == 1.0, || {
            format!("{m}: {regime} tree with extinction probability below one")
        })?;
    }
    Ok(())
}

/// Mean carriers over all types equal the mean population, mean alleles over all types equal
/// the mean allele count, and the spectrum sums to the allele count.
pub fn conservation(cfg: &Config) -> Result<(), String> {
    let ctx = lib(MutationContext::new(cfg.measure, cfg.mutation_prob))?;
    let grids = lib(ModelGrids::solve(&ctx, HORIZON, STEP))?;
    let moments = lib(MutationMoments::new(&ctx, grids.clonal().clone()))?;
    let t = HORIZON;
    let mean = lib(grids.full().w_prime(t))? / cfg.measure.birth_rate();
    let alleles = lib(grids.expected_allele_count(t))?;
    let (mut carriers, mut typed) = (0.0, 0.0);
    for i in 0..60 {
        let k = lib(moments.expected_k(i, t))?;
        carriers += k;
        typed += lib(moments.expected_l(i, t))?;
        if i > 2 && k < 1e-14 * carriers {
            break;
        }
    }
    ensure((carriers - mean).abs() < 1e-5 * mean, || {
        format!("{cfg:?}: Σ E[K_i] = {carriers}, E[Ξ] = {mean}")
    })?;
    ensure((typed - alleles).abs() < 1e-5 * alleles, || {
        format!("{cfg:?}: Σ E[L_i] = {typed}, E[M] = {alleles}")
    })?;

    let mut spectrum = 0.0;
    for i in 1..=5000u32 {
        let full = lib(grids.expected_spectrum(&lib(SpectrumQuery::new(i, t, t))?))?;
        spectrum += full;
        if i <= 20 {
            let mut last = 0.0;
            for a in [0.25, 0.75, t] {
                let v = lib(grids.expected_spectrum(&lib(SpectrumQuery::new(i, a, t))?))?;
                ensure(v >= last - 1e-12, || format!("{cfg:?}: E[M^{{{i},a}}] decreases in a"))?;
                last = v;
            }
        }
        if full < 1e-12 * spectrum {
            break;
        }
    }
    ensure((spectrum - alleles).abs() < 1e-5 * alleles, || {
        format!("{cfg:?}: Σ_i E[M^i] = {spectrum}, E[M] = {alleles}")
    })?;
    Ok(())
}

/// Simulation is a function of the seed, and every snapshot balances its books.
pub fn simulation_bookkeeping(cfg: &Config) -> Result<(), String> {
    let ctx = lib(MutationContext::new(cfg.measure, cfg.mutation_prob))?;
    let horizon = 3.0;
    let cap = 200_000;
    let a = lib(simulate(&ctx, horizon, cfg.seed, cap))?;
    let b = lib(simulate(&ctx, horizon, cfg.seed, cap))?;
    ensure(a == b, || format!("{cfg:?}: same seed, different snapshots"))?;
    if a.truncated {
        return Ok(());
    }
    let counts = a.type_counts();
    ensure(counts.carriers.iter().sum::<u64>() == a.population() as u64, || {
        format!("{cfg:?}: Σ K_i ≠ Ξ")
    })?;
    let spectrum = lib(a.spectrum(horizon))?;
    ensure(spectrum.total_carriers() == a.population() as u64, || {
        format!("{cfg:?}: spectrum carriers ≠ Ξ")
    })?;
    ensure(spectrum.total_alleles() == counts.alleles.iter().sum::<u64>(), || {
        format!("{cfg:?}: Σ L_i ≠ M")
    })?;
    ensure(a.births_total >= a.population() as u64, || {
        format!("{cfg:?}: fewer births than living")
    })?;
    for ind in &a.alive {
        ensure(ind.birth_time <= horizon && ind.death_time > horizon, || {
            format!("{cfg:?}: {ind:?} not alive at {horizon}")
        })?;
        let allele = &a.alleles[ind.allele as usize];
        ensure(allele.origin_time <= ind.birth_time, || {
            format!("{cfg:?}: allele younger than its carrier")
        })?;
        ensure(a.mutation_depth(allele.id) == allele.allele_type, || {
            format!("{cfg:?}: type ≠ depth")
        })?;
    }
    if cfg.measure.family() == LifespanFamily::PureBirth {
        ensure(a.population() as u64 == a.births_total, || {
            format!("{cfg:?}: a pure-birth individual died")
        })?;
    }
    let ceiling = cfg.seed as u32 % 3;
    let options = SimulationOptions {
        type_ceiling: Some(ceiling),
        ..SimulationOptions::with_cap(cap)
    };
    let capped_run = |seed| {
        let mut rng = replicate_rng(seed, 0);
        simulate_with_rng(&ctx, horizon, &options, &mut rng)
    };
    let capped = lib(capped_run(cfg.seed))?;
    ensure(capped == lib(capped_run(cfg.seed))?, || {
        format!("{cfg:?}: capped run not deterministic")
    })?;
    if !capped.truncated {
        ensure(
            capped
                .alive
                .iter()
                .all(|ind| capped.alleles[ind.allele as usize].allele_type <= ceiling),
            || format!("{cfg:?}: carrier above the type ceiling {ceiling}"),
        )?;
        ensure(capped.type_ceiling == Some(ceiling), || {
            format!("{cfg:?}: ceiling not recorded")
        })?;
    }
    Ok(())
}

/// z-scores are signed standardized differences and two-sample z is antisymmetric.
pub fn z_arithmetic(samples: &[f64], theory: f64) -> Result<(), String> {
    let e = lib(Estimate::from_samples("x", samples))?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    ensure((e.mean - mean).abs() <= 1e-12 * (1.0 + mean.abs()), || "mean".into())?;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    ensure(
        (e.standard_error - (var / n).sqrt()).abs() <= 1e-12 * (1.0 + e.standard_error),
        || "standard error".into(),
    )?;
    if e.standard_error > 0.0 {
        let report = lib(compare(&e, theory, 3.0))?;
        let z = (mean - theory) / e.standard_error;
        ensure((report.z_score - z).abs() <= 1e-9 * (1.0 + z.abs()), || {
            format!("z {} vs {z}", report.z_score)
        })?;
        ensure(report.pass == (z.abs() <= 3.0), || "pass flag".into())?;
        let shifted: Vec<f64> = samples.iter().map(|x| x + 1.0).collect();
        let f = lib(Estimate::from_samples("y", &shifted))?;
        ensure((two_sample_z(&e, &f) + two_sample_z(&f, &e)).abs() < 1e-12, || {
            "two-sample z not antisymmetric".into()
        })?;
    }
    Ok(())
}

pub fn samples_strategy() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (prop::collection::vec(-50.0..50.0f64, 2..60), -50.0..50.0f64)
}

/// Every invariant for one configuration.
pub fn all_invariants(cfg: &Config, samples: &[f64], theory: f64) -> Result<(), String> {
    psi_consistency(&cfg.measure)?;
    scale_monotone(&cfg.measure)?;
    conservation(cfg)?;
    simulation_bookkeeping(cfg)?;
    z_arithmetic(samples, theory)
}
