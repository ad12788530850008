//! Exit criteria of the library, one line per criterion.
//!
//! Run with `cargo test --release --test acceptance`; pass criterion numbers to run a subset.

mod support;

use std::time::Instant;

use proptest::strategy::Strategy;
use proptest::test_runner::{Config as RunnerConfig, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use splitting_tree::lifespan::{LifespanMeasure, MutationContext};
use splitting_tree::montecarlo::{
    compare, estimate, geometric_gof, kappa_empirical, sample_values, Estimate, RunOptions, Statistic,
    DEFAULT_Z_THRESHOLD, GOF_LEVEL,
};
use splitting_tree::mutation::{
    convolution_limit_check, kappa_fixed_point_residual, kappa_law, mixture_fixed_point_residual, mixture_mean_defect,
    MutationMoments,
};
use splitting_tree::scale::{self, ScaleGrid};
use splitting_tree::simulator::{
    replicate_rng, simulate_with_rng, AlleleRecord, Individual, PopulationSnapshot, SimulationOptions,
};
use splitting_tree::spectrum::{
    limit_j, pure_birth_size_fraction, size_fraction_limit, FamilySize, ModelGrids, SpectrumQuery,
};

const SEED: u64 = 42;
const REPLICATES: usize = 10_000;
const STEP: f64 = 1e-3;
/// Largest share of replicates that may be lost to the birth cap.
const MAX_TRUNCATED: f64 = 1e-3;

type Outcome = splitting_tree::Result<Vec<Check>>;

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

fn within(name: &str, value: f64, target: f64, tol: f64) -> Check {
    let err = (value - target).abs();
    check(
        name,
        err <= tol,
        format!("{value:.9} vs {target:.9}, |err| {err:.2e} <= {tol:.0e}"),
    )
}

fn within_rel(name: &str, value: f64, target: f64, tol: f64) -> Check {
    let err = ((value - target) / target).abs();
    check(
        name,
        err <= tol,
        format!("{value:.9} vs {target:.9}, rel err {err:.2e} <= {tol:.0e}"),
    )
}

fn z_check(name: &str, e: &Estimate, theory: f64) -> splitting_tree::Result<Check> {
    let report = compare(e, theory, DEFAULT_Z_THRESHOLD)?;
    Ok(check(
        name,
        report.pass,
        format!(
            "mean {:.5} ± {:.5} vs {theory:.5}, z {:+.2}",
            e.mean, e.standard_error, report.z_score
        ),
    ))
}

fn truncation_check(name: &str, e: &Estimate) -> Check {
    let share = e.excluded_fraction();
    check(
        name,
        share < MAX_TRUNCATED,
        format!("{} truncated replicates ({share:.2e})", e.excluded_truncated),
    )
}

/// Largest relative error of `grid` against `exact` over all nodes.
fn max_rel_error(values: &[f64], step: f64, exact: impl Fn(f64) -> f64) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let e = exact(k as f64 * step);
            ((v - e) / e).abs()
        })
        .fold(0.0, f64::max)
}

fn birth_death(p: f64) -> splitting_tree::Result<MutationContext> {
    MutationContext::new(LifespanMeasure::exponential(1.0, 2.0)?, p)
}

fn yule(b: f64, p: f64) -> splitting_tree::Result<MutationContext> {
    MutationContext::new(LifespanMeasure::pure_birth(b)?, p)
}

fn run() -> RunOptions {
    RunOptions::new(REPLICATES, SEED)
}

fn scale_oracle() -> Outcome {
    let bd = LifespanMeasure::exponential(1.0, 2.0)?;
    let grid = ScaleGrid::solve(&bd, 10.0, STEP)?;
    let w = max_rel_error(grid.values(), STEP, |t| 2.0 * t.exp() - 1.0);
    let wp = max_rel_error(grid.derivatives(), STEP, |t| 2.0 * t.exp());
    let yule = ScaleGrid::solve(&LifespanMeasure::pure_birth(1.0)?, 10.0, STEP)?;
    let yw = max_rel_error(yule.values(), STEP, f64::exp);
    let ywp = max_rel_error(yule.derivatives(), STEP, f64::exp);
    Ok(vec![
        check("W = 2e^t - 1 on [0,10]", w <= 1e-5, format!("max rel err {w:.2e}")),
        check("W' = 2e^t on [0,10]", wp <= 1e-5, format!("max rel err {wp:.2e}")),
        check("pure birth W = e^t", yw <= 1e-5, format!("max rel err {yw:.2e}")),
        check("pure birth W' = e^t", ywp <= 1e-5, format!("max rel err {ywp:.2e}")),
    ])
}

fn clonal_closed_forms() -> Outcome {
    let quarter = ScaleGrid::clonal(&birth_death(0.25)?, 10.0, STEP)?;
    let half = ScaleGrid::clonal(&birth_death(0.5)?, 10.0, STEP)?;
    let q = max_rel_error(quarter.values(), STEP, |x| 3.0 * (0.5 * x).exp() - 2.0);
    let h = max_rel_error(half.values(), STEP, |x| 1.0 + x);
    Ok(vec![
        check("p=0.25: W_c = 3e^{x/2} - 2", q <= 1e-5, format!("max rel err {q:.2e}")),
        check("p=0.5: W_c = 1 + x", h <= 1e-5, format!("max rel err {h:.2e}")),
    ])
}

fn growth_constants() -> Outcome {
    let bd = LifespanMeasure::exponential(1.0, 2.0)?;
    let sup = ScaleGrid::solve(&bd, 20.0, STEP)?;
    let critical = ScaleGrid::clonal(&birth_death(0.5)?, 10.0, STEP)?;
    let sub_measure = LifespanMeasure::exponential(1.0, 0.5)?;
    let sub = ScaleGrid::solve(&sub_measure, 20.0, STEP)?;
    let sub_constants = scale::growth_constants(&sub_measure)?;
    let eta_tilde = sub_constants.eta_tilde.unwrap_or(f64::NAN);
    let wp_limit = (-eta_tilde * 20.0).exp() * sub.w_prime(20.0)?;
    Ok(vec![
        within(
            "supercritical e^{-t} W(t) 0.5 at t=20",
            (-20f64).exp() * sup.w(20.0)? * 0.5,
            1.0,
            1e-3,
        ),
        within("critical clonal W_c'(10)", critical.w_prime(10.0)?, 1.0, 1e-4),
        within("subcritical W(20)", sub.w(20.0)?, 2.0, 1e-3),
        within("subcritical root", eta_tilde, -0.5, 1e-9),
        within(
            "subcritical e^{10} W'(20) / 0.5",
            (10f64).exp() * sub.w_prime(20.0)? / 0.5,
            1.0,
            1e-2,
        ),
        within(
            "subcritical W' constant",
            wp_limit / sub_constants.wprime_growth_constant.unwrap_or(f64::NAN),
            1.0,
            1e-2,
        ),
    ])
}

fn marginals() -> Outcome {
    let ctx = birth_death(0.25)?;
    let e = std::f64::consts::E;
    let w1 = 2.0 * e - 1.0;
    let extinct = 1.0 - 2.0 * e / (2.0 * w1);
    let population = estimate(&ctx, 1.0, Statistic::Population, &run())?;
    let extinction = estimate(&ctx, 1.0, Statistic::Extinction, &run())?;
    let samples: Vec<u64> = sample_values(&ctx, 1.0, Statistic::Population, &run())?
        .into_iter()
        .map(|x| x as u64)
        .collect();
    let gof = geometric_gof(&samples, 1.0 / w1, extinct)?;
    Ok(vec![
        z_check("mean population at t=1 vs e", &population, e)?,
        within("extinction probability closed form", extinct, 0.38730, 5e-6),
        z_check("extinction frequency by t=1", &extinction, extinct)?,
        check(
            "chi-square against the geometric law",
            gof.p_value > GOF_LEVEL,
            format!(
                "chi2 {:.2} on {} dof, p {:.4} > {GOF_LEVEL}",
                gof.chi_square, gof.degrees_of_freedom, gof.p_value
            ),
        ),
        truncation_check("population truncation", &population),
    ])
}

/// Six alleles A..F carried by 2, 1, 3, 2, 1, 1 individuals at time 8, A and C born before 3.
fn six_allele_snapshot() -> splitting_tree::Result<PopulationSnapshot> {
    let origins = [0.0, 1.0, 5.0, 2.0, 4.5, 6.0, 7.0];
    let alleles = origins
        .iter()
        .enumerate()
        .map(|(k, &origin_time)| AlleleRecord {
            id: k as u64,
            origin_time,
            allele_type: u32::from(k != 0),
            parent_allele: (k != 0).then_some(0),
        })
        .collect();
    let mut alive = Vec::new();
    for (allele, n) in [(1u64, 2), (2, 1), (3, 3), (4, 2), (5, 1), (6, 1)] {
        for _ in 0..n {
            alive.push(Individual {
                id: alive.len() as u64 + 1,
                parent: Some(0),
                birth_time: origins[allele as usize],
                death_time: 10.0,
                allele,
            });
        }
    }
    PopulationSnapshot::from_parts(8.0, alive, alleles, 30)
}

fn expected_spectrum() -> Outcome {
    let ctx = birth_death(0.25)?;
    let grids = ModelGrids::solve(&ctx, 2.0, STEP)?;
    let mut checks = Vec::new();
    for i in 1..=3 {
        let theory = grids.expected_spectrum(&SpectrumQuery::new(i, 1.0, 2.0)?)?;
        let e = estimate(&ctx, 2.0, Statistic::Spectrum { size: i, age: 1.0 }, &run())?;
        checks.push(z_check(&format!("M_2^{{{i},1}}"), &e, theory)?);
        if i == 1 {
            checks.push(truncation_check("spectrum truncation", &e));
        }
    }
    let fixture = six_allele_snapshot()?;
    let all = fixture.spectrum(8.0)?.counts;
    let young = fixture.spectrum(5.0)?.counts;
    checks.push(check("six-allele spectrum, all ages", all == [3, 2, 1], format!("{all:?}")));
    checks.push(check(
        "six-allele spectrum, age <= 5",
        young == [3, 1],
        format!("{young:?}"),
    ));
    Ok(checks)
}

fn spectrum_limits() -> Outcome {
    let tol = 1e-8;
    let ctx = yule(1.0, 0.3)?;
    let clonal = ScaleGrid::clonal(&ctx, 25.0, STEP)?;
    let j = limit_j(&clonal, 1.0, FamilySize::All, f64::INFINITY, tol)?;
    let j1 = limit_j(&clonal, 1.0, FamilySize::Exactly(1), f64::INFINITY, tol)?;
    let fraction = size_fraction_limit(&clonal, 1.0, 1, tol)?;
    let closed = pure_birth_size_fraction(0.3, 1)?;
    let e = estimate(&ctx, 8.0, Statistic::SizeFraction(1), &run())?;
    Ok(vec![
        within("J", j, 0.7, 1e-6),
        within("J^{1,inf}", j1, 0.7 / 1.7, 1e-6),
        within("size-one fraction limit", fraction, 1.0 / 1.7, 1e-6),
        within("size-one fraction closed form", closed, 1.0 / 1.7, 1e-12),
        z_check("Monte Carlo M_8^{1,8}/M_8", &e, 1.0 / 1.7)?,
    ])
}

fn mutation_moments() -> Outcome {
    let pure = MutationMoments::solve(&yule(1.0, 0.3)?, 2.0, STEP)?;
    let ctx = birth_death(0.25)?;
    let moments = MutationMoments::solve(&ctx, 2.0, STEP)?;
    let carriers = estimate(&ctx, 2.0, Statistic::Carriers(1), &run())?;
    let alleles = estimate(&ctx, 2.0, Statistic::Alleles(1), &run())?;
    let options = SimulationOptions::default();
    let mut balanced = 0;
    for k in 0..REPLICATES as u64 {
        let s = simulate_with_rng(&ctx, 2.0, &options, &mut replicate_rng(SEED, k))?;
        if s.type_counts().carriers.iter().sum::<u64>() == s.population() as u64 {
            balanced += 1;
        }
    }
    Ok(vec![
        within_rel(
            "pure birth E[K_1(2)]",
            pure.expected_k(1, 2.0)?,
            0.6 * 1.4f64.exp(),
            1e-4,
        ),
        within_rel(
            "pure birth E[K_2(2)]",
            pure.expected_k(2, 2.0)?,
            0.18 * 1.4f64.exp(),
            1e-4,
        ),
        z_check("Monte Carlo K_1(2)", &carriers, moments.expected_k(1, 2.0)?)?,
        z_check("Monte Carlo L_1(2)", &alleles, moments.expected_l(1, 2.0)?)?,
        truncation_check("type-1 truncation", &carriers),
        check(
            "sum of K_i equals the population",
            balanced == REPLICATES,
            format!("{balanced} of {REPLICATES} replicates"),
        ),
    ])
}

fn convolution_limits() -> Outcome {
    let mut checks = Vec::new();
    let cases = [
        ("pure birth", yule(1.0, 0.3)?, 1e-4, false),
        ("birth-death", birth_death(0.25)?, 0.02, true),
    ];
    for (label, ctx, tol, doubling) in cases {
        let clonal = ScaleGrid::clonal(&ctx, 30.0, STEP)?;
        let constants = scale::growth_constants(&ctx.clonal_measure())?;
        let limit = constants.wprime_growth_constant.unwrap_or(f64::NAN);
        let f = clonal.derivatives();
        for i in 1..=3 {
            let dev30 = convolution_limit_check(f, STEP, i + 1, -constants.eta, limit, 30.0)?;
            checks.push(check(
                format!("{label} i={i} at t=30"),
                dev30 <= tol,
                format!("|ratio - 1| = {dev30:.2e} <= {tol:.0e}"),
            ));
            if doubling {
                let dev15 = convolution_limit_check(&f[..=15_000], STEP, i + 1, -constants.eta, limit, 15.0)?;
                let pass = dev30 <= dev15.max(1e-4);
                checks.push(check(
                    format!("{label} i={i} monotone from t=15"),
                    pass,
                    format!("{dev15:.2e} -> {dev30:.2e} (floor 1e-4)"),
                ));
            }
        }
    }
    Ok(checks)
}

fn kappa() -> Outcome {
    let ctx = birth_death(0.25)?;
    let law = kappa_law(&ctx, 1)?;
    let grid: Vec<f64> = (0..=40).map(|k| 1e-2 * 1e4f64.powf(k as f64 / 40.0)).collect();
    let mut residual = 0.0f64;
    let mut control = 0.0f64;
    let weight = 1.0 - law.atom_prob;
    let perturbed = 1.5 * law.theta;
    for &a in &grid {
        residual = residual.max(kappa_fixed_point_residual(&ctx, 1, a)?);
        control = control.max(mixture_fixed_point_residual(&ctx, weight, perturbed, a)?);
    }
    let defect = mixture_mean_defect(&law, weight, perturbed);
    let early = kappa_empirical(&ctx, 1, 8.0, &run())?;
    let late = kappa_empirical(&ctx, 1, 12.0, &run())?;
    let (atom8, atom12) = (early.atom_freq.mean, late.atom_freq.mean);
    let (mean8, mean12) = (early.conditional_mean.mean, late.conditional_mean.mean);
    Ok(vec![
        within("atom probability", law.atom_prob, 2.0 / 3.0, 1e-12),
        within("conditional mean", law.conditional_mean, 1.5, 1e-12),
        check(
            "fixed-point residual on [1e-2, 1e2]",
            residual <= 1e-8,
            format!("max {residual:.2e} <= 1e-8"),
        ),
        check(
            "perturbed-theta residual",
            control >= 1e-4,
            format!("max {control:.2e} >= 1e-4 at theta x1.5 (mean defect {defect:+.3})"),
        ),
        within("atom frequency at t=12", atom12, 2.0 / 3.0, 0.05),
        within_rel("conditional mean at t=12", mean12, 1.5, 0.1),
        check(
            "atom frequency approaches from t=8",
            (atom12 - 2.0 / 3.0).abs() <= (atom8 - 2.0 / 3.0).abs(),
            format!("{atom8:.4} -> {atom12:.4}"),
        ),
        check(
            "conditional mean approaches from t=8",
            (mean12 - 1.5).abs() <= (mean8 - 1.5).abs(),
            format!("{mean8:.4} -> {mean12:.4}"),
        ),
        truncation_check("kappa truncation", &late.atom_freq),
    ])
}

fn properties() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        RunnerConfig {
            cases: support::CASES,
            failure_persistence: None,
            ..RunnerConfig::default()
        },
        TestRng::from_seed(RngAlgorithm::ChaCha, &support::MASTER_SEED),
    );
    let strategy = (support::config_strategy(), support::samples_strategy());
    let result = runner.run(&strategy, |(cfg, (samples, theory))| {
        support::all_invariants(&cfg, &samples, theory).map_err(TestCaseError::fail)
    });
    let detail = match &result {
        Ok(()) => format!("{} random configurations", support::CASES),
        Err(e) => e.to_string(),
    };
    let families = ["exponential", "pure_birth", "gamma", "uniform"];
    let mut sampler = TestRunner::new_with_rng(
        RunnerConfig::default(),
        TestRng::from_seed(RngAlgorithm::ChaCha, &support::MASTER_SEED),
    );
    let mut seen = [false; 4];
    for _ in 0..support::CASES {
        let m = support::measure_strategy()
            .new_tree(&mut sampler)
            .map(|t| proptest::strategy::ValueTree::current(&t));
        if let Ok(m) = m {
            let name = m.to_json()["family"].as_str().unwrap_or("").to_string();
            if let Some(k) = families.iter().position(|f| *f == name) {
                seen[k] = true;
            }
        }
    }
    Ok(vec![
        check("invariants on random configurations", result.is_ok(), detail),
        check("all four families drawn", seen.iter().all(|&s| s), format!("{seen:?}")),
    ])
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "scale-function oracle", scale_oracle),
    (2, "clonal closed forms", clonal_closed_forms),
    (3, "growth constants", growth_constants),
    (4, "population marginals", marginals),
    (5, "expected spectrum", expected_spectrum),
    (6, "spectrum limits", spectrum_limits),
    (7, "mutation moments", mutation_moments),
    (8, "iterated convolution limits", convolution_limits),
    (9, "kappa limit law", kappa),
    (10, "property suite", properties),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, f) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, lines) = match f() {
            Ok(checks) => (
                checks.iter().all(|c| c.pass),
                checks
                    .iter()
                    .map(|c| format!("    [{}] {}: {}", if c.pass { "ok" } else { "FAIL" }, c.name, c.detail))
                    .collect::<Vec<_>>(),
            ),
            Err(e) => (false, vec![format!("    [FAIL] error: {e}")]),
        };
        println!(
            "criterion {id:>2} {:<28} {} ({:.1} s)",
            name,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        for line in lines {
            println!("{line}");
        }
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
