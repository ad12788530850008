//! Replicated simulations, z-score comparisons against the analytic engine, and the named
//! validation suites.
//!
//! Replicate `k` of a run seeded by `seed` uses stream `k` of the seeded generator, so results do
//! not depend on how rayon schedules the replicates; values are aggregated in replicate order.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::lifespan::{LifespanMeasure, MutationContext};
use crate::mutation::{kappa_law, MutationMoments};
use crate::scale::{self, Regime, ScaleGrid};
use crate::simulator::{replicate_rng, simulate_with_rng, PopulationSnapshot, SimulationOptions, DEFAULT_CAP};
use crate::spectrum::{ModelGrids, SpectrumQuery};

/// Default |z| threshold of [`compare`].
pub const DEFAULT_Z_THRESHOLD: f64 = 3.0;

/// p-value below which a goodness-of-fit check fails.
pub const GOF_LEVEL: f64 = 0.01;

/// Snapshot statistics that can be estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Statistic {
    /// `Ξ(t)`.
    Population,
    /// `M_t^{i,a}`.
    Spectrum { size: u32, age: f64 },
    /// `K_i(t)`.
    Carriers(u32),
    /// `L_i(t)`.
    Alleles(u32),
    /// `1{Ξ(t) = 0}`.
    Extinction,
    /// `t^{-i} e^{-η_c t} K_i(t)`.
    KappaProxy(u32),
    /// `M_t^{i,t} / M_t`, undefined when no allele is alive.
    SizeFraction(u32),
}

impl Statistic {
    pub fn name(&self) -> String {
        match self {
            Statistic::Population => "population".into(),
            Statistic::Spectrum { size, age } => format!("spectrum(i={size},a={age})"),
            Statistic::Carriers(i) => format!("carriers(i={i})"),
            Statistic::Alleles(i) => format!("alleles(i={i})"),
            Statistic::Extinction => "extinction".into(),
            Statistic::KappaProxy(i) => format!("kappa_proxy(i={i})"),
            Statistic::SizeFraction(i) => format!("size_fraction(i={i})"),
        }
    }

    /// Highest allele type the statistic depends on, if any.
    fn type_ceiling(&self) -> Option<u32> {
        match *self {
            Statistic::Carriers(i) | Statistic::Alleles(i) | Statistic::KappaProxy(i) => Some(i),
            _ => None,
        }
    }

    fn evaluate(&self, snapshot: &PopulationSnapshot, clonal_rate: f64) -> Result<Option<f64>> {
        let t = snapshot.time;
        Ok(match *self {
            Statistic::Population => Some(snapshot.population() as f64),
            Statistic::Spectrum { size, age } => Some(snapshot.spectrum(age)?.get(size as usize) as f64),
            Statistic::Carriers(i) => Some(snapshot.type_counts().carriers_of(i as usize) as f64),
            Statistic::Alleles(i) => Some(snapshot.type_counts().alleles_of(i as usize) as f64),
            Statistic::Extinction => Some(if snapshot.alive.is_empty() { 1.0 } else { 0.0 }),
            Statistic::KappaProxy(i) => {
                let k = snapshot.type_counts().carriers_of(i as usize) as f64;
                Some(k * (-clonal_rate * t).exp() / t.powi(i as i32))
            }
            Statistic::SizeFraction(i) => {
                let spectrum = snapshot.spectrum(t)?;
                let total = spectrum.total_alleles();
                (total > 0).then(|| spectrum.get(i as usize) as f64 / total as f64)
            }
        })
    }
}

/// Sample mean and standard error of a statistic over replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub statistic: String,
    pub n: usize,
    pub mean: f64,
    pub standard_error: f64,
    /// Replicates dropped because the birth cap was hit.
    pub excluded_truncated: usize,
    /// Replicates on which the statistic is undefined.
    pub excluded_undefined: usize,
}

impl Estimate {
    pub fn from_samples(statistic: impl Into<String>, samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::TooFewSamples { got: n, need: 2 });
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            statistic: statistic.into(),
            n,
            mean,
            standard_error: (var / n as f64).sqrt(),
            excluded_truncated: 0,
            excluded_undefined: 0,
        })
    }

    pub fn excluded_fraction(&self) -> f64 {
        let total = self.n + self.excluded_truncated + self.excluded_undefined;
        self.excluded_truncated as f64 / total.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub estimate: Estimate,
    pub theory: f64,
    pub z_score: f64,
    pub pass: bool,
}

/// z-score of `estimate` against `theory`; passes when `|z| <= threshold`.
pub fn compare(estimate: &Estimate, theory: f64, threshold: f64) -> Result<ComparisonReport> {
    let diff = estimate.mean - theory;
    let z_score = if estimate.standard_error > 0.0 {
        diff / estimate.standard_error
    } else if diff == 0.0 {
        0.0
    } else {
        return Err(Error::ZeroVariance {
            mean: estimate.mean,
            theory,
        });
    };
    Ok(ComparisonReport {
        estimate: estimate.clone(),
        theory,
        z_score,
        pass: z_score.abs() <= threshold,
    })
}

/// z-score of the difference of two independent estimates.
pub fn two_sample_z(a: &Estimate, b: &Estimate) -> f64 {
    let se = a.standard_error.hypot(b.standard_error);
    if se == 0.0 {
        if a.mean == b.mean {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a.mean - b.mean) / se
    }
}

/// Settings shared by every replicate of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub replicates: usize,
    pub seed: u64,
    pub cap: u64,
}

impl RunOptions {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            cap: DEFAULT_CAP,
        }
    }
}

/// Outcome of one replicate: `None` when the cap truncated the run.
fn run_replicates<T, F>(
    ctx: &MutationContext,
    horizon: f64,
    run: &RunOptions,
    type_ceiling: Option<u32>,
    f: F,
) -> Result<Vec<Option<T>>>
where
    T: Send,
    F: Fn(&PopulationSnapshot) -> Result<T> + Sync,
{
    if run.replicates < 2 {
        return Err(Error::config(
            "replicates",
            format!("need at least 2, got {}", run.replicates),
        ));
    }
    let options = SimulationOptions {
        cap: run.cap,
        type_ceiling,
    };
    (0..run.replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(run.seed, k);
            let snapshot = simulate_with_rng(ctx, horizon, &options, &mut rng)?;
            if snapshot.truncated {
                Ok(None)
            } else {
                f(&snapshot).map(Some)
            }
        })
        .collect()
}

fn clonal_rate(ctx: &MutationContext) -> Result<f64> {
    scale::malthusian(&ctx.clonal_measure())
}

/// Mean and standard error of `statistic` at `horizon` over `run.replicates` replicates.
pub fn estimate(ctx: &MutationContext, horizon: f64, statistic: Statistic, run: &RunOptions) -> Result<Estimate> {
    let rate = match statistic {
        Statistic::KappaProxy(_) => clonal_rate(ctx)?,
        _ => 0.0,
    };
    let outcomes = run_replicates(ctx, horizon, run, statistic.type_ceiling(), |s| {
        statistic.evaluate(s, rate)
    })?;
    let mut samples = Vec::with_capacity(outcomes.len());
    let (mut truncated, mut undefined) = (0, 0);
    for outcome in outcomes {
        match outcome {
            None => truncated += 1,
            Some(None) => undefined += 1,
            Some(Some(x)) => samples.push(x),
        }
    }
    let mut e = Estimate::from_samples(statistic.name(), &samples)?;
    e.excluded_truncated = truncated;
    e.excluded_undefined = undefined;
    Ok(e)
}

/// Raw values of `statistic` for each non-truncated replicate, in replicate order.
pub fn sample_values(ctx: &MutationContext, horizon: f64, statistic: Statistic, run: &RunOptions) -> Result<Vec<f64>> {
    let rate = match statistic {
        Statistic::KappaProxy(_) => clonal_rate(ctx)?,
        _ => 0.0,
    };
    let outcomes = run_replicates(ctx, horizon, run, statistic.type_ceiling(), |s| {
        statistic.evaluate(s, rate)
    })?;
    Ok(outcomes.into_iter().flatten().flatten().collect())
}

/// Pearson chi-square test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GofResult {
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Chi-square goodness of fit of `samples` to the law with an atom `p_zero` at zero and, given a
/// positive value, a geometric law on `{1, 2, ...}` with success probability `success`.
///
/// Consecutive values are pooled until each bin expects at least five observations; the last bin
/// is an upper tail.
pub fn geometric_gof(samples: &[u64], success: f64, p_zero: f64) -> Result<GofResult> {
    const MIN_SAMPLES: usize = 500;
    const MIN_EXPECTED: f64 = 5.0;
    if samples.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            need: MIN_SAMPLES,
        });
    }
    if !(success > 0.0 && success <= 1.0) || !(0.0..=1.0).contains(&p_zero) {
        return Err(Error::config("law", format!("success = {success}, p_zero = {p_zero}")));
    }
    let n = samples.len() as f64;
    let pmf = |k: u64| -> f64 {
        if k == 0 {
            p_zero
        } else {
            (1.0 - p_zero) * success * (1.0 - success).powi((k - 1) as i32)
        }
    };
    // tail(k) = P(X >= k)
    let tail = |k: u64| -> f64 {
        if k == 0 {
            1.0
        } else {
            (1.0 - p_zero) * (1.0 - success).powi((k - 1) as i32)
        }
    };
    let max = samples.iter().copied().max().unwrap_or(0);
    let mut observed = vec![0u64; max as usize + 1];
    for &x in samples {
        observed[x as usize] += 1;
    }
    let observed_from = |k: u64| -> u64 { observed.iter().skip(k as usize).sum() };

    // bins [start, next start); the last one is [start, ∞)
    let mut starts = vec![0u64];
    let mut expected = 0.0;
    let mut k = 0u64;
    loop {
        expected += n * pmf(k);
        k += 1;
        let rest = n * tail(k);
        if rest < MIN_EXPECTED {
            break;
        }
        if expected >= MIN_EXPECTED {
            starts.push(k);
            expected = 0.0;
        }
    }
    // fold a short final bin into the tail bin before it
    if starts.len() > 1 {
        let last = *starts.last().unwrap_or(&0);
        if n * tail(last) < MIN_EXPECTED {
            starts.pop();
        }
    }
    if starts.len() < 2 {
        return Err(Error::config(
            "samples",
            "fewer than two bins with five expected counts",
        ));
    }
    let mut chi_square = 0.0;
    for (j, &start) in starts.iter().enumerate() {
        let (exp, obs) = match starts.get(j + 1) {
            Some(&end) => (n * (tail(start) - tail(end)), observed_from(start) - observed_from(end)),
            None => (n * tail(start), observed_from(start)),
        };
        chi_square += (obs as f64 - exp).powi(2) / exp;
    }
    let degrees_of_freedom = starts.len() - 1;
    let dist = ChiSquared::new(degrees_of_freedom as f64).map_err(|e| Error::config("dof", e.to_string()))?;
    Ok(GofResult {
        chi_square,
        degrees_of_freedom,
        p_value: dist.sf(chi_square),
    })
}

/// Empirical summary of the rescaled type-`i` population at a probe time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaEstimate {
    pub order: u32,
    pub t_probe: f64,
    /// Frequency of the atom proxy: the clonal population is extinct at `t_probe`.
    pub atom_freq: Estimate,
    /// Mean of `t^{-i} e^{-η_c t} K_i(t)` over replicates whose clonal population is alive.
    pub conditional_mean: Estimate,
}

/// Finite-time estimate of the law of the almost-sure limit of `t^{-i} e^{-η_c t} K_i(t)`.
///
/// The limit vanishes exactly when the clonal population dies out, so the atom is proxied by
/// clonal extinction by `t_probe`; the exponential part by the rescaled counts on the complement.
pub fn kappa_empirical(ctx: &MutationContext, i: u32, t_probe: f64, run: &RunOptions) -> Result<KappaEstimate> {
    let clonal = ctx.clonal_measure();
    if scale::regime(&clonal) != Regime::Supercritical {
        return Err(Error::WrongRegime(format!(
            "the clonal process of {} is not supercritical",
            ctx.measure()
        )));
    }
    let rate = scale::malthusian(&clonal)?;
    let scale_factor = (-rate * t_probe).exp() / t_probe.powi(i as i32);
    let outcomes = run_replicates(ctx, t_probe, run, Some(i), |s| {
        let counts = s.type_counts();
        Ok((counts.carriers_of(0), counts.carriers_of(i as usize)))
    })?;
    let truncated = outcomes.iter().filter(|o| o.is_none()).count();
    let pairs: Vec<(u64, u64)> = outcomes.into_iter().flatten().collect();
    let atoms: Vec<f64> = pairs.iter().map(|&(k0, _)| if k0 == 0 { 1.0 } else { 0.0 }).collect();
    let positive: Vec<f64> = pairs
        .iter()
        .filter(|&&(k0, _)| k0 > 0)
        .map(|&(_, ki)| ki as f64 * scale_factor)
        .collect();
    let mut atom_freq = Estimate::from_samples(format!("kappa_atom(i={i})"), &atoms)?;
    atom_freq.excluded_truncated = truncated;
    let mut conditional_mean = Estimate::from_samples(format!("kappa_conditional_mean(i={i})"), &positive)?;
    conditional_mean.excluded_truncated = truncated;
    conditional_mean.excluded_undefined = pairs.len() - positive.len();
    Ok(KappaEstimate {
        order: i,
        t_probe,
        atom_freq,
        conditional_mean,
    })
}

/// One line of a validation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub theory: f64,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

impl CheckRow {
    pub fn from_comparison(check: impl Into<String>, report: &ComparisonReport) -> Self {
        Self {
            check: check.into(),
            theory: report.theory,
            estimate: report.estimate.mean,
            se: report.estimate.standard_error,
            z: report.z_score,
            pass: report.pass,
        }
    }

    /// A goodness-of-fit line: the estimate is the p-value, the theory column the level.
    pub fn from_gof(check: impl Into<String>, gof: &GofResult) -> Self {
        Self {
            check: check.into(),
            theory: GOF_LEVEL,
            estimate: gof.p_value,
            se: f64::NAN,
            z: f64::NAN,
            pass: gof.p_value > GOF_LEVEL,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub suite: String,
    pub rows: Vec<CheckRow>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Names accepted by [`run_suite`].
pub const SUITES: [&str; 3] = ["core", "spectrum", "kappa"];

/// Run the named validation suite with `run.replicates` replicates per check.
pub fn run_suite(name: &str, run: &RunOptions) -> Result<ValidationReport> {
    let rows = match name {
        "core" => core_suite(run)?,
        "spectrum" => spectrum_suite(run)?,
        "kappa" => kappa_suite(run)?,
        other => {
            return Err(Error::config(
                "suite",
                format!("unknown suite `{other}`, expected one of {}", SUITES.join(", ")),
            ))
        }
    };
    Ok(ValidationReport {
        suite: name.to_string(),
        rows,
    })
}

fn birth_death(p: f64) -> Result<MutationContext> {
    MutationContext::new(LifespanMeasure::exponential(1.0, 2.0)?, p)
}

fn z_row(check: &str, e: &Estimate, theory: f64) -> Result<CheckRow> {
    Ok(CheckRow::from_comparison(
        check,
        &compare(e, theory, DEFAULT_Z_THRESHOLD)?,
    ))
}

fn core_suite(run: &RunOptions) -> Result<Vec<CheckRow>> {
    let ctx = birth_death(0.25)?;
    let grid = ScaleGrid::solve(ctx.measure(), 2.0, 1e-3)?;
    let law = grid.marginal(1.0)?;
    let mut rows = Vec::new();

    let sizes = sample_values(&ctx, 1.0, Statistic::Population, run)?;
    let e = Estimate::from_samples("population", &sizes)?;
    rows.push(z_row("mean_population_t1", &e, law.mean)?);
    let dead: Vec<f64> = sizes.iter().map(|&x| if x == 0.0 { 1.0 } else { 0.0 }).collect();
    rows.push(z_row(
        "extinct_by_t1",
        &Estimate::from_samples("extinction", &dead)?,
        law.p_zero,
    )?);
    if sizes.len() >= 500 {
        let counts: Vec<u64> = sizes.iter().map(|&x| x as u64).collect();
        rows.push(CheckRow::from_gof(
            "population_law_t1",
            &geometric_gof(&counts, law.success, law.p_zero)?,
        ))
    }

    let clonal = ScaleGrid::clonal(&ctx, 2.0, 1e-3)?;
    let clonal_law = clonal.marginal(1.0)?;
    let k0: Vec<u64> = sample_values(&ctx, 1.0, Statistic::Carriers(0), run)?
        .into_iter()
        .map(|x| x as u64)
        .collect();
    if k0.len() >= 500 {
        rows.push(CheckRow::from_gof(
            "clonal_law_t1",
            &geometric_gof(&k0, clonal_law.success, clonal_law.p_zero)?,
        ));
    }

    let moments = MutationMoments::new(&ctx, clonal)?;
    let k1 = estimate(&ctx, 2.0, Statistic::Carriers(1), run)?;
    rows.push(z_row("mean_type1_carriers_t2", &k1, moments.expected_k(1, 2.0)?)?);
    let l1 = estimate(&ctx, 2.0, Statistic::Alleles(1), run)?;
    rows.push(z_row("mean_type1_alleles_t2", &l1, moments.expected_l(1, 2.0)?)?);
    Ok(rows)
}

fn spectrum_suite(run: &RunOptions) -> Result<Vec<CheckRow>> {
    let ctx = birth_death(0.25)?;
    let grids = ModelGrids::solve(&ctx, 2.0, 1e-3)?;
    let mut rows = Vec::new();
    for i in 1..=3 {
        let e = estimate(&ctx, 2.0, Statistic::Spectrum { size: i, age: 1.0 }, run)?;
        let theory = grids.expected_spectrum(&SpectrumQuery::new(i, 1.0, 2.0)?)?;
        rows.push(z_row(&format!("mean_spectrum_i{i}_a1_t2"), &e, theory)?);
    }
    let e = estimate(&ctx, 2.0, Statistic::Spectrum { size: 1, age: 2.0 }, run)?;
    let theory = grids.expected_spectrum(&SpectrumQuery::new(1, 2.0, 2.0)?)?;
    rows.push(z_row("mean_spectrum_i1_a2_t2", &e, theory)?);
    Ok(rows)
}

fn kappa_suite(run: &RunOptions) -> Result<Vec<CheckRow>> {
    let ctx = birth_death(0.25)?;
    let law = kappa_law(&ctx, 1)?;
    let probe = kappa_empirical(&ctx, 1, 12.0, run)?;
    let mut rows = vec![
        z_row("kappa1_atom_t12", &probe.atom_freq, law.atom_prob)?,
        z_row(
            "kappa1_conditional_mean_t12",
            &probe.conditional_mean,
            law.conditional_mean,
        )?,
    ];
    // finite-time bias of order 1/t: judged against a 10% band rather than the standard error
    if let Some(last) = rows.last_mut() {
        last.pass = (probe.conditional_mean.mean / law.conditional_mean - 1.0).abs() <= 0.1;
    }
    Ok(rows)
}
