//! Exact event-driven simulation of a splitting tree with neutral mutations.
//!
//! Individuals are processed in order of birth time. Each draws a lifespan from `Λ/b` and gives
//! birth at the points of a rate-`b` Poisson process on its life interval, truncated at the
//! horizon. A newborn is a mutant with probability `p`, in which case it carries a fresh allele
//! whose type is one more than its mother's; otherwise it is a clone.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifespan::MutationContext;
use crate::scale::{self, Regime, ScaleGrid};

/// Default bound on the number of individuals ever born in one run.
pub const DEFAULT_CAP: u64 = 10_000_000;

/// Default survival horizon of the rejection sampler for the conditioned law.
pub const DEFAULT_SURVIVAL_HORIZON: f64 = 15.0;

/// Independent stream `index` of the generator seeded by `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Individual {
    pub id: u64,
    pub parent: Option<u64>,
    pub birth_time: f64,
    /// `+∞` for immortal individuals.
    pub death_time: f64,
    pub allele: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlleleRecord {
    pub id: u64,
    pub origin_time: f64,
    /// Number of mutations separating the allele from the ancestral one.
    pub allele_type: u32,
    pub parent_allele: Option<u64>,
}

/// Carriers per allele size: `counts[i - 1]` is the number of alleles with exactly `i` carriers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SpectrumTable {
    pub counts: Vec<u64>,
}

impl SpectrumTable {
    /// Number of alleles with exactly `i` carriers.
    pub fn get(&self, i: usize) -> u64 {
        if i == 0 {
            return 0;
        }
        self.counts.get(i - 1).copied().unwrap_or(0)
    }

    pub fn total_alleles(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `Σ_i i M^{i}`, the number of carriers.
    pub fn total_carriers(&self) -> u64 {
        self.counts.iter().enumerate().map(|(k, c)| (k as u64 + 1) * c).sum()
    }
}

/// `carriers[i]` is `K_i`, `alleles[i]` is `L_i`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TypeCounts {
    pub carriers: Vec<u64>,
    pub alleles: Vec<u64>,
}

impl TypeCounts {
    pub fn carriers_of(&self, i: usize) -> u64 {
        self.carriers.get(i).copied().unwrap_or(0)
    }

    pub fn alleles_of(&self, i: usize) -> u64 {
        self.alleles.get(i).copied().unwrap_or(0)
    }
}

/// State of the population at time `time`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationSnapshot {
    pub time: f64,
    /// Individuals alive at `time`, by increasing id.
    pub alive: Vec<Individual>,
    /// Every allele created up to `time`, indexed by id.
    pub alleles: Vec<AlleleRecord>,
    /// Individuals born in `[0, time]`, the ancestor included.
    pub births_total: u64,
    /// The cap on births was hit and the run stopped early.
    pub truncated: bool,
    /// Lineages carrying alleles of a higher type were not followed.
    pub type_ceiling: Option<u32>,
}

impl PopulationSnapshot {
    /// Assemble a snapshot from explicit records, checking that every allele resolves and that
    /// allele types follow the registry.
    pub fn from_parts(
        time: f64,
        mut alive: Vec<Individual>,
        alleles: Vec<AlleleRecord>,
        births_total: u64,
    ) -> Result<Self> {
        for (k, record) in alleles.iter().enumerate() {
            if record.id != k as u64 {
                return Err(Error::config(
                    "alleles",
                    format!("allele at position {k} has id {}", record.id),
                ));
            }
            let expected_type = match record.parent_allele {
                None => 0,
                Some(parent) => match alleles.get(parent as usize) {
                    Some(p) if parent < record.id => p.allele_type + 1,
                    _ => {
                        return Err(Error::config(
                            "alleles",
                            format!("allele {k} has an unknown parent {parent}"),
                        ))
                    }
                },
            };
            if record.allele_type != expected_type {
                return Err(Error::config(
                    "alleles",
                    format!("allele {k} has type {} instead of {expected_type}", record.allele_type),
                ));
            }
        }
        if let Some(ind) = alive.iter().find(|ind| ind.allele as usize >= alleles.len()) {
            return Err(Error::config(
                "alive",
                format!("individual {} carries unknown allele {}", ind.id, ind.allele),
            ));
        }
        if births_total < alive.len() as u64 {
            return Err(Error::config("births_total", "fewer births than living individuals"));
        }
        alive.sort_by_key(|ind| ind.id);
        Ok(Self {
            time,
            alive,
            alleles,
            births_total,
            truncated: false,
            type_ceiling: None,
        })
    }

    pub fn population(&self) -> usize {
        self.alive.len()
    }

    fn multiplicities(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.alleles.len()];
        for ind in &self.alive {
            counts[ind.allele as usize] += 1;
        }
        counts
    }

    /// `M_t^{i,a}` for every `i`: alleles aged at most `a` counted by number of carriers.
    pub fn spectrum(&self, age_cutoff: f64) -> Result<SpectrumTable> {
        if !(age_cutoff >= 0.0 && age_cutoff <= self.time) {
            return Err(Error::OutOfRange {
                what: "a",
                value: age_cutoff,
                lo: 0.0,
                hi: self.time,
            });
        }
        let mut table = SpectrumTable::default();
        for (record, &count) in self.alleles.iter().zip(&self.multiplicities()) {
            if count == 0 || self.time - record.origin_time > age_cutoff {
                continue;
            }
            let i = count as usize;
            if table.counts.len() < i {
                table.counts.resize(i, 0);
            }
            table.counts[i - 1] += 1;
        }
        Ok(table)
    }

    /// Carriers and distinct alleles of each type.
    pub fn type_counts(&self) -> TypeCounts {
        let mut out = TypeCounts::default();
        let bump = |v: &mut Vec<u64>, i: usize| {
            if v.len() <= i {
                v.resize(i + 1, 0);
            }
            v[i] += 1;
        };
        for (record, &count) in self.alleles.iter().zip(&self.multiplicities()) {
            if count > 0 {
                let i = record.allele_type as usize;
                bump(&mut out.alleles, i);
                if out.carriers.len() <= i {
                    out.carriers.resize(i + 1, 0);
                }
                out.carriers[i] += count;
            }
        }
        out
    }

    /// Number of mutation edges between `allele` and the ancestral allele in the registry.
    pub fn mutation_depth(&self, allele: u64) -> u32 {
        let mut depth = 0;
        let mut current = self.alleles[allele as usize].parent_allele;
        while let Some(parent) = current {
            depth += 1;
            current = self.alleles[parent as usize].parent_allele;
        }
        depth
    }
}

/// Run-time bounds of a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub cap: u64,
    /// When set, newborns whose allele type exceeds the ceiling are counted as births but their
    /// lineages are not simulated. Counts of types up to the ceiling are unaffected.
    pub type_ceiling: Option<u32>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_CAP,
            type_ceiling: None,
        }
    }
}

impl SimulationOptions {
    pub fn with_cap(cap: u64) -> Self {
        Self { cap, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    birth_time: f64,
    id: u64,
    parent: Option<u64>,
    allele: u64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // reversed: BinaryHeap pops the earliest birth, ties by smallest id
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .birth_time
            .total_cmp(&self.birth_time)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn validate(horizon: f64, options: &SimulationOptions) -> Result<()> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::config(
            "horizon",
            format!("must be a finite non-negative time, got {horizon}"),
        ));
    }
    if options.cap == 0 {
        return Err(Error::config("cap", "must be at least 1"));
    }
    Ok(())
}

/// Simulate up to `horizon` with the generator seeded by `seed` (stream 0).
pub fn simulate(ctx: &MutationContext, horizon: f64, seed: u64, cap: u64) -> Result<PopulationSnapshot> {
    let mut rng = replicate_rng(seed, 0);
    simulate_with_rng(ctx, horizon, &SimulationOptions::with_cap(cap), &mut rng)
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    ctx: &MutationContext,
    horizon: f64,
    options: &SimulationOptions,
    rng: &mut R,
) -> Result<PopulationSnapshot> {
    validate(horizon, options)?;
    let measure = ctx.measure();
    let p = ctx.mutation_prob();
    let gaps = Exp::new(measure.birth_rate()).map_err(|e| Error::config("b", e.to_string()))?;

    let mut alleles = vec![AlleleRecord {
        id: 0,
        origin_time: 0.0,
        allele_type: 0,
        parent_allele: None,
    }];
    let mut alive = Vec::new();
    let mut queue = BinaryHeap::new();
    queue.push(Pending {
        birth_time: 0.0,
        id: 0,
        parent: None,
        allele: 0,
    });
    let mut births_total = 1u64;
    let mut truncated = false;

    'events: while let Some(ind) = queue.pop() {
        let death_time = ind.birth_time + measure.sample_lifespan(rng);
        let end = death_time.min(horizon);
        let mut t = ind.birth_time;
        loop {
            t += gaps.sample(rng);
            if t > end {
                break;
            }
            if births_total >= options.cap {
                truncated = true;
                break 'events;
            }
            let id = births_total;
            births_total += 1;
            let mut allele = ind.allele;
            if rng.random::<f64>() < p {
                let parent_type = alleles[ind.allele as usize].allele_type;
                if options.type_ceiling.is_some_and(|c| parent_type + 1 > c) {
                    continue;
                }
                allele = alleles.len() as u64;
                alleles.push(AlleleRecord {
                    id: allele,
                    origin_time: t,
                    allele_type: parent_type + 1,
                    parent_allele: Some(ind.allele),
                });
            }
            queue.push(Pending {
                birth_time: t,
                id,
                parent: Some(ind.id),
                allele,
            });
        }
        if death_time > horizon {
            alive.push(Individual {
                id: ind.id,
                parent: ind.parent,
                birth_time: ind.birth_time,
                death_time,
                allele: ind.allele,
            });
        }
    }
    alive.sort_by_key(|ind| ind.id);
    Ok(PopulationSnapshot {
        time: horizon,
        alive,
        alleles,
        births_total,
        truncated,
        type_ceiling: options.type_ceiling,
    })
}

/// Whether the descendance of `snapshot.alive` still has a living member at `until`.
///
/// Births after the snapshot time are redrawn, which is exact by the memorylessness of the
/// Poisson birth process. The search is depth-first and stops at the first individual alive at
/// `until`.
pub fn survives_until<R: Rng + ?Sized>(
    ctx: &MutationContext,
    snapshot: &PopulationSnapshot,
    until: f64,
    rng: &mut R,
) -> Result<bool> {
    if snapshot.type_ceiling.is_some() {
        return Err(Error::config("type_ceiling", "survival needs the full population"));
    }
    if until <= snapshot.time {
        return Ok(!snapshot.alive.is_empty());
    }
    let measure = ctx.measure();
    let gaps = Exp::new(measure.birth_rate()).map_err(|e| Error::config("b", e.to_string()))?;
    // (birth time, death time) of individuals still to explore
    let mut stack: Vec<(f64, f64)> = snapshot
        .alive
        .iter()
        .rev()
        .map(|ind| (snapshot.time, ind.death_time))
        .collect();
    while let Some((from, death)) = stack.pop() {
        if death > until {
            return Ok(true);
        }
        let mut t = from;
        loop {
            t += gaps.sample(rng);
            if t > death {
                break;
            }
            stack.push((t, t + measure.sample_lifespan(rng)));
        }
    }
    Ok(false)
}

/// Rejection-sampling settings for the law conditioned on survival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningOptions {
    /// Survival is proxied by having a living member at this time (at least the horizon).
    pub survival_horizon: Option<f64>,
    pub max_attempts: u64,
    pub simulation: SimulationOptions,
}

impl Default for ConditioningOptions {
    fn default() -> Self {
        Self {
            survival_horizon: None,
            max_attempts: 10_000,
            simulation: SimulationOptions::default(),
        }
    }
}

impl ConditioningOptions {
    pub fn survival_horizon_for(&self, horizon: f64) -> f64 {
        self.survival_horizon.unwrap_or(DEFAULT_SURVIVAL_HORIZON).max(horizon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedSample<S> {
    pub value: S,
    /// Simulations run, the accepted one included.
    pub attempts: u64,
    pub truncated: bool,
}

/// One draw of `statistic` at `horizon` under the law conditioned on survival, by rejection.
pub fn survival_conditioned_statistic<R, S, F>(
    ctx: &MutationContext,
    horizon: f64,
    options: &ConditioningOptions,
    rng: &mut R,
    statistic: F,
) -> Result<ConditionedSample<S>>
where
    R: Rng + ?Sized,
    F: Fn(&PopulationSnapshot) -> S,
{
    let measure = ctx.measure();
    let regime = scale::regime(measure);
    if regime != Regime::Supercritical {
        return Err(Error::WrongRegime(format!(
            "{measure} is {regime}; conditioning on survival needs a supercritical tree"
        )));
    }
    if options.simulation.type_ceiling.is_some() {
        return Err(Error::config("type_ceiling", "survival needs the full population"));
    }
    let until = options.survival_horizon_for(horizon);
    for attempt in 1..=options.max_attempts {
        let snapshot = simulate_with_rng(ctx, horizon, &options.simulation, rng)?;
        if snapshot.truncated || survives_until(ctx, &snapshot, until, rng)? {
            return Ok(ConditionedSample {
                value: statistic(&snapshot),
                attempts: attempt,
                truncated: snapshot.truncated,
            });
        }
    }
    Err(Error::RejectionBudgetExceeded {
        attempts: options.max_attempts,
    })
}

/// Lower bound on the probability that a surviving population is still alive at `until`:
/// `1 - (P(Ξ(until) = 0) - P(Ext)) / P(Ext^c)`.
pub fn survival_proxy_bound(ctx: &MutationContext, until: f64, step: f64) -> Result<f64> {
    let measure = ctx.measure();
    let extinction = scale::extinction_probability(measure)?;
    let grid = ScaleGrid::solve(measure, until, step)?;
    let dead_by = grid.marginal(grid.horizon())?.p_zero;
    Ok(1.0 - (dead_by - extinction).max(0.0) / (1.0 - extinction))
}
