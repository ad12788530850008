//! Expected allelic frequency spectrum and its long-time limits.
//!
//! `M_t^{i,a}` counts the alleles carried by exactly `i` individuals at time `t` that appeared
//! after `t - a`. Its mean is an integral over the age of the allele of the expected number of
//! individuals alive when the allele appeared, times the mutation rate, times the probability that
//! a clonal splitting tree has exactly `i` individuals at that age. The long-time constants are
//! improper integrals of the clonal scale function against `e^{-ηu}`; they are truncated where the
//! integrand envelopes certify the requested absolute tolerance.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifespan::MutationContext;
use crate::quadrature::trapezoid_on_lattice;
use crate::scale::{self, Regime, ScaleGrid};

/// Default absolute tolerance for truncated improper integrals.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// A spectrum entry `(i, a, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumQuery {
    pub family_size: u32,
    pub age_cutoff: f64,
    pub time: f64,
}

impl SpectrumQuery {
    pub fn new(family_size: u32, age_cutoff: f64, time: f64) -> Result<Self> {
        if family_size == 0 {
            return Err(Error::OutOfRange {
                what: "i",
                value: 0.0,
                lo: 1.0,
                hi: f64::INFINITY,
            });
        }
        if !(time >= 0.0) || !time.is_finite() {
            return Err(Error::OutOfRange {
                what: "t",
                value: time,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if !(age_cutoff >= 0.0 && age_cutoff <= time) {
            return Err(Error::OutOfRange {
                what: "a",
                value: age_cutoff,
                lo: 0.0,
                hi: time,
            });
        }
        Ok(Self {
            family_size,
            age_cutoff,
            time,
        })
    }
}

/// Family size selector for the limit integrals: a single size `i` or all sizes at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilySize {
    Exactly(u32),
    All,
}

/// Scale functions of the whole population and of the clonal subpopulation on a common grid.
#[derive(Debug, Clone)]
pub struct ModelGrids {
    ctx: MutationContext,
    full: ScaleGrid,
    clonal: ScaleGrid,
}

impl ModelGrids {
    pub fn solve(ctx: &MutationContext, horizon: f64, step: f64) -> Result<Self> {
        let full = ScaleGrid::solve(ctx.measure(), horizon, step)?;
        let clonal = ScaleGrid::clonal(ctx, horizon, step)?;
        Ok(Self {
            ctx: *ctx,
            full,
            clonal,
        })
    }

    pub fn from_grids(ctx: &MutationContext, full: ScaleGrid, clonal: ScaleGrid) -> Result<Self> {
        if full.measure() != ctx.measure() || *clonal.measure() != ctx.clonal_measure() {
            return Err(Error::config(
                "grids",
                "grids were not solved for this mutation context",
            ));
        }
        if full.step() != clonal.step() {
            return Err(Error::config("step", "full and clonal grids use different steps"));
        }
        Ok(Self {
            ctx: *ctx,
            full,
            clonal,
        })
    }

    pub fn ctx(&self) -> &MutationContext {
        &self.ctx
    }

    /// Grid of `W`.
    pub fn full(&self) -> &ScaleGrid {
        &self.full
    }

    /// Grid of `W_c`.
    pub fn clonal(&self) -> &ScaleGrid {
        &self.clonal
    }

    pub fn horizon(&self) -> f64 {
        self.full.horizon().min(self.clonal.horizon())
    }

    // p / (b (1 - p))
    fn mutant_factor(&self) -> f64 {
        self.ctx.mutation_prob() / self.ctx.clonal_mass()
    }

    /// Density in `a` of `E[M_t^{i,da}]`.
    pub fn expected_spectrum_density(&self, q: &SpectrumQuery) -> Result<f64> {
        self.check_time(q.time)?;
        let i = q.family_size;
        let wp = self.full.w_prime(q.time - q.age_cutoff)?;
        Ok(self.mutant_factor() * wp * clonal_size_weight(&self.clonal, i, q.age_cutoff)?)
    }

    /// `E[M_t^{i,a}]`: the density integrated over ages in `(0, a)`, plus the probability that the
    /// ancestral allele has exactly `i` carriers when `a = t` (to within half a grid step).
    pub fn expected_spectrum(&self, q: &SpectrumQuery) -> Result<f64> {
        self.check_time(q.time)?;
        let i = q.family_size;
        let factor = self.mutant_factor();
        let (full, clonal) = (&self.full, &self.clonal);
        let integrand = |x: f64| -> f64 {
            let wp = full.w_prime((q.time - x).max(0.0)).unwrap_or(f64::NAN);
            wp * clonal_size_weight(clonal, i, x).unwrap_or(f64::NAN)
        };
        let mut value = factor * trapezoid_on_lattice(integrand, 0.0, q.age_cutoff, self.full.step());
        if (q.time - q.age_cutoff).abs() <= 0.5 * self.full.step() {
            value += clonal_size_weight(clonal, i, q.time)? / self.ctx.clonal_mass();
        }
        if value.is_nan() {
            return Err(Error::OutOfRange {
                what: "t",
                value: q.time,
                lo: 0.0,
                hi: self.horizon(),
            });
        }
        Ok(value)
    }

    /// `E[M_t]`, the mean number of distinct alleles alive at `t`.
    pub fn expected_allele_count(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let (full, clonal) = (&self.full, &self.clonal);
        let integrand = |x: f64| -> f64 {
            let wp = full.w_prime((t - x).max(0.0)).unwrap_or(f64::NAN);
            wp * clonal.w_prime(x).unwrap_or(f64::NAN) / clonal.w(x).unwrap_or(f64::NAN)
        };
        let integral = trapezoid_on_lattice(integrand, 0.0, t, self.full.step());
        let clonal_alive = 1.0 - clonal.marginal(t)?.p_zero;
        Ok(self.mutant_factor() * integral + clonal_alive)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.horizon() * (1.0 + 1e-12) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                what: "t",
                value: t,
                lo: 0.0,
                hi: self.horizon(),
            })
        }
    }
}

/// `(1 - 1/W_c(a))^{i-1} W_c'(a) / W_c(a)^2`, i.e. `b(1-p) P(Ξ_c(a) = i)`.
pub fn clonal_size_weight(clonal: &ScaleGrid, i: u32, a: f64) -> Result<f64> {
    let w = clonal.w(a)?;
    let wp = clonal.w_prime(a)?;
    Ok((1.0 - 1.0 / w).powi(i as i32 - 1) * wp / (w * w))
}

fn size_integrand(size: FamilySize, w: f64, wp: f64) -> f64 {
    match size {
        FamilySize::All => wp / w,
        FamilySize::Exactly(i) => (1.0 - 1.0 / w).powi(i as i32 - 1) * wp / (w * w),
    }
}

/// Integral of `e^{-ηu}` times the size integrand on `[0, upper]`, trapezoid on grid nodes plus a
/// partial last cell.
fn discounted_integral<F: Fn(f64, f64) -> f64>(clonal: &ScaleGrid, eta: f64, upper: f64, f: F) -> f64 {
    let h = clonal.step();
    let (values, derivs) = (clonal.values(), clonal.derivatives());
    let full_cells = ((upper / h) + 1e-9).floor() as usize;
    let full_cells = full_cells.min(values.len() - 1);
    let g = |k: usize| (-eta * k as f64 * h).exp() * f(values[k], derivs[k]);
    let mut sum = 0.0;
    if full_cells > 0 {
        sum += 0.5 * (g(0) + g(full_cells));
        sum += (1..full_cells).map(g).sum::<f64>();
        sum *= h;
    }
    let rest = upper - full_cells as f64 * h;
    if rest > 1e-12 * h {
        let w = clonal.w(upper).unwrap_or(values[full_cells]);
        let wp = clonal.w_prime(upper).unwrap_or(derivs[full_cells]);
        let end = (-eta * upper).exp() * f(w, wp);
        sum += 0.5 * rest * (g(full_cells) + end);
    }
    sum
}

/// `J^{i,a} = ∫_0^a e^{-ηu} (1 - 1/W_c)^{i-1} W_c'/W_c² du`, or with `FamilySize::All` the
/// integral `J` of `e^{-ηu} W_c'/W_c`. `age_cutoff` may be `f64::INFINITY`.
///
/// The integrand is bounded by `b(1-p) e^{-ηu}`, so the integral is truncated at the `U` where
/// `b(1-p) e^{-ηU} / η` drops below `tol`.
pub fn limit_j(clonal: &ScaleGrid, eta: f64, size: FamilySize, age_cutoff: f64, tol: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::WrongRegime(format!(
            "the spectrum limits need a positive Malthusian parameter, got {eta}"
        )));
    }
    if let FamilySize::Exactly(0) = size {
        return Err(Error::OutOfRange {
            what: "i",
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    if !(age_cutoff >= 0.0) {
        return Err(Error::OutOfRange {
            what: "a",
            value: age_cutoff,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let clonal_mass = clonal.birth_rate();
    let truncation = ((clonal_mass / (eta * tol)).ln() / eta).max(0.0);
    let upper = age_cutoff.min(truncation);
    if upper > clonal.horizon() {
        return Err(Error::HorizonTooShort {
            needed: upper,
            available: clonal.horizon(),
        });
    }
    Ok(discounted_integral(clonal, eta, upper, |w, wp| {
        size_integrand(size, w, wp)
    }))
}

/// Long-time constants of the frequency spectrum of a supercritical population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumLimits {
    /// Limit of `e^{-ηt} E[M_t^{i,a}]`.
    pub mean_limit: f64,
    /// Almost-sure limit of `e^{-ηt} M_t^{i,a}` on survival, divided by the exponential
    /// variable of mean `1/ψ'(η)`.
    pub as_limit_scale: f64,
    /// Almost-sure limit of `M_t^{i,a} / M_t`.
    pub fraction_limit: f64,
}

pub fn spectrum_limits(
    ctx: &MutationContext,
    clonal: &ScaleGrid,
    i: u32,
    age_cutoff: f64,
    tol: f64,
) -> Result<SpectrumLimits> {
    let measure = ctx.measure();
    if scale::regime(measure) != Regime::Supercritical {
        return Err(Error::WrongRegime(format!("{measure} is not supercritical")));
    }
    let eta = scale::malthusian(measure)?;
    let dpsi = measure.psi(eta)?.derivative;
    let p = ctx.mutation_prob();
    let odds = p / (1.0 - p);
    let j_ia = limit_j(clonal, eta, FamilySize::Exactly(i), age_cutoff, tol)?;
    let j = limit_j(clonal, eta, FamilySize::All, f64::INFINITY, tol)?;
    let as_limit_scale = odds * j_ia;
    Ok(SpectrumLimits {
        mean_limit: eta / measure.birth_rate() * as_limit_scale / dpsi,
        as_limit_scale,
        fraction_limit: j_ia / j,
    })
}

/// Almost-sure limit of `M_t^{i,t} / M_t`, a weighted log-series law:
/// `(1/i) ∫ e^{-ηu}(1 - 1/W_c)^i du / ∫ e^{-ηu} ln W_c du`.
///
/// The numerator integrand is at most `e^{-ηu}`; past `U` the logarithm grows at most like
/// `ln W_c(U) + b(1-p)(u - U)`. Both tails are required to be below `tol`.
pub fn size_fraction_limit(clonal: &ScaleGrid, eta: f64, i: u32, tol: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::WrongRegime(format!(
            "the size-fraction limit needs a positive Malthusian parameter, got {eta}"
        )));
    }
    if i == 0 {
        return Err(Error::OutOfRange {
            what: "i",
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    let h = clonal.step();
    let clonal_mass = clonal.birth_rate();
    let tails_below = |k: usize| {
        let u = k as f64 * h;
        let decay = (-eta * u).exp();
        let numerator_tail = decay / eta;
        let log_w = clonal.values()[k].ln();
        let denominator_tail = decay * (log_w / eta + clonal_mass / (eta * eta));
        numerator_tail <= tol && denominator_tail <= tol
    };
    let last = clonal.len() - 1;
    let k = (0..=last).find(|&k| tails_below(k)).ok_or_else(|| {
        // crude estimate from ln W_c(u) <= b(1-p) u
        let mut needed = clonal.horizon();
        while (-eta * needed).exp() * (clonal_mass * needed / eta + clonal_mass / (eta * eta) + 1.0 / eta) > tol {
            needed *= 1.1;
        }
        Error::HorizonTooShort {
            needed,
            available: clonal.horizon(),
        }
    })?;
    let upper = k as f64 * h;
    let numerator = discounted_integral(clonal, eta, upper, |w, _| (1.0 - 1.0 / w).powi(i as i32));
    let denominator = discounted_integral(clonal, eta, upper, |w, _| w.ln());
    Ok(numerator / (i as f64 * denominator))
}

/// Closed form of [`size_fraction_limit`] for pure-birth lifespans:
/// `(1/(i(1-p))) Σ_k C(i,k) (-1)^k / (1 + (1-p)k)`.
pub fn pure_birth_size_fraction(mutation_prob: f64, i: u32) -> Result<f64> {
    if !(mutation_prob > 0.0 && mutation_prob < 1.0) {
        return Err(Error::config("p", format!("must lie in (0, 1), got {mutation_prob}")));
    }
    if i == 0 {
        return Err(Error::OutOfRange {
            what: "i",
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    let q = 1.0 - mutation_prob;
    let mut binom = 1.0;
    let mut sum = 0.0;
    for k in 0..=i {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * binom / (1.0 + q * k as f64);
        binom = binom * (i - k) as f64 / (k + 1) as f64;
    }
    Ok(sum / (i as f64 * q))
}
