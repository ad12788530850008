//! Mean number of carriers and of alleles of each type, their long-time asymptotics, and the
//! limit law of the rescaled type-`i` population.
//!
//! An allele is of type `i` when `i` mutations separate it from the ancestral allele. `K_i(t)`
//! counts the individuals carrying a type-`i` allele and `L_i(t)` the distinct type-`i` alleles.
//! Both means are iterated convolutions of `W_c'`, the derivative of the clonal scale function.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifespan::{LifespanFamily, MutationContext};
use crate::quadrature;
use crate::scale::{self, Regime, ScaleGrid};
use crate::spectrum::{limit_j, FamilySize};

/// Largest admissible relative change of a sampled function across one grid cell.
pub const MAX_CELL_VARIATION: f64 = 0.05;

/// `f^{⋆(i)}` sampled on `k * step`, `k = 0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionGrid {
    step: f64,
    order: u32,
    values: Vec<f64>,
}

impl ConvolutionGrid {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }

    /// Value at `t`, linearly interpolated between nodes.
    pub fn at(&self, t: f64) -> Result<f64> {
        interpolate(&self.values, self.step, t)
    }
}

fn interpolate(values: &[f64], step: f64, t: f64) -> Result<f64> {
    let horizon = (values.len() - 1) as f64 * step;
    if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
        return Err(Error::OutOfRange {
            what: "t",
            value: t,
            lo: 0.0,
            hi: horizon,
        });
    }
    let x = t / step;
    let k = (x.floor() as usize).min(values.len() - 1);
    let frac = x - k as f64;
    if frac < 1e-9 || k + 1 == values.len() {
        Ok(values[k])
    } else if frac > 1.0 - 1e-9 {
        Ok(values[k + 1])
    } else {
        Ok(values[k] + frac * (values[k + 1] - values[k]))
    }
}

/// Trapezoid rule for `(f ⋆ g)(mh) = ∫_0^{mh} f(mh - x) g(x) dx` at node `m`.
fn convolution_at(f: &[f64], g: &[f64], step: f64, m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let inner: f64 = (1..m).map(|j| f[m - j] * g[j]).sum();
    step * (inner + 0.5 * (f[m] * g[0] + f[0] * g[m]))
}

/// Trapezoid-rule convolution of two sampled functions on a common grid.
pub fn convolve(f: &[f64], g: &[f64], step: f64) -> Vec<f64> {
    let n = f.len().min(g.len());
    (0..n).into_par_iter().map(|m| convolution_at(f, g, step, m)).collect()
}

fn check_resolution(f: &[f64]) -> Result<()> {
    if f.len() < 2 {
        return Err(Error::GridTooCoarse {
            step_times_rate: f64::INFINITY,
            limit: MAX_CELL_VARIATION,
        });
    }
    let scale = f.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Ok(());
    }
    let jump = f.windows(2).fold(0.0f64, |acc, w| acc.max((w[1] - w[0]).abs()));
    let variation = jump / scale;
    if variation > MAX_CELL_VARIATION {
        return Err(Error::GridTooCoarse {
            step_times_rate: variation,
            limit: MAX_CELL_VARIATION,
        });
    }
    Ok(())
}

/// `f^{⋆(order)}` by `order - 1` trapezoid convolutions, each `O(n²)`.
pub fn iterated_convolution(f: &[f64], step: f64, order: u32) -> Result<ConvolutionGrid> {
    if order == 0 {
        return Err(Error::OutOfRange {
            what: "order",
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    if !(step > 0.0) {
        return Err(Error::config("step", format!("must be positive, got {step}")));
    }
    check_resolution(f)?;
    let mut values = f.to_vec();
    for _ in 1..order {
        values = convolve(&values, f, step);
    }
    Ok(ConvolutionGrid { step, order, values })
}

/// `|e^{at} f^{⋆(i)}(t) (i-1)! / (t^{i-1} l^i) - 1|` at `t_probe`, the distance of the
/// iterated convolution from its long-time equivalent when `e^{at} f(t) → l`.
pub fn convolution_limit_check(f: &[f64], step: f64, order: u32, rate: f64, limit: f64, t_probe: f64) -> Result<f64> {
    let grid = iterated_convolution(f, step, order)?;
    let value = grid.at(t_probe)?;
    let log_scaled =
        rate * t_probe - (order as f64 - 1.0) * t_probe.ln() + ln_factorial(order - 1) - order as f64 * limit.ln();
    Ok((value.ln() + log_scaled).exp_m1().abs())
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn factorial(n: u32) -> f64 {
    (2..=n).map(f64::from).product()
}

/// Means of `K_i(t)` and `L_i(t)` from a clonal scale grid, caching `(W_c')^{⋆k}`.
#[derive(Debug)]
pub struct MutationMoments {
    ctx: MutationContext,
    clonal: ScaleGrid,
    // powers[k - 1] = (W_c')^{⋆k}
    powers: Mutex<Vec<Arc<Vec<f64>>>>,
    hazard: Vec<f64>,
}

impl MutationMoments {
    pub fn new(ctx: &MutationContext, clonal: ScaleGrid) -> Result<Self> {
        if *clonal.measure() != ctx.clonal_measure() {
            return Err(Error::config("grid", "clonal grid does not match the mutation context"));
        }
        check_resolution(clonal.derivatives())?;
        let hazard = clonal
            .values()
            .iter()
            .zip(clonal.derivatives())
            .map(|(w, wp)| wp / w)
            .collect();
        let first = Arc::new(clonal.derivatives().to_vec());
        Ok(Self {
            ctx: *ctx,
            clonal,
            powers: Mutex::new(vec![first]),
            hazard,
        })
    }

    pub fn solve(ctx: &MutationContext, horizon: f64, step: f64) -> Result<Self> {
        Self::new(ctx, ScaleGrid::clonal(ctx, horizon, step)?)
    }

    pub fn ctx(&self) -> &MutationContext {
        &self.ctx
    }

    pub fn clonal(&self) -> &ScaleGrid {
        &self.clonal
    }

    /// `(W_c')^{⋆k}` on the clonal grid.
    pub fn convolution_power(&self, k: u32) -> Result<Arc<Vec<f64>>> {
        if k == 0 {
            return Err(Error::OutOfRange {
                what: "order",
                value: 0.0,
                lo: 1.0,
                hi: f64::INFINITY,
            });
        }
        let mut powers = self.powers.lock().unwrap_or_else(|e| e.into_inner());
        while powers.len() < k as usize {
            let last = powers.last().cloned().unwrap_or_default();
            let next = convolve(&last, &powers[0], self.clonal.step());
            powers.push(Arc::new(next));
        }
        Ok(Arc::clone(&powers[k as usize - 1]))
    }

    fn prefactor(&self, i: u32) -> f64 {
        let p = self.ctx.mutation_prob();
        (p / (1.0 - p)).powi(i as i32) / self.ctx.clonal_mass()
    }

    /// `E[K_i(t)] = (1/(b(1-p))) (p/(1-p))^i (W_c')^{⋆(i+1)}(t)`.
    pub fn expected_k(&self, i: u32, t: f64) -> Result<f64> {
        let power = self.convolution_power(i + 1)?;
        Ok(self.prefactor(i) * interpolate(&power, self.clonal.step(), t)?)
    }

    /// `E[L_0(t)] = W_c'(t) / (b(1-p) W_c(t))` and, for `i ≥ 1`,
    /// `E[L_i(t)] = (1/(b(1-p))) (p/(1-p))^i ((W_c')^{⋆i} ⋆ W_c'/W_c)(t)`.
    pub fn expected_l(&self, i: u32, t: f64) -> Result<f64> {
        let step = self.clonal.step();
        if i == 0 {
            return Ok(interpolate(&self.hazard, step, t)? / self.ctx.clonal_mass());
        }
        let power = self.convolution_power(i)?;
        // convolution at the two nodes bracketing t
        interpolate(&self.hazard, step, t)?;
        let x = t / step;
        let k = (x.floor() as usize).min(self.hazard.len() - 1);
        let frac = x - k as f64;
        let at_k = convolution_at(&power, &self.hazard, step, k);
        let value = if frac < 1e-9 || k + 1 == self.hazard.len() {
            at_k
        } else {
            let at_next = convolution_at(&power, &self.hazard, step, k + 1);
            at_k + frac * (at_next - at_k)
        };
        Ok(self.prefactor(i) * value)
    }
}

/// Long-time equivalent `E[K_i(t)] ~ leading_coefficient t^i e^{eta_p t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KAsymptotics {
    pub regime: Regime,
    pub eta_p: f64,
    pub c_p: f64,
    pub leading_coefficient: f64,
}

/// Growth exponent of the clonal process and the constant `C_p` with `e^{-η_p t} W_c'(t) → C_p`.
fn clonal_growth(ctx: &MutationContext) -> Result<(Regime, f64, f64)> {
    let clonal = ctx.clonal_measure();
    let constants = scale::growth_constants(&clonal)?;
    let eta_p = match constants.regime {
        Regime::Supercritical => constants.eta,
        Regime::Critical => 0.0,
        Regime::Subcritical => constants
            .eta_tilde
            .ok_or_else(|| Error::NoNegativeRoot(format!("psi_c of {clonal} has no negative root")))?,
    };
    let c_p = constants
        .wprime_growth_constant
        .ok_or_else(|| Error::NoNegativeRoot(format!("psi_c of {clonal} has no negative root")))?;
    Ok((constants.regime, eta_p, c_p))
}

pub fn k_asymptotics(ctx: &MutationContext, i: u32) -> Result<KAsymptotics> {
    let (regime, eta_p, c_p) = clonal_growth(ctx)?;
    let p = ctx.mutation_prob();
    let leading_coefficient =
        (p / (1.0 - p)).powi(i as i32) * c_p.powi(i as i32 + 1) / (ctx.clonal_mass() * factorial(i));
    Ok(KAsymptotics {
        regime,
        eta_p,
        c_p,
        leading_coefficient,
    })
}

/// Long-time equivalent `E[L_i(t)] ~ constant t^power (ln t)^[log_factor] e^{growth_exponent t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LAsymptotics {
    pub regime: Regime,
    pub growth_exponent: f64,
    pub power: u32,
    pub log_factor: bool,
    pub constant: f64,
}

impl LAsymptotics {
    /// The equivalent evaluated at `t`.
    pub fn evaluate(&self, t: f64) -> f64 {
        let log = if self.log_factor { t.ln() } else { 1.0 };
        self.constant * t.powi(self.power as i32) * log * (self.growth_exponent * t).exp()
    }
}

/// Long-time equivalent of `E[L_i(t)]`, `i ≥ 1`.
///
/// The supercritical constant needs `∫ e^{-η_c u} W_c'/W_c du`, truncated to absolute tolerance
/// `tol` on `clonal`.
pub fn l_asymptotics(ctx: &MutationContext, clonal: &ScaleGrid, i: u32, tol: f64) -> Result<LAsymptotics> {
    if i == 0 {
        return Err(Error::OutOfRange {
            what: "i",
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    let (regime, eta_p, c_p) = clonal_growth(ctx)?;
    let p = ctx.mutation_prob();
    let odds = (p / (1.0 - p)).powi(i as i32);
    let clonal_mass = ctx.clonal_mass();
    Ok(match regime {
        Regime::Supercritical => {
            let j_c = limit_j(clonal, eta_p, FamilySize::All, f64::INFINITY, tol)?;
            LAsymptotics {
                regime,
                growth_exponent: eta_p,
                power: i - 1,
                log_factor: false,
                constant: j_c * odds * c_p.powi(i as i32) / (clonal_mass * factorial(i - 1)),
            }
        }
        // (W_c')^{⋆i} grows like t^{i-1}, and convolving with W_c'/W_c ~ 1/t adds the logarithm.
        Regime::Critical => LAsymptotics {
            regime,
            growth_exponent: 0.0,
            power: i - 1,
            log_factor: true,
            constant: odds * c_p.powi(i as i32) / (clonal_mass * factorial(i - 1)),
        },
        Regime::Subcritical => {
            let m_c = ctx.clonal_measure().moments().m;
            LAsymptotics {
                regime,
                growth_exponent: eta_p,
                power: i,
                log_factor: false,
                constant: (1.0 - m_c) * odds * c_p.powi(i as i32 + 1) / (clonal_mass * factorial(i)),
            }
        }
    })
}

/// Local log-log slopes of `E[L_i(t)] / (t^{power} ln t)` between successive probe times.
///
/// In the critical regime the normalised mean converges only at a logarithmic rate, so the
/// diagnostic is that these slopes shrink towards zero as `t` grows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalDiagnostic {
    pub times: Vec<f64>,
    pub normalized: Vec<f64>,
    pub slopes: Vec<f64>,
}

pub fn critical_slope_diagnostic(
    moments: &MutationMoments,
    i: u32,
    times: &[f64],
    tol: f64,
) -> Result<CriticalDiagnostic> {
    let regime = scale::regime(&moments.ctx().clonal_measure());
    if regime != Regime::Critical {
        return Err(Error::WrongRegime(format!(
            "the clonal process of {} is {regime}, not critical",
            moments.ctx().measure()
        )));
    }
    let asymptotics = l_asymptotics(moments.ctx(), moments.clonal(), i, tol)?;
    if times.len() < 2 || times.iter().any(|&t| !(t > 1.0)) {
        return Err(Error::config("times", "need at least two probe times, all above 1"));
    }
    let normalized = times
        .iter()
        .map(|&t| Ok(moments.expected_l(i, t)? / asymptotics.evaluate(t)))
        .collect::<Result<Vec<f64>>>()?;
    let slopes = times
        .windows(2)
        .zip(normalized.windows(2))
        .map(|(t, v)| (v[1] / v[0]).ln() / (t[1] / t[0]).ln())
        .collect();
    Ok(CriticalDiagnostic {
        times: times.to_vec(),
        normalized,
        slopes,
    })
}

/// Law of the almost-sure limit `κ_i` of `t^{-i} e^{-η_c t} K_i(t)`: an atom at zero and,
/// conditional on being positive, an exponential variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaLaw {
    pub order: u32,
    pub atom_prob: f64,
    pub conditional_mean: f64,
    /// Rate of the exponential part.
    pub theta: f64,
    /// `E[κ_i]`.
    pub mean: f64,
}

impl KappaLaw {
    /// Laplace transform `E[e^{-aκ_i}]`.
    pub fn laplace(&self, a: f64) -> f64 {
        mixture_laplace(1.0 - self.atom_prob, self.theta, a)
    }
}

fn mixture_laplace(weight: f64, theta: f64, a: f64) -> f64 {
    1.0 - weight * a / (a + theta)
}

/// Requires a supercritical clonal process. Pure-birth lifespans are accepted: their clonal
/// process never dies and the law reduces to an exponential.
pub fn kappa_law(ctx: &MutationContext, i: u32) -> Result<KappaLaw> {
    let clonal = ctx.clonal_measure();
    if scale::regime(&clonal) != Regime::Supercritical {
        return Err(Error::WrongRegime(format!(
            "the clonal process of {} is not supercritical",
            ctx.measure()
        )));
    }
    let eta_c = scale::malthusian(&clonal)?;
    let dpsi_c = ctx.psi_c(eta_c)?.derivative;
    let p = ctx.mutation_prob();
    let odds = (p / (1.0 - p)).powi(i as i32);
    let survival = eta_c / ctx.clonal_mass();
    let conditional_mean = odds * eta_c.powi(i as i32) / (factorial(i) * dpsi_c.powi(i as i32 + 1));
    Ok(KappaLaw {
        order: i,
        atom_prob: 1.0 - survival,
        conditional_mean,
        theta: 1.0 / conditional_mean,
        mean: odds * (eta_c / dpsi_c).powi(i as i32 + 1) / (factorial(i) * ctx.clonal_mass()),
    })
}

const RESIDUAL_TOLERANCE: f64 = 1e-12;

/// `|φ(a) - ∫ (Λ(dz)/b) exp{b(1-p)(∫_0^z φ(a e^{-η_c u}) du - z)}|` for the candidate
/// `φ(x) = 1 - weight + weight θ/(x + θ)`.
///
/// For this `φ` the inner integral is `-(weight/η_c) ln((a + θ)/(a e^{-η_c z} + θ))`, so only the
/// outer integral over the lifespan law is done numerically.
pub fn mixture_fixed_point_residual(ctx: &MutationContext, weight: f64, theta: f64, a: f64) -> Result<f64> {
    let clonal = ctx.clonal_measure();
    if scale::regime(&clonal) != Regime::Supercritical {
        return Err(Error::WrongRegime(format!(
            "the clonal process of {} is not supercritical",
            ctx.measure()
        )));
    }
    if !(a >= 0.0) {
        return Err(Error::OutOfRange {
            what: "a",
            value: a,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    if !(theta > 0.0) || !(0.0..=1.0).contains(&weight) {
        return Err(Error::config(
            "law",
            format!("need θ > 0 and weight in [0, 1], got θ = {theta}, weight = {weight}"),
        ));
    }
    let eta_c = scale::malthusian(&clonal)?;
    let exponent = ctx.clonal_mass() * weight / eta_c;
    let log_top = (a + theta).ln();
    let lhs = mixture_laplace(weight, theta, a);
    let integrand = |z: f64| (exponent * ((a * (-eta_c * z).exp() + theta).ln() - log_top)).exp();
    let measure = ctx.measure();
    let b = measure.birth_rate();
    let rhs = match measure.family() {
        LifespanFamily::PureBirth => (exponent * (theta.ln() - log_top)).exp(),
        LifespanFamily::UniformLife { c } => {
            quadrature::integrate(|z| integrand(z) / c, 0.0, c, RESIDUAL_TOLERANCE, RESIDUAL_TOLERANCE).value
        }
        LifespanFamily::Exponential { .. } | LifespanFamily::Gamma { .. } => {
            let density = |z: f64| measure.density(z).unwrap_or(0.0) / b;
            quadrature::integrate_to_infinity(
                |z| integrand(z) * density(z),
                0.0,
                RESIDUAL_TOLERANCE,
                RESIDUAL_TOLERANCE,
            )
            .value
        }
    };
    Ok((lhs - rhs).abs())
}

/// Fixed-point residual of the Laplace transform of [`kappa_law`] at `a`.
pub fn kappa_fixed_point_residual(ctx: &MutationContext, i: u32, a: f64) -> Result<f64> {
    let law = kappa_law(ctx, i)?;
    mixture_fixed_point_residual(ctx, 1.0 - law.atom_prob, law.theta, a)
}

/// `-φ'(0) - E[κ_i]` for the candidate mixture: the derivative at zero pins the scale `θ` that the
/// fixed-point equation alone leaves free.
pub fn mixture_mean_defect(law: &KappaLaw, weight: f64, theta: f64) -> f64 {
    weight / theta - law.mean
}
