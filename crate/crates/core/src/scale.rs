//! Scale functions `W` (Laplace transform `1/ψ`) tabulated on a uniform grid, Malthusian roots of
//! ψ, one-dimensional marginals of the population size, and the long-time growth constants.
//!
//! `W` solves the renewal-type Volterra equation of the second kind
//!
//! ```text
//! W(t) = 1 + ∫_0^t W(u) Λ((t-u, ∞]) du
//! ```
//!
//! which is discretized with the trapezoid rule, the diagonal term being solved implicitly.
//! `W'` is then read off `W'(t) = b W(t) - ∫_0^t W(t-x) Λ(dx)` with a Stieltjes trapezoid
//! whose cell masses come from the exact tail of Λ.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lifespan::{LifespanMeasure, MutationContext};

/// Largest admissible `h * b` for [`ScaleGrid::solve`].
pub const MAX_STEP_TIMES_RATE: f64 = 0.05;

/// `|m - 1|` below which a measure is treated as critical.
pub const CRITICAL_TOLERANCE: f64 = 1e-12;

/// Uniform tabulation of a scale function and its derivative on `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct ScaleGrid {
    step: f64,
    values: Vec<f64>,
    derivatives: Vec<f64>,
    measure: LifespanMeasure,
}

impl ScaleGrid {
    /// Solve for `W` and `W'` of `measure` on `[0, horizon]` with step `step`.
    ///
    /// The horizon is rounded down to a whole number of steps.
    pub fn solve(measure: &LifespanMeasure, horizon: f64, step: f64) -> Result<Self> {
        let b = measure.birth_rate();
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::config("step", format!("must be positive, got {step}")));
        }
        if step * b > MAX_STEP_TIMES_RATE {
            return Err(Error::GridTooCoarse {
                step_times_rate: step * b,
                limit: MAX_STEP_TIMES_RATE,
            });
        }
        if !(horizon >= step) || !horizon.is_finite() {
            return Err(Error::OutOfRange {
                what: "horizon",
                value: horizon,
                lo: step,
                hi: f64::INFINITY,
            });
        }
        let n = (horizon / step + 1e-9).floor() as usize;
        let kernel: Vec<f64> = (0..=n).map(|k| measure.tail_mass(k as f64 * step)).collect();

        let mut values = Vec::with_capacity(n + 1);
        values.push(1.0);
        let diagonal = 1.0 - 0.5 * step * kernel[0];
        for m in 1..=n {
            let history: f64 = values[1..m]
                .iter()
                .zip(kernel[1..m].iter().rev())
                .map(|(w, k)| w * k)
                .sum();
            let sum = 0.5 * values[0] * kernel[m] + history;
            values.push((1.0 + step * sum) / diagonal);
        }

        // Λ-mass of each cell (x_j, x_{j+1}].
        let cell_mass: Vec<f64> = kernel.windows(2).map(|w| w[0] - w[1]).collect();
        let derivatives: Vec<f64> = (0..=n)
            .into_par_iter()
            .map(|m| {
                let convolution: f64 = (0..m)
                    .map(|j| 0.5 * (values[m - j] + values[m - j - 1]) * cell_mass[j])
                    .sum();
                b * values[m] - convolution
            })
            .collect();

        Ok(Self {
            step,
            values,
            derivatives,
            measure: *measure,
        })
    }

    /// Scale function `W_c` of the clonal measure `(1 - p) Λ`.
    pub fn clonal(ctx: &MutationContext, horizon: f64, step: f64) -> Result<Self> {
        Self::solve(&ctx.clonal_measure(), horizon, step)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `W(k h)` for `k = 0..len()`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `W'(k h)` for `k = 0..len()`.
    pub fn derivatives(&self) -> &[f64] {
        &self.derivatives
    }

    pub fn measure(&self) -> &LifespanMeasure {
        &self.measure
    }

    /// Human-readable identifier of the generating measure.
    pub fn measure_tag(&self) -> String {
        self.measure.to_string()
    }

    pub fn birth_rate(&self) -> f64 {
        self.measure.birth_rate()
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange {
                what: "t",
                value: t,
                lo: 0.0,
                hi: horizon,
            });
        }
        let x = t / self.step;
        let k = (x.floor() as usize).min(self.values.len() - 1);
        let frac = x - k as f64;
        if frac < 1e-9 || k + 1 == self.values.len() {
            Ok((k, 0.0))
        } else if frac > 1.0 - 1e-9 {
            Ok((k + 1, 0.0))
        } else {
            Ok((k, frac))
        }
    }

    fn interpolate(table: &[f64], (k, frac): (usize, f64)) -> f64 {
        if frac == 0.0 {
            table[k]
        } else {
            table[k] + frac * (table[k + 1] - table[k])
        }
    }

    /// `W(t)`, linearly interpolated between nodes.
    pub fn w(&self, t: f64) -> Result<f64> {
        Ok(Self::interpolate(&self.values, self.locate(t)?))
    }

    /// `W'(t)`, linearly interpolated between nodes.
    pub fn w_prime(&self, t: f64) -> Result<f64> {
        Ok(Self::interpolate(&self.derivatives, self.locate(t)?))
    }

    /// Law of the number of individuals alive at `t`: an atom at zero, geometric with success
    /// probability `1/W(t)` conditional on being positive.
    pub fn marginal(&self, t: f64) -> Result<GeometricLaw> {
        let w = self.w(t)?;
        let wp = self.w_prime(t)?;
        let b = self.birth_rate();
        let survival = (wp / (b * w)).min(1.0);
        Ok(GeometricLaw {
            p_zero: (1.0 - survival).max(0.0),
            success: 1.0 / w,
            mean: wp / b,
        })
    }
}

/// Zero-inflated geometric law of `Ξ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometricLaw {
    pub p_zero: f64,
    pub success: f64,
    /// `E[Ξ(t)] = W'(t) / b`.
    pub mean: f64,
}

impl GeometricLaw {
    pub fn pmf(&self, n: u64) -> f64 {
        if n == 0 {
            self.p_zero
        } else {
            (1.0 - self.p_zero) * self.success * (1.0 - self.success).powf((n - 1) as f64)
        }
    }

    /// `P(X >= n)`.
    pub fn tail(&self, n: u64) -> f64 {
        if n == 0 {
            1.0
        } else {
            (1.0 - self.p_zero) * (1.0 - self.success).powf((n - 1) as f64)
        }
    }

    /// Sum of the pmf over all `n >= 0`, from the closed geometric series.
    pub fn total_mass(&self) -> f64 {
        self.p_zero + (1.0 - self.p_zero) * self.success / (1.0 - (1.0 - self.success))
    }
}

/// Criticality class of a splitting tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Supercritical,
    Critical,
    Subcritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Supercritical => "supercritical",
            Regime::Critical => "critical",
            Regime::Subcritical => "subcritical",
        })
    }
}

pub fn regime(measure: &LifespanMeasure) -> Regime {
    let m = measure.moments().m;
    if (m - 1.0).abs() <= CRITICAL_TOLERANCE {
        Regime::Critical
    } else if m > 1.0 {
        Regime::Supercritical
    } else {
        Regime::Subcritical
    }
}

fn bisect<F: Fn(f64) -> Result<f64>>(psi: F, mut negative: f64, mut positive: f64) -> Result<f64> {
    for _ in 0..400 {
        let mid = 0.5 * (negative + positive);
        if mid == negative || mid == positive {
            break;
        }
        if psi(mid)? < 0.0 {
            negative = mid;
        } else {
            positive = mid;
        }
    }
    let (fn_, fp) = (psi(negative)?.abs(), psi(positive)?.abs());
    Ok(if fn_ <= fp { negative } else { positive })
}

fn psi_value(measure: &LifespanMeasure) -> impl Fn(f64) -> Result<f64> + '_ {
    move |lambda| measure.psi(lambda).map(|v| v.value)
}

/// Largest root η of ψ; zero unless the tree is supercritical.
pub fn malthusian(measure: &LifespanMeasure) -> Result<f64> {
    if regime(measure) != Regime::Supercritical {
        return Ok(0.0);
    }
    let psi = psi_value(measure);
    let mut eps = 1e-3;
    while psi(eps)? >= 0.0 {
        eps *= 0.5;
        if eps < 1e-300 {
            return Err(Error::NonConvergence("psi is non-negative right of 0".into()));
        }
    }
    let limit = eps * 2f64.powi(60);
    let mut hi = 2.0 * eps;
    while psi(hi)? <= 0.0 {
        hi *= 2.0;
        if hi > limit {
            return Err(Error::NonConvergence(format!("no sign change of psi below {limit}")));
        }
    }
    bisect(psi, eps, hi)
}

/// Negative root η̃ of ψ for a subcritical measure, inside the domain where the exponential
/// moment of Λ is finite.
pub fn negative_root(measure: &LifespanMeasure) -> Result<f64> {
    if regime(measure) != Regime::Subcritical {
        return Err(Error::NoNegativeRoot(format!("{measure} is not subcritical")));
    }
    let psi = psi_value(measure);
    let mut eps = 1e-3;
    while psi(-eps)? >= 0.0 {
        eps *= 0.5;
        if eps < 1e-300 {
            return Err(Error::NoNegativeRoot("psi is non-negative left of 0".into()));
        }
    }
    let boundary = measure.exponential_moment_boundary();
    let mut lo = None;
    for k in 0..=60 {
        let lambda = if boundary.is_finite() {
            boundary * (1.0 - 2f64.powi(-(k + 1)))
        } else {
            -(2f64.powi(k))
        };
        if lambda >= -eps {
            continue;
        }
        match psi(lambda) {
            Ok(v) if v > 0.0 => {
                lo = Some(lambda);
                break;
            }
            Ok(_) | Err(Error::DivergentMoment { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let lo = lo
        .ok_or_else(|| Error::NoNegativeRoot(format!("psi stays negative up to the divergence boundary {boundary}")))?;
    bisect(psi, -eps, lo)
}

/// `P(Ext) = 1 - η / b`.
pub fn extinction_probability(measure: &LifespanMeasure) -> Result<f64> {
    Ok(1.0 - malthusian(measure)? / measure.birth_rate())
}

/// Growth constants governing `W` and `W'` at large times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitConstants {
    pub regime: Regime,
    pub eta: f64,
    pub eta_tilde: Option<f64>,
    /// ψ' at the root driving the decay or growth of `W'` (η, 0 or η̃).
    pub psi_prime_at_root: f64,
    /// Supercritical: `W(t) e^{-ηt} → 1/ψ'(η)`; critical: `W(t)/t → 2/σ²`;
    /// subcritical: `W(t) → 1/(1-m)`.
    pub w_growth_constant: f64,
    /// Supercritical: `W'(t) e^{-ηt} → η/ψ'(η)`; critical: `W'(t) → 2/σ²`;
    /// subcritical: `W'(t) e^{-η̃t} → η̃/ψ'(η̃)` when η̃ exists.
    pub wprime_growth_constant: Option<f64>,
}

impl LimitConstants {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).unwrap_or_else(|_| json!({}))
    }
}

/// Regime-tagged growth constants of `W` and `W'`.
///
/// The side conditions needed for the `W'` limits hold for every family in the catalogue: the
/// exponential, gamma and uniform laws have all moments (so the critical tail condition holds),
/// their ψ blows up to +∞ at the boundary of the exponential-moment domain (so a subcritical
/// negative root exists), and the pure-birth measure is always supercritical.
pub fn growth_constants(measure: &LifespanMeasure) -> Result<LimitConstants> {
    let moments = measure.moments();
    match regime(measure) {
        Regime::Supercritical => {
            let eta = malthusian(measure)?;
            let dpsi = measure.psi(eta)?.derivative;
            Ok(LimitConstants {
                regime: Regime::Supercritical,
                eta,
                eta_tilde: None,
                psi_prime_at_root: dpsi,
                w_growth_constant: 1.0 / dpsi,
                wprime_growth_constant: Some(eta / dpsi),
            })
        }
        Regime::Critical => {
            if !moments.sigma2.is_finite() {
                return Err(Error::DivergentMoment { lambda: 0.0 });
            }
            let slope = 2.0 / moments.sigma2;
            Ok(LimitConstants {
                regime: Regime::Critical,
                eta: 0.0,
                eta_tilde: None,
                psi_prime_at_root: 0.0,
                w_growth_constant: slope,
                wprime_growth_constant: Some(slope),
            })
        }
        Regime::Subcritical => {
            let (eta_tilde, dpsi) = match negative_root(measure) {
                Ok(root) => (Some(root), measure.psi(root)?.derivative),
                Err(Error::NoNegativeRoot(_)) => (None, 1.0 - moments.m),
                Err(e) => return Err(e),
            };
            Ok(LimitConstants {
                regime: Regime::Subcritical,
                eta: 0.0,
                eta_tilde,
                psi_prime_at_root: dpsi,
                w_growth_constant: 1.0 / (1.0 - moments.m),
                wprime_growth_constant: eta_tilde.map(|r| r / dpsi),
            })
        }
    }
}
