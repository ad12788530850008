//! Lifespan measures Λ on (0, ∞] and the Laplace exponent ψ of the associated contour process.
//!
//! A measure is a normalized lifespan law from a small parametric catalogue times the birth rate
//! `b` (the total mass of Λ). Every family has a closed-form tail `Λ((t, ∞])`, closed-form first
//! two moments and a closed-form ψ; [`LifespanMeasure::psi_by_quadrature`] gives an independent
//! numerical route for cross-checks.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde_json::{json, Value};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::quadrature;

/// Normalized lifespan law `Λ(·) / b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LifespanFamily {
    /// Exponential lifespans with death rate `d` (linear birth–death process).
    Exponential { d: f64 },
    /// Infinite lifespans (Yule process); all mass sits at +∞.
    PureBirth,
    /// Gamma lifespans with shape `k` and rate `r`.
    Gamma { k: f64, r: f64 },
    /// Lifespans uniform on `(0, c]`.
    UniformLife { c: f64 },
}

/// The pair `(m, σ²)` of first and second moments of Λ, possibly infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub m: f64,
    pub sigma2: f64,
}

/// `ψ(λ)` together with `ψ'(λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiValue {
    pub value: f64,
    pub derivative: f64,
}

/// The finite lifespan measure Λ with total mass `birth_rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifespanMeasure {
    family: LifespanFamily,
    birth_rate: f64,
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::config(key, format!("must be a positive finite number, got {v}")))
    }
}

// (1 - e^{-x}) / x
fn one_minus_exp_over(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

// (1 - e^{-x}(1 + x)) / x^2, i.e. ∫_0^1 s e^{-x s} ds
fn first_moment_kernel(x: f64) -> f64 {
    if x.abs() < 0.1 {
        // sum_n (-x)^n / (n! (n + 2))
        let mut term = 1.0;
        let mut sum = 0.5;
        for n in 1..14 {
            term *= -x / n as f64;
            sum += term / (n as f64 + 2.0);
        }
        sum
    } else {
        (1.0 - (-x).exp() * (1.0 + x)) / (x * x)
    }
}

impl LifespanMeasure {
    pub fn new(family: LifespanFamily, birth_rate: f64) -> Result<Self> {
        positive("b", birth_rate)?;
        match family {
            LifespanFamily::Exponential { d } => {
                positive("d", d)?;
            }
            LifespanFamily::PureBirth => {}
            LifespanFamily::Gamma { k, r } => {
                positive("k", k)?;
                positive("r", r)?;
            }
            LifespanFamily::UniformLife { c } => {
                positive("c", c)?;
            }
        }
        Ok(Self { family, birth_rate })
    }

    pub fn exponential(d: f64, b: f64) -> Result<Self> {
        Self::new(LifespanFamily::Exponential { d }, b)
    }

    pub fn pure_birth(b: f64) -> Result<Self> {
        Self::new(LifespanFamily::PureBirth, b)
    }

    pub fn gamma(k: f64, r: f64, b: f64) -> Result<Self> {
        Self::new(LifespanFamily::Gamma { k, r }, b)
    }

    pub fn uniform(c: f64, b: f64) -> Result<Self> {
        Self::new(LifespanFamily::UniformLife { c }, b)
    }

    pub fn family(&self) -> LifespanFamily {
        self.family
    }

    /// Total mass `b` of Λ.
    pub fn birth_rate(&self) -> f64 {
        self.birth_rate
    }

    /// The same lifespan law with total mass multiplied by `factor` (Poisson thinning of births).
    pub fn thinned(&self, factor: f64) -> Result<Self> {
        Self::new(self.family, self.birth_rate * factor)
    }

    /// `Λ((t, ∞])`, the density of the birth intensity measure at age `t`.
    pub fn tail_mass(&self, t: f64) -> f64 {
        let b = self.birth_rate;
        if t <= 0.0 {
            return b;
        }
        match self.family {
            LifespanFamily::Exponential { d } => b * (-d * t).exp(),
            LifespanFamily::PureBirth => b,
            LifespanFamily::Gamma { k, r } => b * gamma_ur(k, r * t),
            LifespanFamily::UniformLife { c } => {
                if t >= c {
                    0.0
                } else {
                    b * (1.0 - t / c)
                }
            }
        }
    }

    /// Density of Λ on (0, ∞), or `None` for the pure-birth measure.
    pub fn density(&self, t: f64) -> Option<f64> {
        let b = self.birth_rate;
        if t <= 0.0 {
            return match self.family {
                LifespanFamily::PureBirth => None,
                _ => Some(0.0),
            };
        }
        match self.family {
            LifespanFamily::Exponential { d } => Some(b * d * (-d * t).exp()),
            LifespanFamily::PureBirth => None,
            LifespanFamily::Gamma { k, r } => {
                let log = k * r.ln() + (k - 1.0) * t.ln() - r * t - statrs::function::gamma::ln_gamma(k);
                Some(b * log.exp())
            }
            LifespanFamily::UniformLife { c } => Some(if t <= c { b / c } else { 0.0 }),
        }
    }

    pub fn moments(&self) -> Moments {
        let b = self.birth_rate;
        match self.family {
            LifespanFamily::Exponential { d } => Moments {
                m: b / d,
                sigma2: 2.0 * b / (d * d),
            },
            LifespanFamily::PureBirth => Moments {
                m: f64::INFINITY,
                sigma2: f64::INFINITY,
            },
            LifespanFamily::Gamma { k, r } => Moments {
                m: b * k / r,
                sigma2: b * k * (k + 1.0) / (r * r),
            },
            LifespanFamily::UniformLife { c } => Moments {
                m: b * c / 2.0,
                sigma2: b * c * c / 3.0,
            },
        }
    }

    /// Infimum of the λ for which `∫ e^{-λr} Λ(dr)` is finite. The domain of ψ is open at this
    /// point except for the pure-birth measure, whose domain is `[0, ∞)`.
    pub fn exponential_moment_boundary(&self) -> f64 {
        match self.family {
            LifespanFamily::Exponential { d } => -d,
            LifespanFamily::PureBirth => 0.0,
            LifespanFamily::Gamma { r, .. } => -r,
            LifespanFamily::UniformLife { .. } => f64::NEG_INFINITY,
        }
    }

    /// `ψ(λ) = λ - ∫(1 - e^{-λr}) Λ(dr)` and its derivative, from the closed forms.
    pub fn psi(&self, lambda: f64) -> Result<PsiValue> {
        let b = self.birth_rate;
        match self.family {
            LifespanFamily::Exponential { d } => {
                if lambda <= -d {
                    return Err(Error::DivergentMoment { lambda });
                }
                let s = lambda + d;
                Ok(PsiValue {
                    value: lambda * (s - b) / s,
                    derivative: 1.0 - b * d / (s * s),
                })
            }
            LifespanFamily::PureBirth => {
                if lambda < 0.0 {
                    Err(Error::DivergentMoment { lambda })
                } else if lambda == 0.0 {
                    Ok(PsiValue {
                        value: 0.0,
                        derivative: f64::NEG_INFINITY,
                    })
                } else {
                    Ok(PsiValue {
                        value: lambda - b,
                        derivative: 1.0,
                    })
                }
            }
            LifespanFamily::Gamma { k, r } => {
                if lambda <= -r {
                    return Err(Error::DivergentMoment { lambda });
                }
                let ratio = r / (r + lambda);
                let laplace = ratio.powf(k);
                Ok(PsiValue {
                    value: lambda - b + b * laplace,
                    derivative: 1.0 - b * k * laplace / (r + lambda),
                })
            }
            LifespanFamily::UniformLife { c } => {
                let x = lambda * c;
                let value = lambda - b + b * one_minus_exp_over(x);
                if !value.is_finite() {
                    return Err(Error::DivergentMoment { lambda });
                }
                Ok(PsiValue {
                    value,
                    derivative: 1.0 - b * c * first_moment_kernel(x),
                })
            }
        }
    }

    /// ψ(λ) by adaptive quadrature of its defining integral against the density of Λ.
    /// Independent of the closed forms used by [`psi`](Self::psi).
    pub fn psi_by_quadrature(&self, lambda: f64) -> Result<PsiValue> {
        if let LifespanFamily::PureBirth = self.family {
            // The whole mass sits at +∞, where 1 - e^{-λr} = 1 and r e^{-λr} = 0.
            return self.psi(lambda);
        }
        if lambda <= self.exponential_moment_boundary() {
            return Err(Error::DivergentMoment { lambda });
        }
        let upper = self.truncation_point(1e-14, lambda);
        let dens = |r: f64| self.density(r).unwrap_or(0.0);
        let mut breaks = vec![0.0];
        if let LifespanFamily::UniformLife { c } = self.family {
            breaks.push(c.min(upper));
        }
        breaks.push(upper);
        let mut jump_integral = 0.0;
        let mut moment_integral = 0.0;
        for w in breaks.windows(2) {
            jump_integral +=
                quadrature::integrate(|r| -(-lambda * r).exp_m1() * dens(r), w[0], w[1], 1e-15, 1e-13).value;
            moment_integral +=
                quadrature::integrate(|r| r * (-lambda * r).exp() * dens(r), w[0], w[1], 1e-15, 1e-13).value;
        }
        Ok(PsiValue {
            value: lambda - jump_integral,
            derivative: 1.0 - moment_integral,
        })
    }

    // Point beyond which the tail of Λ, weighted by e^{-λr} r^2 for negative λ, is negligible.
    fn truncation_point(&self, tol: f64, lambda: f64) -> f64 {
        match self.family {
            LifespanFamily::UniformLife { c } => c,
            _ => {
                let mut upper = 1.0;
                let weight = |t: f64| (1.0 + t * t) * (-lambda.min(0.0) * t).exp();
                while self.tail_mass(upper) * weight(upper) > tol * self.birth_rate && upper < 1e6 {
                    upper *= 1.5;
                }
                upper
            }
        }
    }

    /// One draw from the lifespan law `Λ(·) / b`; `+∞` for the pure-birth measure.
    pub fn sample_lifespan<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            LifespanFamily::Exponential { d } => Exp::new(d).expect("validated rate").sample(rng),
            LifespanFamily::PureBirth => f64::INFINITY,
            LifespanFamily::Gamma { k, r } => Gamma::new(k, 1.0 / r).expect("validated shape").sample(rng),
            LifespanFamily::UniformLife { c } => c * (1.0 - rng.random::<f64>()),
        }
    }

    /// Parse `{"family": "exponential", "d": 1.0, "b": 2.0}` and the analogous forms
    /// `pure_birth` (`b`), `gamma` (`k`, `r`, `b`) and `uniform` (`c`, `b`).
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::config("measure", "expected a JSON object"))?;
        let num = |key: &str| -> Result<f64> {
            match obj.get(key) {
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| Error::config(key, format!("expected a number, got {v}"))),
                None => Err(Error::config(key, "missing")),
            }
        };
        let family = obj
            .get("family")
            .ok_or_else(|| Error::config("family", "missing"))?
            .as_str()
            .ok_or_else(|| Error::config("family", "expected a string"))?;
        let b = num("b")?;
        let family = match family {
            "exponential" => LifespanFamily::Exponential { d: num("d")? },
            "pure_birth" => LifespanFamily::PureBirth,
            "gamma" => LifespanFamily::Gamma {
                k: num("k")?,
                r: num("r")?,
            },
            "uniform" => LifespanFamily::UniformLife { c: num("c")? },
            other => {
                return Err(Error::config(
                    "family",
                    format!("unknown family `{other}` (expected exponential, pure_birth, gamma or uniform)"),
                ))
            }
        };
        Self::new(family, b)
    }

    pub fn to_json(&self) -> Value {
        let b = self.birth_rate;
        match self.family {
            LifespanFamily::Exponential { d } => json!({"family": "exponential", "d": d, "b": b}),
            LifespanFamily::PureBirth => json!({"family": "pure_birth", "b": b}),
            LifespanFamily::Gamma { k, r } => json!({"family": "gamma", "k": k, "r": r, "b": b}),
            LifespanFamily::UniformLife { c } => json!({"family": "uniform", "c": c, "b": b}),
        }
    }
}

impl fmt::Display for LifespanMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.birth_rate;
        match self.family {
            LifespanFamily::Exponential { d } => write!(f, "exponential(d={d}, b={b})"),
            LifespanFamily::PureBirth => write!(f, "pure_birth(b={b})"),
            LifespanFamily::Gamma { k, r } => write!(f, "gamma(k={k}, r={r}, b={b})"),
            LifespanFamily::UniformLife { c } => write!(f, "uniform(c={c}, b={b})"),
        }
    }
}

/// A lifespan measure together with the probability `p` that a newborn is a mutant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutationContext {
    measure: LifespanMeasure,
    mutation_prob: f64,
}

impl MutationContext {
    pub fn new(measure: LifespanMeasure, mutation_prob: f64) -> Result<Self> {
        if !(mutation_prob > 0.0 && mutation_prob < 1.0) {
            return Err(Error::config("p", format!("must lie in (0, 1), got {mutation_prob}")));
        }
        Ok(Self { measure, mutation_prob })
    }

    pub fn measure(&self) -> &LifespanMeasure {
        &self.measure
    }

    pub fn mutation_prob(&self) -> f64 {
        self.mutation_prob
    }

    pub fn birth_rate(&self) -> f64 {
        self.measure.birth_rate
    }

    /// `(1 - p) b`, the total mass of the clonal measure.
    pub fn clonal_mass(&self) -> f64 {
        (1.0 - self.mutation_prob) * self.measure.birth_rate
    }

    /// `Λ_c = (1 - p) Λ`, the lifespan measure of the clonal splitting tree.
    pub fn clonal_measure(&self) -> LifespanMeasure {
        LifespanMeasure {
            family: self.measure.family,
            birth_rate: self.clonal_mass(),
        }
    }

    /// `ψ_c(λ) = pλ + (1 - p) ψ(λ)`.
    pub fn psi_c(&self, lambda: f64) -> Result<PsiValue> {
        let p = self.mutation_prob;
        let psi = self.measure.psi(lambda)?;
        Ok(PsiValue {
            value: p * lambda + (1.0 - p) * psi.value,
            derivative: p + (1.0 - p) * psi.derivative,
        })
    }
}
