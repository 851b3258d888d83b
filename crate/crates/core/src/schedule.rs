//! Noise schedules `(s(t), σ(t))` and the SDE coefficients they induce.
//!
//! Two parameterizations of the linear-β variance-preserving family are built
//! in:
//!
//! * [`ScheduleKind::VpContinuous`]: `s = 1`, `σ = sqrt(1 - ᾱ(t))`.
//! * [`ScheduleKind::DdpmScaled`]: `s = sqrt(ᾱ(t))`, `σ = sqrt((1 - ᾱ(t)) / ᾱ(t))`.
//!
//! Both use the closed-form continuous `ᾱ(t) = exp(-∫₀ᵗ β)`, with
//! `β(t) = β_min + (β_max - β_min) t / T`, so every derivative is analytic. The
//! discrete product table `ᾱ_i = Π_{j≤i} (1 - β_j)` is kept alongside for
//! discrete-index training.
//!
//! Any other `(s, σ)` pair can be plugged in with [`Schedule::custom`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    VpContinuous,
    DdpmScaled,
    Custom,
}

/// `(s, s', σ, σ')` at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub s: f64,
    pub s_prime: f64,
    pub sigma: f64,
    pub sigma_prime: f64,
}

type CustomFn = dyn Fn(f64) -> ScheduleValues + Send + Sync;

#[derive(Clone)]
pub struct Schedule {
    kind: ScheduleKind,
    beta_min: f64,
    beta_max: f64,
    horizon: f64,
    alpha_bar_table: Vec<f64>,
    custom: Option<Arc<CustomFn>>,
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Schedule")
            .field("kind", &self.kind)
            .field("beta_min", &self.beta_min)
            .field("beta_max", &self.beta_max)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

/// Drift, diffusion and offset of the forward SDE at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeCoefficients {
    /// `s'/s`
    pub f: f64,
    /// `s/(η+1) · sqrt(dσ²/dt)`
    pub g: f64,
    /// `η s σ'/(η+1) · Σ_m h_m`
    pub phi: Field,
}

/// Linear-β schedule with `s ≡ 1`, `σ = sqrt(1 - ᾱ)`.
pub fn make_vp_schedule(beta_min: f64, beta_max: f64, horizon: f64) -> Result<Schedule> {
    Schedule::linear_beta(ScheduleKind::VpContinuous, beta_min, beta_max, horizon)
}

/// Linear-β schedule in the DDPM correspondence `s = sqrt(ᾱ)`, `σ = sqrt(1-ᾱ)/sqrt(ᾱ)`.
pub fn make_ddpm_schedule(beta_min: f64, beta_max: f64, horizon: f64) -> Result<Schedule> {
    Schedule::linear_beta(ScheduleKind::DdpmScaled, beta_min, beta_max, horizon)
}

impl Schedule {
    pub fn linear_beta(
        kind: ScheduleKind,
        beta_min: f64,
        beta_max: f64,
        horizon: f64,
    ) -> Result<Schedule> {
        if kind == ScheduleKind::Custom {
            return Err(Error::InvalidArgument(
                "use Schedule::custom for custom schedules".into(),
            ));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Schedule {
            kind,
            beta_min,
            beta_max,
            horizon,
            alpha_bar_table: discrete_alpha_bar(
                beta_min,
                beta_max,
                horizon.round().max(1.0) as usize,
            ),
            custom: None,
        })
    }

    /// A user-supplied schedule. `eval` must return analytic values with
    /// `σ(0) = 0` and `s > 0` on `[0, horizon]`.
    pub fn custom(
        horizon: f64,
        eval: impl Fn(f64) -> ScheduleValues + Send + Sync + 'static,
    ) -> Result<Schedule> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Schedule {
            kind: ScheduleKind::Custom,
            beta_min: 0.0,
            beta_max: 0.0,
            horizon,
            alpha_bar_table: Vec::new(),
            custom: Some(Arc::new(eval)),
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_min, self.beta_max)
    }

    /// `β(t)` of the continuous linear schedule.
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * t / self.horizon
    }

    /// `∫₀ᵗ β(u) du`
    fn beta_integral(&self, t: f64) -> f64 {
        self.beta_min * t + (self.beta_max - self.beta_min) * t * t / (2.0 * self.horizon)
    }

    /// Continuous `ᾱ(t) = exp(-∫₀ᵗ β)`.
    pub fn alpha_bar(&self, t: f64) -> f64 {
        (-self.beta_integral(t)).exp()
    }

    /// Discrete `ᾱ_i` for `i` in `1..=round(T)`; `ᾱ_0 = 1`.
    pub fn alpha_bar_discrete(&self, i: usize) -> Option<f64> {
        if i == 0 {
            return Some(1.0);
        }
        self.alpha_bar_table.get(i - 1).copied()
    }

    pub fn discrete_steps(&self) -> usize {
        self.alpha_bar_table.len()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// `(s, s', σ, σ')` at `t`. At `t = 0` the linear-β kinds report
    /// `σ'(0⁺) = +∞`.
    pub fn evaluate(&self, t: f64) -> Result<ScheduleValues> {
        self.check_time(t)?;
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> ScheduleValues {
        match self.kind {
            ScheduleKind::VpContinuous => {
                let ab = self.alpha_bar(t);
                let sigma = (1.0 - ab).sqrt();
                ScheduleValues {
                    s: 1.0,
                    s_prime: 0.0,
                    sigma,
                    sigma_prime: self.beta(t) * ab / (2.0 * sigma),
                }
            }
            ScheduleKind::DdpmScaled => {
                let b = self.beta_integral(t);
                let ab = (-b).exp();
                let s = ab.sqrt();
                let sigma = b.exp_m1().sqrt();
                let beta = self.beta(t);
                ScheduleValues {
                    s,
                    s_prime: -0.5 * beta * s,
                    sigma,
                    sigma_prime: beta * b.exp() / (2.0 * sigma),
                }
            }
            ScheduleKind::Custom => (self.custom.as_ref().expect("custom schedule has eval"))(t),
        }
    }

    /// `dσ²/dt`, finite at `t = 0` for the linear-β kinds.
    pub fn sigma_sq_rate(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match self.kind {
            ScheduleKind::VpContinuous => self.beta(t) * self.alpha_bar(t),
            ScheduleKind::DdpmScaled => self.beta(t) * self.beta_integral(t).exp(),
            ScheduleKind::Custom => {
                let v = self.eval_unchecked(t);
                2.0 * v.sigma * v.sigma_prime
            }
        })
    }
}

fn discrete_alpha_bar(beta_min: f64, beta_max: f64, steps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for j in 0..steps {
        let frac = if steps > 1 {
            j as f64 / (steps - 1) as f64
        } else {
            0.0
        };
        let beta = beta_min + (beta_max - beta_min) * frac;
        prod *= 1.0 - beta;
        out.push(prod);
    }
    out
}

/// `f`, `g`, `φ` of the forward SDE at `t ∈ (0, T]`.
pub fn sde_coefficients(
    sched: &Schedule,
    eta: f64,
    basis_sum: &Field,
    t: f64,
) -> Result<SdeCoefficients> {
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eta must be >= 0, got {eta}"
        )));
    }
    sched.check_time(t)?;
    if t == 0.0 {
        return Err(Error::Endpoint { t });
    }
    let v = sched.eval_unchecked(t);
    let rate = sched.sigma_sq_rate(t)?;
    if !rate.is_finite() || rate < 0.0 || !v.sigma_prime.is_finite() {
        return Err(Error::Endpoint { t });
    }
    let f = v.s_prime / v.s;
    let g = v.s / (eta + 1.0) * rate.sqrt();
    let phi = basis_sum.scale(eta * v.s * v.sigma_prime / (eta + 1.0));
    Ok(SdeCoefficients { f, g, phi })
}
