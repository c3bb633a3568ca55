//! The single-source method: split the budget between target and source,
//! then keep the source estimate unless the two estimates are far apart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{empirical_mean, sq_dist, GFunction};
use crate::models::{BudgetedSampler, ProblemInstance};

/// Multiplier on `λ²` in the elimination test.
pub const ELIMINATION_FACTOR: f64 = 10.0;

/// Proven value of the elimination constant `ν`.
pub const NU: f64 = 1.0 / 27.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleSourceOutcome {
    pub estimate: Vec<f64>,
    pub chose_source: bool,
    pub threshold: f64,
    pub stat: f64,
    pub delta_used: f64,
}

/// A confidence level that may have been clamped into range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaStar {
    pub value: f64,
    /// The unclamped formula value.
    pub raw: f64,
    pub clamped: bool,
}

/// True iff `‖θ̃₀ − θ̃_t‖² ≥ 10·λ²`.
pub fn eliminate_predicate(theta0_hat: &[f64], theta_t_hat: &[f64], lambda_max2: f64) -> bool {
    sq_dist(theta0_hat, theta_t_hat) >= ELIMINATION_FACTOR * lambda_max2
}

/// Runs the two-split rule on an instance with exactly one source.
///
/// Both splits use `⌊N/2⌋` samples; with odd `N` one sample is left unused.
pub fn run_single_source(
    instance: &ProblemInstance,
    sampler: &mut BudgetedSampler<'_>,
    delta: f64,
    g: &GFunction,
) -> Result<SingleSourceOutcome> {
    if instance.num_sources() != 1 {
        return Err(Error::InvalidParameter(format!(
            "single-source rule needs T = 1, got T = {}",
            instance.num_sources()
        )));
    }
    let gd = g.eval(delta)?;
    let half = instance.n_budget() / 2;
    if half == 0 {
        return Err(Error::InsufficientBudget("need at least two samples".into()));
    }
    let theta0 = empirical_mean(&sampler.draw(0, half)?)?;
    let theta1 = empirical_mean(&sampler.draw(1, half)?)?;
    let stat = sq_dist(&theta0, &theta1);
    let threshold = ELIMINATION_FACTOR * gd * instance.dim() as f64 * instance.sigma2(0) / half as f64;
    let chose_source = stat < threshold;
    Ok(SingleSourceOutcome {
        estimate: if chose_source { theta1 } else { theta0 },
        chose_source,
        threshold,
        stat,
        delta_used: delta,
    })
}

/// High-probability loss bound `(8g(δ/2)/ν)·min{Q₁² + dσ₁²/N, dσ₀²/N}`.
pub fn single_source_loss_bound(instance: &ProblemInstance, delta: f64, g: &GFunction, nu: f64) -> Result<f64> {
    let d = instance.dim() as f64;
    let n = instance.n_budget() as f64;
    let source = instance.q2(1) + d * instance.sigma2(1) / n;
    let target = d * instance.sigma2(0) / n;
    Ok(8.0 * g.eval(delta / 2.0)? / nu * source.min(target))
}

/// `[σ₁²/(σ₀²+σ₁²) ∨ 1/4 ∨ dσ₀²/(8C_θ²N)]²`, clamped to at most 1/2.
pub fn delta_star_single(instance: &ProblemInstance) -> DeltaStar {
    let (s0, s1) = (instance.sigma2(0), instance.sigma2(1));
    let ratio = if s0 + s1 > 0.0 { s1 / (s0 + s1) } else { 0.0 };
    let c = instance.c_theta();
    let tail = instance.dim() as f64 * s0 / (8.0 * c * c * instance.n_budget() as f64);
    let raw = ratio.max(0.25).max(tail).powi(2);
    DeltaStar { value: raw.min(0.5), raw, clamped: raw > 0.5 }
}
