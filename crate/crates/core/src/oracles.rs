//! Strong- and weak-oracle benchmark learners.
//!
//! The strong oracle knows every `Q_t` and picks the task minimizing
//! `dσ_t²/N + Q_t²`. The weak oracle only knows which sources satisfy
//! `Q_t² ≤ κ·dσ₀²/N` and picks among them pessimistically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::empirical_mean;
use crate::models::{BudgetedSampler, ProblemInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub t_star: usize,
    pub strong_set: Vec<usize>,
    pub weak_set: Vec<usize>,
    pub strong_bound: f64,
    pub weak_choice: usize,
    pub kappa: f64,
}

/// `dσ_t²/N + Q_t²`.
pub fn oracle_risk(instance: &ProblemInstance, t: usize) -> f64 {
    instance.dim() as f64 * instance.sigma2(t) / instance.n_budget() as f64 + instance.q2(t)
}

/// Lowest index minimizing `dσ_t²/N + Q_t²` over all tasks, target included.
pub fn strong_oracle_index(instance: &ProblemInstance) -> usize {
    let mut best = 0;
    for t in 1..=instance.num_sources() {
        if oracle_risk(instance, t) < oracle_risk(instance, best) {
            best = t;
        }
    }
    best
}

pub fn strong_bound(instance: &ProblemInstance) -> f64 {
    oracle_risk(instance, strong_oracle_index(instance))
}

pub fn strong_oracle_set(instance: &ProblemInstance, kappa: f64) -> Result<Vec<usize>> {
    if !(kappa >= 1.0) {
        return Err(Error::KappaBelowOne(kappa));
    }
    let cut = kappa * strong_bound(instance);
    Ok((0..=instance.num_sources()).filter(|&t| oracle_risk(instance, t) <= cut).collect())
}

/// `{t ∈ [T] : Q_t² ≤ κ·dσ₀²/N}`.
pub fn weak_oracle_set(instance: &ProblemInstance, kappa: f64) -> Vec<usize> {
    let cut = kappa * instance.dim() as f64 * instance.sigma2(0) / instance.n_budget() as f64;
    (1..=instance.num_sources()).filter(|&t| instance.q2(t) <= cut).collect()
}

/// `t̄(set)`: among the minimum-variance members, the one farthest from the
/// target (lowest index on full ties); `0` for the empty set.
pub fn select_t_bar(instance: &ProblemInstance, set: &[usize]) -> usize {
    let mut best: Option<usize> = None;
    for &t in set {
        best = match best {
            None => Some(t),
            Some(b) => {
                let (s, sb) = (instance.sigma2(t), instance.sigma2(b));
                let better = s < sb || (s == sb && (instance.q2(t), b) > (instance.q2(b), t));
                Some(if better { t } else { b })
            }
        };
    }
    best.unwrap_or(0)
}

/// High-probability weak-oracle loss `dσ_t̄²/N + Q_t̄²` for `t̄ = t̄(T_w.o.(κ))`.
pub fn weak_benchmark(instance: &ProblemInstance, kappa: f64) -> f64 {
    oracle_risk(instance, select_t_bar(instance, &weak_oracle_set(instance, kappa)))
}

pub fn oracle_report(instance: &ProblemInstance, kappa: f64) -> Result<OracleReport> {
    let weak_set = weak_oracle_set(instance, kappa);
    Ok(OracleReport {
        t_star: strong_oracle_index(instance),
        strong_set: strong_oracle_set(instance, kappa)?,
        weak_choice: select_t_bar(instance, &weak_set),
        weak_set,
        strong_bound: strong_bound(instance),
        kappa,
    })
}

/// Spends the whole budget on `t̄(T_w.o.(κ))` and returns its empirical mean.
pub fn run_weak_oracle(
    instance: &ProblemInstance,
    sampler: &mut BudgetedSampler<'_>,
    kappa: f64,
) -> Result<(Vec<f64>, OracleReport)> {
    let report = oracle_report(instance, kappa)?;
    let batch = sampler.draw(report.weak_choice, instance.n_budget())?;
    Ok((empirical_mean(&batch)?, report))
}
