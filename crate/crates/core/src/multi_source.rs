//! Multi-round source elimination.
//!
//! Each round re-estimates every retained source on a fresh share of `N̄`
//! samples, drops those whose estimate is far from the initial target
//! estimate, and stops early once the retained set is small, empty or stable.
//! The final estimate is `N̄` fresh samples from one surviving
//! minimum-variance source, or from the target if none survived.
//!
//! The unknown-variance variants spend one extra batch of `N̄` samples on
//! estimating every task's noise level and plug the estimates into the
//! allocation, the threshold and the stopping rule.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{empirical_mean, sq_dist, trace_hat, variance_hat, GFunction};
use crate::models::{BudgetedSampler, ProblemInstance};
use crate::oracles::{oracle_risk, select_t_bar};
use crate::single_source::{DeltaStar, ELIMINATION_FACTOR, NU};

/// Upper cap for the default round count.
pub const MAX_DEFAULT_ROUNDS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    Known,
    EstimatedVariance,
    EstimatedTrace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EliminationConfig {
    pub r_bar: usize,
    pub delta: f64,
    pub nu: f64,
    pub g: GFunction,
    pub variance_mode: VarianceMode,
}

impl EliminationConfig {
    pub fn new(r_bar: usize, delta: f64, g: GFunction) -> Result<Self> {
        let cfg = Self { r_bar, delta, nu: NU, g, variance_mode: VarianceMode::Known };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_mode(self, variance_mode: VarianceMode) -> Self {
        Self { variance_mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::DeltaOutOfRange(self.delta));
        }
        if self.r_bar == 0 {
            return Err(Error::InvalidParameter("r_bar must be at least 1".into()));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidParameter(format!("nu {} outside (0, 1]", self.nu)));
        }
        Ok(())
    }

    /// `N̄` and `δ̄` for this mode on an instance.
    pub fn schedule(&self, instance: &ProblemInstance) -> (usize, f64) {
        let n = instance.n_budget();
        let t = instance.num_sources() as f64;
        let r = self.r_bar as f64;
        match self.variance_mode {
            VarianceMode::Known => (n / (self.r_bar + 2), self.delta / (t * r + 2.0)),
            _ => (n / (self.r_bar + 3), self.delta / (t * (r + 1.0) + 3.0)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    SmallRetained,
    AllEliminated,
    NoProgress,
    MaxRounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub retained_before: Vec<usize>,
    pub allocations: BTreeMap<usize, usize>,
    pub stats: BTreeMap<usize, f64>,
    pub threshold: f64,
    pub eliminated: Vec<usize>,
    pub stop_reason: Option<StopReason>,
}

impl RoundRecord {
    pub fn retained_after(&self) -> Vec<usize> {
        self.retained_before.iter().copied().filter(|t| !self.eliminated.contains(t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EliminationTrace {
    pub rounds: Vec<RoundRecord>,
    pub t_alg: Vec<usize>,
    pub t_star: usize,
    pub final_estimate: Vec<f64>,
    pub samples_used: usize,
    pub n_bar: usize,
    pub delta_bar: f64,
    /// Per-task noise estimates, target first; absent when variances are known.
    pub variance_estimates: Option<Vec<f64>>,
}

fn mean_over(set: &[usize], sigma2s: &[f64]) -> f64 {
    set.iter().map(|&t| sigma2s[t]).sum::<f64>() / set.len() as f64
}

/// Splits `n_bar` over `retained` in proportion to `σ_t²`, rounding by largest
/// remainder with at least one sample each.
pub fn allocate_round(retained: &[usize], sigma2s: &[f64], n_bar: usize) -> Result<BTreeMap<usize, usize>> {
    if retained.is_empty() {
        return Err(Error::InvalidParameter("allocation over an empty set".into()));
    }
    let m = retained.len();
    if n_bar < m {
        return Err(Error::InsufficientBudget(format!("{n_bar} samples for {m} sources")));
    }
    let total: f64 = retained.iter().map(|&t| sigma2s[t]).sum();
    let raw: Vec<f64> = retained
        .iter()
        .map(|&t| if total > 0.0 { n_bar as f64 * sigma2s[t] / total } else { n_bar as f64 / m as f64 })
        .collect();
    let mut alloc: Vec<usize> = raw.iter().map(|&r| (r.floor() as usize).max(1)).collect();
    let assigned: usize = alloc.iter().sum();
    if assigned > n_bar {
        return Err(Error::InsufficientBudget(format!("one-sample floor needs {assigned} of {n_bar} samples")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (raw[a] - alloc[a] as f64, raw[b] - alloc[b] as f64);
        rb.total_cmp(&ra).then(retained[a].cmp(&retained[b]))
    });
    for &i in order.iter().cycle().take(n_bar - assigned) {
        alloc[i] += 1;
    }
    Ok(retained.iter().copied().zip(alloc).collect())
}

/// `10·g(δ̄)·max(d·σ̄²·|retained|/N̄, d·σ₀²/N̄)`.
pub fn elimination_threshold(
    retained: &[usize],
    sigma2s: &[f64],
    sigma0_2: f64,
    n_bar: usize,
    delta_bar: f64,
    g: &GFunction,
    dim: usize,
) -> Result<f64> {
    if retained.is_empty() {
        return Err(Error::InvalidParameter("threshold over an empty set".into()));
    }
    let d = dim as f64;
    let n = n_bar as f64;
    let spread = d * mean_over(retained, sigma2s) * retained.len() as f64 / n;
    Ok(ELIMINATION_FACTOR * g.eval(delta_bar)? * spread.max(d * sigma0_2 / n))
}

/// The early-stopping rule, checked after the round's eliminations.
pub fn stop_check(
    retained_before: &[usize],
    retained_after: &[usize],
    sigma2s: &[f64],
    sigma0_2: f64,
) -> Option<StopReason> {
    let mean = mean_over(retained_before, sigma2s);
    let small = if mean > 0.0 { retained_before.len() as f64 <= sigma0_2 / mean } else { true };
    if small {
        Some(StopReason::SmallRetained)
    } else if retained_after.is_empty() {
        Some(StopReason::AllEliminated)
    } else if retained_after.len() == retained_before.len() {
        Some(StopReason::NoProgress)
    } else {
        None
    }
}

/// `⌈log₂(T·σ̄²/σ₀²)⌉`, clamped to `[1, 10]`.
pub fn default_rounds(instance: &ProblemInstance) -> usize {
    let t = instance.num_sources();
    if t == 0 {
        return 1;
    }
    let mean = (1..=t).map(|i| instance.sigma2(i)).sum::<f64>() / t as f64;
    let ratio = t as f64 * mean / instance.sigma2(0);
    let r = ratio.log2().ceil();
    if r.is_finite() {
        (r.max(1.0) as usize).min(MAX_DEFAULT_ROUNDS)
    } else if r > 0.0 {
        MAX_DEFAULT_ROUNDS
    } else {
        1
    }
}

/// Runs whichever variant `config.variance_mode` names.
pub fn run_elimination(
    instance: &ProblemInstance,
    sampler: &mut BudgetedSampler<'_>,
    config: &EliminationConfig,
) -> Result<EliminationTrace> {
    match config.variance_mode {
        VarianceMode::Known => run_algorithm1(instance, sampler, config),
        VarianceMode::EstimatedVariance => run_algorithm1_unknown_variance(instance, sampler, config),
        VarianceMode::EstimatedTrace => run_algorithm1_unknown_covariance(instance, sampler, config),
    }
}

/// Elimination with known noise levels. `config.variance_mode` is ignored.
pub fn run_algorithm1(
    instance: &ProblemInstance,
    sampler: &mut BudgetedSampler<'_>,
    config: &EliminationConfig,
) -> Result<EliminationTrace> {
    let config = config.with_mode(VarianceMode::Known);
    config.validate()?;
    let t = instance.num_sources();
    let needed = (config.r_bar + 2) * t;
    if instance.n_budget() < needed {
        return Err(Error::InsufficientBudget(format!("need N ≥ (r̄+2)T = {needed}, have {}", instance.n_budget())));
    }
    let (n_bar, delta_bar) = config.schedule(instance);
    eliminate(instance, sampler, &config, n_bar, delta_bar, &instance.sigma2s(), None)
}

/// Elimination with per-task variances estimated from a preliminary batch.
pub fn run_algorithm1_unknown_variance(
    instance: &ProblemInstance,
    sampler: &mut BudgetedSampler<'_>,
    config: &EliminationConfig,
) -> Result<EliminationTrace> {
    let config = config.with_mode(VarianceMode::EstimatedVariance);
    run_estimated(instance, sampler, &config, variance_hat)
}

/// Like [`run_algorithm1_unknown_variance`] but estimating `trace(Σ_t)/d`,
/// which requires a larger budget.
pub fn run_algorithm1_unknown_covariance(
    instance: &ProblemInstance,
    sampler: &mut BudgetedSampler<'_>,
    config: &EliminationConfig,
) -> Result<EliminationTrace> {
    let config = config.with_mode(VarianceMode::EstimatedTrace);
    run_estimated(instance, sampler, &config, trace_hat)
}

/// Checks the budget conditions of the estimated-variance variants.
pub fn check_estimation_budget(instance: &ProblemInstance, config: &EliminationConfig) -> Result<()> {
    let n = instance.n_budget() as f64;
    let d = instance.dim() as f64;
    let batches = ((config.r_bar + 3) * (instance.num_sources() + 1)) as f64;
    let (_, delta_bar) = config.schedule(instance);
    let log_term = (2.0 / delta_bar).ln();
    if n < 2.0 * batches {
        return Err(Error::PreconditionViolated(format!(
            "N ≥ 2(r̄+3)(T+1) fails: N = {n}, 2(r̄+3)(T+1) = {}",
            2.0 * batches
        )));
    }
    match config.variance_mode {
        VarianceMode::EstimatedTrace => {
            let need = 48.0 * batches * (log_term + d.ln());
            if n < need {
                return Err(Error::PreconditionViolated(format!(
                    "N ≥ 48(r̄+3)(T+1)(ln(2/δ̄) + ln d) fails: N = {n}, bound = {need:.1}"
                )));
            }
        }
        _ => {
            let need = 48.0 * batches * log_term;
            if d * n < need {
                return Err(Error::PreconditionViolated(format!(
                    "dN ≥ 48(r̄+3)(T+1)ln(2/δ̄) fails: dN = {}, bound = {need:.1}",
                    d * n
                )));
            }
        }
    }
    Ok(())
}

fn run_estimated(
    instance: &ProblemInstance,
    sampler: &mut BudgetedSampler<'_>,
    config: &EliminationConfig,
    estimator: fn(&crate::models::SampleBatch) -> Result<f64>,
) -> Result<EliminationTrace> {
    config.validate()?;
    check_estimation_budget(instance, config)?;
    let (n_bar, delta_bar) = config.schedule(instance);
    let per_task = n_bar / (instance.num_sources() + 1);
    let estimates =
        (0..=instance.num_sources()).map(|t| estimator(&sampler.draw(t, per_task)?)).collect::<Result<Vec<f64>>>()?;
    eliminate(instance, sampler, config, n_bar, delta_bar, &estimates, Some(estimates.clone()))
}

/// The shared round loop. `sigma2s` holds the noise levels the learner acts on.
fn eliminate(
    instance: &ProblemInstance,
    sampler: &mut BudgetedSampler<'_>,
    config: &EliminationConfig,
    n_bar: usize,
    delta_bar: f64,
    sigma2s: &[f64],
    variance_estimates: Option<Vec<f64>>,
) -> Result<EliminationTrace> {
    let dim = instance.dim();
    let theta0 = empirical_mean(&sampler.draw(0, n_bar)?)?;
    let mut retained: Vec<usize> = (1..=instance.num_sources()).collect();
    let mut rounds = Vec::new();
    for round in 1..=config.r_bar {
        if retained.is_empty() {
            break;
        }
        let allocations = allocate_round(&retained, sigma2s, n_bar)?;
        let threshold = elimination_threshold(&retained, sigma2s, sigma2s[0], n_bar, delta_bar, &config.g, dim)?;
        let mut stats = BTreeMap::new();
        let mut eliminated = Vec::new();
        for (&t, &k) in &allocations {
            let estimate = empirical_mean(&sampler.draw(t, k)?)?;
            let stat = sq_dist(&theta0, &estimate);
            if stat >= threshold {
                eliminated.push(t);
            }
            stats.insert(t, stat);
        }
        let after: Vec<usize> = retained.iter().copied().filter(|t| !eliminated.contains(t)).collect();
        let mut stop_reason = stop_check(&retained, &after, sigma2s, sigma2s[0]);
        if stop_reason.is_none() && round == config.r_bar {
            stop_reason = Some(StopReason::MaxRounds);
        }
        rounds.push(RoundRecord {
            round,
            retained_before: retained,
            allocations,
            stats,
            threshold,
            eliminated,
            stop_reason,
        });
        retained = after;
        if stop_reason.is_some() {
            break;
        }
    }
    let t_star = choose_final(&retained, sigma2s, sampler);
    let final_estimate = empirical_mean(&sampler.draw(t_star, n_bar)?)?;
    Ok(EliminationTrace {
        rounds,
        t_alg: retained,
        t_star,
        final_estimate,
        samples_used: sampler.drawn_total(),
        n_bar,
        delta_bar,
        variance_estimates,
    })
}

/// Uniform pick among the retained sources of minimum (learner-side) variance.
///
/// The learner cannot see `Q_t`, so the pessimistic tie-break of `t̄` is not
/// available to it; a seeded uniform choice keeps runs reproducible.
fn choose_final(t_alg: &[usize], sigma2s: &[f64], sampler: &BudgetedSampler<'_>) -> usize {
    let Some(min) = t_alg.iter().map(|&t| sigma2s[t]).min_by(f64::total_cmp) else {
        return 0;
    };
    let best: Vec<usize> = t_alg.iter().copied().filter(|&t| sigma2s[t] == min).collect();
    if best.len() == 1 {
        return best[0];
    }
    best[sampler.learner_rng().random_range(0..best.len())]
}

/// `2(r̄+2)·max(g(δ̄), 1)·[dσ²_t̄/N + Q²_t̄]` with `t̄ = t̄(T_alg)`.
pub fn theorem2_loss_bound(instance: &ProblemInstance, t_alg: &[usize], config: &EliminationConfig) -> Result<f64> {
    let (_, delta_bar) = config.with_mode(VarianceMode::Known).schedule(instance);
    let g = config.g.eval(delta_bar)?.max(1.0);
    let t_bar = select_t_bar(instance, t_alg);
    Ok(2.0 * (config.r_bar + 2) as f64 * g * oracle_risk(instance, t_bar))
}

/// `[1/(2(T+1))·(min σ_t²/σ_t'² ∨ min dσ_t²/(8NC_θ²))]²`, clamped to `(0, 1/2]`.
pub fn delta_star_multi(instance: &ProblemInstance) -> DeltaStar {
    let s = instance.sigma2s();
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = if max > 0.0 { min / max } else { 1.0 };
    let c = instance.c_theta();
    let tail = instance.dim() as f64 * min / (8.0 * instance.n_budget() as f64 * c * c);
    let raw = (ratio.max(tail) / (2.0 * (instance.num_sources() + 1) as f64)).powi(2);
    let value = raw.clamp(f64::MIN_POSITIVE, 0.5);
    DeltaStar { value, raw, clamped: value != raw }
}
