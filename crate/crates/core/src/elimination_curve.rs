//! The elimination curve `β(τ)`: the fraction of sources that survive one
//! round when a fraction `τ` of them (the closest ones) is still retained.
//!
//! For `τ > τ_min` the barrier is `(g/ν)·d·σ̄²([m])·m/N` with `m = ⌈τT⌉`; for
//! `τ ≤ τ_min` it is the weak-oracle barrier `(g/ν)·dσ₀²/N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ProblemInstance;

/// Slack used when mapping `τ` to a count, so `τ = m/T` computed in floating
/// point maps back to `m`.
const COUNT_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    q2s: Vec<f64>,
    sigma2s: Vec<f64>,
    sigma0_2: f64,
    n_budget: f64,
    dim: usize,
    g_over_nu: f64,
    tau_min: f64,
    /// Prefix sums of `sigma2s`.
    #[serde(skip)]
    prefix: Vec<f64>,
}

/// The orbit `[1, β(1), β(β(1)), …]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub taus: Vec<f64>,
    /// The orbit stopped because a value repeated.
    pub fixed_point: bool,
    /// The orbit stopped at a value `≤ τ_min`.
    pub reached_tau_min: bool,
}

impl CurveSpec {
    /// Sorts the sources by `Q²` (carrying their variances along) and derives
    /// `τ_min = ⌈σ₀²/σ̄²([T])⌉/T`, capped at 1.
    ///
    /// `n_budget` is the sample count the barrier is computed against. To
    /// predict the rounds of the multi-round algorithm pass its per-round
    /// budget `N̄`, not the total `N`.
    pub fn new(q2s: &[f64], sigma2s: &[f64], sigma0_2: f64, n_budget: f64, dim: usize, g_over_nu: f64) -> Result<Self> {
        if q2s.is_empty() {
            return Err(Error::EmptyInstance);
        }
        if q2s.len() != sigma2s.len() {
            return Err(Error::DimensionMismatch { expected: q2s.len(), found: sigma2s.len() });
        }
        if !(n_budget > 0.0) || dim == 0 || !(g_over_nu > 0.0) {
            return Err(Error::InvalidParameter("budget, dimension and g/ν must be positive".into()));
        }
        let mut order: Vec<usize> = (0..q2s.len()).collect();
        order.sort_by(|&a, &b| q2s[a].total_cmp(&q2s[b]).then(a.cmp(&b)));
        let q2s: Vec<f64> = order.iter().map(|&i| q2s[i]).collect();
        let sigma2s: Vec<f64> = order.iter().map(|&i| sigma2s[i]).collect();
        let t = q2s.len() as f64;
        let mean = sigma2s.iter().sum::<f64>() / t;
        let tau_min = if mean > 0.0 { ((sigma0_2 / mean).ceil() / t).clamp(1.0 / t, 1.0) } else { 1.0 };
        Ok(Self::assemble(q2s, sigma2s, sigma0_2, n_budget, dim, g_over_nu, tau_min))
    }

    /// Curve of an instance's sources against a per-round budget.
    pub fn from_instance(instance: &ProblemInstance, n_budget: f64, g_over_nu: f64) -> Result<Self> {
        let t = instance.num_sources();
        let q2s: Vec<f64> = (1..=t).map(|i| instance.q2(i)).collect();
        let s: Vec<f64> = (1..=t).map(|i| instance.sigma2(i)).collect();
        Self::new(&q2s, &s, instance.sigma2(0), n_budget, instance.dim(), g_over_nu)
    }

    /// Replaces the derived `τ_min`.
    pub fn with_tau_min(self, tau_min: f64) -> Result<Self> {
        if !(tau_min > 0.0 && tau_min <= 1.0) {
            return Err(Error::TauOutOfRange(tau_min));
        }
        Ok(Self { tau_min, ..self })
    }

    fn assemble(
        q2s: Vec<f64>,
        sigma2s: Vec<f64>,
        sigma0_2: f64,
        n_budget: f64,
        dim: usize,
        g_over_nu: f64,
        tau_min: f64,
    ) -> Self {
        let mut prefix = Vec::with_capacity(sigma2s.len() + 1);
        prefix.push(0.0);
        for s in &sigma2s {
            prefix.push(prefix.last().unwrap() + s);
        }
        Self { q2s, sigma2s, sigma0_2, n_budget, dim, g_over_nu, tau_min, prefix }
    }

    pub fn q2s(&self) -> &[f64] {
        &self.q2s
    }

    pub fn sigma2s(&self) -> &[f64] {
        &self.sigma2s
    }

    pub fn num_sources(&self) -> usize {
        self.q2s.len()
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min
    }

    pub fn g_over_nu(&self) -> f64 {
        self.g_over_nu
    }

    /// `⌈τT⌉`, robust to `τ = m/T` rounding.
    pub fn count_for(&self, tau: f64) -> usize {
        let t = self.q2s.len();
        ((tau * t as f64 - COUNT_EPS).ceil().max(1.0) as usize).min(t)
    }

    fn below_tau_min(&self, tau: f64) -> bool {
        tau <= self.tau_min + COUNT_EPS / self.q2s.len() as f64
    }

    /// Barrier on `Q²` applied when a fraction `tau` is retained.
    pub fn barrier(&self, tau: f64) -> f64 {
        let scale = self.g_over_nu * self.dim as f64 / self.n_budget;
        if self.below_tau_min(tau) {
            scale * self.sigma0_2
        } else {
            // σ̄²([m])·m is the prefix sum of the first m variances.
            scale * self.prefix[self.count_for(tau)]
        }
    }

    pub fn beta(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::TauOutOfRange(tau));
        }
        let barrier = self.barrier(tau);
        let kept = self.q2s.partition_point(|&q| q <= barrier);
        Ok(kept as f64 / self.q2s.len() as f64)
    }

    /// `(τ, β(τ))` at every jump point `τ = m/T`.
    pub fn jump_points(&self) -> Vec<(f64, f64)> {
        let t = self.q2s.len();
        (1..=t)
            .map(|m| {
                let tau = m as f64 / t as f64;
                (tau, self.beta(tau).expect("grid point in range"))
            })
            .collect()
    }
}

pub fn beta(curve: &CurveSpec, tau: f64) -> Result<f64> {
    curve.beta(tau)
}

/// Orbit of length at most `r + 1`, cut short at a value `≤ τ_min` or at a
/// repeated value.
pub fn iterate(curve: &CurveSpec, r: usize) -> Orbit {
    let mut taus = vec![1.0];
    let mut fixed_point = false;
    let mut reached_tau_min = curve.below_tau_min(1.0);
    while taus.len() <= r && !reached_tau_min && !fixed_point {
        let last = *taus.last().unwrap();
        let next = curve.beta(last).expect("orbit stays in (0, 1]");
        fixed_point = next == last;
        reached_tau_min = next <= 0.0 || curve.below_tau_min(next);
        taus.push(next);
    }
    Orbit { taus, fixed_point, reached_tau_min }
}

/// `ln(τ_min)/ln(β̄)`: rounds needed when `β(τ) ≤ β̄τ`.
pub fn rounds_needed(beta_bar: f64, tau_min: f64) -> Result<f64> {
    if !(beta_bar > 0.0 && beta_bar < 1.0) {
        return Err(Error::ParamOutOfRange(format!("beta_bar {beta_bar} outside (0, 1)")));
    }
    if !(tau_min > 0.0 && tau_min < 1.0) {
        return Err(Error::ParamOutOfRange(format!("tau_min {tau_min} outside (0, 1)")));
    }
    Ok(tau_min.ln() / beta_bar.ln())
}

/// Largest jump point `τ ∈ (tau_min, 1]` with `β(τ) ≥ τ`.
///
/// `β` is constant on each `((m−1)/T, m/T]` and takes values in multiples of
/// `1/T`, so a crossing of the identity line inside an interval shows up at
/// its right end.
pub fn has_fixed_point_above(curve: &CurveSpec, tau_min: f64) -> Option<f64> {
    curve.jump_points().into_iter().rev().find(|&(tau, b)| tau > tau_min && b >= tau).map(|(tau, _)| tau)
}
