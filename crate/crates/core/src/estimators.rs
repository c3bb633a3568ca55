//! Empirical means, the radius function `g(δ) = c·ln(e/δ)`, and the
//! variance and trace estimators used when noise levels are unknown.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BudgetedSampler, ProblemInstance, SampleBatch, TaskParams};

/// Constant used when calibration is skipped.
pub const DEFAULT_C: f64 = 4.0;

/// Smallest constant `calibrate_g` will return.
pub const CALIBRATION_FLOOR: f64 = 1.01;

pub const DEFAULT_DELTA_GRID: [f64; 4] = [0.2, 0.1, 0.05, 0.01];

/// `g(δ) = c·ln(e/δ)` with `c > 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GFunction {
    c_const: f64,
}

impl Default for GFunction {
    fn default() -> Self {
        Self { c_const: DEFAULT_C }
    }
}

impl GFunction {
    pub fn new(c_const: f64) -> Result<Self> {
        if !(c_const > 1.0 && c_const.is_finite()) {
            return Err(Error::InvalidParameter(format!("g constant {c_const} must exceed 1")));
        }
        Ok(Self { c_const })
    }

    pub fn c_const(&self) -> f64 {
        self.c_const
    }

    pub fn eval(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::DeltaOutOfRange(delta));
        }
        Ok(self.c_const * (1.0 - delta.ln()))
    }
}

pub fn g_of_delta(g: &GFunction, delta: f64) -> Result<f64> {
    g.eval(delta)
}

/// Coordinate-wise mean of the batch.
pub fn empirical_mean(samples: &SampleBatch) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut mean = vec![0.0; samples.dim()];
    for row in samples.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    let k = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    Ok(mean)
}

/// `(1/(d(K−1))) Σ ‖Y_i − Ȳ‖²`, unbiased for `σ²` when `Σ̄ = I`.
pub fn variance_hat(samples: &SampleBatch) -> Result<f64> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: k });
    }
    // Deviations from the first sample make the result invariant to shifting
    // every sample by the same vector whenever those differences are exact.
    let origin = samples.row(0);
    let centered: Vec<f64> = samples.rows().flat_map(|r| r.iter().zip(origin).map(|(x, o)| x - o)).collect();
    let centered = SampleBatch::new(samples.dim(), centered)?;
    let mean = empirical_mean(&centered)?;
    let ss: f64 = centered.rows().map(|r| sq_dist(r, &mean)).sum();
    Ok(ss / (samples.dim() as f64 * (k - 1) as f64))
}

/// Estimator of `ς² = trace(Σ)/d`; numerically the same statistic as
/// [`variance_hat`], with a weaker concentration guarantee for anisotropic noise.
pub fn trace_hat(samples: &SampleBatch) -> Result<f64> {
    variance_hat(samples)
}

pub fn squared_error(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), found: estimate.len() });
    }
    Ok(sq_dist(estimate, truth))
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Picks the smallest `c ≥ 1.01` whose `g` covers the simulated
/// `(1−δ)`-quantile of `‖θ̄(K) − θ‖²·K/(dσ²)` for every `δ` in the grid.
///
/// Each repetition draws `K` isotropic Gaussian samples and averages them, so
/// the cost is `reps·K·d` normal draws.
pub fn calibrate_g(
    dim: usize,
    sigma2: f64,
    k_samples: usize,
    delta_grid: &[f64],
    reps: usize,
    seed: u64,
) -> Result<GFunction> {
    if dim == 0 || k_samples == 0 {
        return Err(Error::InvalidParameter("dimension and sample count must be positive".into()));
    }
    if reps < 1000 {
        return Err(Error::InvalidParameter(format!("calibration needs at least 1000 reps, got {reps}")));
    }
    if let Some(&bad) = delta_grid.iter().find(|&&d| !(d > 0.0 && d < 1.0)) {
        return Err(Error::DeltaOutOfRange(bad));
    }
    if sigma2 == 0.0 {
        return GFunction::new(CALIBRATION_FLOOR);
    }
    let task = TaskParams::isotropic(vec![0.0; dim], sigma2);
    let inst = ProblemInstance::new(vec![task], k_samples, 1.0)?;
    let scale = k_samples as f64 / (dim as f64 * sigma2);
    let mut errors: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut sampler = BudgetedSampler::new(&inst, seed.wrapping_add(rep));
            let batch = sampler.draw(0, k_samples)?;
            let mean = empirical_mean(&batch)?;
            Ok(mean.iter().map(|x| x * x).sum::<f64>() * scale)
        })
        .collect::<Result<_>>()?;
    errors.sort_by(f64::total_cmp);
    let mut c = CALIBRATION_FLOOR;
    for &delta in delta_grid {
        let rank = ((1.0 - delta) * reps as f64).ceil() as usize;
        let quantile = errors[rank.clamp(1, reps) - 1];
        c = c.max(quantile / (1.0 - delta.ln()));
    }
    GFunction::new(c)
}
