//! Problem instances and the budgeted sampler.
//!
//! Task 0 is the target model; tasks `1..=T` are the sources. Each task emits
//! `Y = θ_t + ε_t` with `ε_t ~ N(0, σ_t² Σ̄_t)` and `trace(Σ̄_t) = d`.
//!
//! Draws are produced lazily from one ChaCha8 stream per task, so the samples
//! a task yields depend only on the seed and on how many samples were already
//! taken from that task.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SHAPE_TOL: f64 = 1e-9;

/// Stream index reserved for randomness that belongs to the learner rather
/// than to any task.
pub const LEARNER_STREAM: u64 = u64::MAX;

/// One model: mean, noise scale and (optional) normalized covariance shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub theta: Vec<f64>,
    pub sigma2: f64,
    /// Row-major `d × d` matrix with trace `d`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_shape: Option<Vec<f64>>,
}

impl TaskParams {
    pub fn isotropic(theta: Vec<f64>, sigma2: f64) -> Self {
        Self { theta, sigma2, cov_shape: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum NoiseFactor {
    Zero,
    Isotropic(f64),
    /// Row-major `F` with `F Fᵀ = σ² Σ̄`.
    Full(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    dim: usize,
    n_budget: usize,
    c_theta: f64,
    tasks: Vec<TaskParams>,
}

/// A validated target-plus-sources instance with precomputed distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct ProblemInstance {
    tasks: Vec<TaskParams>,
    n_budget: usize,
    dim: usize,
    c_theta: f64,
    q: Vec<f64>,
    factors: Vec<NoiseFactor>,
}

impl TryFrom<InstanceFile> for ProblemInstance {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        let inst = ProblemInstance::new(f.tasks, f.n_budget, f.c_theta)?;
        if inst.dim != f.dim {
            return Err(Error::DimensionMismatch { expected: f.dim, found: inst.dim });
        }
        Ok(inst)
    }
}

impl From<ProblemInstance> for InstanceFile {
    fn from(p: ProblemInstance) -> Self {
        InstanceFile { dim: p.dim, n_budget: p.n_budget, c_theta: p.c_theta, tasks: p.tasks }
    }
}

/// Builds an instance from parallel lists; index 0 is the target.
pub fn build_instance(
    thetas: Vec<Vec<f64>>,
    sigma2s: Vec<f64>,
    cov_shapes: Option<Vec<Vec<f64>>>,
    n_budget: usize,
    c_theta: f64,
) -> Result<ProblemInstance> {
    if thetas.len() != sigma2s.len() {
        return Err(Error::DimensionMismatch { expected: thetas.len(), found: sigma2s.len() });
    }
    let shapes: Vec<Option<Vec<f64>>> = match cov_shapes {
        Some(s) => {
            if s.len() != thetas.len() {
                return Err(Error::DimensionMismatch { expected: thetas.len(), found: s.len() });
            }
            s.into_iter().map(Some).collect()
        }
        None => vec![None; thetas.len()],
    };
    let tasks = thetas
        .into_iter()
        .zip(sigma2s)
        .zip(shapes)
        .map(|((theta, sigma2), cov_shape)| TaskParams { theta, sigma2, cov_shape })
        .collect();
    ProblemInstance::new(tasks, n_budget, c_theta)
}

impl ProblemInstance {
    /// Validates `tasks` (target first) and precomputes distances and noise factors.
    ///
    /// Sources must have strictly smaller variance than the target. The only
    /// exception is the fully noiseless case `σ_t² = σ₀² = 0`.
    pub fn new(tasks: Vec<TaskParams>, n_budget: usize, c_theta: f64) -> Result<Self> {
        let first = tasks.first().ok_or(Error::EmptyInstance)?;
        let dim = first.theta.len();
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if n_budget == 0 {
            return Err(Error::InvalidParameter("budget must be positive".into()));
        }
        if !(c_theta > 0.0 && c_theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("c_theta {c_theta} must be positive")));
        }
        let sigma0_2 = first.sigma2;
        let mut factors = Vec::with_capacity(tasks.len());
        for (t, task) in tasks.iter().enumerate() {
            if task.theta.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: task.theta.len() });
            }
            if task.theta.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("task {t} has a non-finite mean")));
            }
            if !(task.sigma2 >= 0.0 && task.sigma2.is_finite()) {
                return Err(Error::InvalidParameter(format!("task {t} has invalid variance {}", task.sigma2)));
            }
            if t > 0 && task.sigma2 >= sigma0_2 && !(task.sigma2 == 0.0 && sigma0_2 == 0.0) {
                return Err(Error::VarianceOrderViolation { task: t, sigma2: task.sigma2, sigma0_2 });
            }
            let norm = norm(&task.theta);
            if norm > c_theta {
                return Err(Error::NormBoundViolation { task: t, norm, c_theta });
            }
            factors.push(noise_factor(t, task, dim)?);
        }
        let q = tasks.iter().map(|task| dist(&task.theta, &first.theta)).collect();
        Ok(Self { tasks, n_budget, dim, c_theta, q, factors })
    }

    /// Same models under a different total budget.
    pub fn with_budget(&self, n_budget: usize) -> Result<Self> {
        if n_budget == 0 {
            return Err(Error::InvalidParameter("budget must be positive".into()));
        }
        Ok(Self { n_budget, ..self.clone() })
    }

    pub fn target(&self) -> &TaskParams {
        &self.tasks[0]
    }

    pub fn sources(&self) -> &[TaskParams] {
        &self.tasks[1..]
    }

    /// All tasks, target first.
    pub fn tasks(&self) -> &[TaskParams] {
        &self.tasks
    }

    pub fn task(&self, t: usize) -> &TaskParams {
        &self.tasks[t]
    }

    /// Number of sources `T`.
    pub fn num_sources(&self) -> usize {
        self.tasks.len() - 1
    }

    pub fn n_budget(&self) -> usize {
        self.n_budget
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn c_theta(&self) -> f64 {
        self.c_theta
    }

    pub fn sigma2(&self, t: usize) -> f64 {
        self.tasks[t].sigma2
    }

    /// Variances of all tasks, target first.
    pub fn sigma2s(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.sigma2).collect()
    }

    /// `Q_t` for any task; `Q_0 = 0`.
    pub fn q(&self, t: usize) -> f64 {
        self.q[t]
    }

    pub fn q2(&self, t: usize) -> f64 {
        self.q[t] * self.q[t]
    }

    /// `Q_t` for `t ∈ [T]` in index order.
    pub fn distances(&self) -> &[f64] {
        &self.q[1..]
    }
}

/// Source distances `Q_1..Q_T`.
pub fn distances(instance: &ProblemInstance) -> Vec<f64> {
    instance.distances().to_vec()
}

fn noise_factor(t: usize, task: &TaskParams, d: usize) -> Result<NoiseFactor> {
    let Some(shape) = &task.cov_shape else {
        return Ok(if task.sigma2 == 0.0 { NoiseFactor::Zero } else { NoiseFactor::Isotropic(task.sigma2.sqrt()) });
    };
    let bad = |reason: String| Error::NotPsd { task: t, reason };
    if shape.len() != d * d {
        return Err(bad(format!("expected {} entries, found {}", d * d, shape.len())));
    }
    if shape.iter().any(|x| !x.is_finite()) {
        return Err(bad("non-finite entry".into()));
    }
    let m = DMatrix::from_row_slice(d, d, shape);
    let scale = m.amax().max(1.0);
    if (&m - m.transpose()).amax() > SHAPE_TOL * scale {
        return Err(bad("not symmetric".into()));
    }
    let trace = m.trace();
    if (trace - d as f64).abs() > SHAPE_TOL * d as f64 {
        return Err(bad(format!("trace {trace} differs from {d}")));
    }
    if task.sigma2 == 0.0 {
        return Ok(NoiseFactor::Zero);
    }
    let cov = m * task.sigma2;
    let factor = match cov.clone().cholesky() {
        Some(ch) => ch.l(),
        None => {
            let eig = SymmetricEigen::new(cov);
            let min = eig.eigenvalues.min();
            if min < -SHAPE_TOL * scale * task.sigma2 {
                return Err(bad(format!("negative eigenvalue {min}")));
            }
            let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            eig.eigenvectors * DMatrix::from_diagonal(&root)
        }
    };
    let mut flat = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            flat.push(factor[(i, j)]);
        }
    }
    Ok(NoiseFactor::Full(flat))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `K` samples of dimension `d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    values: Vec<f64>,
}

impl SampleBatch {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: values.len() });
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().ok_or(Error::EmptySample)?.len();
        let mut values = Vec::with_capacity(dim * rows.len());
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.len() });
            }
            values.extend_from_slice(r);
        }
        Self::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Seeded sample source that enforces the total budget and records every draw.
pub struct BudgetedSampler<'a> {
    instance: &'a ProblemInstance,
    seed: u64,
    rngs: Vec<ChaCha8Rng>,
    drawn_per_task: Vec<usize>,
    history_tasks: Vec<usize>,
    history_values: Vec<f64>,
}

impl<'a> BudgetedSampler<'a> {
    pub fn new(instance: &'a ProblemInstance, seed: u64) -> Self {
        let rngs = (0..instance.tasks.len())
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                rng
            })
            .collect();
        Self {
            instance,
            seed,
            rngs,
            drawn_per_task: vec![0; instance.tasks.len()],
            history_tasks: Vec::new(),
            history_values: Vec::new(),
        }
    }

    pub fn instance(&self) -> &'a ProblemInstance {
        self.instance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A generator for the learner's own randomness, independent of every task stream.
    pub fn learner_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(LEARNER_STREAM);
        rng
    }

    pub fn drawn_total(&self) -> usize {
        self.history_tasks.len()
    }

    pub fn drawn_per_task(&self) -> &[usize] {
        &self.drawn_per_task
    }

    pub fn remaining(&self) -> usize {
        self.instance.n_budget - self.drawn_total()
    }

    pub fn history_len(&self) -> usize {
        self.history_tasks.len()
    }

    /// `(A_i, S_i)` pairs in draw order.
    pub fn history(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.history_tasks.iter().copied().zip(self.history_values.chunks_exact(self.instance.dim))
    }

    /// Draws `k` fresh samples from `task`.
    pub fn draw(&mut self, task: usize, k: usize) -> Result<SampleBatch> {
        let tasks = self.instance.tasks.len();
        if task >= tasks {
            return Err(Error::TaskOutOfRange { task, tasks });
        }
        let drawn = self.drawn_total();
        if drawn + k > self.instance.n_budget {
            return Err(Error::BudgetExceeded { requested: k, drawn, budget: self.instance.n_budget });
        }
        let d = self.instance.dim;
        let theta = &self.instance.tasks[task].theta;
        let rng = &mut self.rngs[task];
        let mut values = Vec::with_capacity(k * d);
        match &self.instance.factors[task] {
            NoiseFactor::Zero => {
                for _ in 0..k {
                    values.extend_from_slice(theta);
                }
            }
            NoiseFactor::Isotropic(sigma) => {
                for _ in 0..k {
                    for &m in theta {
                        let z: f64 = StandardNormal.sample(rng);
                        values.push(m + sigma * z);
                    }
                }
            }
            NoiseFactor::Full(f) => {
                let mut z = vec![0.0; d];
                for _ in 0..k {
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(rng);
                    }
                    for i in 0..d {
                        let row = &f[i * d..(i + 1) * d];
                        values.push(theta[i] + row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>());
                    }
                }
            }
        }
        self.drawn_per_task[task] += k;
        self.history_tasks.extend(std::iter::repeat_n(task, k));
        self.history_values.extend_from_slice(&values);
        Ok(SampleBatch { dim: d, values })
    }
}
