//! Seeded simulation harness and command-line entry point.
//!
//! Every experiment runs its repetitions in parallel with per-repetition
//! seeds `master_seed + rep` and aggregates them in repetition order, so a
//! report depends only on its configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::elimination_curve::CurveSpec;
use crate::error::{Error, Result};
use crate::estimators::{calibrate_g, sq_dist, GFunction, DEFAULT_DELTA_GRID};
use crate::lower_bounds::BoundReport;
use crate::models::{BudgetedSampler, ProblemInstance, TaskParams};
use crate::multi_source::{default_rounds, run_elimination, theorem2_loss_bound, EliminationConfig, VarianceMode};
use crate::oracles::weak_oracle_set;
use crate::single_source::{run_single_source, single_source_loss_bound, NU};

const CALIBRATION_REPS: usize = 10_000;
const CALIBRATION_SAMPLES: usize = 100;
const CALIBRATION_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

fn default_reps() -> usize {
    200
}
fn default_delta() -> f64 {
    0.05
}
fn default_nu() -> f64 {
    NU
}
fn default_mode() -> VarianceMode {
    VarianceMode::Known
}

/// Learner settings shared by all experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSettings {
    /// Round cap; `None` uses [`default_rounds`].
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Constant of `g`; `None` calibrates it by simulation.
    #[serde(default)]
    pub g_const: Option<f64>,
    #[serde(default = "default_mode")]
    pub variance_mode: VarianceMode,
}

impl Default for AlgorithmSettings {
    fn default() -> Self {
        Self { rounds: None, delta: 0.05, nu: NU, g_const: None, variance_mode: VarianceMode::Known }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TwoSourceSweep,
    TypeMixture,
    GammaPrecisionRecall,
    CurveExport,
    BoundReport,
    SingleSource,
    Algorithm1,
}

/// Per-experiment parameters. Distances are given normalized,
/// `Q̃² = Q²/(dσ₀²/N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ExperimentParams {
    TwoSourceSweep {
        q2_tilde_grid: Vec<f64>,
        n_budget: usize,
        dim: usize,
        sigma2: f64,
        sigma0_2: f64,
    },
    TypeMixture {
        t_total: usize,
        /// Levels used on both axes; cells with `far + close > t_total` are skipped.
        levels: Vec<usize>,
        /// Explicit `(far, close)` cells; overrides `levels`.
        #[serde(default)]
        cells: Option<Vec<(usize, usize)>>,
        n_budget: usize,
        dim: usize,
        sigma2: f64,
        sigma0_2: f64,
        q2_tilde_close: f64,
        q2_tilde_medium: f64,
        q2_tilde_far: f64,
    },
    GammaPrecisionRecall {
        gammas: Vec<f64>,
        t_total: usize,
        n_zero: usize,
        n_budget: usize,
        dim: usize,
        sigma2: f64,
        sigma0_2: f64,
    },
    CurveExport {
        /// Curve of this instance's sources against the per-round budget.
        #[serde(default)]
        instance: Option<ProblemInstance>,
        /// Normalized example: `Q_t² = t^{1/3}/divisor`, barrier `m/T`.
        t_total: usize,
        divisor: f64,
        tau_min: f64,
    },
    BoundReport {
        instance: ProblemInstance,
    },
    SingleSource {
        instance: ProblemInstance,
    },
    Algorithm1 {
        instance: ProblemInstance,
    },
}

impl ExperimentParams {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Self::TwoSourceSweep { .. } => ExperimentKind::TwoSourceSweep,
            Self::TypeMixture { .. } => ExperimentKind::TypeMixture,
            Self::GammaPrecisionRecall { .. } => ExperimentKind::GammaPrecisionRecall,
            Self::CurveExport { .. } => ExperimentKind::CurveExport,
            Self::BoundReport { .. } => ExperimentKind::BoundReport,
            Self::SingleSource { .. } => ExperimentKind::SingleSource,
            Self::Algorithm1 { .. } => ExperimentKind::Algorithm1,
        }
    }

    /// Published defaults; `None` for kinds that need an instance.
    pub fn defaults(kind: ExperimentKind) -> Option<Self> {
        Some(match kind {
            ExperimentKind::TwoSourceSweep => Self::TwoSourceSweep {
                q2_tilde_grid: vec![0.0, 10.0, 25.0, 40.0, 50.0, 75.0, 100.0, 150.0, 200.0, 300.0, 400.0],
                n_budget: 1000,
                dim: 2,
                sigma2: 1.0,
                sigma0_2: 10.0,
            },
            ExperimentKind::TypeMixture => Self::TypeMixture {
                t_total: 100,
                levels: vec![0, 10, 20, 50, 80, 100],
                cells: None,
                n_budget: 100_000,
                dim: 2,
                sigma2: 0.1,
                sigma0_2: 1.0,
                q2_tilde_close: 0.0,
                q2_tilde_medium: 10.0,
                q2_tilde_far: 2e4,
            },
            ExperimentKind::GammaPrecisionRecall => Self::GammaPrecisionRecall {
                gammas: vec![0.5, 1.0, 1.5, 2.0],
                t_total: 100,
                n_zero: 10,
                n_budget: 100_000,
                dim: 2,
                sigma2: 0.1,
                sigma0_2: 1.0,
            },
            ExperimentKind::CurveExport => {
                Self::CurveExport { instance: None, t_total: 1000, divisor: 9.0, tau_min: 0.2 }
            }
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub params: ExperimentParams,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub algorithm: AlgorithmSettings,
    /// `κ` of the reference weak-oracle set for precision and recall.
    #[serde(default)]
    pub kappa: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(params: ExperimentParams) -> Self {
        Self { params, reps: 200, master_seed: 0, algorithm: AlgorithmSettings::default(), kappa: None }
    }

    pub fn defaults(kind: ExperimentKind) -> Option<Self> {
        ExperimentParams::defaults(kind).map(Self::new)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        let a = &self.algorithm;
        if !(a.delta > 0.0 && a.delta < 1.0) {
            return bad(format!("delta {} outside (0, 1)", a.delta));
        }
        if !(a.nu > 0.0 && a.nu <= 1.0) {
            return bad(format!("nu {} outside (0, 1]", a.nu));
        }
        if a.rounds == Some(0) {
            return bad("rounds must be at least 1".into());
        }
        if let Some(c) = a.g_const {
            if !(c > 1.0) {
                return bad(format!("g_const {c} must exceed 1"));
            }
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0) {
                return bad(format!("kappa {k} must be positive"));
            }
        }
        let positive = |name: &str, ok: bool| if ok { Ok(()) } else { bad(format!("{name} must be positive")) };
        match &self.params {
            ExperimentParams::TwoSourceSweep { q2_tilde_grid, n_budget, dim, sigma2, sigma0_2 } => {
                positive("n_budget", *n_budget > 0)?;
                positive("dim", *dim > 0)?;
                positive("sigma0_2", *sigma0_2 > *sigma2 && *sigma2 >= 0.0)?;
                if q2_tilde_grid.iter().any(|q| !(*q >= 0.0)) {
                    return bad("grid values must be nonnegative".into());
                }
            }
            ExperimentParams::TypeMixture { t_total, cells, n_budget, dim, sigma2, sigma0_2, .. } => {
                positive("t_total", *t_total > 0)?;
                positive("n_budget", *n_budget > 0)?;
                positive("dim", *dim > 0)?;
                positive("sigma0_2", *sigma0_2 > *sigma2 && *sigma2 >= 0.0)?;
                for &(far, close) in cells.iter().flatten() {
                    if far + close > *t_total {
                        return Err(Error::InfeasibleMixture { far, close, total: *t_total });
                    }
                }
            }
            ExperimentParams::GammaPrecisionRecall { t_total, n_zero, n_budget, dim, sigma2, sigma0_2, .. } => {
                positive("t_total", *t_total > 0 && n_zero <= t_total)?;
                positive("n_budget", *n_budget > 0)?;
                positive("dim", *dim > 0)?;
                positive("sigma0_2", *sigma0_2 > *sigma2 && *sigma2 >= 0.0)?;
            }
            ExperimentParams::CurveExport { instance, t_total, divisor, tau_min } => {
                if instance.is_none() {
                    positive("t_total", *t_total > 0)?;
                    positive("divisor", *divisor > 0.0)?;
                    if !(*tau_min > 0.0 && *tau_min <= 1.0) {
                        return bad(format!("tau_min {tau_min} outside (0, 1]"));
                    }
                }
            }
            ExperimentParams::SingleSource { instance } => {
                if instance.num_sources() != 1 {
                    return bad("single-source needs exactly one source".into());
                }
            }
            ExperimentParams::BoundReport { .. } | ExperimentParams::Algorithm1 { .. } => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// One repetition of an elimination run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub loss: f64,
    pub t_star: usize,
    pub t_alg: Vec<usize>,
    pub samples_used: usize,
    pub rounds: usize,
    pub bound_held: Option<bool>,
}

/// Aggregates of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell_id: String,
    pub x: f64,
    pub y: f64,
    pub reps: usize,
    pub r_bar: usize,
    pub mean_loss: f64,
    pub loss_se: f64,
    pub loss_q10: f64,
    pub loss_q50: f64,
    pub loss_q90: f64,
    pub precision: f64,
    pub recall: f64,
    pub recall_min: f64,
    /// Repetitions whose retained set was empty (precision reported as 1).
    pub precision_undefined: usize,
    pub bound_coverage: Option<f64>,
    pub samples_used_mean: f64,
    pub samples_used_max: usize,
    pub retained_mean: f64,
    /// `P(t* = t)` for every task, target first.
    pub choose_probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub reps: usize,
    pub config_hash: String,
    pub wall_time_secs: f64,
    pub g_const: f64,
    pub g_calibrated: bool,
    pub delta: f64,
    pub nu: f64,
    pub kappa: f64,
    pub variance_mode: VarianceMode,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub curves: Vec<CurveTable>,
    pub bound: Option<BoundReport>,
    pub metadata: Metadata,
}

/// Instance with `θ₀ = 0` and sources on the first axis at normalized
/// squared distances `q2_tildes`.
pub fn line_instance(
    q2_tildes: &[f64],
    sigma2: f64,
    sigma0_2: f64,
    n_budget: usize,
    dim: usize,
) -> Result<ProblemInstance> {
    let unit = dim as f64 * sigma0_2 / n_budget as f64;
    let mut tasks = vec![TaskParams::isotropic(vec![0.0; dim], sigma0_2)];
    let mut max_q: f64 = 0.0;
    for &q2t in q2_tildes {
        let q = (q2t * unit).sqrt();
        max_q = max_q.max(q);
        let mut theta = vec![0.0; dim];
        theta[0] = q;
        tasks.push(TaskParams::isotropic(theta, sigma2));
    }
    ProblemInstance::new(tasks, n_budget, max_q.max(1.0) * 2.0)
}

/// Calibrated `g` for the experiment dimension, or the configured constant.
pub fn resolve_g(settings: &AlgorithmSettings, dim: usize, master_seed: u64) -> Result<GFunction> {
    match settings.g_const {
        Some(c) => GFunction::new(c),
        None => calibrate_g(
            dim,
            1.0,
            CALIBRATION_SAMPLES,
            &DEFAULT_DELTA_GRID,
            CALIBRATION_REPS,
            master_seed ^ CALIBRATION_SEED_MIX,
        ),
    }
}

pub fn elimination_config(
    settings: &AlgorithmSettings,
    g: GFunction,
    instance: &ProblemInstance,
) -> Result<EliminationConfig> {
    let r_bar = settings.rounds.unwrap_or_else(|| default_rounds(instance));
    let cfg = EliminationConfig { nu: settings.nu, ..EliminationConfig::new(r_bar, settings.delta, g)? };
    cfg.validate()?;
    Ok(cfg.with_mode(settings.variance_mode))
}

/// Runs `reps` seeded repetitions of the elimination algorithm.
pub fn simulate(
    instance: &ProblemInstance,
    config: &EliminationConfig,
    reps: usize,
    master_seed: u64,
) -> Result<Vec<RepOutcome>> {
    let theta0 = &instance.target().theta;
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut sampler = BudgetedSampler::new(instance, master_seed.wrapping_add(rep));
            let trace = run_elimination(instance, &mut sampler, config)?;
            if trace.samples_used > instance.n_budget() {
                return Err(Error::BudgetExceeded {
                    requested: 0,
                    drawn: trace.samples_used,
                    budget: instance.n_budget(),
                });
            }
            let loss = sq_dist(&trace.final_estimate, theta0);
            let bound = theorem2_loss_bound(instance, &trace.t_alg, config)?;
            Ok(RepOutcome {
                loss,
                t_star: trace.t_star,
                t_alg: trace.t_alg,
                samples_used: trace.samples_used,
                rounds: trace.rounds.len(),
                bound_held: Some(loss <= bound),
            })
        })
        .collect()
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Summarizes repetitions; `reference` is the weak-oracle set used for
/// precision and recall.
pub fn summarize(
    cell_id: String,
    x: f64,
    y: f64,
    r_bar: usize,
    tasks: usize,
    reference: &[usize],
    outcomes: &[RepOutcome],
) -> ReportRow {
    let n = outcomes.len() as f64;
    let losses: Vec<f64> = outcomes.iter().map(|o| o.loss).collect();
    let mean_loss = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean_loss).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = losses.clone();
    sorted.sort_by(f64::total_cmp);
    let mut choose = vec![0.0; tasks];
    let (mut precision, mut recall, mut recall_min, mut undefined) = (0.0, 0.0, f64::INFINITY, 0);
    for o in outcomes {
        choose[o.t_star] += 1.0;
        let hits = o.t_alg.iter().filter(|t| reference.contains(t)).count() as f64;
        precision += if o.t_alg.is_empty() {
            undefined += 1;
            1.0
        } else {
            hits / o.t_alg.len() as f64
        };
        let r = if reference.is_empty() { 1.0 } else { hits / reference.len() as f64 };
        recall += r;
        recall_min = recall_min.min(r);
    }
    let held: Vec<bool> = outcomes.iter().filter_map(|o| o.bound_held).collect();
    ReportRow {
        cell_id,
        x,
        y,
        reps: outcomes.len(),
        r_bar,
        mean_loss,
        loss_se: (var / n).sqrt(),
        loss_q10: nearest_rank(&sorted, 0.1),
        loss_q50: nearest_rank(&sorted, 0.5),
        loss_q90: nearest_rank(&sorted, 0.9),
        precision: precision / n,
        recall: recall / n,
        recall_min,
        precision_undefined: undefined,
        bound_coverage: (!held.is_empty()).then(|| held.iter().filter(|&&h| h).count() as f64 / held.len() as f64),
        samples_used_mean: outcomes.iter().map(|o| o.samples_used as f64).sum::<f64>() / n,
        samples_used_max: outcomes.iter().map(|o| o.samples_used).max().unwrap_or(0),
        retained_mean: outcomes.iter().map(|o| o.t_alg.len() as f64).sum::<f64>() / n,
        choose_probs: choose.into_iter().map(|c| c / n).collect(),
    }
}

struct Runner<'a> {
    config: &'a ExperimentConfig,
    g: GFunction,
    kappa: f64,
}

impl Runner<'_> {
    fn cell(&self, instance: &ProblemInstance, cell_id: String, x: f64, y: f64) -> Result<ReportRow> {
        let cfg = elimination_config(&self.config.algorithm, self.g, instance)?;
        let outcomes = simulate(instance, &cfg, self.config.reps, self.config.master_seed)?;
        let reference = weak_oracle_set(instance, self.kappa);
        Ok(summarize(cell_id, x, y, cfg.r_bar, instance.num_sources() + 1, &reference, &outcomes))
    }
}

fn experiment_dim(params: &ExperimentParams) -> usize {
    match params {
        ExperimentParams::TwoSourceSweep { dim, .. }
        | ExperimentParams::TypeMixture { dim, .. }
        | ExperimentParams::GammaPrecisionRecall { dim, .. } => *dim,
        ExperimentParams::CurveExport { instance, .. } => instance.as_ref().map_or(1, |i| i.dim()),
        ExperimentParams::BoundReport { instance }
        | ExperimentParams::SingleSource { instance }
        | ExperimentParams::Algorithm1 { instance } => instance.dim(),
    }
}

/// Runs any configured experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let settings = &config.algorithm;
    let needs_g = !matches!(
        config.params,
        ExperimentParams::BoundReport { .. } | ExperimentParams::CurveExport { instance: None, .. }
    );
    let g = if needs_g {
        resolve_g(settings, experiment_dim(&config.params), config.master_seed)?
    } else {
        GFunction::default()
    };
    let kappa = config.kappa.unwrap_or(1.0);
    let runner = Runner { config, g, kappa };
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut bound = None;
    let mut flags = Vec::new();
    match &config.params {
        ExperimentParams::TwoSourceSweep { q2_tilde_grid, n_budget, dim, sigma2, sigma0_2 } => {
            for &q2t in q2_tilde_grid {
                let inst = line_instance(&[0.0, q2t], *sigma2, *sigma0_2, *n_budget, *dim)?;
                rows.push(runner.cell(&inst, format!("q2_tilde={q2t}"), q2t, 0.0)?);
            }
        }
        ExperimentParams::TypeMixture {
            t_total,
            levels,
            cells,
            n_budget,
            dim,
            sigma2,
            sigma0_2,
            q2_tilde_close,
            q2_tilde_medium,
            q2_tilde_far,
        } => {
            let grid: Vec<(usize, usize)> = match cells {
                Some(c) => c.clone(),
                None => levels
                    .iter()
                    .flat_map(|&f| levels.iter().map(move |&c| (f, c)))
                    .filter(|&(f, c)| f + c <= *t_total)
                    .collect(),
            };
            for (far, close) in grid {
                let medium = t_total - far - close;
                let q2s: Vec<f64> = std::iter::repeat_n(*q2_tilde_close, close)
                    .chain(std::iter::repeat_n(*q2_tilde_medium, medium))
                    .chain(std::iter::repeat_n(*q2_tilde_far, far))
                    .collect();
                let inst = line_instance(&q2s, *sigma2, *sigma0_2, *n_budget, *dim)?;
                let id = format!("far={far},close={close}");
                rows.push(runner.cell(&inst, id, far as f64, close as f64)?);
            }
        }
        ExperimentParams::GammaPrecisionRecall { gammas, t_total, n_zero, n_budget, dim, sigma2, sigma0_2 } => {
            for &gamma in gammas {
                let inst = gamma_instance(gamma, *t_total, *n_zero, *sigma2, *sigma0_2, *n_budget, *dim)?;
                let row = runner.cell(&inst, format!("gamma={gamma}"), gamma, 0.0)?;
                let cfg = elimination_config(settings, g, &inst)?;
                let (n_bar, delta_bar) = cfg.schedule(&inst);
                let curve = CurveSpec::from_instance(&inst, n_bar as f64, g.eval(delta_bar)? / cfg.nu)?;
                curves.push(CurveTable { label: format!("gamma-{gamma}"), points: curve.jump_points() });
                rows.push(row);
            }
        }
        ExperimentParams::CurveExport { instance, t_total, divisor, tau_min } => {
            let curve = match instance {
                Some(inst) => {
                    let cfg = elimination_config(settings, g, inst)?;
                    let (n_bar, delta_bar) = cfg.schedule(inst);
                    CurveSpec::from_instance(inst, n_bar as f64, g.eval(delta_bar)? / cfg.nu)?
                }
                None => example_curve(*t_total, *divisor, *tau_min)?,
            };
            curves.push(CurveTable { label: "curve".into(), points: curve.jump_points() });
        }
        ExperimentParams::BoundReport { instance } => {
            let report = BoundReport::for_instance(instance);
            flags.extend(report.notes.iter().cloned());
            bound = Some(report);
        }
        ExperimentParams::SingleSource { instance } => {
            rows.push(single_source_cell(instance, config, &g)?);
        }
        ExperimentParams::Algorithm1 { instance } => {
            rows.push(runner.cell(instance, "instance".into(), 0.0, 0.0)?);
        }
    }
    let undefined: usize = rows.iter().map(|r| r.precision_undefined).sum();
    if undefined > 0 {
        flags.push(format!("precision reported as 1 for {undefined} repetitions with an empty retained set"));
    }
    Ok(ExperimentReport {
        rows,
        curves,
        bound,
        metadata: Metadata {
            experiment: config.params.kind(),
            master_seed: config.master_seed,
            reps: config.reps,
            config_hash: config.hash(),
            wall_time_secs: start.elapsed().as_secs_f64(),
            g_const: g.c_const(),
            g_calibrated: needs_g && settings.g_const.is_none(),
            delta: settings.delta,
            nu: settings.nu,
            kappa,
            variance_mode: settings.variance_mode,
            flags,
        },
    })
}

/// Ten-percent-style instance: the first `n_zero` sources coincide with the
/// target and source `t > n_zero` sits at `Q̃_t² = (t − n_zero)^γ`.
pub fn gamma_instance(
    gamma: f64,
    t_total: usize,
    n_zero: usize,
    sigma2: f64,
    sigma0_2: f64,
    n_budget: usize,
    dim: usize,
) -> Result<ProblemInstance> {
    let q2s: Vec<f64> =
        (1..=t_total).map(|t| if t <= n_zero { 0.0 } else { ((t - n_zero) as f64).powf(gamma) }).collect();
    line_instance(&q2s, sigma2, sigma0_2, n_budget, dim)
}

/// Normalized curve with `Q_t² = t^{1/3}/divisor`, unit variances and a
/// barrier of exactly `m/T` when `m` sources are retained.
pub fn example_curve(t_total: usize, divisor: f64, tau_min: f64) -> Result<CurveSpec> {
    let q2s: Vec<f64> = (1..=t_total).map(|t| (t as f64).cbrt() / divisor).collect();
    let t = t_total as f64;
    CurveSpec::new(&q2s, &vec![1.0; t_total], tau_min * t, t, 1, 1.0)?.with_tau_min(tau_min)
}

fn single_source_cell(instance: &ProblemInstance, config: &ExperimentConfig, g: &GFunction) -> Result<ReportRow> {
    let delta = config.algorithm.delta;
    let bound = single_source_loss_bound(instance, delta, g, config.algorithm.nu)?;
    let outcomes = (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut sampler = BudgetedSampler::new(instance, config.master_seed.wrapping_add(rep));
            let out = run_single_source(instance, &mut sampler, delta, g)?;
            let loss = sq_dist(&out.estimate, &instance.target().theta);
            Ok(RepOutcome {
                loss,
                t_star: usize::from(out.chose_source),
                t_alg: if out.chose_source { vec![1] } else { vec![] },
                samples_used: sampler.drawn_total(),
                rounds: 1,
                bound_held: Some(loss <= bound),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = weak_oracle_set(instance, config.kappa.unwrap_or(1.0));
    Ok(summarize("instance".into(), 0.0, 0.0, 1, 2, &reference, &outcomes))
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

const ROW_HEADER: [&str; 19] = [
    "cell_id",
    "x",
    "y",
    "reps",
    "r_bar",
    "mean_loss",
    "loss_se",
    "loss_q10",
    "loss_q50",
    "loss_q90",
    "precision",
    "recall",
    "recall_min",
    "precision_undefined",
    "bound_coverage",
    "samples_used_mean",
    "samples_used_max",
    "retained_mean",
    "choose_probs",
];

fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ROW_HEADER)?;
    for r in rows {
        let probs: Vec<String> = r.choose_probs.iter().map(|&p| fmt_float(p)).collect();
        w.write_record([
            r.cell_id.clone(),
            fmt_float(r.x),
            fmt_float(r.y),
            r.reps.to_string(),
            r.r_bar.to_string(),
            fmt_float(r.mean_loss),
            fmt_float(r.loss_se),
            fmt_float(r.loss_q10),
            fmt_float(r.loss_q50),
            fmt_float(r.loss_q90),
            fmt_float(r.precision),
            fmt_float(r.recall),
            fmt_float(r.recall_min),
            r.precision_undefined.to_string(),
            r.bound_coverage.map(fmt_float).unwrap_or_default(),
            fmt_float(r.samples_used_mean),
            r.samples_used_max.to_string(),
            fmt_float(r.retained_mean),
            probs.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_curve(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tau", "beta"])?;
    for &(tau, beta) in points {
        w.write_record([fmt_float(tau), fmt_float(beta)])?;
    }
    w.flush()?;
    Ok(())
}

fn with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<out>.csv`, `<out>.meta.json` and any extra tables; returns the
/// paths written.
pub fn write_report(report: &ExperimentReport, out: &Path) -> Result<Vec<PathBuf>> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let csv_path = with_suffix(out, ".csv");
    let mut written = vec![csv_path.clone()];
    match (&report.bound, report.metadata.experiment) {
        (Some(bound), _) => {
            let mut w = csv::Writer::from_path(&csv_path)?;
            w.write_record(["quantity", "value"])?;
            let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
            w.write_record(["strong_bound".into(), fmt_float(bound.strong_bound)])?;
            w.write_record(["weak_bound".into(), fmt_float(bound.weak_bound)])?;
            w.write_record(["theorem3".into(), opt(bound.theorem3)])?;
            w.write_record(["theorem4".into(), opt(bound.theorem4)])?;
            w.flush()?;
            let json_path = with_suffix(out, ".json");
            fs::write(&json_path, serde_json::to_string_pretty(bound)?)?;
            written.push(json_path);
        }
        (None, ExperimentKind::CurveExport) => write_curve(&csv_path, &report.curves[0].points)?,
        (None, _) => {
            write_rows(&csv_path, &report.rows)?;
            for c in &report.curves {
                let path = with_suffix(out, &format!(".{}.csv", c.label));
                write_curve(&path, &c.points)?;
                written.push(path);
            }
        }
    }
    let meta_path = with_suffix(out, ".meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&report.metadata)?)?;
    written.push(meta_path);
    Ok(written)
}

#[derive(Parser, Debug)]
#[command(name = "curriculum", version, about = "Source-elimination experiments for Gaussian mean estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Two sources, one at the target and one swept outward.
    TwoSourceSweep(CommonArgs),
    /// Mixtures of close, medium and far sources.
    TypeMixture(CommonArgs),
    /// Precision and recall against polynomially spread sources.
    GammaPr(CommonArgs),
    /// Elimination curve jump points as `tau,beta` CSV.
    CurveExport(CommonArgs),
    /// Oracle benchmarks and lower bounds for an instance.
    BoundReport(CommonArgs),
    /// The single-source rule on an instance with one source.
    SingleSource(CommonArgs),
    /// Multi-round elimination on an instance.
    Algorithm1(CommonArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CliVarianceMode {
    Known,
    Estimated,
    Trace,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON config mirroring `ExperimentConfig`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Output prefix; writes `<out>.csv` and `<out>.meta.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, value_enum)]
    variance_mode: Option<CliVarianceMode>,
}

fn load_config(kind: ExperimentKind, args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let config: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))?;
            if config.params.kind() != kind {
                return Err(Error::Config(format!(
                    "{} describes {:?}, not {kind:?}",
                    path.display(),
                    config.params.kind()
                )));
            }
            config
        }
        None => ExperimentConfig::defaults(kind)
            .ok_or_else(|| Error::Config(format!("{kind:?} needs --config with an instance")))?,
    };
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    if let Some(r) = args.reps {
        config.reps = r;
    }
    if let Some(r) = args.rounds {
        config.algorithm.rounds = Some(r);
    }
    if let Some(d) = args.delta {
        config.algorithm.delta = d;
    }
    if let Some(k) = args.kappa {
        config.kappa = Some(k);
    }
    if let Some(m) = args.variance_mode {
        config.algorithm.variance_mode = match m {
            CliVarianceMode::Known => VarianceMode::Known,
            CliVarianceMode::Estimated => VarianceMode::EstimatedVariance,
            CliVarianceMode::Trace => VarianceMode::EstimatedTrace,
        };
    }
    config.validate()?;
    Ok(config)
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::Json(_) | Error::InfeasibleMixture { .. })
}

/// Parses `argv` (program name first), runs the experiment and returns the
/// exit code: 0 on success, 2 on configuration errors, 3 on runtime errors.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (kind, args) = match &cli.command {
        Command::TwoSourceSweep(a) => (ExperimentKind::TwoSourceSweep, a),
        Command::TypeMixture(a) => (ExperimentKind::TypeMixture, a),
        Command::GammaPr(a) => (ExperimentKind::GammaPrecisionRecall, a),
        Command::CurveExport(a) => (ExperimentKind::CurveExport, a),
        Command::BoundReport(a) => (ExperimentKind::BoundReport, a),
        Command::SingleSource(a) => (ExperimentKind::SingleSource, a),
        Command::Algorithm1(a) => (ExperimentKind::Algorithm1, a),
    };
    let config = match load_config(kind, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return if is_config_error(&e) { 2 } else { 3 };
        }
    };
    let out = args.out.clone().unwrap_or_else(|| {
        PathBuf::from(serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
    });
    let result = run_experiment(&config).and_then(|report| write_report(&report, &out).map(|p| (report, p)));
    match result {
        Ok((report, paths)) => {
            println!(
                "{:?}: {} rows, {} reps, seed {}, {:.2}s -> {}",
                kind,
                report.rows.len(),
                config.reps,
                config.master_seed,
                report.metadata.wall_time_secs,
                paths[0].display()
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                2
            } else {
                3
            }
        }
    }
}
