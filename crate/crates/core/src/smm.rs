//! The enhanced stochastic majorization-minimization loop, multi-start and
//! random hyperparameter search.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use thiserror::Error;

use crate::cost::RandomOuter;
use crate::data::{random_init, Dataset, Theta};
use crate::error::{config, PadrError, Result};
use crate::linalg::dist2;
use crate::padr::{active_sets_for, build_inner_surrogates, draw_index_mapping};
use crate::penalty::{feasibility_rate, ConstraintSpec};
use crate::problem::Problem;
use crate::qp::SolveStatus;
use crate::rng::{round_seed, RngHandle, Stream, StreamRng};
use crate::subproblem::{solve_prox, ProxSettings};

/// ε per iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum EpsSchedule {
    Constant { eps: f64 },
    /// `eps0` for the first `t0` iterations, `eps1` afterwards.
    Shrinking { eps0: f64, eps1: f64, t0: usize },
}

impl EpsSchedule {
    pub fn at(&self, nu: usize) -> f64 {
        match *self {
            EpsSchedule::Constant { eps } => eps,
            EpsSchedule::Shrinking { eps0, eps1, t0 } => {
                if nu < t0 {
                    eps0
                } else {
                    eps1
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OutputRule {
    /// Uniform draw from `θ^0 … θ^{T−1}`.
    UniformIterate,
    /// Iterate with the lowest full training objective among `θ^0 … θ^T`.
    BestErm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmmConfig {
    /// Number of iterations `T`.
    pub iterations: usize,
    pub eta: f64,
    pub eps: EpsSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub rounds: usize,
    pub output_rule: OutputRule,
    pub seed: u64,
    /// Acceptance slack `δ_ν = δ₀ / (ν + 1)`.
    pub delta0: f64,
    pub prox: ProxSettings,
}

impl Default for SmmConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            eta: 0.5,
            eps: EpsSchedule::Constant { eps: 0.0 },
            beta1: 10.0,
            beta2: 20.0,
            rounds: 10,
            output_rule: OutputRule::BestErm,
            seed: 0,
            delta0: 1e-3,
            prox: ProxSettings::default(),
        }
    }
}

impl SmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(config("iterations (T) must be at least 1"));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(config("eta must be finite and nonnegative"));
        }
        if !(self.beta1 >= 0.0) || !(self.beta2 >= 1.0) || !self.beta1.is_finite() || !self.beta2.is_finite() {
            return Err(config("sampling needs beta1 ≥ 0 and beta2 ≥ 1"));
        }
        if self.rounds == 0 {
            return Err(config("rounds must be at least 1"));
        }
        if !(self.delta0 >= 0.0) {
            return Err(config("delta0 must be nonnegative"));
        }
        match self.eps {
            EpsSchedule::Constant { eps } if !(eps >= 0.0) => Err(config("epsilon must be nonnegative")),
            EpsSchedule::Shrinking { eps0, eps1, t0 } => {
                if !(eps1 >= 0.0) || !(eps1 <= eps0) {
                    return Err(config("shrinking schedule needs 0 ≤ eps1 ≤ eps0"));
                }
                if t0 < 1 || t0 > self.iterations {
                    return Err(config("shrinking schedule needs 1 ≤ t0 ≤ T"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `N_ν = ⌊β₁ ν + β₂⌋`.
    pub fn batch_size(&self, nu: usize) -> usize {
        libm::floor(self.beta1 * nu as f64 + self.beta2).max(1.0) as usize
    }

    pub fn delta(&self, nu: usize) -> f64 {
        self.delta0 / (nu as f64 + 1.0)
    }
}

/// One row of the trace.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct IterationRecord {
    pub nu: usize,
    pub batch_size: usize,
    pub distinct_samples: usize,
    pub epsilon: f64,
    pub accepted: bool,
    /// `F_{N_ν}(θ^ν)` on the drawn minibatch.
    pub minibatch_objective: f64,
    /// Surrogate plus proximal term at the candidate `θ^{ν+1/2}`.
    pub surrogate_value: f64,
    pub step_norm: f64,
    pub delta: f64,
    /// Full training objective at `θ^{ν+1}`.
    pub objective_after: f64,
    pub solver_iterations: usize,
    pub solver_status: SolveStatus,
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SmmTrace {
    pub records: Vec<IterationRecord>,
    /// Index `k` of the returned iterate `θ^k`.
    pub output_index: usize,
    /// Full training objective of the returned iterate.
    pub output_objective: f64,
}

#[derive(Debug, Clone)]
pub struct SmmRun {
    pub theta: Theta,
    pub trace: SmmTrace,
}

/// Failure inside the loop; carries the records completed so far.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("iteration {iteration} failed: {error}")]
pub struct SmmAbort {
    pub iteration: usize,
    pub error: PadrError,
    pub records: Vec<IterationRecord>,
}

impl From<PadrError> for SmmAbort {
    fn from(error: PadrError) -> Self {
        Self { iteration: 0, error, records: Vec::new() }
    }
}

/// Runs the loop from `theta0` for `cfg.iterations` steps.
pub fn run_smm(problem: &Problem<'_>, theta0: &Theta, cfg: &SmmConfig) -> core::result::Result<SmmRun, SmmAbort> {
    run_smm_with_clock(problem, theta0, cfg, None)
}

/// As [`run_smm`], recording wall time per iteration from `clock` (seconds).
pub fn run_smm_with_clock(
    problem: &Problem<'_>,
    theta0: &Theta,
    cfg: &SmmConfig,
    clock: Option<&dyn Fn() -> f64>,
) -> core::result::Result<SmmRun, SmmAbort> {
    cfg.validate()?;
    if theta0.cfg() != problem.cfg() {
        return Err(crate::error::dim("theta0 does not match the problem's hypothesis configuration").into());
    }
    if !theta0.in_box() {
        return Err(PadrError::Data("theta0 lies outside the box".into()).into());
    }
    let hcfg = *problem.cfg();
    let data = problem.data();
    let n = data.n();
    let t_total = cfg.iterations;
    let uniform_pick = match cfg.output_rule {
        OutputRule::UniformIterate => Some(RngHandle::new(cfg.seed, Stream::Output).rng().index(t_total)),
        OutputRule::BestErm => None,
    };

    let mut theta = theta0.clone();
    let obj0 = problem.objective(&theta)?;
    let mut best = (0usize, obj0, theta.clone());
    let mut picked = if uniform_pick == Some(0) { Some((0, obj0, theta.clone())) } else { None };
    let mut records = Vec::with_capacity(t_total);
    let start = clock.map(|c| c());

    for nu in 0..t_total {
        let abort = |error: PadrError, records: &Vec<IterationRecord>| SmmAbort { iteration: nu, error, records: records.clone() };
        let batch = cfg.batch_size(nu);
        let mut draw = RngHandle::new(cfg.seed, Stream::Minibatch).child(nu as u64).rng();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for _ in 0..batch {
            *counts.entry(draw.index(n)).or_insert(0) += 1;
        }
        let ids: Vec<usize> = counts.keys().copied().collect();
        let weights: Vec<f64> = counts.values().map(|&c| c as f64 / batch as f64).collect();
        let eps = cfg.eps.at(nu);

        let index_rng = RngHandle::new(cfg.seed, Stream::Index).child(nu as u64);
        let sets = active_sets_for(&theta, data, eps, &ids).map_err(|e| abort(e, &records))?;
        let mapping = draw_index_mapping(&sets, &index_rng);
        let inner = build_inner_surrogates(&theta, data, &mapping, &ids).map_err(|e| abort(e, &records))?;
        let reference: Arc<[f64]> = Arc::from(theta.as_slice());
        let mut outer = RandomOuter(index_rng.child(u64::MAX));
        let mut surrogates = Vec::with_capacity(ids.len());
        for pos in 0..ids.len() {
            let s = problem
                .surrogate(&theta, &reference, &inner, pos, eps, &mut outer)
                .map_err(|e| abort(e, &records))?;
            surrogates.push(s);
        }
        let f_batch = problem.weighted_objective(&theta, &ids, &weights);
        let sol = solve_prox(&surrogates, &weights, theta.as_slice(), cfg.eta, hcfg.mu, &cfg.prox, None)
            .map_err(|e| abort(e, &records))?;
        let delta = cfg.delta(nu);
        let accepted = sol.value <= f_batch + delta;
        let step_norm = dist2(&sol.theta, theta.as_slice());
        if accepted {
            theta = Theta::from_flat(hcfg, sol.theta).map_err(|e| abort(e, &records))?;
        }
        let obj = problem.objective(&theta).map_err(|e| abort(e, &records))?;
        if obj < best.1 {
            best = (nu + 1, obj, theta.clone());
        }
        if uniform_pick == Some(nu + 1) {
            picked = Some((nu + 1, obj, theta.clone()));
        }
        records.push(IterationRecord {
            nu,
            batch_size: batch,
            distinct_samples: ids.len(),
            epsilon: eps,
            accepted,
            minibatch_objective: f_batch,
            surrogate_value: sol.value,
            step_norm,
            delta,
            objective_after: obj,
            solver_iterations: sol.iterations,
            solver_status: sol.status,
            wall_seconds: match (clock, start) {
                (Some(c), Some(s)) => Some(c() - s),
                _ => None,
            },
        });
    }

    let (output_index, output_objective, theta_out) = match cfg.output_rule {
        OutputRule::BestErm => best,
        OutputRule::UniformIterate => picked.expect("uniform pick lies in 0..T"),
    };
    Ok(SmmRun { theta: theta_out, trace: SmmTrace { records, output_index, output_objective } })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub seed: u64,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct MultiStart {
    pub best: SmmRun,
    pub best_round: usize,
    pub rounds: Vec<RoundSummary>,
}

/// Runs `cfg.rounds` independent rounds from uniform random starts and keeps
/// the one with the lowest full training objective. Round `r` uses the seed
/// `round_seed(cfg.seed, r)` for every stream, so round 0 equals a plain run.
pub fn multi_start(problem: &Problem<'_>, cfg: &SmmConfig) -> Result<MultiStart> {
    multi_start_with_clock(problem, cfg, None)
}

pub fn multi_start_with_clock(problem: &Problem<'_>, cfg: &SmmConfig, clock: Option<&dyn Fn() -> f64>) -> Result<MultiStart> {
    cfg.validate()?;
    collect_rounds((0..cfg.rounds).map(|r| run_round(problem, cfg, r, clock)).collect())
}

/// Round `r` of [`multi_start`]: a run from the round's own random start.
pub fn run_round(
    problem: &Problem<'_>,
    cfg: &SmmConfig,
    r: usize,
    clock: Option<&dyn Fn() -> f64>,
) -> (u64, core::result::Result<SmmRun, SmmAbort>) {
    let seed = round_seed(cfg.seed, r as u64);
    let theta0 = random_init(problem.cfg(), &RngHandle::new(seed, Stream::Init));
    let rc = SmmConfig { seed, ..cfg.clone() };
    (seed, run_smm_with_clock(problem, &theta0, &rc, clock))
}

/// Picks the best of per-round results given in round order; ties go to
/// the earliest round.
pub fn collect_rounds(results: Vec<(u64, core::result::Result<SmmRun, SmmAbort>)>) -> Result<MultiStart> {
    let mut best: Option<(usize, SmmRun)> = None;
    let mut rounds = Vec::with_capacity(results.len());
    let mut last_err = None;
    for (r, (seed, res)) in results.into_iter().enumerate() {
        match res {
            Ok(run) => {
                let obj = run.trace.output_objective;
                rounds.push(RoundSummary { round: r, seed, objective: Some(obj), error: None });
                if best.as_ref().map_or(true, |(_, b)| obj < b.trace.output_objective) {
                    best = Some((r, run));
                }
            }
            Err(e) => {
                rounds.push(RoundSummary { round: r, seed, objective: None, error: Some(e.to_string()) });
                last_err = Some(e.error);
            }
        }
    }
    match best {
        Some((best_round, best)) => Ok(MultiStart { best, best_round, rounds }),
        None => Err(last_err.unwrap_or(PadrError::EmptyGrid)),
    }
}

/// Closed range for one hyperparameter; `lo == hi` fixes the value.
///
/// With `log` set, draws are log-uniform on `[max(lo, hi·LOG_FLOOR), hi]`, so
/// scale-type parameters get equal mass per decade. A log range starting at
/// zero also draws exactly zero, with the mass of one decade.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub log: bool,
}

/// Lower end of a log-scale range whose `lo` is zero, relative to `hi`.
pub const LOG_FLOOR: f64 = 1e-4;

impl ParamRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi, log: false }
    }

    pub const fn log(lo: f64, hi: f64) -> Self {
        Self { lo, hi, log: true }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v, log: false }
    }

    pub fn sample(&self, r: &mut StreamRng) -> f64 {
        self.sample_below(r, self.hi)
    }

    /// Draw conditioned on not exceeding `cap`; the log floor stays relative
    /// to the full range. Returns `lo` when `cap < lo`.
    pub fn sample_below(&self, r: &mut StreamRng, cap: f64) -> f64 {
        let hi = self.hi.min(cap);
        if hi <= self.lo {
            return self.lo;
        }
        if !self.log {
            return r.uniform_in(self.lo, hi);
        }
        let lo = self.lo.max(self.hi * LOG_FLOOR);
        if self.lo == 0.0 {
            let (a, b) = (libm::log(lo), libm::log(hi.max(lo)));
            let u = r.uniform_in(a - core::f64::consts::LN_10, b);
            return if u < a { 0.0 } else { libm::exp(u) };
        }
        if lo >= hi {
            return hi;
        }
        libm::exp(r.uniform_in(libm::log(lo), libm::log(hi)))
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo <= self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(config(alloc::format!("range `{name}` needs finite lo ≤ hi")));
        }
        if self.log && self.lo < 0.0 {
            return Err(config(alloc::format!("log-scale range `{name}` needs lo ≥ 0")));
        }
        Ok(())
    }
}

/// Search ranges; the defaults are the usual ones for this method.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SweepGrid {
    pub eta: ParamRange,
    pub eps0: ParamRange,
    pub eps1: ParamRange,
    pub t0: (usize, usize),
    pub beta1: ParamRange,
    pub beta2: ParamRange,
    pub gamma: ParamRange,
    pub lambda: ParamRange,
    /// Draw shrinking schedules (`eps0`, `eps1`, `t0`); otherwise constant `eps0`.
    pub shrinking: bool,
}

impl SweepGrid {
    /// Searches only the penalty parameters (γ, λ) over their default
    /// ranges; η, the ε schedule and the batch growth stay at `base`.
    pub fn penalty_only(base: &SmmConfig) -> Self {
        let (eps0, eps1, t0, shrinking) = match base.eps {
            EpsSchedule::Constant { eps } => (eps, eps, 1, false),
            EpsSchedule::Shrinking { eps0, eps1, t0 } => (eps0, eps1, t0, true),
        };
        Self {
            eta: ParamRange::fixed(base.eta),
            eps0: ParamRange::fixed(eps0),
            eps1: ParamRange::fixed(eps1),
            t0: (t0, t0),
            beta1: ParamRange::fixed(base.beta1),
            beta2: ParamRange::fixed(base.beta2),
            shrinking,
            ..Self::default()
        }
    }
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            // Strictly positive: η = 0 leaves the subproblems without strong convexity.
            eta: ParamRange::log(1e-4, 1.0),
            eps0: ParamRange::log(0.0, 1e4),
            eps1: ParamRange::log(0.0, 1e4),
            t0: (1, 6),
            beta1: ParamRange::new(5.0, 50.0),
            beta2: ParamRange::new(10.0, 40.0),
            gamma: ParamRange::new(0.0, 1.0),
            lambda: ParamRange::log(0.0, 1e3),
            shrinking: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub budget: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Rounds per candidate; `None` uses the base configuration's rounds.
    pub candidate_rounds: Option<usize>,
    /// Validation feasibility a constrained candidate needs to count as feasible.
    pub feasibility_target: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { budget: 20, validation_fraction: 0.2, seed: 0, candidate_rounds: None, feasibility_target: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SweepRow {
    pub candidate: usize,
    pub eta: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub t0: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub train_objective: f64,
    pub validation_cost: f64,
    pub validation_feasibility: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub best_index: usize,
    pub best_config: SmmConfig,
    pub best_constraints: Option<ConstraintSpec>,
    pub table: Vec<SweepRow>,
    pub validation_size: usize,
    /// Winner retrained on the full training data.
    pub final_run: MultiStart,
}

const SPLIT_KEY: u64 = 0x7370_6c69_74;

/// Random train/validation split: returns `(train, validation)` row indices.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if !(fraction > 0.0) || n < 2 {
        return (idx, Vec::new());
    }
    let mut r = RngHandle::new(seed, Stream::Data).child(SPLIT_KEY).rng();
    for i in (1..n).rev() {
        let j = r.index(i + 1);
        idx.swap(i, j);
    }
    let n_val = (libm::floor(fraction * n as f64) as usize).clamp(1, n - 1);
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

/// Random search over `grid`. Candidates are trained on the training part of
/// a random split and scored by validation cost; for constrained problems
/// only candidates reaching the feasibility target compete on cost (if none
/// does, the most feasible wins). The winner is retrained on all data.
pub fn sweep(problem: &Problem<'_>, base: &SmmConfig, grid: &SweepGrid, opts: &SweepOptions) -> Result<SweepResult> {
    sweep_with(problem, base, grid, opts, &|p, c| multi_start(p, c))
}

/// Multi-start runner used by [`sweep_with`].
pub type Runner<'r> = dyn Fn(&Problem<'_>, &SmmConfig) -> Result<MultiStart> + 'r;

/// As [`sweep`], training every candidate (and the final refit) through
/// `runner`, which must behave like [`multi_start`]. Lets callers run rounds
/// in parallel.
pub fn sweep_with(
    problem: &Problem<'_>,
    base: &SmmConfig,
    grid: &SweepGrid,
    opts: &SweepOptions,
    runner: &Runner<'_>,
) -> Result<SweepResult> {
    if opts.budget == 0 {
        return Err(PadrError::EmptyGrid);
    }
    base.validate()?;
    for (name, r) in [
        ("eta", grid.eta),
        ("eps0", grid.eps0),
        ("eps1", grid.eps1),
        ("beta1", grid.beta1),
        ("beta2", grid.beta2),
        ("gamma", grid.gamma),
        ("lambda", grid.lambda),
    ] {
        r.check(name)?;
    }
    if grid.t0.0 > grid.t0.1 || grid.t0.0 == 0 {
        return Err(config("range `t0` needs 1 ≤ lo ≤ hi"));
    }
    let data = problem.data();
    let (train_ids, val_ids) = split_indices(data.n(), opts.validation_fraction, opts.seed);
    let train: Dataset = data.subset(&train_ids)?;
    let val: Dataset = if val_ids.is_empty() { train.clone() } else { data.subset(&val_ids)? };

    let mut table = Vec::with_capacity(opts.budget);
    let mut candidates = Vec::with_capacity(opts.budget);
    for c in 0..opts.budget {
        let mut r = RngHandle::new(opts.seed, Stream::Sweep).child(c as u64).rng();
        let eta = grid.eta.sample(&mut r);
        let eps0 = grid.eps0.sample(&mut r);
        // Shrinking means ε₁ < ε₀: draw ε₁ below the sampled ε₀.
        let eps1 = grid.eps1.sample_below(&mut r, eps0).min(eps0);
        let t0 = (grid.t0.0 + r.index(grid.t0.1 - grid.t0.0 + 1)).min(base.iterations);
        let beta1 = grid.beta1.sample(&mut r);
        let beta2 = grid.beta2.sample(&mut r).max(1.0);
        let gamma = grid.gamma.sample(&mut r);
        let lambda = grid.lambda.sample(&mut r);
        let eps = if grid.shrinking {
            EpsSchedule::Shrinking { eps0, eps1, t0 }
        } else {
            EpsSchedule::Constant { eps: eps0 }
        };
        let cfg = SmmConfig {
            eta,
            eps,
            beta1,
            beta2,
            rounds: opts.candidate_rounds.unwrap_or(base.rounds),
            ..base.clone()
        };
        let cons = problem.constraints().map(|c| ConstraintSpec { gamma, lambda, ..c.clone() });
        let mut train_problem = problem.with_data(&train)?;
        let mut val_problem = problem.with_data(&val)?;
        if let Some(cs) = &cons {
            train_problem = train_problem.with_constraints(cs.clone())?;
            val_problem = val_problem.with_constraints(cs.clone())?;
        }
        let run = runner(&train_problem, &cfg)?;
        let validation_cost = val_problem.base_cost(&run.best.theta)?;
        let validation_feasibility = cons.as_ref().map(|cs| feasibility_rate(&run.best.theta, &val, cs, false));
        table.push(SweepRow {
            candidate: c,
            eta,
            eps0,
            eps1: if grid.shrinking { eps1 } else { eps0 },
            t0: if grid.shrinking { t0 } else { 0 },
            beta1,
            beta2,
            gamma,
            lambda,
            train_objective: run.best.trace.output_objective,
            validation_cost,
            validation_feasibility,
        });
        candidates.push((SmmConfig { rounds: base.rounds, ..cfg }, cons));
    }

    let best_index = select_candidate(&table, opts.feasibility_target);
    let (best_config, best_constraints) = candidates.swap_remove(best_index);
    let final_problem = match &best_constraints {
        Some(cs) => problem.with_data(data)?.with_constraints(cs.clone())?,
        None => problem.with_data(data)?,
    };
    let final_run = runner(&final_problem, &best_config)?;
    Ok(SweepResult {
        best_index,
        best_config,
        best_constraints,
        table,
        validation_size: val_ids.len(),
        final_run,
    })
}

fn select_candidate(table: &[SweepRow], target: f64) -> usize {
    let key = |r: &SweepRow| if r.validation_cost.is_nan() { f64::INFINITY } else { r.validation_cost };
    let feasible: Vec<&SweepRow> = table
        .iter()
        .filter(|r| r.validation_feasibility.map_or(true, |f| f >= target))
        .collect();
    if !feasible.is_empty() {
        let mut best = feasible[0];
        for r in &feasible[1..] {
            if key(r) < key(best) {
                best = r;
            }
        }
        return best.candidate;
    }
    let mut best = &table[0];
    for r in &table[1..] {
        let (fr, fb) = (r.validation_feasibility.unwrap_or(1.0), best.validation_feasibility.unwrap_or(1.0));
        if fr > fb || (fr == fb && key(r) < key(best)) {
            best = r;
        }
    }
    best.candidate
}
