//! Training front end: multi-start rounds on a rayon pool, optional
//! hyperparameter sweep, and the serializable settings that map onto
//! [`SmmConfig`].

use std::time::Instant;

use padr_core::smm::{collect_rounds, run_round, sweep_with, MultiStart, SweepGrid, SweepOptions, SweepResult};
use padr_core::subproblem::ProxSettings;
use padr_core::{ConstraintSpec, CostSpec, Dataset, EpsSchedule, HypothesisConfig, OutputRule, Problem, SmmConfig, Theta};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rule shape; `d` and `p` come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleSettings {
    pub k1: usize,
    pub k2: usize,
    pub mu: f64,
}

impl Default for RuleSettings {
    fn default() -> Self {
        Self { k1: 3, k2: 0, mu: 50.0 }
    }
}

impl RuleSettings {
    pub fn hypothesis(&self, d: usize, p: usize) -> Result<HypothesisConfig> {
        Ok(HypothesisConfig::new(d, self.k1, self.k2, p, self.mu)?)
    }
}

/// Loop settings. Defaults: `T = 10`, 10 rounds, best-ERM output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmmSettings {
    pub iterations: usize,
    pub rounds: usize,
    pub eta: f64,
    pub eps: EpsSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub output_rule: OutputRule,
    pub delta0: f64,
}

impl Default for SmmSettings {
    fn default() -> Self {
        let c = SmmConfig::default();
        Self {
            iterations: c.iterations,
            rounds: c.rounds,
            eta: c.eta,
            eps: c.eps,
            beta1: c.beta1,
            beta2: c.beta2,
            output_rule: c.output_rule,
            delta0: c.delta0,
        }
    }
}

impl SmmSettings {
    pub fn to_config(&self, seed: u64) -> Result<SmmConfig> {
        let cfg = SmmConfig {
            iterations: self.iterations,
            eta: self.eta,
            eps: self.eps,
            beta1: self.beta1,
            beta2: self.beta2,
            rounds: self.rounds,
            output_rule: self.output_rule,
            seed,
            delta0: self.delta0,
            prox: ProxSettings::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Random search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub budget: usize,
    pub validation_fraction: f64,
    /// Rounds per candidate; unset uses `smm.rounds`.
    pub candidate_rounds: Option<usize>,
    pub feasibility_target: f64,
    pub grid: SweepGrid,
}

impl Default for SweepSettings {
    fn default() -> Self {
        let o = SweepOptions::default();
        Self {
            budget: 20,
            validation_fraction: o.validation_fraction,
            candidate_rounds: o.candidate_rounds,
            feasibility_target: o.feasibility_target,
            grid: SweepGrid::default(),
        }
    }
}

impl SweepSettings {
    /// Default settings searching only (γ, λ) around `smm`.
    pub fn penalty_only(smm: &SmmSettings) -> Result<Self> {
        Ok(Self { grid: SweepGrid::penalty_only(&smm.to_config(0)?), ..Self::default() })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("at `sweep`: {m}")));
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if self.candidate_rounds == Some(0) {
            return bad("candidate_rounds must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.feasibility_target) {
            return bad("feasibility_target must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn options(&self, seed: u64) -> SweepOptions {
        SweepOptions {
            budget: self.budget,
            validation_fraction: self.validation_fraction,
            seed,
            candidate_rounds: self.candidate_rounds,
            feasibility_target: self.feasibility_target,
        }
    }
}

/// [`padr_core::multi_start`] with rounds spread over the current rayon
/// pool. Results are merged in round order, so the outcome does not depend
/// on the thread count.
pub fn multi_start_par(problem: &Problem<'_>, cfg: &SmmConfig, timing: bool) -> padr_core::Result<MultiStart> {
    cfg.validate()?;
    let results: Vec<_> = (0..cfg.rounds)
        .into_par_iter()
        .map(|r| {
            if timing {
                let start = Instant::now();
                let clock = move || start.elapsed().as_secs_f64();
                run_round(problem, cfg, r, Some(&clock))
            } else {
                run_round(problem, cfg, r, None)
            }
        })
        .collect();
    collect_rounds(results)
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub theta: Theta,
    pub run: MultiStart,
    pub sweep: Option<SweepResult>,
    /// Constraint parameters used for the final fit.
    pub constraints: Option<ConstraintSpec>,
    pub config: SmmConfig,
    pub seconds: f64,
}

pub struct TrainJob<'a> {
    pub data: &'a Dataset,
    pub hypothesis: HypothesisConfig,
    pub cost: CostSpec,
    pub constraints: Option<ConstraintSpec>,
    pub smm: SmmConfig,
    pub sweep: Option<&'a SweepSettings>,
    pub timing: bool,
}

pub fn train(job: TrainJob<'_>) -> Result<Trained> {
    let start = Instant::now();
    let mut problem = Problem::new(job.data, job.hypothesis, job.cost)?;
    if let Some(c) = &job.constraints {
        problem = problem.with_constraints(c.clone())?;
    }
    let timing = job.timing;
    let (run, sweep, constraints, config) = match job.sweep {
        Some(s) => {
            let res = sweep_with(&problem, &job.smm, &s.grid, &s.options(job.smm.seed), &|p, c| {
                multi_start_par(p, c, timing)
            })?;
            let run = res.final_run.clone();
            let cons = res.best_constraints.clone();
            let cfg = res.best_config.clone();
            (run, Some(res), cons, cfg)
        }
        None => (multi_start_par(&problem, &job.smm, timing)?, None, job.constraints, job.smm),
    };
    if !run.best.theta.in_box() {
        return Err(Error::Bench("trained parameters left the box".into()));
    }
    Ok(Trained { theta: run.best.theta.clone(), run, sweep, constraints, config, seconds: start.elapsed().as_secs_f64() })
}
