//! Benchmark runner: method × seed cells on generated train/test data,
//! scored against the oracle decision.

use std::fmt;
use std::str::FromStr;

use padr_core::penalty::penalty_value;
use padr_core::{CostSpec, Dataset, RngHandle, Stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lift_dataset, Decider, LinearModel};
use crate::demand::{gen_dataset, DemandModel};
use crate::error::{Error, Result};
use crate::oracle::CostSetup;
use crate::train::{train, RuleSettings, SmmSettings, SweepSettings, TrainJob};

/// Key of the training split under the data stream.
pub const TRAIN_KEY: u64 = 0;
pub const TEST_KEY: u64 = 1;
/// Key of the oracle's simulated scenarios.
pub const SCENARIO_KEY: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Simopt,
    /// Cost-trained PADR(K1, K2).
    Padr { k1: usize, k2: usize },
    /// PADR(1, 0).
    Ldr,
    /// Linear rule on monomials up to `degree`.
    Gldr { degree: usize },
    /// Least-squares prediction, then the plug-in decision.
    PoL,
    /// PADR(K1, 0) regression under squared loss, then the plug-in decision.
    PoPa { k1: usize },
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Simopt => write!(f, "SIMOPT"),
            Method::Padr { k1, k2 } => write!(f, "PADR({k1},{k2})"),
            Method::Ldr => write!(f, "LDR"),
            Method::Gldr { degree } => write!(f, "GLDR-{degree}"),
            Method::PoL => write!(f, "PO-L"),
            Method::PoPa { k1 } => write!(f, "PO-PA({k1})"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("unknown method `{s}` (expected SIMOPT, PADR(k1,k2), LDR, GLDR-d, PO-L or PO-PA(k1))");
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        match s.trim() {
            "SIMOPT" => Ok(Method::Simopt),
            "LDR" => Ok(Method::Ldr),
            "PO-L" => Ok(Method::PoL),
            "PO-PA" => Ok(Method::PoPa { k1: 3 }),
            t => {
                if let Some(inner) = t.strip_prefix("PADR(").and_then(|r| r.strip_suffix(')')) {
                    let (a, b) = inner.split_once(',').ok_or_else(bad)?;
                    Ok(Method::Padr { k1: num(a)?, k2: num(b)? })
                } else if let Some(inner) = t.strip_prefix("PO-PA(").and_then(|r| r.strip_suffix(')')) {
                    Ok(Method::PoPa { k1: num(inner)? })
                } else if let Some(d) = t.strip_prefix("GLDR-") {
                    Ok(Method::Gldr { degree: num(d)? })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Constraint handling during training of constrained setups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySettings {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for PenaltySettings {
    fn default() -> Self {
        Self { gamma: 0.5, lambda: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label written to the `setting` column.
    pub setting: String,
    pub demand: DemandModel,
    pub p: usize,
    pub cost: CostSetup,
    pub n_train: usize,
    pub n_test: usize,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub rule: RuleSettings,
    pub smm: SmmSettings,
    /// Select hyperparameters of every SMM-trained method by random search.
    pub tune: bool,
    pub sweep: SweepSettings,
    pub penalty: PenaltySettings,
    /// Standardize features before training (the scaler is stored with the model).
    pub scale_features: bool,
    /// Record wall time in `train_seconds` (makes reports run-dependent).
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            setting: "custom".into(),
            demand: DemandModel::MaxaffineBasic { k: 1.0 },
            p: 2,
            cost: CostSetup::Newsvendor { cb: 8.0, ch: 2.0 },
            n_train: 1000,
            n_test: 1000,
            methods: vec![Method::Simopt, Method::Padr { k1: 3, k2: 0 }, Method::Ldr, Method::PoL],
            seeds: vec![0],
            rule: RuleSettings::default(),
            smm: SmmSettings::default(),
            tune: false,
            sweep: SweepSettings::default(),
            penalty: PenaltySettings::default(),
            scale_features: false,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.demand.check(self.p)?;
        self.cost.validate()?;
        if self.demand.outputs() != self.cost.d() {
            return Err(Error::Config(format!(
                "cost: setup has {} products but demand model `{:?}` has {}",
                self.cost.d(),
                self.demand,
                self.demand.outputs()
            )));
        }
        if self.n_train < 2 || self.n_test < 1 {
            return Err(Error::Config("n_train must be ≥ 2 and n_test ≥ 1".into()));
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("methods and seeds must be nonempty".into()));
        }
        self.smm.to_config(0).map_err(|e| Error::Config(format!("at `smm`: {e}")))?;
        if self.tune {
            self.sweep.validate()?;
        }
        Ok(())
    }
}

/// One report line. `seed` is `None` on per-method summary rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub setting: String,
    pub n: usize,
    pub p: usize,
    #[serde(serialize_with = "seed_or_mean")]
    pub seed: Option<u64>,
    pub test_cost: f64,
    pub gap: f64,
    pub feasibility: Option<f64>,
    pub train_seconds: Option<f64>,
}

fn seed_or_mean<S: serde::Serializer>(seed: &Option<u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match seed {
        Some(v) => s.serialize_u64(*v),
        None => s.serialize_str("mean"),
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// `(method, seed, message)` for cells that failed.
    pub failures: Vec<(String, u64, String)>,
}

/// Scores of one decision rule on a test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    /// Mean realized cost; convex-constrained decisions are projected first,
    /// nonconvex-constrained ones are averaged over feasible decisions only.
    pub test_cost: f64,
    /// Fraction of raw decisions satisfying the constraints (`None` if unconstrained).
    pub feasibility: Option<f64>,
}

pub fn score(setup: &CostSetup, decisions: &[Vec<f64>], test: &Dataset) -> Result<Score> {
    let constrained = setup.constraint().is_some();
    let mut feasible = 0usize;
    let mut total = 0.0;
    let mut counted = 0usize;
    for (s, z) in decisions.iter().enumerate() {
        let ok = setup.is_feasible(z);
        feasible += ok as usize;
        if constrained && !setup.is_convex_constrained() && !ok {
            continue;
        }
        let z = setup.evaluated_decision(z)?;
        total += setup.cost(&z, test.y(s));
        counted += 1;
    }
    let n = decisions.len() as f64;
    Ok(Score {
        test_cost: if counted > 0 { total / counted as f64 } else { f64::NAN },
        feasibility: constrained.then(|| feasible as f64 / n),
    })
}

pub fn simopt_decisions(cfg: &ExperimentConfig, test: &Dataset, seed: u64) -> Result<Vec<Vec<f64>>> {
    let base = RngHandle::new(seed, Stream::Data).child(SCENARIO_KEY);
    (0..test.n()).map(|s| cfg.cost.simopt(&cfg.demand, test.x(s), &base.child(s as u64))).collect()
}

pub fn split_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let base = RngHandle::new(seed, Stream::Data);
    let train = gen_dataset(&cfg.demand, cfg.n_train, cfg.p, &base.child(TRAIN_KEY))?;
    let test = gen_dataset(&cfg.demand, cfg.n_test, cfg.p, &base.child(TEST_KEY))?;
    Ok((train, test))
}

pub struct Fitted {
    pub decider: Decider,
    pub seconds: f64,
    /// Training penalty `G_γ` of the output (constrained, cost-trained methods).
    pub train_penalty: Option<f64>,
}

/// Trains `method` on `train` (not used for SIMOPT).
pub fn fit_method(cfg: &ExperimentConfig, method: Method, train_data: &Dataset, seed: u64) -> Result<Fitted> {
    let smm = cfg.smm.to_config(seed)?;
    let cons = cfg.cost.constraint_spec(cfg.penalty.gamma, cfg.penalty.lambda);
    let d = cfg.cost.d();
    let run = |data: &Dataset, k1: usize, k2: usize, cost: CostSpec, cons: Option<padr_core::ConstraintSpec>| {
        let rule = RuleSettings { k1, k2, ..cfg.rule };
        let hyp = rule.hypothesis(d, data.p())?;
        train(TrainJob { data, hypothesis: hyp, cost, constraints: cons, smm: smm.clone(), sweep: cfg.tune.then_some(&cfg.sweep), timing: cfg.timing })
    };
    let start = std::time::Instant::now();
    let (decider, train_penalty) = match method {
        Method::Simopt => return Err(Error::Bench("SIMOPT is not trained".into())),
        Method::PoL => (Decider::Linear(LinearModel::fit(train_data)?), None),
        Method::Padr { k1, k2 } => {
            let t = run(train_data, k1, k2, cfg.cost.cost_spec(), cons)?;
            let pen = t.constraints.as_ref().map(|c| penalty_value(&t.theta, train_data, c));
            (Decider::Rule { theta: t.theta, degree: 1, plug_in: false }, pen)
        }
        Method::Ldr | Method::Gldr { .. } => {
            let degree = match method {
                Method::Gldr { degree } => degree.max(1),
                _ => 1,
            };
            let lifted = if degree > 1 { lift_dataset(train_data, degree)? } else { train_data.clone() };
            let t = run(&lifted, 1, 0, cfg.cost.cost_spec(), cons)?;
            let pen = t.constraints.as_ref().map(|c| penalty_value(&t.theta, &lifted, c));
            (Decider::Rule { theta: t.theta, degree, plug_in: false }, pen)
        }
        Method::PoPa { k1 } => {
            let t = run(train_data, k1, 0, CostSpec::squared_loss(), None)?;
            (Decider::Rule { theta: t.theta, degree: 1, plug_in: true }, None)
        }
    };
    Ok(Fitted { decider, seconds: start.elapsed().as_secs_f64(), train_penalty })
}

pub fn decide(cfg: &ExperimentConfig, decider: &Decider, test: &Dataset) -> Result<Vec<Vec<f64>>> {
    (0..test.n())
        .map(|s| {
            let out = decider.output(test.x(s))?;
            Ok(if decider.is_plug_in() { cfg.cost.plug_in(&out) } else { out })
        })
        .collect()
}

struct Cell {
    method: Method,
    seed: u64,
    result: Result<(Score, Option<f64>)>,
}

/// Runs every method on every seed. Cells run on the current rayon pool;
/// failures are recorded and the table is still produced.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let per_seed: Vec<(u64, Result<(Dataset, Dataset, Score)>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let r = (|| {
                let (train, test) = split_data(cfg, seed)?;
                let oracle = score(&cfg.cost, &simopt_decisions(cfg, &test, seed)?, &test)?;
                Ok((train, test, oracle))
            })();
            (seed, r)
        })
        .collect();
    let jobs: Vec<(usize, Method)> =
        (0..per_seed.len()).flat_map(|i| cfg.methods.iter().map(move |&m| (i, m))).collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(i, method)| {
            let (seed, data) = &per_seed[i];
            let result = match data {
                Err(e) => Err(Error::Bench(e.to_string())),
                Ok((train, test, oracle)) => {
                    if method == Method::Simopt {
                        Ok((*oracle, None))
                    } else {
                        fit_method(cfg, method, train, *seed).and_then(|f| {
                            let z = decide(cfg, &f.decider, test)?;
                            Ok((score(&cfg.cost, &z, test)?, Some(f.seconds)))
                        })
                    }
                }
            };
            Cell { method, seed: *seed, result }
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for c in &cells {
        let i = cfg.seeds.iter().position(|&s| s == c.seed).expect("seed of a cell");
        let oracle = per_seed[i].1.as_ref().ok().map(|d| d.2.test_cost).unwrap_or(f64::NAN);
        let (score, secs) = match &c.result {
            Ok(v) => *v,
            Err(e) => {
                failures.push((c.method.to_string(), c.seed, e.to_string()));
                (Score { test_cost: f64::NAN, feasibility: None }, None)
            }
        };
        rows.push(ReportRow {
            method: c.method.to_string(),
            setting: cfg.setting.clone(),
            n: cfg.n_train,
            p: cfg.p,
            seed: Some(c.seed),
            test_cost: score.test_cost,
            gap: score.test_cost - oracle,
            feasibility: score.feasibility,
            train_seconds: if cfg.timing { secs.or(Some(0.0)) } else { None },
        });
    }
    for m in &cfg.methods {
        let mine: Vec<&ReportRow> = rows.iter().filter(|r| r.method == m.to_string()).collect();
        let mean = |f: &dyn Fn(&ReportRow) -> Option<f64>| {
            let v: Vec<f64> = mine.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        rows.push(ReportRow {
            method: m.to_string(),
            setting: cfg.setting.clone(),
            n: cfg.n_train,
            p: cfg.p,
            seed: None,
            test_cost: mean(&|r| Some(r.test_cost)).unwrap_or(f64::NAN),
            gap: mean(&|r| Some(r.gap)).unwrap_or(f64::NAN),
            feasibility: mean(&|r| r.feasibility),
            train_seconds: mean(&|r| r.train_seconds),
        });
    }
    Ok(Report { rows, failures })
}
