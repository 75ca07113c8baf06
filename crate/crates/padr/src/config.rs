//! Run configuration: TOML or JSON documents, named presets, and flag
//! overrides. Unknown keys are rejected with the offending key named.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use padr_core::EpsSchedule;
use serde::{Deserialize, Serialize};

use crate::bench::{ExperimentConfig, Method, PenaltySettings};
use crate::demand::DemandModel;
use crate::error::{Error, Result};
use crate::oracle::{CapacityKind, CostSetup};
use crate::train::{RuleSettings, SmmSettings, SweepSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Gen,
    Train,
    Eval,
    Bench,
    Diagnose,
    Sweep,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Bench => "bench",
            Command::Diagnose => "diagnose",
            Command::Sweep => "sweep",
        };
        f.write_str(s)
    }
}

/// Input and output locations. Unset inputs are generated from the
/// experiment (data) or taken from the output directory (model).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Training data CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Test data CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Model JSON read by `eval` and `diagnose`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Output directory.
    pub out: PathBuf,
}

/// Settings of the `diagnose` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSettings {
    /// Surrogation probes.
    pub probes: usize,
    /// ε used for the surrogation check and the residual.
    pub epsilon: f64,
    pub rho: f64,
    /// Largest mapping set enumerated exactly; beyond it the residual is sampled.
    pub exact_cap: u64,
    pub residual_draws: usize,
    /// Random directions of the descent probe.
    pub directions: usize,
    pub step: f64,
}

impl Default for DiagnoseSettings {
    fn default() -> Self {
        Self { probes: 1000, epsilon: 0.0, rho: 0.6, exact_cap: 10_000, residual_draws: 200, directions: 64, step: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Set from the subcommand; a file value must agree with it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    pub seed: u64,
    /// Worker threads; unset falls back to `PADR_THREADS`, then all cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub paths: Paths,
    pub experiment: ExperimentConfig,
    pub diagnose: DiagnoseSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            seed: 0,
            threads: None,
            paths: Paths { out: PathBuf::from("out"), ..Paths::default() },
            experiment: ExperimentConfig::default(),
            diagnose: DiagnoseSettings::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    NvBasic,
    NvSparseP50,
    NvSine,
    NvCapacity,
    NvNcvxObj,
    NvNcvxConstr,
}

impl Preset {
    pub const ALL: [Preset; 6] =
        [Preset::NvBasic, Preset::NvSparseP50, Preset::NvSine, Preset::NvCapacity, Preset::NvNcvxObj, Preset::NvNcvxConstr];

    pub fn name(self) -> &'static str {
        match self {
            Preset::NvBasic => "nv-basic",
            Preset::NvSparseP50 => "nv-sparse-p50",
            Preset::NvSine => "nv-sine",
            Preset::NvCapacity => "nv-capacity",
            Preset::NvNcvxObj => "nv-ncvx-obj",
            Preset::NvNcvxConstr => "nv-ncvx-constr",
        }
    }

    /// The experiment of this instance: ten rounds of `T = 10`, shrinking ε,
    /// hyperparameters tuned by a 20-candidate sweep, five seeds.
    pub fn experiment(self) -> ExperimentConfig {
        let shrinking = SmmSettings { eps: EpsSchedule::Shrinking { eps0: 3000.0, eps1: 0.0, t0: 3 }, ..SmmSettings::default() };
        let base = ExperimentConfig {
            setting: self.name().into(),
            seeds: (0..5).collect(),
            smm: shrinking.clone(),
            tune: true,
            ..ExperimentConfig::default()
        };
        let rule = |k1, k2| RuleSettings { k1, k2, ..RuleSettings::default() };
        let nv = |cb, ch| CostSetup::Newsvendor { cb, ch };
        let single = |k1, k2| {
            vec![Method::Simopt, Method::Padr { k1, k2 }, Method::Ldr, Method::Gldr { degree: 2 }, Method::PoL, Method::PoPa { k1: 3 }]
        };
        let two = |cb, ch, c0, constraint| CostSetup::TwoProduct { cb, ch, c0, constraint };
        // Constrained instances keep the SMM schedule fixed and search (γ, λ).
        let penalized = SmmSettings { eta: 0.05, ..shrinking.clone() };
        let penalty_sweep = SweepSettings::penalty_only(&penalized).expect("valid preset schedule");
        match self {
            Preset::NvBasic => ExperimentConfig {
                demand: DemandModel::MaxaffineBasic { k: 1.0 },
                cost: nv(8.0, 2.0),
                rule: rule(3, 0),
                methods: single(3, 0),
                ..base
            },
            Preset::NvSparseP50 => ExperimentConfig {
                demand: DemandModel::MaxaffineSparse,
                p: 50,
                cost: nv(8.0, 2.0),
                rule: rule(3, 0),
                methods: vec![Method::Simopt, Method::Padr { k1: 3, k2: 0 }, Method::Ldr, Method::PoL, Method::PoPa { k1: 3 }],
                ..base
            },
            Preset::NvSine => ExperimentConfig {
                demand: DemandModel::SineSeasonal,
                cost: nv(5.0, 5.0),
                rule: rule(2, 2),
                methods: single(2, 2),
                ..base
            },
            Preset::NvCapacity => ExperimentConfig {
                demand: DemandModel::TwoProductLinear { dense: false },
                cost: two([8.0, 2.0], [2.0, 8.0], 60.0, CapacityKind::Linear),
                rule: rule(2, 2),
                methods: vec![Method::Simopt, Method::Padr { k1: 2, k2: 2 }, Method::Ldr, Method::PoL],
                penalty: PenaltySettings::default(),
                smm: penalized.clone(),
                sweep: penalty_sweep.clone(),
                ..base
            },
            Preset::NvNcvxObj => ExperimentConfig {
                demand: DemandModel::MaxaffineBasic { k: 1.0 },
                cost: CostSetup::CapacityCostObjective { cb: 5.0, ch: 5.0 },
                rule: rule(3, 0),
                methods: vec![Method::Simopt, Method::Padr { k1: 3, k2: 0 }, Method::Ldr, Method::PoL],
                ..base
            },
            Preset::NvNcvxConstr => ExperimentConfig {
                demand: DemandModel::TwoProductLinear { dense: false },
                cost: two([7.0, 7.0], [3.0, 3.0], 50.0, CapacityKind::CapacityCost),
                rule: rule(2, 2),
                methods: vec![Method::Simopt, Method::Padr { k1: 2, k2: 2 }, Method::Ldr, Method::PoL],
                smm: penalized.clone(),
                sweep: penalty_sweep.clone(),
                ..base
            },
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::Config(format!("unknown preset `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Recursively overlays `top` onto `base`; tables merge key by key, any
/// other value replaces.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    // Tagged enums are replaced wholesale so stale variant
                    // fields do not leak across kinds.
                    Some(slot) if slot.is_table() && v.is_table() && !v.as_table().unwrap().contains_key("kind") => {
                        merge(slot, v)
                    }
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Parses a TOML or JSON document (by extension; `.json` is JSON) into a
/// generic value.
pub fn parse_document(path: &Path, text: &str) -> Result<toml::Value> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let mut v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        drop_nulls(&mut v);
        toml::Value::try_from(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        text.parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// TOML has no null; a JSON `null` means "unset", i.e. the default.
fn drop_nulls(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.retain(|_, x| !x.is_null());
            m.values_mut().for_each(drop_nulls);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(drop_nulls),
        _ => {}
    }
}

fn to_value(cfg: &RunConfig) -> toml::Value {
    toml::Value::try_from(cfg).expect("run config is representable")
}

/// Deserializes a merged document, reporting the dotted path of the
/// offending key on failure.
pub fn from_value(value: toml::Value) -> Result<RunConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().trim().to_string();
        if path == "." || path.is_empty() {
            Error::Config(msg)
        } else {
            Error::Config(format!("at `{path}`: {msg}"))
        }
    })
}

/// Builds the run configuration: defaults, then the preset, then the file,
/// then command-line overrides.
pub fn load(
    command: Command,
    preset: Option<&str>,
    file: Option<&Path>,
    overrides: &Overrides,
) -> Result<RunConfig> {
    let mut base = RunConfig::default();
    if let Some(name) = preset {
        base.experiment = name.parse::<Preset>()?.experiment();
    }
    let mut value = to_value(&base);
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        merge(&mut value, parse_document(path, &text)?);
    }
    let mut cfg = from_value(value)?;
    if let Some(c) = cfg.command {
        if c != command {
            return Err(Error::Config(format!("at `command`: file says `{c}` but `{command}` was requested")));
        }
    }
    cfg.command = Some(command);
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(o) = &overrides.out {
        cfg.paths.out = o.clone();
    }
    if overrides.threads.is_some() {
        cfg.threads = overrides.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        if self.threads == Some(0) {
            return Err(Error::Config("at `threads`: must be at least 1".into()));
        }
        if self.paths.out.as_os_str().is_empty() {
            return Err(Error::Config("at `paths.out`: empty path".into()));
        }
        for (key, p) in [("paths.train", &self.paths.train), ("paths.test", &self.paths.test), ("paths.model", &self.paths.model)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("at `{key}`: {} does not exist", p.display())));
                }
            }
        }
        let d = &self.diagnose;
        if !(d.rho > 0.0) || !(d.step > 0.0) || !(d.epsilon >= 0.0) || d.residual_draws == 0 {
            return Err(Error::Config("at `diagnose`: rho and step must be positive, epsilon ≥ 0, residual_draws ≥ 1".into()));
        }
        if self.command == Some(Command::Sweep) {
            self.experiment.sweep.validate()?;
        }
        Ok(())
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.paths.out.join(file)
    }

    /// Model path read by `eval` and `diagnose`.
    pub fn model_path(&self) -> PathBuf {
        self.paths.model.clone().unwrap_or_else(|| self.out("model.json"))
    }

    /// The resolved configuration as pretty JSON.
    pub fn echo(&self) -> Vec<u8> {
        crate::io::to_json_bytes(self)
    }
}
