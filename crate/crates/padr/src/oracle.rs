//! Cost setups of the newsvendor family, their exact evaluation, and the
//! oracle (SIMOPT) and plug-in decision rules.

use padr_core::cost::CAPACITY_COST;
use padr_core::penalty::{project_convex, FEASIBILITY_TOL};
use padr_core::{ConstraintFn, ConstraintSpec, CostSpec, RngHandle};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::demand::{normals, DemandModel};
use crate::error::{Error, Result};

/// Simulated demands per feature vector for SAA oracles.
pub const SAA_SCENARIOS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityKind {
    /// `z₁ + z₂ ≤ C₀`.
    Linear,
    /// `C(z₁) + C(z₂) ≤ C₀` with the concave capacity cost `C`.
    CapacityCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSetup {
    /// `c_b (y − z)₊ + c_h (z − y)₊`.
    Newsvendor { cb: f64, ch: f64 },
    /// Newsvendor plus the concave capacity cost `C(z)` in the objective.
    CapacityCostObjective { cb: f64, ch: f64 },
    /// Two newsvendors sharing a capacity budget.
    TwoProduct { cb: [f64; 2], ch: [f64; 2], c0: f64, constraint: CapacityKind },
}

/// `C(z) = min{z, 0.6z + 0.8, 0.4z + 15.6}`.
pub fn capacity_cost(z: f64) -> f64 {
    CAPACITY_COST.iter().map(|p| p.slope * z + p.offset).fold(f64::INFINITY, f64::min)
}

/// Inverse of `C` on `[0, ∞)`.
pub fn capacity_cost_inv(c: f64) -> f64 {
    // C is increasing with kinks at z = 2 (C = 2) and z = 74 (C = 45.2).
    if c <= 2.0 {
        c
    } else if c <= 45.2 {
        (c - 0.8) / 0.6
    } else {
        (c - 15.6) / 0.4
    }
}

/// Breakpoints of `C`.
const C_KINKS: [f64; 2] = [2.0, 74.0];

fn newsvendor(cb: f64, ch: f64, z: f64, y: f64) -> f64 {
    (cb * (y - z)).max(ch * (z - y))
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

impl CostSetup {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let ok = match *self {
            CostSetup::Newsvendor { cb, ch } | CostSetup::CapacityCostObjective { cb, ch } => pos(cb) && pos(ch),
            CostSetup::TwoProduct { cb, ch, c0, .. } => cb.iter().chain(&ch).all(|&v| pos(v)) && pos(c0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("cost: unit costs and capacity must be positive and finite".into()))
        }
    }

    pub fn d(&self) -> usize {
        match self {
            CostSetup::TwoProduct { .. } => 2,
            _ => 1,
        }
    }

    pub fn cost_spec(&self) -> CostSpec {
        match *self {
            CostSetup::Newsvendor { cb, ch } => CostSpec::newsvendor(cb, ch),
            CostSetup::CapacityCostObjective { cb, ch } => CostSpec::newsvendor(cb, ch).with_capacity_cost(),
            CostSetup::TwoProduct { cb, ch, .. } => CostSpec::newsvendor_multi(&[(cb[0], ch[0]), (cb[1], ch[1])]),
        }
    }

    pub fn constraint(&self) -> Option<ConstraintFn> {
        match *self {
            CostSetup::TwoProduct { c0, constraint: CapacityKind::Linear, .. } => Some(ConstraintFn::linear_capacity(2, c0)),
            CostSetup::TwoProduct { c0, constraint: CapacityKind::CapacityCost, .. } => {
                Some(ConstraintFn::capacity_cost_budget(2, c0))
            }
            _ => None,
        }
    }

    /// Constraint set with margin `gamma` and penalty `lambda`.
    pub fn constraint_spec(&self, gamma: f64, lambda: f64) -> Option<ConstraintSpec> {
        self.constraint().map(|c| ConstraintSpec::new(vec![c], gamma, lambda))
    }

    pub fn is_convex_constrained(&self) -> bool {
        matches!(self, CostSetup::TwoProduct { constraint: CapacityKind::Linear, .. })
    }

    /// Realized cost of decision `z` under demand `y`.
    pub fn cost(&self, z: &[f64], y: &[f64]) -> f64 {
        match *self {
            CostSetup::Newsvendor { cb, ch } => newsvendor(cb, ch, z[0], y[0]),
            CostSetup::CapacityCostObjective { cb, ch } => newsvendor(cb, ch, z[0], y[0]) + capacity_cost(z[0]),
            CostSetup::TwoProduct { cb, ch, .. } => {
                newsvendor(cb[0], ch[0], z[0], y[0]) + newsvendor(cb[1], ch[1], z[1], y[1])
            }
        }
    }

    pub fn is_feasible(&self, z: &[f64]) -> bool {
        self.constraint().map_or(true, |c| c.value(z) <= FEASIBILITY_TOL)
    }

    /// Oracle decision at `x` from the known demand model. Closed forms for
    /// the single-product setups; SAA over [`SAA_SCENARIOS`] simulated demands
    /// drawn from `rng` for the two-product setups.
    pub fn simopt(&self, model: &DemandModel, x: &[f64], rng: &RngHandle) -> Result<Vec<f64>> {
        let mean = model.mean(x);
        if mean.len() != self.d() {
            return Err(Error::Config(format!(
                "demand model has {} products, cost setup expects {}",
                mean.len(),
                self.d()
            )));
        }
        let n = std_normal();
        Ok(match *self {
            CostSetup::Newsvendor { cb, ch } => vec![mean[0] + n.inverse_cdf(cb / (cb + ch))],
            CostSetup::CapacityCostObjective { cb, ch } => vec![gaussian_capacity_objective(cb, ch, mean[0])],
            CostSetup::TwoProduct { .. } => {
                let e1 = normals(&rng.child(0), SAA_SCENARIOS);
                let e2 = normals(&rng.child(1), SAA_SCENARIOS);
                let y1: Vec<f64> = e1.iter().map(|e| mean[0] + e).collect();
                let y2: Vec<f64> = e2.iter().map(|e| mean[1] + e).collect();
                self.saa_two(&y1, &y2).to_vec()
            }
        })
    }

    /// Plug-in decision: the optimal decision when demand equals `yhat`.
    pub fn plug_in(&self, yhat: &[f64]) -> Vec<f64> {
        match *self {
            CostSetup::Newsvendor { .. } => vec![yhat[0].max(0.0)],
            CostSetup::CapacityCostObjective { cb, ch } => {
                let y = yhat[0];
                let cands = [0.0, y.max(0.0), C_KINKS[0], C_KINKS[1]];
                let f = |z: f64| newsvendor(cb, ch, z, y) + capacity_cost(z);
                vec![argmin_by(&cands, f)]
            }
            CostSetup::TwoProduct { .. } => self.saa_two(&[yhat[0]], &[yhat[1]]).to_vec(),
        }
    }

    /// Exact minimizer of the two-product SAA problem over `z ≥ 0` and the
    /// capacity constraint. The objective is separable, convex and piecewise
    /// affine; when the unconstrained minimizer is infeasible the optimum
    /// lies on the (monotone) constraint boundary, along which the objective
    /// is piecewise affine with known breakpoints.
    pub fn saa_two(&self, y1: &[f64], y2: &[f64]) -> [f64; 2] {
        let CostSetup::TwoProduct { cb, ch, c0, constraint } = *self else {
            panic!("saa_two needs a two-product setup");
        };
        let g1 = PlNewsvendor::new(cb[0], ch[0], y1);
        let g2 = PlNewsvendor::new(cb[1], ch[1], y2);
        let free = [g1.argmin().max(0.0), g2.argmin().max(0.0)];
        let psi = |z1: f64, z2: f64| match constraint {
            CapacityKind::Linear => z1 + z2 - c0,
            CapacityKind::CapacityCost => capacity_cost(z1) + capacity_cost(z2) - c0,
        };
        if psi(free[0], free[1]) <= 0.0 {
            return free;
        }
        let (to_z2, z1_max): (Box<dyn Fn(f64) -> f64>, f64) = match constraint {
            CapacityKind::Linear => (Box::new(move |z1| (c0 - z1).max(0.0)), c0),
            CapacityKind::CapacityCost => {
                (Box::new(move |z1| capacity_cost_inv((c0 - capacity_cost(z1)).max(0.0))), capacity_cost_inv(c0))
            }
        };
        // Preimage on the z₁ axis of a z₂ breakpoint.
        let from_z2 = |z2: f64| match constraint {
            CapacityKind::Linear => c0 - z2,
            CapacityKind::CapacityCost => capacity_cost_inv((c0 - capacity_cost(z2)).max(0.0)),
        };
        let mut cands = vec![0.0, z1_max];
        cands.extend(y1.iter().copied());
        cands.extend(y2.iter().filter(|&&v| v >= 0.0).map(|&v| from_z2(v)));
        if constraint == CapacityKind::CapacityCost {
            cands.extend(C_KINKS);
            cands.extend(C_KINKS.iter().map(|&k| from_z2(k)));
        }
        cands.retain(|v| v.is_finite() && (0.0..=z1_max).contains(v));
        let z1 = argmin_by(&cands, |z1| g1.value(z1) + g2.value(to_z2(z1)));
        [z1, to_z2(z1)]
    }

    /// Decisions as evaluated: convex-constrained decisions are projected
    /// onto the feasible region; otherwise returned unchanged.
    pub fn evaluated_decision(&self, z: &[f64]) -> Result<Vec<f64>> {
        if self.is_convex_constrained() && !self.is_feasible(z) {
            let mut cons = self.constraint_spec(0.0, 0.0).expect("constrained setup");
            cons.nonnegative = true;
            return Ok(project_convex(z, &cons)?);
        }
        Ok(z.to_vec())
    }
}

/// Lowest value of `f` over `cands`; ties go to the earliest candidate.
fn argmin_by(cands: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (cands[0], f(cands[0]));
    for &c in &cands[1..] {
        let v = f(c);
        if v < best.1 {
            best = (c, v);
        }
    }
    best.0
}

/// `(1/K) Σ_k max{c_b (y_k − z), c_h (z − y_k)}` evaluated in `O(log K)`.
struct PlNewsvendor {
    cb: f64,
    ch: f64,
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl PlNewsvendor {
    fn new(cb: f64, ch: f64, ys: &[f64]) -> Self {
        let mut sorted = ys.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        for v in &sorted {
            prefix.push(prefix.last().unwrap() + v);
        }
        Self { cb, ch, sorted, prefix }
    }

    fn value(&self, z: f64) -> f64 {
        let k = self.sorted.len();
        let below = self.sorted.partition_point(|&y| y < z);
        let sum_below = self.prefix[below];
        let sum_above = self.prefix[k] - sum_below;
        let over = z * below as f64 - sum_below;
        let under = sum_above - z * (k - below) as f64;
        (self.cb * under + self.ch * over) / k as f64
    }

    /// The `⌈τK⌉`-th order statistic, `τ = c_b / (c_b + c_h)`.
    fn argmin(&self) -> f64 {
        let k = self.sorted.len();
        let tau = self.cb / (self.cb + self.ch);
        let j = ((tau * k as f64).ceil() as usize).clamp(1, k);
        self.sorted[j - 1]
    }
}

/// Expected newsvendor cost under `N(mu, 1)` demand.
pub fn gaussian_newsvendor(cb: f64, ch: f64, mu: f64, z: f64) -> f64 {
    let n = std_normal();
    let u = z - mu;
    let (pdf, cdf) = (n.pdf(u), n.cdf(u));
    let under = pdf - u * (1.0 - cdf);
    let over = u * cdf + pdf;
    cb * under + ch * over
}

/// Minimizes `E[newsvendor] + C(z)` over `z ≥ 0` under `N(mu, 1)` demand.
/// On each affine piece of `C` the objective is smooth and convex, so its
/// minimizer is a clamped Gaussian quantile.
fn gaussian_capacity_objective(cb: f64, ch: f64, mu: f64) -> f64 {
    let n = std_normal();
    let intervals = [(0.0, C_KINKS[0], 1.0), (C_KINKS[0], C_KINKS[1], 0.6), (C_KINKS[1], f64::INFINITY, 0.4)];
    let mut cands = Vec::new();
    for (lo, hi, slope) in intervals {
        let tau = (cb - slope) / (cb + ch);
        let z = if tau <= 0.0 {
            lo
        } else if tau >= 1.0 {
            hi
        } else {
            mu + n.inverse_cdf(tau)
        };
        cands.push(z.clamp(lo, hi));
    }
    argmin_by(&cands, |z| gaussian_newsvendor(cb, ch, mu, z) + capacity_cost(z))
}
