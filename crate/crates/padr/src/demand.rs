//! Synthetic demand models with standard normal additive noise.

use padr_core::{Dataset, RngHandle};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> f64 {
    1.0
}

/// Mean demand `Ȳ(x)`; features are drawn uniformly from `[−1, 1]^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandModel {
    /// `k·max{5x₁ − 10x₂, −10x₁ + 5x₂, 15x₁} + 10`; extra features are ignored.
    MaxaffineBasic {
        #[serde(default = "one")]
        k: f64,
    },
    /// The basic model with `k = 1` read from the first two of `p` features.
    MaxaffineSparse,
    /// The basic model with `x₁`, `x₂` replaced by the means of the first and
    /// second half of the features.
    MaxaffineDense,
    /// `4 sin(πx₁) + max{16x₂, −20x₂} + 10`.
    SineSeasonal,
    /// Two products: `15x₁ − 5x₂ + 30` and `15x₁ + 5x₂ + 30` (halves averaged
    /// as in the dense model when `dense` is set).
    TwoProductLinear {
        #[serde(default)]
        dense: bool,
    },
}

impl DemandModel {
    pub fn outputs(&self) -> usize {
        match self {
            DemandModel::TwoProductLinear { .. } => 2,
            _ => 1,
        }
    }

    pub fn min_features(&self) -> usize {
        2
    }

    pub fn check(&self, p: usize) -> Result<()> {
        if p < self.min_features() {
            return Err(Error::Config(format!("demand model needs p ≥ {}, got p = {p}", self.min_features())));
        }
        Ok(())
    }

    fn two(&self, x: &[f64], dense: bool) -> (f64, f64) {
        if dense {
            let h = x.len() / 2;
            let a = x[..h].iter().sum::<f64>() / h as f64;
            let b = x[h..].iter().sum::<f64>() / (x.len() - h) as f64;
            (a, b)
        } else {
            (x[0], x[1])
        }
    }

    /// Mean demand per product.
    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        let basic = |x1: f64, x2: f64| (5.0 * x1 - 10.0 * x2).max(-10.0 * x1 + 5.0 * x2).max(15.0 * x1);
        match *self {
            DemandModel::MaxaffineBasic { k } => vec![k * basic(x[0], x[1]) + 10.0],
            DemandModel::MaxaffineSparse => vec![basic(x[0], x[1]) + 10.0],
            DemandModel::MaxaffineDense => {
                let (a, b) = self.two(x, true);
                vec![basic(a, b) + 10.0]
            }
            DemandModel::SineSeasonal => {
                vec![4.0 * (std::f64::consts::PI * x[0]).sin() + (16.0 * x[1]).max(-20.0 * x[1]) + 10.0]
            }
            DemandModel::TwoProductLinear { dense } => {
                let (a, b) = self.two(x, dense);
                vec![15.0 * a - 5.0 * b + 30.0, 15.0 * a + 5.0 * b + 30.0]
            }
        }
    }
}

/// `n` samples: `x ~ U[−1, 1]^p`, `y = Ȳ(x) + N(0, I)`. Sample `s` draws
/// from `rng.child(s)`, so prefixes of larger datasets agree.
pub fn gen_dataset(model: &DemandModel, n: usize, p: usize, rng: &RngHandle) -> Result<Dataset> {
    model.check(p)?;
    let m = model.outputs();
    let mut features = Vec::with_capacity(n * p);
    let mut outcomes = Vec::with_capacity(n * m);
    for s in 0..n {
        let mut r = rng.child(s as u64).rng();
        let start = features.len();
        features.extend((0..p).map(|_| r.uniform_in(-1.0, 1.0)));
        let mean = model.mean(&features[start..]);
        for mu in mean {
            let e: f64 = StandardNormal.sample(&mut r);
            outcomes.push(mu + e);
        }
    }
    Ok(Dataset::new(p, m, features, outcomes)?)
}

/// `k` standard normal draws from `rng` (used for simulated scenarios).
pub fn normals(rng: &RngHandle, k: usize) -> Vec<f64> {
    let mut r = rng.rng();
    (0..k).map(|_| StandardNormal.sample(&mut r)).collect()
}
