//! Comparison methods: least-squares plug-in (PO-L), piecewise-affine
//! plug-in (PO-PA), and linear rules on lifted monomial features (GLDR).

use nalgebra::{DMatrix, DVector};
use padr_core::{eval_padr, Dataset, Theta};

use crate::error::{Error, Result};

/// Ridge added to the normal equations when they are singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;

/// Ordinary least squares, one coefficient vector `[slopes.., intercept]` per output.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefs: Vec<Vec<f64>>,
}

impl LinearModel {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let (n, p) = (data.n(), data.p());
        let x = DMatrix::from_fn(n, p + 1, |s, j| if j < p { data.x(s)[j] } else { 1.0 });
        let xtx = x.transpose() * &x;
        let chol = xtx.clone().cholesky().or_else(|| {
            let ridge = DMatrix::identity(p + 1, p + 1) * RIDGE_FALLBACK;
            (xtx + ridge).cholesky()
        });
        let chol = chol.ok_or_else(|| Error::Bench("least squares: normal equations are singular".into()))?;
        let coefs = (0..data.m())
            .map(|i| {
                let y = DVector::from_fn(n, |s, _| data.y(s)[i]);
                chol.solve(&(x.transpose() * y)).iter().copied().collect()
            })
            .collect();
        Ok(Self { coefs })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.coefs
            .iter()
            .map(|c| c[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c[x.len()])
            .collect()
    }
}

/// All monomials of total degree `1..=degree` in the features, ordered by
/// degree, then lexicographically by exponent tuple (largest power of the
/// first variable first).
pub fn monomial_exponents(p: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(p: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == p - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            rec(p, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if p == 0 {
        return out;
    }
    for deg in 1..=degree {
        rec(p, deg, &mut Vec::new(), &mut out);
    }
    out
}

pub fn lift(x: &[f64], exps: &[Vec<usize>], out: &mut Vec<f64>) {
    out.extend(exps.iter().map(|e| e.iter().zip(x).map(|(&k, &v)| v.powi(k as i32)).product::<f64>()));
}

pub fn lift_dataset(data: &Dataset, degree: usize) -> Result<Dataset> {
    let exps = monomial_exponents(data.p(), degree);
    Ok(data.map_features(exps.len(), |x, out| lift(x, &exps, out))?)
}

/// How a trained method turns features into decisions.
#[derive(Debug, Clone)]
pub enum Decider {
    /// PADR on (possibly lifted) features; `plug_in` treats the output as a
    /// demand prediction and solves the deterministic problem.
    Rule { theta: Theta, degree: usize, plug_in: bool },
    Linear(LinearModel),
}

impl Decider {
    /// Raw rule output (prediction or decision) at `x`.
    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Decider::Rule { theta, degree, .. } => {
                if *degree <= 1 {
                    Ok(eval_padr(theta, x)?)
                } else {
                    let mut buf = Vec::new();
                    lift(x, &monomial_exponents(x.len(), *degree), &mut buf);
                    Ok(eval_padr(theta, &buf)?)
                }
            }
            Decider::Linear(m) => Ok(m.predict(x)),
        }
    }

    pub fn is_plug_in(&self) -> bool {
        match self {
            Decider::Rule { plug_in, .. } => *plug_in,
            Decider::Linear(_) => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_lift_has_five_features() {
        let e = monomial_exponents(2, 2);
        assert_eq!(e, vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(monomial_exponents(2, 1).len(), 2);
        assert_eq!(monomial_exponents(3, 3).len(), 3 + 6 + 10);
    }

    #[test]
    fn intercept_only_fit_is_the_mean() {
        let data = Dataset::new(0, 1, vec![], vec![1.0, 2.0, 6.0]).unwrap();
        let m = LinearModel::fit(&data).unwrap();
        assert!((m.predict(&[])[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_uses_ridge() {
        let f = vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let data = Dataset::new(2, 1, f, vec![1.0, 2.0, 3.0]).unwrap();
        let m = LinearModel::fit(&data).unwrap();
        assert!((m.predict(&[4.0, 4.0])[0] - 4.0).abs() < 1e-4);
    }
}
