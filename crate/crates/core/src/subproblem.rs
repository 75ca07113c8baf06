//! The proximal subproblem
//! `min_{θ ∈ [−μ, μ]^q} Σ_s w_s F̂_s(θ) + (η/2)‖θ − θ′‖²`.
//!
//! Piecewise-affine surrogates are exported to an epigraph QP and solved by
//! [`admm_solve`]; callback surrogates use a projected subgradient method.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{PadrError, Result};
use crate::linalg::{dot, norm2};
use crate::padr::AffineForm;
use crate::qp::{admm_solve, AdmmSettings, EpigraphQp, QpRow, RowKind, SolveStatus, WarmStart};
use crate::surrogate::{sq_dist, ConvexExpr, ConvexSurrogate};

/// Linear expression in θ and auxiliaries.
#[derive(Default)]
struct Lin {
    theta: Vec<(u32, f64)>,
    aux: Vec<(u32, f64)>,
    constant: f64,
}

impl Lin {
    fn scale(mut self, c: f64) -> Self {
        self.theta.iter_mut().for_each(|t| t.1 *= c);
        self.aux.iter_mut().for_each(|t| t.1 *= c);
        self.constant *= c;
        self
    }

    fn add(&mut self, other: Lin) {
        self.theta.extend(other.theta);
        self.aux.extend(other.aux);
        self.constant += other.constant;
    }

    fn value(&self, theta: &[f64], aux: &[f64]) -> f64 {
        self.constant
            + self.theta.iter().map(|&(j, a)| a * theta[j as usize]).sum::<f64>()
            + self.aux.iter().map(|&(j, a)| a * aux[j as usize]).sum::<f64>()
    }
}

fn merge(mut v: Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    v.sort_unstable_by_key(|t| t.0);
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(v.len());
    for (j, a) in v {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => out.push((j, a)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

struct Builder<'a> {
    qp: EpigraphQp,
    /// Reference of the surrogate being exported; leaves are in `θ − center`.
    center: &'a [f64],
    /// Auxiliary values at the reference point (a feasible warm start).
    aux_ref: Vec<f64>,
    theta_ref: &'a [f64],
    sample: u32,
}

impl Builder<'_> {
    fn epi(&mut self, e: &ConvexExpr) -> Lin {
        match e {
            ConvexExpr::Affine(a) => lin_of(a, self.center),
            ConvexExpr::Sum(v) => {
                let mut acc = Lin::default();
                for c in v {
                    let l = self.epi(c);
                    acc.add(l);
                }
                acc
            }
            ConvexExpr::Scaled(c, inner) => self.epi(inner).scale(*c),
            ConvexExpr::Max(v) if v.len() == 1 => self.epi(&v[0]),
            ConvexExpr::Max(v) => {
                let children: Vec<Lin> = v.iter().map(|c| self.epi(c)).collect();
                let t = self.aux_ref.len() as u32;
                let t_ref = children
                    .iter()
                    .map(|l| l.value(self.theta_ref, &self.aux_ref))
                    .fold(f64::NEG_INFINITY, f64::max);
                self.aux_ref.push(t_ref);
                for l in children {
                    let mut aux = l.aux;
                    aux.push((t, -1.0));
                    self.qp.rows.push(QpRow {
                        theta: merge(l.theta),
                        aux: merge(aux),
                        lower: f64::NEG_INFINITY,
                        upper: -l.constant,
                        kind: RowKind::Piece,
                        sample: Some(self.sample),
                    });
                }
                Lin { theta: vec![], aux: vec![(t, 1.0)], constant: 0.0 }
            }
        }
    }
}

fn lin_of(a: &AffineForm, center: &[f64]) -> Lin {
    let shift: f64 = a.terms.iter().map(|&(j, c)| c * center[j as usize]).sum();
    Lin { theta: a.terms.clone(), aux: vec![], constant: a.constant - shift }
}

/// Epigraph QP plus the auxiliary values that make `(θ′, aux)` feasible.
#[derive(Debug, Clone)]
pub struct ProxQp {
    pub qp: EpigraphQp,
    pub aux_ref: Vec<f64>,
}

/// Builds the epigraph QP of the weighted surrogate average plus the
/// proximal term. Each surrogate's auxiliaries form one group.
pub fn build_epigraph_qp(
    surrogates: &[ConvexSurrogate],
    weights: &[f64],
    theta_ref: &[f64],
    eta: f64,
    mu: f64,
) -> Result<ProxQp> {
    if surrogates.len() != weights.len() {
        return Err(crate::error::dim("one weight per surrogate is required"));
    }
    if !(eta >= 0.0) {
        return Err(crate::error::config("eta must be nonnegative"));
    }
    let q = theta_ref.len();
    let mut b = Builder { qp: EpigraphQp { n_theta: q, ..Default::default() }, center: theta_ref, aux_ref: Vec::new(), theta_ref, sample: 0 };
    let mut objective = Lin::default();
    let mut quad = vec![eta; q];
    let mut lin_theta = vec![0.0; q];
    let mut constant = 0.0;
    for j in 0..q {
        lin_theta[j] -= eta * theta_ref[j];
        constant += 0.5 * eta * theta_ref[j] * theta_ref[j];
    }
    for (k, (s, &w)) in surrogates.iter().zip(weights).enumerate() {
        let expr = s.epigraph().ok_or(PadrError::NoEpigraph)?;
        b.sample = k as u32;
        b.center = s.reference();
        let before = b.aux_ref.len();
        let l = b.epi(expr);
        b.qp.aux_groups.push(b.aux_ref.len() - before);
        objective.add(l.scale(w));
        if s.quadratic() > 0.0 {
            let kappa = w * s.quadratic();
            for (j, c) in s.reference().iter().enumerate() {
                quad[j] += kappa;
                lin_theta[j] -= kappa * c;
                constant += 0.5 * kappa * c * c;
            }
        }
    }
    let n_aux = b.aux_ref.len();
    let mut qp = b.qp;
    qp.aux_groups.retain(|&g| g > 0);
    qp.p_diag = quad;
    qp.p_diag.extend(core::iter::repeat(0.0).take(n_aux));
    qp.linear = lin_theta;
    qp.linear.extend(core::iter::repeat(0.0).take(n_aux));
    for (j, a) in objective.theta {
        qp.linear[j as usize] += a;
    }
    for (j, a) in objective.aux {
        qp.linear[q + j as usize] += a;
    }
    qp.constant = constant + objective.constant;
    for j in 0..q {
        qp.rows.push(QpRow {
            theta: vec![(j as u32, 1.0)],
            aux: vec![],
            lower: -mu,
            upper: mu,
            kind: RowKind::Box,
            sample: None,
        });
    }
    Ok(ProxQp { qp, aux_ref: b.aux_ref })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Admm,
    FirstOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxSettings {
    pub admm: AdmmSettings,
    /// Gap tolerance of the first-order backend.
    pub tol: f64,
}

impl Default for ProxSettings {
    fn default() -> Self {
        Self { admm: AdmmSettings::default(), tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxSolution {
    pub theta: Vec<f64>,
    /// Surrogate objective including the proximal term at `theta`.
    pub value: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub backend: Backend,
}

/// `Σ_s w_s F̂_s(θ) + (η/2)‖θ − θ′‖²`.
pub fn prox_objective(surrogates: &[ConvexSurrogate], weights: &[f64], theta_ref: &[f64], eta: f64, theta: &[f64]) -> f64 {
    surrogates.iter().zip(weights).map(|(s, w)| w * s.value(theta)).sum::<f64>() + 0.5 * eta * sq_dist(theta, theta_ref)
}

/// Solves the proximal subproblem. The incumbent `θ′` is returned whenever
/// the solver's (clamped) point does not improve on it, so the returned value
/// never exceeds the objective at `θ′`.
pub fn solve_prox(
    surrogates: &[ConvexSurrogate],
    weights: &[f64],
    theta_ref: &[f64],
    eta: f64,
    mu: f64,
    settings: &ProxSettings,
    warm: Option<&[f64]>,
) -> Result<ProxSolution> {
    let at_ref = prox_objective(surrogates, weights, theta_ref, eta, theta_ref);
    let all_epigraph = surrogates.iter().all(|s| s.epigraph().is_some());
    let (mut theta, iterations, status, backend) = if all_epigraph {
        let prox = build_epigraph_qp(surrogates, weights, theta_ref, eta, mu)?;
        let mut x = warm.map(|w| w.to_vec()).unwrap_or_else(|| theta_ref.to_vec());
        x.extend_from_slice(&prox.aux_ref);
        let report = admm_solve(&prox.qp, &settings.admm, Some(&WarmStart { x, y: None }));
        let q = theta_ref.len();
        (report.x[..q].to_vec(), report.iterations, report.status, Backend::Admm)
    } else {
        let (t, it, st) = first_order(surrogates, weights, theta_ref, eta, mu, settings.tol, warm);
        (t, it, st, Backend::FirstOrder)
    };
    if !theta.iter().all(|v| v.is_finite()) {
        theta = theta_ref.to_vec();
    }
    for v in &mut theta {
        *v = v.clamp(-mu, mu);
    }
    let mut value = prox_objective(surrogates, weights, theta_ref, eta, &theta);
    if !(value <= at_ref) {
        theta = theta_ref.to_vec();
        value = at_ref;
    }
    Ok(ProxSolution { theta, value, iterations, status, backend })
}

/// Projected subgradient with Polyak steps toward a certified lower bound.
/// The bound minimizes a linearization of the surrogate part plus the exact
/// proximal term over the box, so `best − bound` bounds the suboptimality.
fn first_order(
    surrogates: &[ConvexSurrogate],
    weights: &[f64],
    theta_ref: &[f64],
    eta: f64,
    mu: f64,
    tol: f64,
    warm: Option<&[f64]>,
) -> (Vec<f64>, usize, SolveStatus) {
    let q = theta_ref.len();
    let cap = 10 * q.max(1) * surrogates.len().max(1);
    let mut x: Vec<f64> = warm.map(|w| w.to_vec()).unwrap_or_else(|| theta_ref.to_vec());
    x.iter_mut().for_each(|v| *v = v.clamp(-mu, mu));
    let phi = |t: &[f64]| prox_objective(surrogates, weights, theta_ref, eta, t);
    let mut fx = phi(&x);
    let mut best = (x.clone(), fx);
    let mut lower = f64::NEG_INFINITY;
    let mut s = vec![0.0; q];
    for it in 0..cap {
        s.iter_mut().for_each(|v| *v = 0.0);
        for (sur, &w) in surrogates.iter().zip(weights) {
            sur.add_subgradient(&x, w, &mut s);
        }
        let body = fx - 0.5 * eta * sq_dist(&x, theta_ref);
        // min over the box of body + sᵀ(θ − x) + (η/2)‖θ − θ′‖², coordinatewise.
        let mut lb = body - dot(&s, &x);
        for j in 0..q {
            let t = if eta > 0.0 {
                (theta_ref[j] - s[j] / eta).clamp(-mu, mu)
            } else if s[j] > 0.0 {
                -mu
            } else {
                mu
            };
            lb += s[j] * t + 0.5 * eta * (t - theta_ref[j]) * (t - theta_ref[j]);
        }
        lower = lower.max(lb);
        if best.1 - lower <= tol {
            return (best.0, it, SolveStatus::Optimal);
        }
        let g: Vec<f64> = (0..q).map(|j| s[j] + eta * (x[j] - theta_ref[j])).collect();
        let gn = norm2(&g);
        if gn == 0.0 {
            return (best.0, it, SolveStatus::Optimal);
        }
        let step = (fx - lower) / (gn * gn);
        for j in 0..q {
            x[j] = (x[j] - step * g[j]).clamp(-mu, mu);
        }
        fx = phi(&x);
        if fx < best.1 {
            best = (x.clone(), fx);
        }
    }
    (best.0, cap, SolveStatus::MaxIter)
}
