//! Scenario constraints `ψ_j(f(x)) + γ ≤ 0` handled by the exact penalty
//! `V(θ; λ) = F(θ) + λ G_γ(θ)`, plus feasibility metrics and projection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::cost::{
    concave_active, cost_eval, pa_output_terms, sum_expr, Composition, CostSpec, OuterPiece,
    OuterSelector, PaOutputCost, CAPACITY_COST,
};
use crate::data::{Dataset, Theta};
use crate::error::{config, dim, PadrError, Result};
use crate::padr::{eval_output, InnerSurrogates};
use crate::qp::{admm_solve, AdmmSettings, EpigraphQp, QpRow, RowKind, SolveStatus};
use crate::surrogate::ConvexExpr;

/// Separable constraint function `ψ(z) = Σ_ι ψ_ι(z_ι) + constant`, where each
/// `ψ_ι` is a convex max plus an optional concave min of affine pieces in `z_ι`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ConstraintFn {
    pub outputs: Vec<PaOutputCost>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub constant: f64,
}

impl ConstraintFn {
    /// `Σ_ι z_ι − c0`.
    pub fn linear_capacity(d: usize, c0: f64) -> Self {
        Self {
            outputs: (0..d)
                .map(|_| PaOutputCost { convex: vec![OuterPiece::new(1.0, 0.0, 0.0)], concave: vec![], outcome: 0 })
                .collect(),
            constant: -c0,
        }
    }

    /// `Σ_ι C(z_ι) − c0` with the concave capacity cost `C`.
    pub fn capacity_cost_budget(d: usize, c0: f64) -> Self {
        Self {
            outputs: (0..d)
                .map(|_| PaOutputCost { convex: vec![], concave: CAPACITY_COST.to_vec(), outcome: 0 })
                .collect(),
            constant: -c0,
        }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.outputs.iter().zip(z).fold(self.constant, |acc, (o, &zi)| acc + o.value(zi, &[]))
    }

    pub fn is_convex(&self) -> bool {
        self.outputs.iter().all(|o| o.concave.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ConstraintSpec {
    pub constraints: Vec<ConstraintFn>,
    /// Margin γ ≥ 0 used in training.
    #[cfg_attr(feature = "serde", serde(default))]
    pub gamma: f64,
    /// Penalty weight λ ≥ 0.
    #[cfg_attr(feature = "serde", serde(default))]
    pub lambda: f64,
    /// Adds `z ≥ 0` to the projection region.
    #[cfg_attr(feature = "serde", serde(default))]
    pub nonnegative: bool,
}

impl ConstraintSpec {
    pub fn new(constraints: Vec<ConstraintFn>, gamma: f64, lambda: f64) -> Self {
        Self { constraints, gamma, lambda, nonnegative: false }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(config("gamma must be finite and nonnegative"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(config("lambda must be finite and nonnegative"));
        }
        for (j, c) in self.constraints.iter().enumerate() {
            if c.outputs.len() != d {
                return Err(dim(format!("constraint {j} has {} outputs, rule has d = {d}", c.outputs.len())));
            }
            if c.outputs.iter().flat_map(|o| o.convex.iter().chain(&o.concave)).any(|p| p.y_weight != 0.0) {
                return Err(PadrError::Unsupported(format!("constraint {j} depends on the outcome")));
            }
        }
        Ok(())
    }

    /// `Σ_j max{ψ_j(z) + γ, 0}`.
    pub fn violation(&self, z: &[f64]) -> f64 {
        self.constraints.iter().map(|c| (c.value(z) + self.gamma).max(0.0)).sum()
    }

    /// Whether every `ψ_j(z) (+ γ) ≤ 0`.
    pub fn is_feasible(&self, z: &[f64], use_margin: bool) -> bool {
        let g = if use_margin { self.gamma } else { 0.0 };
        self.constraints.iter().all(|c| c.value(z) + g <= FEASIBILITY_TOL)
    }

    pub fn is_convex(&self) -> bool {
        self.constraints.iter().all(ConstraintFn::is_convex)
    }

    /// Slot numbering for concave piece selection: after the `d` cost slots.
    pub(crate) fn slot(d: usize, j: usize, i: usize) -> usize {
        d + j * d + i
    }

    /// Surrogate of `λ Σ_j max{ψ_j(f) + γ, 0}` for one sample, or `None` if λ = 0.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn penalty_expr(
        &self,
        inner: &InnerSurrogates,
        pos: usize,
        theta_ref: &Theta,
        x: &[f64],
        sample: usize,
        eps_outer: f64,
        selector: &mut dyn OuterSelector,
    ) -> Option<ConvexExpr> {
        if self.lambda == 0.0 || self.constraints.is_empty() {
            return None;
        }
        let d = theta_ref.cfg().d;
        let mut hinges = Vec::with_capacity(self.constraints.len());
        for (j, c) in self.constraints.iter().enumerate() {
            let mut terms = vec![ConvexExpr::constant(c.constant)];
            for (i, out) in c.outputs.iter().enumerate() {
                if out.convex.is_empty() && out.concave.is_empty() {
                    continue;
                }
                let z_ref = if out.concave.is_empty() { 0.0 } else { eval_output(theta_ref, i, x) };
                let mut output_terms = Vec::new();
                pa_output_terms(
                    out,
                    Composition::MaxOfPieces,
                    &[],
                    inner.upper(pos, i),
                    inner.lower(pos, i),
                    z_ref,
                    eps_outer,
                    sample,
                    Self::slot(d, j, i),
                    selector,
                    &mut output_terms,
                );
                terms.push(sum_expr(output_terms));
            }
            terms.push(ConvexExpr::constant(self.gamma));
            hinges.push(ConvexExpr::Max(vec![ConvexExpr::constant(0.0), sum_expr(terms)]));
        }
        Some(ConvexExpr::Scaled(self.lambda, alloc::boxed::Box::new(sum_expr(hinges))))
    }

    /// Concave selections `(slot, active pieces)` a sample exposes at `θ′`.
    pub(crate) fn concave_slots(&self, theta_ref: &Theta, x: &[f64], eps_outer: f64, out: &mut Vec<(usize, Vec<usize>)>) {
        if self.lambda == 0.0 {
            return;
        }
        let d = theta_ref.cfg().d;
        for (j, c) in self.constraints.iter().enumerate() {
            for (i, o) in c.outputs.iter().enumerate() {
                if !o.concave.is_empty() {
                    let z = eval_output(theta_ref, i, x);
                    out.push((Self::slot(d, j, i), concave_active(o, &[], z, eps_outer)));
                }
            }
        }
    }
}

/// Tolerance below which a constraint value counts as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Cost plus constraint penalty, evaluated per sample.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    pub cost: CostSpec,
    pub constraints: ConstraintSpec,
}

pub fn build_penalized(cost: CostSpec, cons: ConstraintSpec) -> Result<PenalizedProblem> {
    if let Some(d) = cost.output_dim() {
        cons.validate(d)?;
    }
    if matches!(cost, CostSpec::Monotone(_)) && cons.lambda > 0.0 {
        return Err(PadrError::Unsupported("penalties on monotone-decomposition costs".into()));
    }
    Ok(PenalizedProblem { cost, constraints: cons })
}

impl PenalizedProblem {
    pub fn eval(&self, z: &[f64], y: &[f64]) -> Result<f64> {
        Ok(cost_eval(&self.cost, z, y)? + self.constraints.lambda * self.constraints.violation(z))
    }
}

fn decisions(theta: &Theta, x: &[f64]) -> Vec<f64> {
    (0..theta.cfg().d).map(|i| eval_output(theta, i, x)).collect()
}

/// Fraction of samples whose decision satisfies every constraint.
pub fn feasibility_rate(theta: &Theta, data: &Dataset, cons: &ConstraintSpec, use_margin: bool) -> f64 {
    let ok = (0..data.n()).filter(|&s| cons.is_feasible(&decisions(theta, data.x(s)), use_margin)).count();
    ok as f64 / data.n() as f64
}

/// `G_γ(θ) = (1/n) Σ_s Σ_j max{ψ_j(f(x^s)) + γ, 0}`.
pub fn penalty_value(theta: &Theta, data: &Dataset, cons: &ConstraintSpec) -> f64 {
    (0..data.n()).map(|s| cons.violation(&decisions(theta, data.x(s)))).sum::<f64>() / data.n() as f64
}

/// Euclidean projection of `z` onto `{ψ_j(z) ≤ 0 ∀j}` (and `z ≥ 0` if
/// configured). Requires convex constraints; feasible points are returned
/// unchanged.
pub fn project_convex(z: &[f64], cons: &ConstraintSpec) -> Result<Vec<f64>> {
    if !cons.is_convex() {
        return Err(PadrError::Unsupported("projection needs convex constraints".into()));
    }
    cons.validate(z.len())?;
    let inside = |w: &[f64]| cons.is_feasible(w, false) && (!cons.nonnegative || w.iter().all(|v| *v >= 0.0));
    if inside(z) {
        return Ok(z.to_vec());
    }
    let d = z.len();
    let mut qp = EpigraphQp { n_theta: d, p_diag: vec![1.0; d], linear: z.iter().map(|v| -v).collect(), ..Default::default() };
    let mut aux = 0u32;
    for c in &cons.constraints {
        // Σ_ι max_k (c_k w_ι + e_k) + const ≤ 0 with one epigraph variable per multi-piece output.
        let mut theta_terms = Vec::new();
        let mut aux_terms = Vec::new();
        let mut constant = c.constant;
        let first_aux = aux;
        for (i, o) in c.outputs.iter().enumerate() {
            match o.convex.len() {
                0 => {}
                1 => {
                    theta_terms.push((i as u32, o.convex[0].slope));
                    constant += o.convex[0].offset;
                }
                _ => {
                    for piece in &o.convex {
                        qp.rows.push(QpRow {
                            theta: vec![(i as u32, piece.slope)],
                            aux: vec![(aux, -1.0)],
                            lower: f64::NEG_INFINITY,
                            upper: -piece.offset,
                            kind: RowKind::Piece,
                            sample: None,
                        });
                    }
                    aux_terms.push((aux, 1.0));
                    aux += 1;
                }
            }
        }
        if aux > first_aux {
            qp.aux_groups.push((aux - first_aux) as usize);
        }
        qp.rows.push(QpRow {
            theta: theta_terms,
            aux: aux_terms,
            lower: f64::NEG_INFINITY,
            upper: -constant,
            kind: RowKind::Constraint,
            sample: None,
        });
    }
    let n_aux = aux as usize;
    qp.p_diag.extend(core::iter::repeat(0.0).take(n_aux));
    qp.linear.extend(core::iter::repeat(0.0).take(n_aux));
    if cons.nonnegative {
        for i in 0..d {
            qp.rows.push(QpRow {
                theta: vec![(i as u32, 1.0)],
                aux: vec![],
                lower: 0.0,
                upper: f64::INFINITY,
                kind: RowKind::Box,
                sample: None,
            });
        }
    }
    qp.constant = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
    let settings = AdmmSettings { tol_primal: 1e-10, tol_dual: 1e-10, max_iter: 20_000, ..Default::default() };
    let report = admm_solve(&qp, &settings, None);
    match report.status {
        SolveStatus::PrimalInfeasible => Err(PadrError::Infeasible),
        SolveStatus::InfeasibleNumerics => Err(PadrError::Solver(report.status)),
        _ => Ok(report.x[..d].to_vec()),
    }
}
