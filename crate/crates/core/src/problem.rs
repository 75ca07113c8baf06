//! A training problem: data, hypothesis class, cost and optional
//! penalized constraints, with per-sample objectives and surrogates.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::cost::{cost_eval, surrogate_monotone, surrogate_pa_scalar, surrogate_smooth, concave_active, CostSpec, OuterSelector, SampleView};
use crate::data::{Dataset, HypothesisConfig, Theta};
use crate::error::{dim, PadrError, Result};
use crate::padr::{check_dims, eval_output, InnerSurrogates};
use crate::penalty::ConstraintSpec;
use crate::surrogate::{ConvexExpr, ConvexSurrogate, SurrogateBody};

#[derive(Debug, Clone)]
pub struct Problem<'a> {
    data: &'a Dataset,
    cfg: HypothesisConfig,
    cost: CostSpec,
    constraints: Option<ConstraintSpec>,
    lipschitz_inner: f64,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a Dataset, cfg: HypothesisConfig, cost: CostSpec) -> Result<Self> {
        cfg.validate()?;
        check_dims(&cfg, data)?;
        cost.validate(cfg.d, data.m())?;
        Ok(Self {
            data,
            cfg,
            cost,
            constraints: None,
            lipschitz_inner: 2.0 * libm::sqrt(data.max_sq_norm() + 1.0),
        })
    }

    pub fn with_constraints(mut self, cons: ConstraintSpec) -> Result<Self> {
        cons.validate(self.cfg.d)?;
        if matches!(self.cost, CostSpec::Monotone(_)) && cons.lambda > 0.0 {
            return Err(PadrError::Unsupported("penalties on monotone-decomposition costs".into()));
        }
        self.constraints = Some(cons);
        Ok(self)
    }

    /// Same problem on another dataset.
    pub fn with_data<'b>(&self, data: &'b Dataset) -> Result<Problem<'b>> {
        let p = Problem::new(data, self.cfg, self.cost.clone())?;
        match &self.constraints {
            Some(c) => p.with_constraints(c.clone()),
            None => Ok(p),
        }
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn cfg(&self) -> &HypothesisConfig {
        &self.cfg
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn constraints(&self) -> Option<&ConstraintSpec> {
        self.constraints.as_ref()
    }

    /// `L_f = 2 sqrt(max_s ‖x^s‖² + 1)`.
    pub fn lipschitz_inner(&self) -> f64 {
        self.lipschitz_inner
    }

    fn check_theta(&self, theta: &Theta) -> Result<()> {
        if *theta.cfg() != self.cfg {
            return Err(dim("theta was built for a different hypothesis configuration"));
        }
        Ok(())
    }

    pub fn decisions(&self, theta: &Theta, s: usize) -> Vec<f64> {
        (0..self.cfg.d).map(|i| eval_output(theta, i, self.data.x(s))).collect()
    }

    /// Base cost `F(θ; ξ_s)`.
    pub fn sample_cost(&self, theta: &Theta, s: usize) -> f64 {
        let z = self.decisions(theta, s);
        cost_eval(&self.cost, &z, self.data.y(s)).unwrap_or(f64::NAN)
    }

    /// Training objective of one sample: base cost plus λ-weighted violation.
    pub fn sample_objective(&self, theta: &Theta, s: usize) -> f64 {
        let z = self.decisions(theta, s);
        let base = cost_eval(&self.cost, &z, self.data.y(s)).unwrap_or(f64::NAN);
        match &self.constraints {
            Some(c) if c.lambda > 0.0 => base + c.lambda * c.violation(&z),
            _ => base,
        }
    }

    /// Full-data objective `V(θ; λ)` (equal to `F(θ)` without constraints).
    pub fn objective(&self, theta: &Theta) -> Result<f64> {
        self.check_theta(theta)?;
        let n = self.data.n();
        Ok((0..n).map(|s| self.sample_objective(theta, s)).sum::<f64>() / n as f64)
    }

    /// Full-data base cost `F(θ)`.
    pub fn base_cost(&self, theta: &Theta) -> Result<f64> {
        self.check_theta(theta)?;
        let n = self.data.n();
        Ok((0..n).map(|s| self.sample_cost(theta, s)).sum::<f64>() / n as f64)
    }

    /// Weighted objective over a minibatch of distinct samples.
    pub fn weighted_objective(&self, theta: &Theta, samples: &[usize], weights: &[f64]) -> f64 {
        samples.iter().zip(weights).map(|(&s, w)| w * self.sample_objective(theta, s)).sum()
    }

    /// Surrogate of sample `inner.sample_ids[pos]` at the reference `θ′`.
    pub fn surrogate(
        &self,
        theta_ref: &Theta,
        reference: &Arc<[f64]>,
        inner: &InnerSurrogates,
        pos: usize,
        epsilon: f64,
        selector: &mut dyn OuterSelector,
    ) -> Result<ConvexSurrogate> {
        let s = inner.sample_ids[pos];
        let view = SampleView { pos, sample: s, x: self.data.x(s), y: self.data.y(s) };
        let eps_outer = self.eps_outer(epsilon);
        let penalty = self
            .constraints
            .as_ref()
            .and_then(|c| c.penalty_expr(inner, pos, theta_ref, view.x, s, eps_outer, selector));
        let lf = self.lipschitz_inner;
        let mut sur = match &self.cost {
            CostSpec::PiecewiseAffine(pa) => {
                let body = surrogate_pa_scalar(pa, inner, theta_ref, view, epsilon, selector);
                ConvexSurrogate::from_expr(body, 0.0, reference.clone(), lf)
            }
            CostSpec::Smooth(loss) => surrogate_smooth(loss.as_ref(), inner, theta_ref, view, reference.clone(), lf),
            CostSpec::Monotone(parts) => surrogate_monotone(parts, inner, theta_ref, view, reference.clone(), lf)?,
        };
        if let Some(pen) = penalty {
            match &mut sur.body {
                SurrogateBody::Epigraph(e) => {
                    let body = core::mem::replace(e, ConvexExpr::constant(0.0));
                    *e = match body {
                        ConvexExpr::Sum(mut v) => {
                            v.push(pen);
                            ConvexExpr::Sum(v)
                        }
                        other => ConvexExpr::Sum(vec![other, pen]),
                    };
                }
                SurrogateBody::Monotone(_) => {
                    return Err(PadrError::Unsupported("penalties on monotone-decomposition costs".into()))
                }
            }
        }
        Ok(sur)
    }

    fn eps_outer(&self, epsilon: f64) -> f64 {
        match &self.cost {
            CostSpec::PiecewiseAffine(p) => p.eps_outer.unwrap_or(epsilon),
            _ => epsilon,
        }
    }

    /// Concave-piece selections `(slot, active pieces)` of sample `s` at `θ′`;
    /// empty when the objective has no concave part.
    pub fn concave_slots(&self, theta_ref: &Theta, s: usize, epsilon: f64) -> Vec<(usize, Vec<usize>)> {
        let eps_outer = self.eps_outer(epsilon);
        let x = self.data.x(s);
        let mut out = Vec::new();
        if let CostSpec::PiecewiseAffine(pa) = &self.cost {
            for (i, o) in pa.outputs.iter().enumerate() {
                if !o.concave.is_empty() {
                    let z = eval_output(theta_ref, i, x);
                    out.push((i, concave_active(o, self.data.y(s), z, eps_outer)));
                }
            }
        }
        if let Some(c) = &self.constraints {
            c.concave_slots(theta_ref, x, eps_outer, &mut out);
        }
        out
    }
}
