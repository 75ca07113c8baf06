//! Outer costs `φ(z; y)` and their surrogate builders: piecewise-affine
//! (convex max plus optional concave min add-on), monotone decomposition,
//! and smooth with Lipschitz gradient.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::{Dataset, Theta};
use crate::error::{config, dim, PadrError, Result};
use crate::padr::{eval_output, AffineForm, InnerSurrogates};
use crate::rng::RngHandle;
use crate::surrogate::{ConvexExpr, ConvexSurrogate, MonotoneBody, SurrogateBody};

/// Affine piece `slope·z + offset + y_weight·y` of a scalar outer cost.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct OuterPiece {
    pub slope: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub offset: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub y_weight: f64,
}

impl OuterPiece {
    pub const fn new(slope: f64, offset: f64, y_weight: f64) -> Self {
        Self { slope, offset, y_weight }
    }

    fn intercept(&self, y: f64) -> f64 {
        self.offset + self.y_weight * y
    }

    fn value(&self, z: f64, y: f64) -> f64 {
        self.slope * z + self.intercept(y)
    }
}

/// Scalar cost of one decision coordinate:
/// `max_j convex_j(z) + min_j concave_j(z)`; an empty list contributes zero.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PaOutputCost {
    #[cfg_attr(feature = "serde", serde(default))]
    pub convex: Vec<OuterPiece>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub concave: Vec<OuterPiece>,
    /// Outcome column read by the `y_weight` terms.
    #[cfg_attr(feature = "serde", serde(default))]
    pub outcome: usize,
}

impl PaOutputCost {
    pub fn value(&self, z: f64, y: &[f64]) -> f64 {
        let yv = y.get(self.outcome).copied().unwrap_or(0.0);
        let mut v = 0.0;
        if !self.convex.is_empty() {
            v += self.convex.iter().map(|c| c.value(z, yv)).fold(f64::NEG_INFINITY, f64::max);
        }
        if !self.concave.is_empty() {
            v += self.concave.iter().map(|c| c.value(z, yv)).fold(f64::INFINITY, f64::min);
        }
        v
    }

    fn y(&self, y: &[f64]) -> f64 {
        y.get(self.outcome).copied().unwrap_or(0.0)
    }

    fn uses_outcome(&self) -> bool {
        self.convex.iter().chain(&self.concave).any(|c| c.y_weight != 0.0)
    }
}

/// How the convex max block is composed with the inner surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Composition {
    /// Each piece `c·z + e` becomes `c·f̂ + e` (c ≥ 0) or `c·f̌ + e` (c < 0)
    /// and all composed pieces share one max (one epigraph variable).
    #[default]
    MaxOfPieces,
    /// Splits `φ = φ* + (φ↑ − φ*)₊ + (φ↓ − φ*)₊` into nondecreasing and
    /// nonincreasing hinges (two epigraph variables per output).
    MonotoneSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaCost {
    pub outputs: Vec<PaOutputCost>,
    pub composition: Composition,
    /// Activity tolerance for selecting concave add-on pieces; defaults to the
    /// inner ε of the iteration.
    pub eps_outer: Option<f64>,
}

/// Case-2 callbacks. `increasing` must be convex and nondecreasing in each
/// coordinate, `decreasing` convex and nonincreasing.
pub trait MonotoneParts: Send + Sync {
    fn increasing(&self, z: &[f64], y: &[f64]) -> f64;
    fn increasing_grad(&self, z: &[f64], y: &[f64], out: &mut [f64]);
    fn decreasing(&self, z: &[f64], y: &[f64]) -> f64;
    fn decreasing_grad(&self, z: &[f64], y: &[f64], out: &mut [f64]);
}

/// Case-3 callbacks: a smooth cost with Lipschitz gradient.
pub trait SmoothLoss: Send + Sync {
    fn value(&self, z: &[f64], y: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], y: &[f64], out: &mut [f64]);
    fn gradient_lipschitz(&self) -> f64;
}

/// `Σ_ι (z_ι − y_ι)²`, gradient Lipschitz constant 2.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredLoss;

impl SmoothLoss for SquaredLoss {
    fn value(&self, z: &[f64], y: &[f64]) -> f64 {
        z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn gradient(&self, z: &[f64], y: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(z).zip(y) {
            *o = 2.0 * (a - b);
        }
    }

    fn gradient_lipschitz(&self) -> f64 {
        2.0
    }
}

#[derive(Clone)]
pub enum CostSpec {
    PiecewiseAffine(PaCost),
    Monotone(Arc<dyn MonotoneParts>),
    Smooth(Arc<dyn SmoothLoss>),
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostSpec::PiecewiseAffine(p) => f.debug_tuple("PiecewiseAffine").field(p).finish(),
            CostSpec::Monotone(_) => f.write_str("Monotone(..)"),
            CostSpec::Smooth(_) => f.write_str("Smooth(..)"),
        }
    }
}

/// `C(z) = min{z, 0.6z + 0.8, 0.4z + 15.6}`.
pub const CAPACITY_COST: [OuterPiece; 3] = [
    OuterPiece::new(1.0, 0.0, 0.0),
    OuterPiece::new(0.6, 0.8, 0.0),
    OuterPiece::new(0.4, 15.6, 0.0),
];

/// Newsvendor pieces `max{c_b(y − z), c_h(z − y)}`.
pub fn newsvendor_pieces(cb: f64, ch: f64) -> Vec<OuterPiece> {
    vec![OuterPiece::new(-cb, 0.0, cb), OuterPiece::new(ch, 0.0, -ch)]
}

impl CostSpec {
    pub fn newsvendor(cb: f64, ch: f64) -> Self {
        Self::newsvendor_multi(&[(cb, ch)])
    }

    /// One newsvendor per output; output ι reads outcome column ι.
    pub fn newsvendor_multi(costs: &[(f64, f64)]) -> Self {
        CostSpec::PiecewiseAffine(PaCost {
            outputs: costs
                .iter()
                .enumerate()
                .map(|(i, &(cb, ch))| PaOutputCost {
                    convex: newsvendor_pieces(cb, ch),
                    concave: Vec::new(),
                    outcome: i,
                })
                .collect(),
            composition: Composition::default(),
            eps_outer: None,
        })
    }

    /// Adds the concave capacity cost to every output of a piecewise-affine cost.
    pub fn with_capacity_cost(mut self) -> Self {
        if let CostSpec::PiecewiseAffine(p) = &mut self {
            for o in &mut p.outputs {
                o.concave.extend_from_slice(&CAPACITY_COST);
            }
        }
        self
    }

    pub fn with_composition(mut self, c: Composition) -> Self {
        if let CostSpec::PiecewiseAffine(p) = &mut self {
            p.composition = c;
        }
        self
    }

    pub fn squared_loss() -> Self {
        CostSpec::Smooth(Arc::new(SquaredLoss))
    }

    /// Multiplies a piecewise-affine cost by `c > 0`.
    pub fn scaled(&self, c: f64) -> Option<Self> {
        match self {
            CostSpec::PiecewiseAffine(p) if c > 0.0 => {
                let scale = |v: &[OuterPiece]| -> Vec<OuterPiece> {
                    v.iter().map(|q| OuterPiece::new(c * q.slope, c * q.offset, c * q.y_weight)).collect()
                };
                Some(CostSpec::PiecewiseAffine(PaCost {
                    outputs: p
                        .outputs
                        .iter()
                        .map(|o| PaOutputCost {
                            convex: scale(&o.convex),
                            concave: scale(&o.concave),
                            outcome: o.outcome,
                        })
                        .collect(),
                    ..p.clone()
                }))
            }
            _ => None,
        }
    }

    /// Decision dimension implied by the spec, if it fixes one.
    pub fn output_dim(&self) -> Option<usize> {
        match self {
            CostSpec::PiecewiseAffine(p) => Some(p.outputs.len()),
            _ => None,
        }
    }

    pub fn validate(&self, d: usize, m: usize) -> Result<()> {
        match self {
            CostSpec::PiecewiseAffine(p) => {
                if p.outputs.len() != d {
                    return Err(dim(format!("cost has {} outputs, rule has d = {d}", p.outputs.len())));
                }
                for (i, o) in p.outputs.iter().enumerate() {
                    if o.convex.is_empty() && o.concave.is_empty() {
                        return Err(config(format!("cost output {i} has no pieces")));
                    }
                    if o.uses_outcome() && o.outcome >= m {
                        return Err(dim(format!("cost output {i} reads outcome {} but m = {m}", o.outcome)));
                    }
                    if o.convex.iter().chain(&o.concave).any(|c| !c.slope.is_finite() || !c.offset.is_finite() || !c.y_weight.is_finite()) {
                        return Err(config(format!("cost output {i} has a non-finite coefficient")));
                    }
                }
                if let Some(e) = p.eps_outer {
                    if !(e >= 0.0) {
                        return Err(config("eps_outer must be nonnegative"));
                    }
                }
                Ok(())
            }
            CostSpec::Smooth(s) => {
                if m != d {
                    return Err(dim(format!("smooth loss compares z with y: needs m = d, got m = {m}, d = {d}")));
                }
                if !(s.gradient_lipschitz() > 0.0) {
                    return Err(config("gradient Lipschitz constant must be positive"));
                }
                Ok(())
            }
            CostSpec::Monotone(_) => Ok(()),
        }
    }
}

/// Exact cost `φ(z; y)`.
pub fn cost_eval(spec: &CostSpec, z: &[f64], y: &[f64]) -> Result<f64> {
    match spec {
        CostSpec::PiecewiseAffine(p) => {
            if z.len() != p.outputs.len() {
                return Err(dim(format!("decision has length {}, cost expects {}", z.len(), p.outputs.len())));
            }
            Ok(p.outputs.iter().zip(z).map(|(o, &zi)| o.value(zi, y)).sum())
        }
        CostSpec::Monotone(m) => Ok(m.increasing(z, y) + m.decreasing(z, y)),
        CostSpec::Smooth(s) => {
            if z.len() != y.len() {
                return Err(dim("smooth loss needs decision and outcome of equal length"));
            }
            Ok(s.value(z, y))
        }
    }
}

/// Empirical risk `(1/n) Σ_s φ(f(x^s; θ); y^s)`.
pub fn erm_cost(theta: &Theta, data: &Dataset, cost: &CostSpec) -> Result<f64> {
    let cfg = theta.cfg();
    crate::padr::check_dims(cfg, data)?;
    cost.validate(cfg.d, data.m())?;
    let mut z = vec![0.0; cfg.d];
    let mut total = 0.0;
    for s in 0..data.n() {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = eval_output(theta, i, data.x(s));
        }
        total += cost_eval(cost, &z, data.y(s))?;
    }
    Ok(total / data.n() as f64)
}

/// Chooses one concave add-on piece among its ε-active candidates.
pub trait OuterSelector {
    /// `slot` identifies the scalar function within the sample; `active` is
    /// nonempty and sorted.
    fn select(&mut self, sample: usize, slot: usize, active: &[usize]) -> usize;
}

/// Uniform choice from the sub-stream keyed by `(sample, slot)`.
pub struct RandomOuter(pub RngHandle);

impl OuterSelector for RandomOuter {
    fn select(&mut self, sample: usize, slot: usize, active: &[usize]) -> usize {
        let mut r = self.0.child(sample as u64).child(slot as u64).rng();
        active[r.index(active.len())]
    }
}

/// Lowest active index (the touching choice at ε = 0).
pub struct LowestOuter;

impl OuterSelector for LowestOuter {
    fn select(&mut self, _sample: usize, _slot: usize, active: &[usize]) -> usize {
        active[0]
    }
}

/// Per-sample context for surrogate builders.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    /// Position of the sample inside the [`InnerSurrogates`].
    pub pos: usize,
    pub sample: usize,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

fn compose(c: f64, e: f64, upper: &[AffineForm], lower: &[AffineForm], out: &mut Vec<AffineForm>) {
    if c > 0.0 {
        out.extend(upper.iter().map(|a| a.affine_map(c, e)));
    } else if c < 0.0 {
        out.extend(lower.iter().map(|a| a.affine_map(c, e)));
    } else {
        out.push(AffineForm::constant(e));
    }
}

pub(crate) fn max_expr(mut forms: Vec<AffineForm>) -> ConvexExpr {
    if forms.len() == 1 {
        ConvexExpr::Affine(forms.pop().unwrap())
    } else {
        ConvexExpr::Max(forms.into_iter().map(ConvexExpr::Affine).collect())
    }
}

/// Minimum of `max_j (c_j z + e_j)` over z, if bounded below.
fn pa_minimum(pieces: &[(f64, f64)]) -> Option<f64> {
    let has_pos = pieces.iter().any(|p| p.0 > 0.0);
    let has_neg = pieces.iter().any(|p| p.0 < 0.0);
    if !(has_pos && has_neg) {
        return None;
    }
    let f = |z: f64| pieces.iter().map(|&(c, e)| c * z + e).fold(f64::NEG_INFINITY, f64::max);
    let mut best = f64::INFINITY;
    for (i, a) in pieces.iter().enumerate() {
        for b in &pieces[i + 1..] {
            if a.0 != b.0 {
                best = best.min(f((b.1 - a.1) / (a.0 - b.0)));
            }
        }
    }
    Some(best)
}

/// Surrogate terms (to be summed) for one scalar piecewise-affine function of
/// output ι, composed with that output's inner surrogates.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pa_output_terms(
    out: &PaOutputCost,
    composition: Composition,
    y: &[f64],
    upper: &[AffineForm],
    lower: &[AffineForm],
    z_ref: f64,
    eps_outer: f64,
    sample: usize,
    slot: usize,
    selector: &mut dyn OuterSelector,
    terms: &mut Vec<ConvexExpr>,
) {
    let yv = out.y(y);
    if !out.convex.is_empty() {
        let pieces: Vec<(f64, f64)> = out.convex.iter().map(|c| (c.slope, c.intercept(yv))).collect();
        let split = match composition {
            Composition::MonotoneSplit => pa_minimum(&pieces),
            Composition::MaxOfPieces => None,
        };
        match split {
            Some(phi_star) => {
                terms.push(ConvexExpr::constant(phi_star));
                for positive in [true, false] {
                    let mut forms = vec![AffineForm::constant(0.0)];
                    for &(c, e) in pieces.iter().filter(|p| if positive { p.0 > 0.0 } else { p.0 < 0.0 }) {
                        compose(c, e - phi_star, upper, lower, &mut forms);
                    }
                    terms.push(max_expr(forms));
                }
            }
            None => {
                let mut forms = Vec::new();
                for &(c, e) in &pieces {
                    compose(c, e, upper, lower, &mut forms);
                }
                terms.push(max_expr(forms));
            }
        }
    }
    if !out.concave.is_empty() {
        let active = concave_active(out, y, z_ref, eps_outer);
        let j = selector.select(sample, slot, &active);
        let piece = out.concave[j];
        let mut forms = Vec::new();
        compose(piece.slope, piece.intercept(yv), upper, lower, &mut forms);
        terms.push(max_expr(forms));
    }
}

pub(crate) fn sum_expr(mut terms: Vec<ConvexExpr>) -> ConvexExpr {
    if terms.len() == 1 {
        terms.pop().unwrap()
    } else {
        ConvexExpr::Sum(terms)
    }
}

/// Concave add-on pieces within `eps_outer` of the minimum at `z_ref`.
pub(crate) fn concave_active(out: &PaOutputCost, y: &[f64], z_ref: f64, eps_outer: f64) -> Vec<usize> {
    let yv = out.y(y);
    let vals: Vec<f64> = out.concave.iter().map(|c| c.value(z_ref, yv)).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    (0..vals.len()).filter(|&j| vals[j] <= lo + eps_outer).collect()
}

/// Case-1 surrogate body for a piecewise-affine cost (without any
/// quadratic term).
pub fn surrogate_pa_scalar(
    cost: &PaCost,
    inner: &InnerSurrogates,
    theta_ref: &Theta,
    view: SampleView<'_>,
    epsilon: f64,
    selector: &mut dyn OuterSelector,
) -> ConvexExpr {
    let eps_outer = cost.eps_outer.unwrap_or(epsilon);
    let mut terms = Vec::new();
    for (i, out) in cost.outputs.iter().enumerate() {
        let z_ref = if out.concave.is_empty() { 0.0 } else { eval_output(theta_ref, i, view.x) };
        let mut output_terms = Vec::new();
        pa_output_terms(
            out,
            cost.composition,
            view.y,
            inner.upper(view.pos, i),
            inner.lower(view.pos, i),
            z_ref,
            eps_outer,
            view.sample,
            i,
            selector,
            &mut output_terms,
        );
        // Nesting mirrors the summation order of the exact cost.
        terms.push(sum_expr(output_terms));
    }
    sum_expr(terms)
}

/// Case-3 surrogate:
/// `φ(z′) − ∇ᵀz′ + Σ_ι [∇⁺_ι f̂_ι − ∇⁻_ι f̌_ι] + ½ L L_f² ‖θ − θ′‖²`.
pub fn surrogate_smooth(
    loss: &dyn SmoothLoss,
    inner: &InnerSurrogates,
    theta_ref: &Theta,
    view: SampleView<'_>,
    reference: Arc<[f64]>,
    lipschitz_inner: f64,
) -> ConvexSurrogate {
    let d = theta_ref.cfg().d;
    let z: Vec<f64> = (0..d).map(|i| eval_output(theta_ref, i, view.x)).collect();
    let mut grad = vec![0.0; d];
    loss.gradient(&z, view.y, &mut grad);
    // φ(z′) + Σ_ι [∇⁺_ι (f̂_ι − z′_ι) − ∇⁻_ι (f̌_ι − z′_ι)]; the sign split is
    // absorbed by composing with f̂ or f̌ according to the sign of ∇_ι.
    let mut terms = vec![ConvexExpr::constant(loss.value(&z, view.y))];
    for (i, &g) in grad.iter().enumerate() {
        let shift = -(g * z[i]);
        if g > 0.0 {
            terms.push(max_expr(inner.upper(view.pos, i).iter().map(|a| a.affine_map(g, shift)).collect()));
        } else if g < 0.0 {
            terms.push(max_expr(inner.lower(view.pos, i).iter().map(|a| a.affine_map(g, shift)).collect()));
        }
    }
    let quad = loss.gradient_lipschitz() * lipschitz_inner * lipschitz_inner;
    ConvexSurrogate::from_expr(sum_expr(terms), quad, reference, lipschitz_inner)
}

const PROBE_STEPS: [f64; 6] = [-10.0, -1.0, -0.1, 0.1, 1.0, 10.0];

/// Case-2 surrogate `φ↑(f̂) + φ↓(f̌)`. The monotonicity of the callbacks is
/// spot-checked around `f(θ′)`.
pub fn surrogate_monotone(
    parts: &Arc<dyn MonotoneParts>,
    inner: &InnerSurrogates,
    theta_ref: &Theta,
    view: SampleView<'_>,
    reference: Arc<[f64]>,
    lipschitz_inner: f64,
) -> Result<ConvexSurrogate> {
    let d = theta_ref.cfg().d;
    let z: Vec<f64> = (0..d).map(|i| eval_output(theta_ref, i, view.x)).collect();
    let up0 = parts.increasing(&z, view.y);
    let dn0 = parts.decreasing(&z, view.y);
    let tol = 1e-10 * (1.0 + up0.abs() + dn0.abs());
    let mut zp = z.clone();
    for i in 0..d {
        for t in PROBE_STEPS {
            zp[i] = z[i] + t;
            let du = parts.increasing(&zp, view.y) - up0;
            let dd = parts.decreasing(&zp, view.y) - dn0;
            if t * du < -tol * t.abs() || t * dd > tol * t.abs() {
                return Err(PadrError::Monotonicity(format!("output {i}, step {t} around z = {}", z[i])));
            }
        }
        zp[i] = z[i];
    }
    let body = MonotoneBody {
        parts: parts.clone(),
        upper: (0..d).map(|i| inner.upper(view.pos, i).to_vec()).collect(),
        lower: (0..d).map(|i| inner.lower(view.pos, i).to_vec()).collect(),
        y: view.y.to_vec(),
    };
    Ok(ConvexSurrogate {
        body: SurrogateBody::Monotone(body),
        quadratic: 0.0,
        reference,
        lipschitz_inner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newsvendor_values() {
        let c = CostSpec::newsvendor(8.0, 2.0);
        assert_eq!(cost_eval(&c, &[10.0], &[10.0]).unwrap(), 0.0);
        assert_eq!(cost_eval(&c, &[0.0], &[10.0]).unwrap(), 80.0);
        assert_eq!(cost_eval(&c, &[12.0], &[10.0]).unwrap(), 4.0);
        assert!(cost_eval(&c, &[1.0, 2.0], &[10.0]).is_err());
    }

    #[test]
    fn capacity_cost_value() {
        let o = PaOutputCost { convex: vec![], concave: CAPACITY_COST.to_vec(), outcome: 0 };
        assert!((o.value(16.0, &[]) - 10.4).abs() < 1e-12);
    }

    #[test]
    fn minimum_of_newsvendor_is_zero() {
        assert_eq!(pa_minimum(&[(-8.0, 80.0), (2.0, -20.0)]), Some(0.0));
        assert_eq!(pa_minimum(&[(1.0, 0.0)]), None);
    }
}
