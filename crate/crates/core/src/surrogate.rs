//! Convex surrogate objects: an expression tree of affine pieces closed under
//! max, sum and nonnegative scaling, plus an optional proximal-style quadratic.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::cost::MonotoneParts;
use crate::padr::AffineForm;

/// Convex piecewise-affine function of θ.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexExpr {
    Affine(AffineForm),
    Max(Vec<ConvexExpr>),
    Sum(Vec<ConvexExpr>),
    /// Scaling by a nonnegative constant.
    Scaled(f64, Box<ConvexExpr>),
}

impl ConvexExpr {
    pub fn constant(c: f64) -> Self {
        ConvexExpr::Affine(AffineForm::constant(c))
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match self {
            ConvexExpr::Affine(a) => a.eval(theta),
            ConvexExpr::Max(v) => v.iter().map(|e| e.value(theta)).fold(f64::NEG_INFINITY, f64::max),
            ConvexExpr::Sum(v) => v.iter().map(|e| e.value(theta)).sum(),
            ConvexExpr::Scaled(c, e) => c * e.value(theta),
        }
    }

    /// `grad += w · g` for a subgradient `g` at θ (first maximizer of each max).
    pub fn add_subgradient(&self, theta: &[f64], w: f64, grad: &mut [f64]) {
        match self {
            ConvexExpr::Affine(a) => a.add_grad(w, grad),
            ConvexExpr::Max(v) => {
                let mut best = f64::NEG_INFINITY;
                let mut arg = None;
                for e in v {
                    let val = e.value(theta);
                    if val > best {
                        best = val;
                        arg = Some(e);
                    }
                }
                if let Some(e) = arg {
                    e.add_subgradient(theta, w, grad);
                }
            }
            ConvexExpr::Sum(v) => v.iter().for_each(|e| e.add_subgradient(theta, w, grad)),
            ConvexExpr::Scaled(c, e) => e.add_subgradient(theta, w * c, grad),
        }
    }

    /// Number of `Max` nodes with more than one child; each becomes one
    /// epigraph variable.
    pub fn hinge_count(&self) -> usize {
        match self {
            ConvexExpr::Affine(_) => 0,
            ConvexExpr::Max(v) => usize::from(v.len() > 1) + v.iter().map(Self::hinge_count).sum::<usize>(),
            ConvexExpr::Sum(v) => v.iter().map(Self::hinge_count).sum(),
            ConvexExpr::Scaled(_, e) => e.hinge_count(),
        }
    }
}

/// Case-2 body: `Σ_ι φ↑_ι(f̂_ι) + φ↓_ι(f̌_ι)` with user callbacks.
#[derive(Clone)]
pub struct MonotoneBody {
    pub(crate) parts: Arc<dyn MonotoneParts>,
    pub(crate) upper: Vec<Vec<AffineForm>>,
    pub(crate) lower: Vec<Vec<AffineForm>>,
    pub(crate) y: Vec<f64>,
}

impl fmt::Debug for MonotoneBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonotoneBody").field("outputs", &self.upper.len()).finish()
    }
}

fn max_piece(forms: &[AffineForm], theta: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, a) in forms.iter().enumerate() {
        let v = a.eval(theta);
        if v > best.0 {
            best = (v, k);
        }
    }
    best
}

fn min_piece(forms: &[AffineForm], theta: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (k, a) in forms.iter().enumerate() {
        let v = a.eval(theta);
        if v < best.0 {
            best = (v, k);
        }
    }
    best
}

impl MonotoneBody {
    fn zs(&self, theta: &[f64]) -> (Vec<f64>, Vec<usize>, Vec<f64>, Vec<usize>) {
        let (zu, ku): (Vec<f64>, Vec<usize>) = self.upper.iter().map(|f| max_piece(f, theta)).unzip();
        let (zl, kl): (Vec<f64>, Vec<usize>) = self.lower.iter().map(|f| min_piece(f, theta)).unzip();
        (zu, ku, zl, kl)
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let (zu, _, zl, _) = self.zs(theta);
        self.parts.increasing(&zu, &self.y) + self.parts.decreasing(&zl, &self.y)
    }

    fn add_subgradient(&self, theta: &[f64], grad: &mut [f64]) {
        let (zu, ku, zl, kl) = self.zs(theta);
        let d = zu.len();
        let mut gu = vec![0.0; d];
        let mut gl = vec![0.0; d];
        self.parts.increasing_grad(&zu, &self.y, &mut gu);
        self.parts.decreasing_grad(&zl, &self.y, &mut gl);
        for i in 0..d {
            self.upper[i][ku[i]].add_grad(gu[i], grad);
            self.lower[i][kl[i]].add_grad(gl[i], grad);
        }
    }
}

#[derive(Debug, Clone)]
pub enum SurrogateBody {
    Epigraph(ConvexExpr),
    Monotone(MonotoneBody),
}

/// Convex majorant `F̂(·; θ′, ξ, I)` of one sample's cost:
/// `body(θ − θ′) + (quadratic / 2)·‖θ − θ′‖²`.
#[derive(Debug, Clone)]
pub struct ConvexSurrogate {
    pub(crate) body: SurrogateBody,
    pub(crate) quadratic: f64,
    pub(crate) reference: Arc<[f64]>,
    pub(crate) lipschitz_inner: f64,
}

impl ConvexSurrogate {
    pub fn from_expr(expr: ConvexExpr, quadratic: f64, reference: Arc<[f64]>, lipschitz_inner: f64) -> Self {
        Self {
            body: SurrogateBody::Epigraph(expr),
            quadratic,
            reference,
            lipschitz_inner,
        }
    }

    fn delta(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(self.reference.iter()).map(|(t, c)| t - c).collect()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let v = self.delta(theta);
        let body = match &self.body {
            SurrogateBody::Epigraph(e) => e.value(&v),
            SurrogateBody::Monotone(m) => m.value(&v),
        };
        if self.quadratic > 0.0 {
            body + 0.5 * self.quadratic * v.iter().map(|d| d * d).sum::<f64>()
        } else {
            body
        }
    }

    pub fn add_subgradient(&self, theta: &[f64], w: f64, grad: &mut [f64]) {
        let v = self.delta(theta);
        match &self.body {
            SurrogateBody::Epigraph(e) => e.add_subgradient(&v, w, grad),
            SurrogateBody::Monotone(m) => {
                let mut g = vec![0.0; grad.len()];
                m.add_subgradient(&v, &mut g);
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += w * b);
            }
        }
        if self.quadratic > 0.0 {
            for (g, d) in grad.iter_mut().zip(&v) {
                *g += w * self.quadratic * d;
            }
        }
    }

    pub fn subgradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.add_subgradient(theta, 1.0, &mut g);
        g
    }

    /// The piecewise-affine body when the surrogate has an epigraph form. Its
    /// affine pieces are expressed in `θ − θ′` (see [`ConvexSurrogate::reference`]).
    pub fn epigraph(&self) -> Option<&ConvexExpr> {
        match &self.body {
            SurrogateBody::Epigraph(e) => Some(e),
            SurrogateBody::Monotone(_) => None,
        }
    }

    pub fn quadratic(&self) -> f64 {
        self.quadratic
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn lipschitz_inner(&self) -> f64 {
        self.lipschitz_inner
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
