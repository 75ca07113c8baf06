//! Operator-splitting solver for the epigraph QPs
//! `min ½ xᵀ diag(P) x + cᵀx  s.t.  l ≤ A x ≤ u`.
//!
//! Variables are the `n_theta` rule parameters followed by auxiliary
//! (epigraph) variables partitioned into groups. A row may touch θ and the
//! auxiliaries of at most one group, so the linear system of every ADMM step
//! is solved through the Schur complement onto θ: each group contributes a
//! small dense block and only a `n_theta × n_theta` Cholesky factor is kept.
//!
//! The iteration follows the usual OSQP scheme: Ruiz equilibration, cost
//! scaling, relaxed ADMM with per-row step sizes, residual-balancing step
//! adaptation and a primal infeasibility certificate.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{cholesky_in_place, cholesky_solve};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleNumerics,
    PrimalInfeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Piece,
    Box,
    Constraint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpRow {
    pub theta: Vec<(u32, f64)>,
    /// Global auxiliary indices; all must lie in one group.
    pub aux: Vec<(u32, f64)>,
    pub lower: f64,
    pub upper: f64,
    pub kind: RowKind,
    /// Index of the surrogate that produced the row, if any.
    pub sample: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpigraphQp {
    pub n_theta: usize,
    /// Sizes of the auxiliary groups; auxiliaries are numbered group by group.
    pub aux_groups: Vec<usize>,
    /// Quadratic diagonal over all `n_theta + n_aux` variables.
    pub p_diag: Vec<f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub rows: Vec<QpRow>,
}

impl EpigraphQp {
    pub fn n_aux(&self) -> usize {
        self.aux_groups.iter().sum()
    }

    pub fn n_vars(&self) -> usize {
        self.n_theta + self.n_aux()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.constant
            + x.iter()
                .zip(&self.p_diag)
                .zip(&self.linear)
                .map(|((v, p), c)| 0.5 * p * v * v + c * v)
                .sum::<f64>()
    }

    pub fn row_value(&self, r: usize, x: &[f64]) -> f64 {
        let row = &self.rows[r];
        row.theta.iter().map(|&(j, a)| a * x[j as usize]).sum::<f64>()
            + row.aux.iter().map(|&(j, a)| a * x[self.n_theta + j as usize]).sum::<f64>()
    }

    /// Largest bound violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        (0..self.rows.len())
            .map(|r| {
                let v = self.row_value(r, x);
                (self.rows[r].lower - v).max(v - self.rows[r].upper).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    fn group_of_aux(&self) -> Vec<u32> {
        let mut g = Vec::with_capacity(self.n_aux());
        for (k, &s) in self.aux_groups.iter().enumerate() {
            g.extend(core::iter::repeat(k as u32).take(s));
        }
        g
    }

    /// Checks the structural requirements; returns a description on failure.
    pub fn check(&self) -> Result<(), &'static str> {
        let n = self.n_vars();
        if self.p_diag.len() != n || self.linear.len() != n {
            return Err("quadratic/linear length differs from variable count");
        }
        if self.p_diag.iter().any(|p| !(*p >= 0.0)) {
            return Err("quadratic diagonal must be nonnegative");
        }
        let groups = self.group_of_aux();
        for row in &self.rows {
            if !(row.lower <= row.upper) {
                return Err("row with lower > upper");
            }
            if row.theta.iter().any(|&(j, _)| j as usize >= self.n_theta) {
                return Err("theta index out of range");
            }
            if row.aux.iter().any(|&(j, _)| j as usize >= groups.len()) {
                return Err("aux index out of range");
            }
            if let Some(&(first, _)) = row.aux.first() {
                let g = groups[first as usize];
                if row.aux.iter().any(|&(j, _)| groups[j as usize] != g) {
                    return Err("row spans two aux groups");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmSettings {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub scaling_iters: usize,
    pub check_every: usize,
    pub tol_infeasible: f64,
    /// Refine a converged solution on its active set.
    pub polish: bool,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            max_iter: 4000,
            rho: 1.0,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            scaling_iters: 10,
            check_every: 10,
            tol_infeasible: 1e-8,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// The active-set refinement was accepted.
    pub polished: bool,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const ADAPT_EVERY: usize = 50;
const ADAPT_TOLERANCE: f64 = 5.0;

struct Scaled {
    n: usize,
    nt: usize,
    rows: Vec<Vec<(u32, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
    group_start: Vec<usize>,
    group_len: Vec<usize>,
    group_rows: Vec<Vec<usize>>,
    free_rows: Vec<usize>,
}

fn clamp_norm(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.min(1e4)
    }
}

impl Scaled {
    fn new(qp: &EpigraphQp, iters: usize) -> Self {
        let nt = qp.n_theta;
        let n = qp.n_vars();
        let m = qp.rows.len();
        let groups = qp.group_of_aux();
        let mut group_start = Vec::with_capacity(qp.aux_groups.len());
        let mut acc = nt;
        for &s in &qp.aux_groups {
            group_start.push(acc);
            acc += s;
        }
        let mut rows = Vec::with_capacity(m);
        let mut group_rows = vec![Vec::new(); qp.aux_groups.len()];
        let mut free_rows = Vec::new();
        for (r, row) in qp.rows.iter().enumerate() {
            let mut v: Vec<(u32, f64)> = row.theta.clone();
            v.extend(row.aux.iter().map(|&(j, a)| ((nt + j as usize) as u32, a)));
            let g = row.aux.first().map(|&(j, _)| groups[j as usize]);
            match g {
                Some(g) => group_rows[g as usize].push(r),
                None => free_rows.push(r),
            }
            rows.push(v);
        }
        let mut s = Self {
            n,
            nt,
            rows,
            lower: qp.rows.iter().map(|r| r.lower).collect(),
            upper: qp.rows.iter().map(|r| r.upper).collect(),
            p: qp.p_diag.clone(),
            q: qp.linear.clone(),
            d: vec![1.0; n],
            e: vec![1.0; m],
            c: 1.0,
            group_start,
            group_len: qp.aux_groups.clone(),
            group_rows,
            free_rows,
        };
        s.equilibrate(iters);
        s
    }

    fn equilibrate(&mut self, iters: usize) {
        let (n, m) = (self.n, self.rows.len());
        for _ in 0..iters {
            let mut col = self.p.iter().map(|v| v.abs()).collect::<Vec<_>>();
            let mut rown = vec![0.0f64; m];
            for (r, row) in self.rows.iter().enumerate() {
                for &(j, a) in row {
                    let a = a.abs();
                    col[j as usize] = col[j as usize].max(a);
                    rown[r] = rown[r].max(a);
                }
            }
            let dd: Vec<f64> = col.iter().map(|v| 1.0 / libm::sqrt(clamp_norm(*v))).collect();
            let de: Vec<f64> = rown.iter().map(|v| 1.0 / libm::sqrt(clamp_norm(*v))).collect();
            for j in 0..n {
                self.p[j] *= dd[j] * dd[j];
                self.q[j] *= dd[j];
                self.d[j] *= dd[j];
            }
            for (r, row) in self.rows.iter_mut().enumerate() {
                for (j, a) in row.iter_mut() {
                    *a *= de[r] * dd[*j as usize];
                }
                self.e[r] *= de[r];
            }
        }
        let mean_p = if n > 0 { self.p.iter().map(|v| v.abs()).sum::<f64>() / n as f64 } else { 0.0 };
        let q_inf = self.q.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let c = 1.0 / clamp_norm(mean_p.max(q_inf));
        self.c = c;
        self.p.iter_mut().for_each(|v| *v *= c);
        self.q.iter_mut().for_each(|v| *v *= c);
        for r in 0..m {
            self.lower[r] *= self.e[r];
            self.upper[r] *= self.e[r];
        }
    }

    fn a_mul(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, a)| a * x[j as usize]).sum();
        }
    }

    fn at_mul(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (yr, row) in y.iter().zip(&self.rows) {
            if *yr != 0.0 {
                for &(j, a) in row {
                    out[j as usize] += a * yr;
                }
            }
        }
    }
}

/// Factorization of `P + σI + Aᵀ diag(ρ) A` via the θ Schur complement.
struct Kkt {
    nt: usize,
    schur: Vec<f64>,
    /// Per group: Cholesky factor of the aux block.
    gchol: Vec<Vec<f64>>,
    /// Per group: the coupling block `K_θg` (nt × len, row-major).
    coupling: Vec<Vec<f64>>,
}

impl Kkt {
    fn factor(s: &Scaled, rho: &[f64], sigma: f64) -> Option<Self> {
        let nt = s.nt;
        let mut schur = vec![0.0; nt * nt];
        for j in 0..nt {
            schur[j * nt + j] = s.p[j] + sigma;
        }
        let add_theta_outer = |row: &[(u32, f64)], w: f64, schur: &mut [f64]| {
            for &(i, ai) in row.iter().filter(|e| (e.0 as usize) < nt) {
                for &(j, aj) in row.iter().filter(|e| (e.0 as usize) < nt) {
                    schur[i as usize * nt + j as usize] += w * ai * aj;
                }
            }
        };
        for &r in &s.free_rows {
            add_theta_outer(&s.rows[r], rho[r], &mut schur);
        }
        let mut gchol = Vec::with_capacity(s.group_len.len());
        let mut coupling = Vec::with_capacity(s.group_len.len());
        let mut w = Vec::new();
        for (g, rows) in s.group_rows.iter().enumerate() {
            let (start, len) = (s.group_start[g], s.group_len[g]);
            let mut kgg = vec![0.0; len * len];
            for k in 0..len {
                kgg[k * len + k] = s.p[start + k] + sigma;
            }
            let mut ktg = vec![0.0; nt * len];
            for &r in rows {
                let row = &s.rows[r];
                add_theta_outer(row, rho[r], &mut schur);
                for &(i, ai) in row {
                    let i = i as usize;
                    if i < nt {
                        for &(j, aj) in row.iter().filter(|e| e.0 as usize >= start) {
                            ktg[i * len + (j as usize - start)] += rho[r] * ai * aj;
                        }
                    } else {
                        for &(j, aj) in row.iter().filter(|e| e.0 as usize >= start) {
                            kgg[(i - start) * len + (j as usize - start)] += rho[r] * ai * aj;
                        }
                    }
                }
            }
            if !cholesky_in_place(&mut kgg, len) {
                return None;
            }
            // schur -= K_θg K_gg⁻¹ K_gθ, row by row of K_θg.
            let nz: Vec<usize> = (0..nt).filter(|&i| ktg[i * len..(i + 1) * len].iter().any(|v| *v != 0.0)).collect();
            w.clear();
            for &i in &nz {
                let mut wi = ktg[i * len..(i + 1) * len].to_vec();
                cholesky_solve(&kgg, len, &mut wi);
                w.push(wi);
            }
            for (a, &i) in nz.iter().enumerate() {
                for &j in &nz {
                    let v: f64 = w[a].iter().zip(&ktg[j * len..(j + 1) * len]).map(|(x, y)| x * y).sum();
                    schur[i * nt + j] -= v;
                }
            }
            gchol.push(kgg);
            coupling.push(ktg);
        }
        if !cholesky_in_place(&mut schur, nt) {
            return None;
        }
        Some(Self { nt, schur, gchol, coupling })
    }

    fn solve(&self, s: &Scaled, rhs: &mut [f64], tmp: &mut Vec<f64>) {
        let nt = self.nt;
        // Eliminate each group: rθ -= K_θg K_gg⁻¹ r_g.
        for (g, l) in self.gchol.iter().enumerate() {
            let (start, len) = (s.group_start[g], s.group_len[g]);
            tmp.clear();
            tmp.extend_from_slice(&rhs[start..start + len]);
            cholesky_solve(l, len, tmp);
            let k = &self.coupling[g];
            for i in 0..nt {
                let row = &k[i * len..(i + 1) * len];
                let v: f64 = row.iter().zip(tmp.iter()).map(|(a, b)| a * b).sum();
                rhs[i] -= v;
            }
        }
        cholesky_solve(&self.schur, nt, &mut rhs[..nt]);
        for (g, l) in self.gchol.iter().enumerate() {
            let (start, len) = (s.group_start[g], s.group_len[g]);
            let k = &self.coupling[g];
            for c in 0..len {
                let v: f64 = (0..nt).map(|i| k[i * len + c] * rhs[i]).sum();
                rhs[start + c] -= v;
            }
            cholesky_solve(l, len, &mut rhs[start..start + len]);
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn row_rho(lower: f64, upper: f64, rho: f64) -> f64 {
    if lower == f64::NEG_INFINITY && upper == f64::INFINITY {
        RHO_MIN
    } else if lower == upper {
        (RHO_EQ_FACTOR * rho).min(RHO_MAX)
    } else {
        rho
    }
}

/// Solves the QP. Never panics on numerical trouble; the outcome is in
/// [`SolveReport::status`]. Deterministic for identical inputs.
pub fn admm_solve(qp: &EpigraphQp, settings: &AdmmSettings, warm: Option<&WarmStart>) -> SolveReport {
    let n = qp.n_vars();
    let m = qp.rows.len();
    let s = Scaled::new(qp, settings.scaling_iters);
    let sigma = settings.sigma;
    let alpha = settings.alpha;
    let mut rho_scalar = settings.rho.clamp(RHO_MIN, RHO_MAX);
    let mut rho: Vec<f64> = (0..m).map(|r| row_rho(s.lower[r], s.upper[r], rho_scalar)).collect();

    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    if let Some(w) = warm {
        if w.x.len() == n {
            for j in 0..n {
                x[j] = w.x[j] / s.d[j];
            }
        }
        if let Some(wy) = &w.y {
            if wy.len() == m {
                for r in 0..m {
                    y[r] = wy[r] * s.c / s.e[r];
                }
            }
        }
    }
    let mut z = vec![0.0; m];
    s.a_mul(&x, &mut z);
    for r in 0..m {
        z[r] = z[r].clamp(s.lower[r], s.upper[r]);
    }

    let fail = |x: Vec<f64>, y: Vec<f64>, it: usize| SolveReport {
        objective: f64::NAN,
        x,
        y,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        iterations: it,
        status: SolveStatus::InfeasibleNumerics,
        polished: false,
    };

    let mut kkt = match Kkt::factor(&s, &rho, sigma) {
        Some(k) => k,
        None => return fail(x, y, 0),
    };

    let mut rhs = vec![0.0; n];
    let mut xt = vec![0.0; n];
    let mut zt = vec![0.0; m];
    let mut tmp = Vec::new();
    let mut ax = vec![0.0; m];
    let mut px = vec![0.0; n];
    let mut aty = vec![0.0; n];
    let mut y_prev = vec![0.0; m];
    let mut status = SolveStatus::MaxIter;
    let mut prim_res = f64::INFINITY;
    let mut dual_res = f64::INFINITY;
    let mut iters = 0;

    for it in 1..=settings.max_iter.max(1) {
        iters = it;
        // x̃ from the KKT system.
        for r in 0..m {
            zt[r] = rho[r] * z[r] - y[r];
        }
        s.at_mul(&zt, &mut rhs);
        for j in 0..n {
            rhs[j] += sigma * x[j] - s.q[j];
        }
        xt.copy_from_slice(&rhs);
        kkt.solve(&s, &mut xt, &mut tmp);
        s.a_mul(&xt, &mut zt);
        let check = it % settings.check_every.max(1) == 0 || it == settings.max_iter;
        if check {
            y_prev.copy_from_slice(&y);
        }
        for j in 0..n {
            x[j] = alpha * xt[j] + (1.0 - alpha) * x[j];
        }
        for r in 0..m {
            let zr = alpha * zt[r] + (1.0 - alpha) * z[r];
            let zn = (zr + y[r] / rho[r]).clamp(s.lower[r], s.upper[r]);
            y[r] += rho[r] * (zr - zn);
            z[r] = zn;
        }
        if !x.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
            return fail(x, y, it);
        }
        if !check {
            continue;
        }

        // Residuals in the original scaling.
        s.a_mul(&x, &mut ax);
        for j in 0..n {
            px[j] = s.p[j] * x[j];
        }
        s.at_mul(&y, &mut aty);
        let mut p_ax = 0.0f64;
        let mut p_z = 0.0f64;
        let mut prim = 0.0f64;
        let mut prim_s = 0.0f64;
        for r in 0..m {
            let ei = 1.0 / s.e[r];
            prim = prim.max(((ax[r] - z[r]) * ei).abs());
            prim_s = prim_s.max((ax[r] - z[r]).abs());
            p_ax = p_ax.max((ax[r] * ei).abs());
            p_z = p_z.max((z[r] * ei).abs());
        }
        let mut dual = 0.0f64;
        let mut dual_s = 0.0f64;
        let (mut d_px, mut d_aty, mut d_q) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..n {
            let k = 1.0 / (s.c * s.d[j]);
            let v = px[j] + s.q[j] + aty[j];
            dual = dual.max((v * k).abs());
            dual_s = dual_s.max(v.abs());
            d_px = d_px.max((px[j] * k).abs());
            d_aty = d_aty.max((aty[j] * k).abs());
            d_q = d_q.max((s.q[j] * k).abs());
        }
        prim_res = prim;
        dual_res = dual;
        let eps_p = settings.tol_primal * (1.0 + p_ax.max(p_z));
        let eps_d = settings.tol_dual * (1.0 + d_px.max(d_aty).max(d_q));
        if prim <= eps_p && dual <= eps_d {
            status = SolveStatus::Optimal;
            break;
        }

        // Primal infeasibility certificate from the last dual step.
        let dy: Vec<f64> = y.iter().zip(&y_prev).map(|(a, b)| a - b).collect();
        let dy_norm = dy.iter().zip(&s.e).fold(0.0f64, |m, (v, e)| m.max((v * e).abs()));
        if dy_norm > 1e-12 {
            let mut atdy = vec![0.0; n];
            s.at_mul(&dy, &mut atdy);
            let lhs = atdy.iter().zip(&s.d).fold(0.0f64, |m, (v, d)| m.max((v / d).abs()));
            let mut support = 0.0;
            for r in 0..m {
                if dy[r] > 0.0 {
                    support += s.upper[r] * dy[r];
                } else if dy[r] < 0.0 {
                    support += s.lower[r] * dy[r];
                }
            }
            let tol = settings.tol_infeasible * dy_norm;
            if lhs <= tol && support < -tol {
                status = SolveStatus::PrimalInfeasible;
                break;
            }
        }

        if settings.adaptive_rho && it % ADAPT_EVERY == 0 {
            let num = prim_s / inf_norm(&ax).max(inf_norm(&z)).max(1e-30);
            let den = dual_s / inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&s.q)).max(1e-30);
            if num.is_finite() && den > 0.0 {
                let new_rho = (rho_scalar * libm::sqrt(num / den)).clamp(RHO_MIN, RHO_MAX);
                if new_rho > ADAPT_TOLERANCE * rho_scalar || new_rho < rho_scalar / ADAPT_TOLERANCE {
                    rho_scalar = new_rho;
                    for r in 0..m {
                        rho[r] = row_rho(s.lower[r], s.upper[r], rho_scalar);
                    }
                    kkt = match Kkt::factor(&s, &rho, sigma) {
                        Some(k) => k,
                        None => return fail(x, y, it),
                    };
                }
            }
        }
    }

    let mut xu: Vec<f64> = x.iter().zip(&s.d).map(|(v, d)| v * d).collect();
    let mut yu: Vec<f64> = y.iter().zip(&s.e).map(|(v, e)| v * e / s.c).collect();
    let mut polished = false;
    if status == SolveStatus::Optimal && settings.polish {
        if let Some((xp, yp)) = polish(&s, &x, &z, &y) {
            let xpu: Vec<f64> = xp.iter().zip(&s.d).map(|(v, d)| v * d).collect();
            let ypu: Vec<f64> = yp.iter().zip(&s.e).map(|(v, e)| v * e / s.c).collect();
            let (p0, d0) = residuals(qp, &xu, &yu);
            let (p1, d1) = residuals(qp, &xpu, &ypu);
            if p1 <= p0.max(1e-10) && d1 <= d0.max(1e-10) {
                xu = xpu;
                yu = ypu;
                polished = true;
            }
        }
    }
    SolveReport {
        objective: qp.objective(&xu),
        x: xu,
        y: yu,
        primal_residual: prim_res,
        dual_residual: dual_res,
        iterations: iters,
        status,
        polished,
    }
}

/// Unscaled `(‖(Ax − [l, u])₊‖∞, ‖Px + c + Aᵀy‖∞)`.
fn residuals(qp: &EpigraphQp, x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut g: Vec<f64> = (0..x.len()).map(|j| qp.p_diag[j] * x[j] + qp.linear[j]).collect();
    for (row, &yr) in qp.rows.iter().zip(y) {
        for &(j, a) in &row.theta {
            g[j as usize] += a * yr;
        }
        for &(j, a) in &row.aux {
            g[qp.n_theta + j as usize] += a * yr;
        }
    }
    (qp.max_violation(x), inf_norm(&g))
}

const POLISH_DELTA: f64 = 1e-5;
const POLISH_ITERS: usize = 200;

/// Solves the equality-constrained QP on the active set guessed from the
/// ADMM iterate by the proximal method of multipliers (scaled space).
/// Returns `None` when the guess is inconsistent.
fn polish(s: &Scaled, x0: &[f64], z: &[f64], y0: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (s.n, s.rows.len());
    // Row r is active at `bound[r]` when its multiplier dominates its slack.
    let mut bound = vec![f64::NAN; m];
    for r in 0..m {
        if s.lower[r] == s.upper[r] {
            bound[r] = s.lower[r];
        } else if s.lower[r].is_finite() && z[r] - s.lower[r] < -y0[r] {
            bound[r] = s.lower[r];
        } else if s.upper[r].is_finite() && s.upper[r] - z[r] < y0[r] {
            bound[r] = s.upper[r];
        }
    }
    let rho: Vec<f64> = bound.iter().map(|b| if b.is_nan() { 0.0 } else { 1.0 / POLISH_DELTA }).collect();
    let kkt = Kkt::factor(s, &rho, POLISH_DELTA)?;
    let mut x = x0.to_vec();
    let mut y: Vec<f64> = (0..m).map(|r| if bound[r].is_nan() { 0.0 } else { y0[r] }).collect();
    let (mut rhs, mut tmp, mut ax) = (vec![0.0; n], Vec::new(), vec![0.0; m]);
    let mut w = vec![0.0; m];
    for _ in 0..POLISH_ITERS {
        // (P + δI + AᵀRA) x = δ x_k − q − Aᵀ y + AᵀR b
        for r in 0..m {
            w[r] = if bound[r].is_nan() { 0.0 } else { rho[r] * bound[r] - y[r] };
        }
        s.at_mul(&w, &mut rhs);
        for j in 0..n {
            rhs[j] += POLISH_DELTA * x[j] - s.q[j];
        }
        kkt.solve(s, &mut rhs, &mut tmp);
        let change = rhs.iter().zip(&x).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        x.copy_from_slice(&rhs);
        s.a_mul(&x, &mut ax);
        for r in 0..m {
            if !bound[r].is_nan() {
                y[r] += rho[r] * (ax[r] - bound[r]);
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        if change <= 1e-14 * (1.0 + inf_norm(&x)) {
            break;
        }
    }
    // Multipliers must have the sign of their bound.
    for r in 0..m {
        if s.lower[r] != s.upper[r] && !bound[r].is_nan() {
            let at_lower = bound[r] == s.lower[r];
            if (at_lower && y[r] > 0.0) || (!at_lower && y[r] < 0.0) {
                return None;
            }
        }
    }
    Some((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_row(j: u32, lo: f64, hi: f64) -> QpRow {
        QpRow { theta: vec![(j, 1.0)], aux: vec![], lower: lo, upper: hi, kind: RowKind::Box, sample: None }
    }

    #[test]
    fn projection_onto_box() {
        let c = [2.0, -0.3, -5.0];
        let qp = EpigraphQp {
            n_theta: 3,
            aux_groups: vec![],
            p_diag: vec![1.0; 3],
            linear: c.iter().map(|v| -v).collect(),
            constant: 0.0,
            rows: (0..3).map(|j| box_row(j, -1.0, 1.0)).collect(),
        };
        let r = admm_solve(&qp, &AdmmSettings::default(), None);
        assert_eq!(r.status, SolveStatus::Optimal);
        for (x, want) in r.x.iter().zip([1.0, -0.3, -1.0]) {
            assert!((x - want).abs() < 1e-5, "{x} vs {want}");
        }
    }

    #[test]
    fn absolute_value_epigraph() {
        // min t  s.t. t ≥ θ, t ≥ −θ, |θ| ≤ 1
        let row = |s: f64| QpRow {
            theta: vec![(0, s)],
            aux: vec![(0, -1.0)],
            lower: f64::NEG_INFINITY,
            upper: 0.0,
            kind: RowKind::Piece,
            sample: Some(0),
        };
        let qp = EpigraphQp {
            n_theta: 1,
            aux_groups: vec![1],
            p_diag: vec![0.0, 0.0],
            linear: vec![0.0, 1.0],
            constant: 0.0,
            rows: vec![row(1.0), row(-1.0), box_row(0, -1.0, 1.0)],
        };
        assert!(qp.check().is_ok());
        let r = admm_solve(&qp, &AdmmSettings::default(), Some(&WarmStart { x: vec![0.7, 0.7], y: None }));
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.x[0].abs() < 1e-5 && r.x[1].abs() < 1e-5);
    }

    #[test]
    fn detects_infeasible_rows() {
        let qp = EpigraphQp {
            n_theta: 1,
            aux_groups: vec![],
            p_diag: vec![1.0],
            linear: vec![0.0],
            constant: 0.0,
            rows: vec![box_row(0, 1.0, 2.0), box_row(0, -2.0, -1.0)],
        };
        let r = admm_solve(&qp, &AdmmSettings::default(), None);
        assert_eq!(r.status, SolveStatus::PrimalInfeasible);
    }
}
