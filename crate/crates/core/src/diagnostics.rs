//! Computable checks: surrogation conditions, the proximal-map residual of
//! stationarity (exact by enumeration or sampled), the constructive PA
//! interpolation with its error bound, and a directional descent probe.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::cost::{LowestOuter, OuterSelector, RandomOuter};
use crate::data::{Dataset, HypothesisConfig, Theta};
use crate::error::{config, PadrError, Result};
use crate::linalg::{dist2, norm2};
use crate::padr::{
    active_sets, active_sets_for, argmax, argmax_mapping, build_inner_surrogates, draw_index_mapping, g_values,
    h_values, mapping_from_choices, ActiveSets, IndexMapping,
};
use crate::problem::Problem;
use crate::rng::RngHandle;
use crate::subproblem::{solve_prox, ProxSettings};
use crate::surrogate::ConvexSurrogate;

/// Worst violations of touching (P1), majorization (P2) and convexity (P3).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SurrogationReport {
    pub probes: usize,
    pub epsilon: f64,
    /// `max |F̂(θ′) − F(θ′)|` with the touching (argmax) mapping at ε = 0.
    pub p1_gap: f64,
    /// `max (F(θ) − F̂(θ))₊` under random ε-active mappings.
    pub p2_violation: f64,
    /// `max (F̂(mid) − (F̂(a) + F̂(b))/2)₊`.
    pub p3_violation: f64,
}

fn sample_surrogate(
    problem: &Problem<'_>,
    theta_ref: &Theta,
    mapping: &IndexMapping,
    s: usize,
    epsilon: f64,
    selector: &mut dyn OuterSelector,
) -> Result<ConvexSurrogate> {
    let inner = build_inner_surrogates(theta_ref, problem.data(), mapping, &[s])?;
    let reference: Arc<[f64]> = Arc::from(theta_ref.as_slice());
    problem.surrogate(theta_ref, &reference, &inner, 0, epsilon, selector)
}

/// A point in the box: uniform (even `k`) or a perturbation of `center` at a
/// random scale between `1e-4·μ` and `μ`.
fn probe_point(center: &Theta, k: usize, r: &mut crate::rng::StreamRng) -> Vec<f64> {
    let mu = center.cfg().mu;
    if k % 2 == 0 {
        (0..center.as_slice().len()).map(|_| r.uniform_in(-mu, mu)).collect()
    } else {
        let scale = mu * libm::pow(10.0, -r.uniform_in(0.0, 4.0));
        center.as_slice().iter().map(|&c| (c + scale * r.uniform_in(-1.0, 1.0)).clamp(-mu, mu)).collect()
    }
}

/// Probes the surrogation conditions of the per-sample objective at `θ′`.
/// Samples, mappings and probe points are drawn from `rng.child(k)`.
pub fn check_surrogation(
    problem: &Problem<'_>,
    theta_ref: &Theta,
    epsilon: f64,
    probes: usize,
    rng: &RngHandle,
) -> Result<SurrogationReport> {
    if probes == 0 {
        return Err(config("probes must be at least 1"));
    }
    let data = problem.data();
    let cfg = *problem.cfg();
    let mut report = SurrogationReport { probes, epsilon, p1_gap: 0.0, p2_violation: 0.0, p3_violation: 0.0 };
    for k in 0..probes {
        let h = rng.child(k as u64);
        let mut r = h.rng();
        let s = r.index(data.n());
        let f_ref = problem.sample_objective(theta_ref, s);

        let touching = argmax_mapping(theta_ref, data, &[s])?;
        let sur = sample_surrogate(problem, theta_ref, &touching, s, 0.0, &mut LowestOuter)?;
        report.p1_gap = report.p1_gap.max((sur.value(theta_ref.as_slice()) - f_ref).abs());

        let sets = active_sets_for(theta_ref, data, epsilon, &[s])?;
        let mapping = draw_index_mapping(&sets, &h.child(1));
        let sur = sample_surrogate(problem, theta_ref, &mapping, s, epsilon, &mut RandomOuter(h.child(2)))?;
        let t = Theta::from_flat(cfg, probe_point(theta_ref, k, &mut r))?;
        let gap = problem.sample_objective(&t, s) - sur.value(t.as_slice());
        report.p2_violation = report.p2_violation.max(gap.max(0.0));

        let a = probe_point(theta_ref, k, &mut r);
        let b = probe_point(theta_ref, k + 1, &mut r);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let excess = sur.value(&mid) - 0.5 * (sur.value(&a) + sur.value(&b));
        report.p3_violation = report.p3_violation.max(excess.max(0.0));
    }
    Ok(report)
}

/// Averaged proximal residual `r̄^{ε,ρ}(θ′)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ResidualReport {
    pub epsilon: f64,
    pub rho: f64,
    /// `|𝓘^ε(θ′)|` including concave add-on choices (saturating).
    pub mapping_count: u128,
    /// Enumerated every mapping (otherwise Monte-Carlo).
    pub exact: bool,
    pub residual: f64,
    /// Standard error of the estimate (zero in exact mode).
    pub std_error: f64,
    /// `‖θ′ − P^ρ_I(θ′)‖` per evaluated mapping.
    pub step_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSettings {
    pub prox: ProxSettings,
    /// Slack of the gate `min ≤ V(θ′) + delta`.
    pub delta: f64,
    /// Largest mapping set enumerated by [`residual_exact`].
    pub cap: u64,
}

impl Default for ResidualSettings {
    fn default() -> Self {
        Self { prox: ProxSettings::default(), delta: 1e-6, cap: 10_000 }
    }
}

/// Concave add-on choices fixed per `(sample, slot)`.
struct FixedOuter(BTreeMap<(usize, usize), usize>);

impl OuterSelector for FixedOuter {
    fn select(&mut self, sample: usize, slot: usize, active: &[usize]) -> usize {
        self.0.get(&(sample, slot)).copied().unwrap_or(active[0])
    }
}

/// `‖θ′ − P^ρ_I(θ′)‖` for the full-data surrogate under one mapping.
fn prox_step(
    problem: &Problem<'_>,
    theta_ref: &Theta,
    mapping: &IndexMapping,
    epsilon: f64,
    rho: f64,
    selector: &mut dyn OuterSelector,
    settings: &ResidualSettings,
    v_ref: f64,
) -> Result<f64> {
    let data = problem.data();
    let ids: Vec<usize> = (0..data.n()).collect();
    let inner = build_inner_surrogates(theta_ref, data, mapping, &ids)?;
    let reference: Arc<[f64]> = Arc::from(theta_ref.as_slice());
    let mut surs = Vec::with_capacity(ids.len());
    for pos in 0..ids.len() {
        surs.push(problem.surrogate(theta_ref, &reference, &inner, pos, epsilon, selector)?);
    }
    let w = vec![1.0 / data.n() as f64; ids.len()];
    let sol = solve_prox(&surs, &w, theta_ref.as_slice(), rho, problem.cfg().mu, &settings.prox, None)?;
    if sol.value <= v_ref + settings.delta {
        Ok(dist2(&sol.theta, theta_ref.as_slice()))
    } else {
        Ok(0.0)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(config("rho must be positive and finite"));
    }
    Ok(())
}

/// Radices of the mixed-radix mapping counter: `(g, h)` per entry, then the
/// concave slots per sample.
struct MappingSpace {
    sets: ActiveSets,
    slots: Vec<(usize, usize, Vec<usize>)>,
}

impl MappingSpace {
    fn new(problem: &Problem<'_>, theta_ref: &Theta, epsilon: f64) -> Result<Self> {
        let sets = active_sets(theta_ref, problem.data(), epsilon)?;
        let mut slots = Vec::new();
        for s in 0..problem.data().n() {
            for (slot, active) in problem.concave_slots(theta_ref, s, epsilon) {
                slots.push((s, slot, active));
            }
        }
        Ok(Self { sets, slots })
    }

    fn radices(&self) -> Vec<usize> {
        let mut r = Vec::new();
        for e in self.sets.entries() {
            r.push(e.g.len());
            r.push(e.h.len().max(1));
        }
        r.extend(self.slots.iter().map(|(_, _, a)| a.len()));
        r
    }

    fn count(&self) -> u128 {
        self.radices().iter().fold(1u128, |acc, &k| acc.saturating_mul(k as u128))
    }

    fn decode(&self, digits: &[usize]) -> (IndexMapping, FixedOuter) {
        let entries = self.sets.entries();
        let choices = entries
            .iter()
            .enumerate()
            .map(|(j, e)| (e.g[digits[2 * j]], if e.h.is_empty() { 0 } else { e.h[digits[2 * j + 1]] }))
            .collect();
        let off = 2 * entries.len();
        let outer = self
            .slots
            .iter()
            .enumerate()
            .map(|(j, (s, slot, a))| ((*s, *slot), a[digits[off + j]]))
            .collect();
        (mapping_from_choices(&self.sets, choices), FixedOuter(outer))
    }
}

/// Exact residual: enumerates every ε-active mapping (and concave add-on
/// choice) of the full dataset. Fails with `CapExceeded` beyond
/// `settings.cap`; use [`residual_sampled`] then.
pub fn residual_exact(
    problem: &Problem<'_>,
    theta_ref: &Theta,
    epsilon: f64,
    rho: f64,
    settings: &ResidualSettings,
) -> Result<ResidualReport> {
    check_rho(rho)?;
    let space = MappingSpace::new(problem, theta_ref, epsilon)?;
    let count = space.count();
    if count > settings.cap as u128 {
        return Err(PadrError::CapExceeded { count, cap: settings.cap });
    }
    let v_ref = problem.objective(theta_ref)?;
    let radices = space.radices();
    let mut digits = vec![0usize; radices.len()];
    let mut steps = Vec::with_capacity(count as usize);
    loop {
        let (mapping, mut outer) = space.decode(&digits);
        steps.push(prox_step(problem, theta_ref, &mapping, epsilon, rho, &mut outer, settings, v_ref)?);
        // Advance the mixed-radix counter.
        let mut j = 0;
        while j < digits.len() {
            digits[j] += 1;
            if digits[j] < radices[j] {
                break;
            }
            digits[j] = 0;
            j += 1;
        }
        if j == digits.len() {
            break;
        }
    }
    let residual = steps.iter().sum::<f64>() / steps.len() as f64;
    Ok(ResidualReport { epsilon, rho, mapping_count: count, exact: true, residual, std_error: 0.0, step_norms: steps })
}

/// Monte-Carlo residual over `draws` uniformly drawn mappings; draw `k` uses
/// `rng.child(k)`.
pub fn residual_sampled(
    problem: &Problem<'_>,
    theta_ref: &Theta,
    epsilon: f64,
    rho: f64,
    draws: usize,
    rng: &RngHandle,
    settings: &ResidualSettings,
) -> Result<ResidualReport> {
    check_rho(rho)?;
    if draws == 0 {
        return Err(config("draws must be at least 1"));
    }
    let space = MappingSpace::new(problem, theta_ref, epsilon)?;
    let v_ref = problem.objective(theta_ref)?;
    let mut steps = Vec::with_capacity(draws);
    for k in 0..draws {
        let h = rng.child(k as u64);
        let mapping = draw_index_mapping(&space.sets, &h);
        let mut outer = RandomOuter(h.child(u64::MAX));
        steps.push(prox_step(problem, theta_ref, &mapping, epsilon, rho, &mut outer, settings, v_ref)?);
    }
    let n = steps.len() as f64;
    let mean = steps.iter().sum::<f64>() / n;
    let var = if steps.len() > 1 { steps.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(ResidualReport {
        epsilon,
        rho,
        mapping_count: space.count(),
        exact: false,
        residual: mean,
        std_error: libm::sqrt(var / n),
        step_norms: steps,
    })
}

/// `ε₀ = 2μ√q·sqrt(max_s ‖x^s‖² + 1)`: at any `ε ≥ ε₀` every piece is active.
pub fn eps_all_threshold(cfg: &HypothesisConfig, data: &Dataset) -> f64 {
    2.0 * cfg.mu * libm::sqrt(cfg.q() as f64) * libm::sqrt(data.max_sq_norm() + 1.0)
}

/// Largest interpolation grid built by [`interpolate_pa`].
pub const MAX_GRID_POINTS: u128 = 200_000;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct InterpolationReport {
    pub grid_eps: f64,
    /// Grid spacing `2ε/√p`.
    pub spacing: f64,
    /// Number of grid points `K` (pieces per max-affine block).
    pub pieces: usize,
    /// Slope constant `C = L₀√p/(2ε)`.
    pub slope_const: f64,
    /// `max |f − f₀|` over the grid points.
    pub grid_error: f64,
    /// `max |f − f₀|` over the dense probe grid.
    pub sup_error: f64,
    /// `2(√p + 3)√p·L₀·X̄·K^{−1/p}`.
    pub bound: f64,
    /// Largest gradient norm / difference quotient seen on the probes.
    pub lipschitz_estimate: f64,
    /// `(√p + 2)L₀`.
    pub lipschitz_bound: f64,
}

#[derive(Debug, Clone)]
pub struct Interpolation {
    pub theta: Theta,
    pub grid: Vec<Vec<f64>>,
    pub report: InterpolationReport,
}

/// Lexicographic grid points of `[lo, lo + (m−1)h]^p`.
fn grid_points(p: usize, m: usize, lo: f64, h: f64) -> Vec<Vec<f64>> {
    let total = m.pow(p as u32);
    (0..total)
        .map(|mut idx| {
            let mut x = vec![0.0; p];
            for v in x.iter_mut().rev() {
                *v = lo + h * (idx % m) as f64;
                idx /= m;
            }
            x
        })
        .collect()
}

/// Difference-of-max-affine interpolant of a Lipschitz `f0` on `[−X̄, X̄]^p`
/// over a grid of spacing `2ε/√p`:
/// `f = max_k (C x̂_kᵀx − C‖x̂_k‖²/2 + f₀(x̂_k)/2) − max_k (C x̂_kᵀx − C‖x̂_k‖²/2 − f₀(x̂_k)/2)`.
/// `probes_per_dim` sets the dense probe grid used for the error report.
pub fn interpolate_pa(
    f0: &dyn Fn(&[f64]) -> f64,
    l0: f64,
    p: usize,
    grid_eps: f64,
    xbar: f64,
    probes_per_dim: usize,
    rng: &RngHandle,
) -> Result<Interpolation> {
    if p == 0 || !(l0 > 0.0) || !(grid_eps > 0.0) || !(xbar > 0.0) || probes_per_dim < 2 {
        return Err(config("interpolation needs p ≥ 1, L0 > 0, ε > 0, X̄ > 0 and ≥ 2 probes per dimension"));
    }
    let sp = libm::sqrt(p as f64);
    let h = 2.0 * grid_eps / sp;
    let m = libm::ceil(2.0 * xbar / h) as usize + 1;
    let total = (m as u128).saturating_pow(p as u32);
    if total > MAX_GRID_POINTS {
        return Err(PadrError::GridTooLarge { points: total });
    }
    let k = total as usize;
    let lo = -0.5 * (m - 1) as f64 * h;
    let grid = grid_points(p, m, lo, h);
    let c = l0 * sp / (2.0 * grid_eps);

    let vals: Vec<f64> = grid.iter().map(|x| f0(x)).collect();
    let mut g = Vec::with_capacity(k * (p + 1));
    let mut hh = Vec::with_capacity(k * (p + 1));
    for (x, &f) in grid.iter().zip(&vals) {
        let base = -0.5 * c * x.iter().map(|v| v * v).sum::<f64>();
        for block in [&mut g, &mut hh] {
            block.extend(x.iter().map(|v| c * v));
        }
        g.push(base + 0.5 * f);
        hh.push(base - 0.5 * f);
    }
    g.extend_from_slice(&hh);
    let mu = g.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let cfg = HypothesisConfig::new(1, k, k, p, mu)?;
    let theta = Theta::from_flat(cfg, g)?;

    let eval = |x: &[f64], buf: &mut Vec<f64>| -> (f64, usize, usize) {
        g_values(&theta, 0, x, buf);
        let k1 = argmax(buf);
        let gv = buf[k1];
        h_values(&theta, 0, x, buf);
        let k2 = argmax(buf);
        (gv - buf[k2], k1, k2)
    };
    let mut buf = Vec::new();
    let grid_error = grid
        .iter()
        .zip(&vals)
        .map(|(x, f)| (eval(x, &mut buf).0 - f).abs())
        .fold(0.0, f64::max);

    let probes = grid_points(p, probes_per_dim, -xbar, 2.0 * xbar / (probes_per_dim - 1) as f64);
    let mut sup_error = 0.0f64;
    let mut lip = 0.0f64;
    let mut diff = vec![0.0; p];
    for x in &probes {
        let (v, k1, k2) = eval(x, &mut buf);
        sup_error = sup_error.max((v - f0(x)).abs());
        for (j, d) in diff.iter_mut().enumerate() {
            *d = c * (grid[k1][j] - grid[k2][j]);
        }
        lip = lip.max(norm2(&diff));
    }
    let mut r = rng.rng();
    for _ in 0..probes.len().min(10_000) {
        let a: Vec<f64> = (0..p).map(|_| r.uniform_in(-xbar, xbar)).collect();
        let b: Vec<f64> = (0..p).map(|_| r.uniform_in(-xbar, xbar)).collect();
        let dist = dist2(&a, &b);
        if dist > 1e-9 {
            lip = lip.max((eval(&a, &mut buf).0 - eval(&b, &mut buf).0).abs() / dist);
        }
    }
    let report = InterpolationReport {
        grid_eps,
        spacing: h,
        pieces: k,
        slope_const: c,
        grid_error,
        sup_error,
        bound: 2.0 * (sp + 3.0) * sp * l0 * xbar * libm::pow(k as f64, -1.0 / p as f64),
        lipschitz_estimate: lip,
        lipschitz_bound: (sp + 2.0) * l0,
    };
    Ok(Interpolation { theta, grid, report })
}

/// Heuristic descent probe: one-sided difference quotients of `V` along the
/// coordinate directions (both signs) and `random` random unit directions,
/// restricted to directions that stay in the box. A clearly negative minimum
/// rules out stationarity; a nonnegative one proves nothing.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct DirectionalProbe {
    pub directions: usize,
    pub step: f64,
    /// Most negative quotient `(V(θ + t·d) − V(θ))/t`.
    pub min_slope: f64,
}

pub fn directional_probe(
    problem: &Problem<'_>,
    theta: &Theta,
    random: usize,
    step: f64,
    rng: &RngHandle,
) -> Result<DirectionalProbe> {
    if !(step > 0.0) {
        return Err(config("step must be positive"));
    }
    let q = theta.as_slice().len();
    let mu = theta.cfg().mu;
    let v0 = problem.objective(theta)?;
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(2 * q + random);
    for j in 0..q {
        for sign in [1.0, -1.0] {
            let mut d = vec![0.0; q];
            d[j] = sign;
            dirs.push(d);
        }
    }
    let mut r = rng.rng();
    for _ in 0..random {
        let mut d: Vec<f64> = (0..q).map(|_| r.uniform_in(-1.0, 1.0)).collect();
        let n = norm2(&d);
        if n > 0.0 {
            d.iter_mut().for_each(|v| *v /= n);
            dirs.push(d);
        }
    }
    let mut min_slope = f64::INFINITY;
    let mut used = 0;
    for d in &dirs {
        let t: Vec<f64> = theta.as_slice().iter().zip(d).map(|(a, b)| a + step * b).collect();
        if t.iter().any(|v| v.abs() > mu) {
            continue;
        }
        used += 1;
        let v = problem.objective(&Theta::from_flat(*theta.cfg(), t)?)?;
        min_slope = min_slope.min((v - v0) / step);
    }
    Ok(DirectionalProbe { directions: used, step, min_slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostSpec;
    use crate::rng::Stream;

    #[test]
    fn threshold_intercept_only() {
        let data = Dataset::new(0, 1, vec![], vec![1.0, 2.0]).unwrap();
        let cfg = HypothesisConfig::new(1, 1, 0, 0, 50.0).unwrap();
        assert_eq!(eps_all_threshold(&cfg, &data), 100.0);
    }

    #[test]
    fn counts_product_of_active_sets() {
        // Two identical g-pieces are tied on every sample: 2 × 2 mappings.
        let data = Dataset::new(1, 1, vec![0.5, -0.5], vec![1.0, 2.0]).unwrap();
        let cfg = HypothesisConfig::new(1, 2, 0, 1, 10.0).unwrap();
        let theta = Theta::from_flat(cfg, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let prob = Problem::new(&data, cfg, CostSpec::newsvendor(8.0, 2.0)).unwrap();
        let rep = residual_exact(&prob, &theta, 0.0, 0.6, &ResidualSettings::default()).unwrap();
        assert_eq!(rep.mapping_count, 4);
        assert_eq!(rep.step_norms.len(), 4);
        let capped = ResidualSettings { cap: 3, ..Default::default() };
        assert!(matches!(residual_exact(&prob, &theta, 0.0, 0.6, &capped), Err(PadrError::CapExceeded { .. })));
    }

    #[test]
    fn abs_interpolates_on_grid() {
        let f = |x: &[f64]| x[0].abs();
        let it = interpolate_pa(&f, 1.0, 1, 0.25, 1.0, 401, &RngHandle::new(1, Stream::Data)).unwrap();
        assert!(it.report.grid_error <= 1e-10);
        assert!(it.report.sup_error <= it.report.bound);
        assert!(it.report.lipschitz_estimate <= it.report.lipschitz_bound + 1e-6);
    }
}
