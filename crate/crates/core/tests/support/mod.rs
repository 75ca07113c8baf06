//! Test-side helpers: small data generators and a brute-force QP oracle.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use padr_core::qp::{EpigraphQp, QpRow, RowKind};
use padr_core::rng::{RngHandle, Stream, StreamRng};
use padr_core::Dataset;

pub fn normal(r: &mut StreamRng) -> f64 {
    let u1 = r.uniform().max(1e-300);
    let u2 = r.uniform();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Max-affine demand `max{5x1 − 10x2, −10x1 + 5x2, 15x1} + 10 + N(0, σ²)`.
pub fn basic_data(n: usize, sigma: f64, seed: u64) -> Dataset {
    let mut r = RngHandle::new(seed, Stream::Data).rng();
    let (mut f, mut o) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let x1 = r.uniform_in(-1.0, 1.0);
        let x2 = r.uniform_in(-1.0, 1.0);
        let mean = (5.0 * x1 - 10.0 * x2).max(-10.0 * x1 + 5.0 * x2).max(15.0 * x1) + 10.0;
        f.extend([x1, x2]);
        o.push(mean + sigma * normal(&mut r));
    }
    Dataset::new(2, 1, f, o).unwrap()
}

/// Outcomes only (p = 0), `y ~ N(10, 1)`.
pub fn intercept_data(n: usize, seed: u64) -> Dataset {
    let mut r = RngHandle::new(seed, Stream::Data).rng();
    let o = (0..n).map(|_| 10.0 + normal(&mut r)).collect();
    Dataset::new(0, 1, vec![], o).unwrap()
}

/// Empirical `tau`-quantile as the order statistic `⌈τ n⌉`.
pub fn empirical_quantile(values: &[f64], tau: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((tau * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Random epigraph QP: `q` box-bounded θ with a positive proximal diagonal,
/// `groups` epigraph variables each above 2–3 affine pieces, and possibly one
/// coupling halfspace on θ.
pub fn random_qp(seed: u64) -> EpigraphQp {
    let mut r = RngHandle::new(seed, Stream::Data).child(0x7170).rng();
    let q = 1 + r.index(4);
    let groups = 1 + r.index(2);
    let mut qp = EpigraphQp { n_theta: q, ..Default::default() };
    for _ in 0..q {
        qp.p_diag.push(r.uniform_in(0.1, 2.0));
        qp.linear.push(r.uniform_in(-2.0, 2.0));
    }
    for g in 0..groups {
        qp.aux_groups.push(1);
        qp.p_diag.push(0.0);
        qp.linear.push(r.uniform_in(0.2, 1.0));
        let pieces = 2 + r.index(2);
        for _ in 0..pieces {
            // a·θ + b ≤ t  ⇔  a·θ − t ≤ −b
            let theta = (0..q).map(|j| (j as u32, r.uniform_in(-2.0, 2.0))).collect();
            let b = r.uniform_in(-1.0, 1.0);
            qp.rows.push(QpRow {
                theta,
                aux: vec![(g as u32, -1.0)],
                lower: f64::NEG_INFINITY,
                upper: -b,
                kind: RowKind::Piece,
                sample: Some(g as u32),
            });
        }
    }
    if r.uniform() < 0.5 {
        let theta = (0..q).map(|j| (j as u32, r.uniform_in(-1.0, 1.0))).collect();
        qp.rows.push(QpRow { theta, aux: vec![], lower: f64::NEG_INFINITY, upper: r.uniform_in(0.0, 0.5), kind: RowKind::Constraint, sample: None });
    }
    let mu = r.uniform_in(0.5, 2.0);
    for j in 0..q {
        qp.rows.push(QpRow { theta: vec![(j as u32, 1.0)], aux: vec![], lower: -mu, upper: mu, kind: RowKind::Box, sample: None });
    }
    qp
}

fn dense_rows(qp: &EpigraphQp) -> Vec<Vec<f64>> {
    let n = qp.n_vars();
    qp.rows
        .iter()
        .map(|row| {
            let mut a = vec![0.0; n];
            for &(j, v) in &row.theta {
                a[j as usize] += v;
            }
            for &(j, v) in &row.aux {
                a[qp.n_theta + j as usize] += v;
            }
            a
        })
        .collect()
}

/// Exact optimum by enumerating active sets: every row is inactive, at its
/// lower or at its upper bound; each choice gives an equality-constrained QP
/// solved through its KKT system. The minimum over primal-feasible KKT points
/// is the optimum because the problem is convex and some basis of the optimal
/// active set yields a nonsingular KKT matrix.
pub fn enumerate_qp(qp: &EpigraphQp) -> (Vec<f64>, f64) {
    let n = qp.n_vars();
    let a = dense_rows(qp);
    let m = a.len();
    let mut choice = vec![0u8; m];
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let active: Vec<(usize, f64)> = (0..m)
            .filter_map(|i| match choice[i] {
                1 => Some((i, qp.rows[i].lower)),
                2 => Some((i, qp.rows[i].upper)),
                _ => None,
            })
            .collect();
        let ok = active.iter().all(|(_, b)| b.is_finite());
        if ok {
            let k = active.len();
            let mut kkt = DMatrix::<f64>::zeros(n + k, n + k);
            let mut rhs = DVector::<f64>::zeros(n + k);
            for j in 0..n {
                kkt[(j, j)] = qp.p_diag[j];
                rhs[j] = -qp.linear[j];
            }
            for (c, &(i, b)) in active.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + c, j)] = a[i][j];
                    kkt[(j, n + c)] = a[i][j];
                }
                rhs[n + c] = b;
            }
            let lu = kkt.clone().full_piv_lu();
            if lu.is_invertible() && lu.determinant().abs() > 1e-12 {
                if let Some(sol) = lu.solve(&rhs) {
                    let x: Vec<f64> = sol.iter().take(n).copied().collect();
                    if x.iter().all(|v| v.is_finite()) && qp.max_violation(&x) <= 1e-9 {
                        let obj = qp.objective(&x);
                        if best.as_ref().map_or(true, |(_, b)| obj < *b) {
                            best = Some((x, obj));
                        }
                    }
                }
            }
        }
        let mut i = 0;
        while i < m {
            choice[i] += 1;
            if choice[i] <= 2 {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
        if i == m {
            break;
        }
    }
    best.expect("a bounded feasible QP has a KKT point")
}
