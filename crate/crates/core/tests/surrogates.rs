mod support;

use std::sync::Arc;

use padr_core::cost::{MonotoneParts, SmoothLoss, SquaredLoss};
use padr_core::diagnostics::check_surrogation;
use padr_core::padr::{argmax_mapping, build_inner_surrogates, eval_output};
use padr_core::penalty::build_penalized;
use padr_core::rng::{RngHandle, Stream};
use padr_core::{
    random_init, ConstraintFn, ConstraintSpec, ConvexSurrogate, CostSpec, Dataset, HypothesisConfig, LowestOuter,
    Problem, Theta,
};

fn touching_surrogate(prob: &Problem<'_>, theta: &Theta, s: usize) -> ConvexSurrogate {
    let mapping = argmax_mapping(theta, prob.data(), &[s]).unwrap();
    let inner = build_inner_surrogates(theta, prob.data(), &mapping, &[s]).unwrap();
    let reference: Arc<[f64]> = Arc::from(theta.as_slice());
    prob.surrogate(theta, &reference, &inner, 0, 0.0, &mut LowestOuter).unwrap()
}

fn suite(prob: &Problem<'_>, label: &str) {
    let cfg = *prob.cfg();
    for (k, eps) in [0.0, 0.5, 5.0, 50.0].into_iter().enumerate() {
        let theta = random_init(&cfg, &RngHandle::new(k as u64, Stream::Init));
        let rep = check_surrogation(prob, &theta, eps, 100, &RngHandle::new(k as u64, Stream::Index)).unwrap();
        assert!(rep.p1_gap <= 1e-12, "{label}: P1 gap {}", rep.p1_gap);
        assert!(rep.p2_violation <= 1e-9, "{label}: P2 violation {}", rep.p2_violation);
        assert!(rep.p3_violation <= 1e-9, "{label}: P3 violation {}", rep.p3_violation);
    }
}

#[test]
fn newsvendor_surrogates() {
    let data = support::basic_data(50, 1.0, 1);
    let cfg = HypothesisConfig::new(1, 3, 3, 2, 50.0).unwrap();
    suite(&Problem::new(&data, cfg, CostSpec::newsvendor(8.0, 2.0)).unwrap(), "newsvendor");
}

#[test]
fn capacity_cost_surrogates() {
    let data = support::basic_data(50, 1.0, 2);
    let cfg = HypothesisConfig::new(1, 2, 2, 2, 50.0).unwrap();
    suite(&Problem::new(&data, cfg, CostSpec::newsvendor(8.0, 2.0).with_capacity_cost()).unwrap(), "capacity");
}

#[test]
fn squared_loss_surrogates() {
    let data = support::basic_data(50, 1.0, 3);
    let cfg = HypothesisConfig::new(1, 3, 0, 2, 50.0).unwrap();
    suite(&Problem::new(&data, cfg, CostSpec::squared_loss()).unwrap(), "squared");
}

#[test]
fn penalized_surrogates() {
    let data = support::basic_data(50, 1.0, 4);
    let cfg = HypothesisConfig::new(1, 2, 2, 2, 50.0).unwrap();
    let cons = ConstraintSpec::new(
        vec![ConstraintFn::linear_capacity(1, 15.0), ConstraintFn::capacity_cost_budget(1, 12.0)],
        0.5,
        3.0,
    );
    let prob = Problem::new(&data, cfg, CostSpec::newsvendor(8.0, 2.0)).unwrap().with_constraints(cons).unwrap();
    suite(&prob, "penalized");
}

#[test]
fn affine_inner_surrogate_is_exact() {
    // K1 = K2 = 1: f is affine in θ, so the Case-1 surrogate equals the cost.
    let data = support::basic_data(10, 1.0, 5);
    let cfg = HypothesisConfig::new(1, 1, 1, 2, 50.0).unwrap();
    let prob = Problem::new(&data, cfg, CostSpec::newsvendor(8.0, 2.0)).unwrap();
    let theta = random_init(&cfg, &RngHandle::new(5, Stream::Init));
    for s in 0..10 {
        let sur = touching_surrogate(&prob, &theta, s);
        for k in 0..20 {
            let t = random_init(&cfg, &RngHandle::new(100 + k, Stream::Init));
            let (a, b) = (sur.value(t.as_slice()), prob.sample_cost(&t, s));
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }
}

/// `φ↑(z) = max{z − y, 0}²`, `φ↓ ≡ 0`.
struct SquaredShortfall;

impl MonotoneParts for SquaredShortfall {
    fn increasing(&self, z: &[f64], y: &[f64]) -> f64 {
        let v = (z[0] - y[0]).max(0.0);
        v * v
    }
    fn increasing_grad(&self, z: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * (z[0] - y[0]).max(0.0);
    }
    fn decreasing(&self, _z: &[f64], _y: &[f64]) -> f64 {
        0.0
    }
    fn decreasing_grad(&self, _z: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
}

#[test]
fn monotone_surrogate() {
    let data = support::basic_data(20, 1.0, 6);
    let cost = CostSpec::Monotone(Arc::new(SquaredShortfall));

    // Affine inner: exact.
    let cfg = HypothesisConfig::new(1, 1, 0, 2, 20.0).unwrap();
    let prob = Problem::new(&data, cfg, cost.clone()).unwrap();
    let theta = random_init(&cfg, &RngHandle::new(1, Stream::Init));
    let sur = touching_surrogate(&prob, &theta, 0);
    for k in 0..20 {
        let t = random_init(&cfg, &RngHandle::new(50 + k, Stream::Init));
        assert!((sur.value(t.as_slice()) - prob.sample_cost(&t, 0)).abs() <= 1e-9);
    }

    // General inner: majorization, then subgradients against central differences.
    let cfg = HypothesisConfig::new(1, 3, 2, 2, 20.0).unwrap();
    let prob = Problem::new(&data, cfg, cost).unwrap();
    let rep = check_surrogation(&prob, &random_init(&cfg, &RngHandle::new(2, Stream::Init)), 1.0, 200, &RngHandle::new(2, Stream::Index))
        .unwrap();
    assert!(rep.p2_violation <= 1e-9 && rep.p1_gap <= 1e-12 && rep.p3_violation <= 1e-9, "{rep:?}");

    let mut checked = 0;
    let mut k = 0u64;
    while checked < 20 {
        k += 1;
        let theta = random_init(&cfg, &RngHandle::new(k, Stream::Init));
        let s = (k % 20) as usize;
        let sur = touching_surrogate(&prob, &theta, s);
        let t = random_init(&cfg, &RngHandle::new(1000 + k, Stream::Init));
        let g = sur.subgradient(t.as_slice());
        let h = 1e-6;
        let mut num = vec![0.0; g.len()];
        let mut smooth = true;
        for j in 0..g.len() {
            let mut a = t.as_slice().to_vec();
            let mut b = a.clone();
            a[j] += h;
            b[j] -= h;
            num[j] = (sur.value(&a) - sur.value(&b)) / (2.0 * h);
            // A kink inside the stencil shows up as one-sided slopes that differ.
            let fwd = (sur.value(&a) - sur.value(t.as_slice())) / h;
            let bwd = (sur.value(t.as_slice()) - sur.value(&b)) / h;
            smooth &= (fwd - bwd).abs() <= 1e-4 * (1.0 + fwd.abs());
        }
        if !smooth {
            continue;
        }
        let err: f64 = g.iter().zip(&num).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-4 * scale.max(1.0), "relative subgradient error {}", err / scale.max(1.0));
        checked += 1;
    }
}

#[test]
fn smooth_affine_inner_collapses() {
    // K1 = K2 = 1: surrogate = φ(z′) + ∇φ(z′)(f − z′) + ½ L L_f² ‖θ − θ′‖².
    let data = support::basic_data(10, 1.0, 7);
    let cfg = HypothesisConfig::new(1, 1, 1, 2, 50.0).unwrap();
    let prob = Problem::new(&data, cfg, CostSpec::squared_loss()).unwrap();
    let theta = random_init(&cfg, &RngHandle::new(7, Stream::Init));
    let lf = prob.lipschitz_inner();
    for s in 0..10 {
        let sur = touching_surrogate(&prob, &theta, s);
        let y = data.y(s);
        let z0 = eval_output(&theta, 0, data.x(s));
        let mut g = [0.0];
        SquaredLoss.gradient(&[z0], y, &mut g);
        for k in 0..10 {
            let t = random_init(&cfg, &RngHandle::new(200 + k, Stream::Init));
            let z = eval_output(&t, 0, data.x(s));
            let d2: f64 = t.as_slice().iter().zip(theta.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
            let expect = SquaredLoss.value(&[z0], y) + g[0] * (z - z0) + 0.5 * 2.0 * lf * lf * d2;
            assert!((sur.value(t.as_slice()) - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
    }
}

#[test]
fn smooth_gradient_matches_chain_rule() {
    let data = support::basic_data(10, 1.0, 8);
    let cfg = HypothesisConfig::new(1, 3, 2, 2, 50.0).unwrap();
    let prob = Problem::new(&data, cfg, CostSpec::squared_loss()).unwrap();
    for k in 0..10u64 {
        let theta = random_init(&cfg, &RngHandle::new(300 + k, Stream::Init));
        let s = k as usize;
        let sur = touching_surrogate(&prob, &theta, s);
        let g = sur.subgradient(theta.as_slice());
        for j in 0..g.len() {
            let h = 1e-6;
            let mut a = theta.as_slice().to_vec();
            let mut b = a.clone();
            a[j] += h;
            b[j] -= h;
            let fa = prob.sample_cost(&Theta::from_flat_clamped(cfg, a).unwrap(), s);
            let fb = prob.sample_cost(&Theta::from_flat_clamped(cfg, b).unwrap(), s);
            let num = (fa - fb) / (2.0 * h);
            assert!((g[j] - num).abs() <= 1e-4 * (1.0 + num.abs()), "coordinate {j}: {} vs {num}", g[j]);
        }
    }
}

#[test]
fn penalty_examples() {
    let cons = ConstraintSpec::new(vec![ConstraintFn::linear_capacity(2, 60.0)], 1.0, 10.0);
    let pen = build_penalized(CostSpec::newsvendor_multi(&[(8.0, 2.0), (2.0, 8.0)]), cons.clone()).unwrap();
    // Decisions equal to outcomes: zero base cost, penalty 10·max{71 − 60, 0}.
    assert_eq!(pen.eval(&[40.0, 30.0], &[40.0, 30.0]).unwrap(), 110.0);
    let free = ConstraintSpec { lambda: 0.0, ..cons };
    let base = build_penalized(CostSpec::newsvendor_multi(&[(8.0, 2.0), (2.0, 8.0)]), free).unwrap();
    assert_eq!(base.eval(&[40.0, 30.0], &[35.0, 20.0]).unwrap(), 2.0 * 5.0 + 8.0 * 10.0);

    // λ = 0: the penalized training objective is the base cost.
    let data = Dataset::new(0, 2, vec![], vec![10.0, 20.0, 30.0, 5.0]).unwrap();
    let cfg = HypothesisConfig::new(2, 1, 0, 0, 100.0).unwrap();
    let cost = CostSpec::newsvendor_multi(&[(8.0, 2.0), (2.0, 8.0)]);
    let cons = ConstraintSpec::new(vec![ConstraintFn::linear_capacity(2, 10.0)], 0.5, 0.0);
    let prob = Problem::new(&data, cfg, cost).unwrap().with_constraints(cons).unwrap();
    for k in 0..10 {
        let t = random_init(&cfg, &RngHandle::new(k, Stream::Init));
        assert_eq!(prob.objective(&t).unwrap(), prob.base_cost(&t).unwrap());
    }
}
