use padr::core::{RngHandle, Stream};
use padr::demand::{gen_dataset, DemandModel};
use padr::oracle::{capacity_cost, capacity_cost_inv, gaussian_newsvendor, CapacityKind, CostSetup};
use proptest::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn models() -> Vec<DemandModel> {
    vec![
        DemandModel::MaxaffineBasic { k: 1.0 },
        DemandModel::MaxaffineSparse,
        DemandModel::MaxaffineDense,
        DemandModel::SineSeasonal,
        DemandModel::TwoProductLinear { dense: false },
        DemandModel::TwoProductLinear { dense: true },
    ]
}

#[test]
fn newsvendor_oracle_is_the_gaussian_quantile() {
    let setup = CostSetup::Newsvendor { cb: 8.0, ch: 2.0 };
    let model = DemandModel::MaxaffineBasic { k: 1.0 };
    let x = [0.5, -0.2];
    let z = setup.simopt(&model, &x, &RngHandle::new(0, Stream::Data)).unwrap();
    let n = Normal::new(0.0, 1.0).unwrap();
    // max{2.5 + 2, −5 − 1, 7.5} + 10 = 17.5
    assert!((z[0] - (17.5 + n.inverse_cdf(0.8))).abs() < 1e-12);
    let expected = 10.0 * n.pdf(n.inverse_cdf(0.8));
    let got = gaussian_newsvendor(8.0, 2.0, 17.5, z[0]);
    // statrs evaluates Φ to about 1e-10.
    assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
    assert!((expected - 2.7996).abs() < 1e-3);
}

#[test]
fn simopt_cost_matches_closed_form() {
    // Empirical oracle cost on 10⁴ samples is within two standard errors of
    // (c_b + c_h)·φ(Φ⁻¹(τ)).
    let setup = CostSetup::Newsvendor { cb: 8.0, ch: 2.0 };
    let model = DemandModel::MaxaffineBasic { k: 1.0 };
    let data = gen_dataset(&model, 10_000, 2, &RngHandle::new(5, Stream::Data)).unwrap();
    let rng = RngHandle::new(5, Stream::Data);
    let costs: Vec<f64> = (0..data.n())
        .map(|s| setup.cost(&setup.simopt(&model, data.x(s), &rng).unwrap(), data.y(s)))
        .collect();
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let se = (costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let nd = Normal::new(0.0, 1.0).unwrap();
    let exact = 10.0 * nd.pdf(nd.inverse_cdf(0.8));
    assert!((mean - exact).abs() <= 2.0 * se, "mean {mean}, exact {exact}, se {se}");
}

#[test]
fn capacity_cost_is_continuous_and_inverted() {
    assert_eq!(capacity_cost(0.0), 0.0);
    assert!((capacity_cost(2.0) - 2.0).abs() < 1e-12);
    assert!((capacity_cost(74.0) - 45.2).abs() < 1e-12);
    for z in [0.0, 1.0, 2.0, 10.0, 74.0, 100.0] {
        assert!((capacity_cost_inv(capacity_cost(z)) - z).abs() < 1e-9);
    }
}

#[test]
fn capacity_objective_oracle_beats_neighbours() {
    let setup = CostSetup::CapacityCostObjective { cb: 5.0, ch: 5.0 };
    let model = DemandModel::MaxaffineBasic { k: 1.0 };
    for x in [[0.0, 0.0], [0.9, -0.3], [-0.4, 0.8], [-0.6, -0.6]] {
        let z = setup.simopt(&model, &x, &RngHandle::new(0, Stream::Data)).unwrap()[0];
        let mu = model.mean(&x)[0];
        let f = |z: f64| gaussian_newsvendor(5.0, 5.0, mu, z) + capacity_cost(z);
        for t in [-0.5, -0.05, 0.05, 0.5] {
            if z + t >= 0.0 {
                assert!(f(z) <= f(z + t) + 1e-12, "x {x:?}: z {z}, t {t}");
            }
        }
    }
}

#[test]
fn two_product_oracle_respects_capacity() {
    let model = DemandModel::TwoProductLinear { dense: false };
    for (setup, tight) in [
        (CostSetup::TwoProduct { cb: [8.0, 2.0], ch: [2.0, 8.0], c0: 60.0, constraint: CapacityKind::Linear }, 0.9),
        (CostSetup::TwoProduct { cb: [7.0, 7.0], ch: [3.0, 3.0], c0: 50.0, constraint: CapacityKind::CapacityCost }, 0.9),
    ] {
        let rng = RngHandle::new(3, Stream::Data);
        let z = setup.simopt(&model, &[tight, 0.0], &rng).unwrap();
        assert!(setup.is_feasible(&z), "{z:?}");
        assert!(z.iter().all(|&v| v >= 0.0));
        let z = setup.simopt(&model, &[-0.9, 0.0], &rng).unwrap();
        assert!(setup.is_feasible(&z));
    }
}

#[test]
fn two_product_saa_matches_a_fine_grid() {
    let setup = CostSetup::TwoProduct { cb: [8.0, 2.0], ch: [2.0, 8.0], c0: 60.0, constraint: CapacityKind::Linear };
    let y1 = [40.0, 42.0, 44.5, 39.0, 41.2];
    let y2 = [30.0, 31.5, 29.0, 33.0, 28.7];
    let z = setup.saa_two(&y1, &y2);
    let obj = |a: f64, b: f64| {
        y1.iter().zip(&y2).map(|(&u, &v)| setup.cost(&[a, b], &[u, v])).sum::<f64>() / y1.len() as f64
    };
    let mut best = f64::INFINITY;
    for i in 0..=600 {
        let a = i as f64 * 0.1;
        for j in 0..=600 {
            let b = j as f64 * 0.1;
            if a + b <= 60.0 + 1e-9 {
                best = best.min(obj(a, b));
            }
        }
    }
    assert!(setup.is_feasible(&z));
    assert!(obj(z[0], z[1]) <= best + 1e-9, "{} vs grid {best}", obj(z[0], z[1]));
}

#[test]
fn projection_of_infeasible_decisions() {
    let setup = CostSetup::TwoProduct { cb: [8.0, 2.0], ch: [2.0, 8.0], c0: 60.0, constraint: CapacityKind::Linear };
    let z = setup.evaluated_decision(&[40.0, 30.0]).unwrap();
    assert!((z[0] - 35.0).abs() < 1e-6 && (z[1] - 25.0).abs() < 1e-6, "{z:?}");
    let ncvx = CostSetup::TwoProduct { cb: [7.0, 7.0], ch: [3.0, 3.0], c0: 50.0, constraint: CapacityKind::CapacityCost };
    assert_eq!(ncvx.evaluated_decision(&[80.0, 80.0]).unwrap(), vec![80.0, 80.0]);
}

#[test]
fn plug_in_decisions() {
    assert_eq!(CostSetup::Newsvendor { cb: 8.0, ch: 2.0 }.plug_in(&[-3.0]), vec![0.0]);
    assert_eq!(CostSetup::Newsvendor { cb: 8.0, ch: 2.0 }.plug_in(&[12.0]), vec![12.0]);
    let two = CostSetup::TwoProduct { cb: [8.0, 2.0], ch: [2.0, 8.0], c0: 60.0, constraint: CapacityKind::Linear };
    let z = two.plug_in(&[20.0, 15.0]);
    assert_eq!(z, vec![20.0, 15.0]);
    let z = two.plug_in(&[40.0, 40.0]);
    assert!(two.is_feasible(&z));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn demand_means_are_at_least_five(xs in prop::collection::vec(-1.0f64..=1.0, 50)) {
        for m in models() {
            for v in m.mean(&xs) {
                prop_assert!(v >= 5.0, "{m:?}: {v}");
            }
        }
    }

    #[test]
    fn generated_prefixes_agree(seed in 0u64..1000, n in 1usize..40) {
        let m = DemandModel::SineSeasonal;
        let rng = RngHandle::new(seed, Stream::Data);
        let small = gen_dataset(&m, n, 3, &rng).unwrap();
        let large = gen_dataset(&m, n + 5, 3, &rng).unwrap();
        for s in 0..n {
            prop_assert_eq!(small.x(s), large.x(s));
            prop_assert_eq!(small.y(s), large.y(s));
        }
        for s in 0..n {
            prop_assert!(small.x(s).iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
