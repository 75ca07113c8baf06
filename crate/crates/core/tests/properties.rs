use proptest::prelude::*;

use padr_core::padr::{argmax_mapping, build_inner_surrogates, eval_output};
use padr_core::smm::split_indices;
use padr_core::{erm_cost, eval_padr, CostSpec, Dataset, HypothesisConfig, OutputParams, Theta};

fn cfg_strategy() -> impl Strategy<Value = HypothesisConfig> {
    (1usize..=2, 1usize..=3, 0usize..=2, 0usize..=3).prop_map(|(d, k1, k2, p)| HypothesisConfig::new(d, k1, k2, p, 5.0).unwrap())
}

fn theta_and_x() -> impl Strategy<Value = (Theta, Vec<f64>)> {
    cfg_strategy().prop_flat_map(|cfg| {
        (prop::collection::vec(-5.0..5.0f64, cfg.q()), prop::collection::vec(-3.0..3.0f64, cfg.p))
            .prop_map(move |(v, x)| (Theta::from_flat(cfg, v).unwrap(), x))
    })
}

fn brute_force(theta: &Theta, x: &[f64]) -> Vec<f64> {
    let lin = |s: &[f64], c: f64| s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c;
    theta
        .to_parts()
        .iter()
        .map(|o| {
            let g = o.alpha.iter().zip(&o.a).map(|(s, &c)| lin(s, c)).fold(f64::NEG_INFINITY, f64::max);
            let h = o.beta.iter().zip(&o.b).map(|(s, &c)| lin(s, c)).fold(f64::NEG_INFINITY, f64::max);
            g - if o.beta.is_empty() { 0.0 } else { h }
        })
        .collect()
}

proptest! {
    #[test]
    fn eval_matches_brute_force((theta, x) in theta_and_x()) {
        let z = eval_padr(&theta, &x).unwrap();
        let expect = brute_force(&theta, &x);
        for (a, b) in z.iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn parts_round_trip((theta, _x) in theta_and_x()) {
        let back = Theta::from_parts(*theta.cfg(), &theta.to_parts()).unwrap();
        prop_assert_eq!(back, theta);
    }

    #[test]
    fn piece_order_is_irrelevant((theta, x) in theta_and_x(), shift in 0usize..3) {
        let parts: Vec<OutputParams> = theta
            .to_parts()
            .into_iter()
            .map(|mut o| {
                let k1 = o.alpha.len();
                o.alpha.rotate_left(shift % k1);
                o.a.rotate_left(shift % k1);
                if !o.beta.is_empty() {
                    let k2 = o.beta.len();
                    o.beta.reverse();
                    o.b.reverse();
                    o.beta.rotate_left(shift % k2);
                    o.b.rotate_left(shift % k2);
                }
                o
            })
            .collect();
        let permuted = Theta::from_parts(*theta.cfg(), &parts).unwrap();
        prop_assert_eq!(eval_padr(&theta, &x).unwrap(), eval_padr(&permuted, &x).unwrap());
    }

    #[test]
    fn linear_rule_is_a_special_case(
        slopes in prop::collection::vec(-4.0..4.0f64, 3),
        icpt in -4.0..4.0f64,
        x in prop::collection::vec(-3.0..3.0f64, 3),
    ) {
        let mut v = slopes.clone();
        v.push(icpt);
        let theta = Theta::from_flat(HypothesisConfig::new(1, 1, 0, 3, 5.0).unwrap(), v).unwrap();
        let direct = slopes.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + icpt;
        prop_assert!((eval_padr(&theta, &x).unwrap()[0] - direct).abs() <= 1e-12);
    }

    #[test]
    fn inner_forms_sandwich_the_rule((theta, x) in theta_and_x(), v2 in prop::collection::vec(-5.0..5.0f64, 64)) {
        // Upper surrogate of f above f, lower surrogate below, both exact at θ′.
        let cfg = *theta.cfg();
        let data = Dataset::new(cfg.p, 1, x.clone(), vec![0.0]).unwrap();
        let mapping = argmax_mapping(&theta, &data, &[0]).unwrap();
        let inner = build_inner_surrogates(&theta, &data, &mapping, &[0]).unwrap();
        let other = Theta::from_flat(cfg, v2[..cfg.q()].to_vec()).unwrap();
        for i in 0..cfg.d {
            let f0 = eval_output(&theta, i, &x);
            prop_assert!((inner.upper_value(0, i, theta.as_slice()) - f0).abs() <= 1e-12 * (1.0 + f0.abs()));
            prop_assert!((inner.lower_value(0, i, theta.as_slice()) - f0).abs() <= 1e-12 * (1.0 + f0.abs()));
            let f = eval_output(&other, i, &x);
            prop_assert!(inner.upper_value(0, i, other.as_slice()) >= f - 1e-9);
            prop_assert!(inner.lower_value(0, i, other.as_slice()) <= f + 1e-9);
        }
    }

    #[test]
    fn erm_cost_scales_linearly(
        ys in prop::collection::vec(0.0..20.0f64, 1..20),
        z in -5.0..5.0f64,
        c in 0.1..10.0f64,
    ) {
        let data = Dataset::new(0, 1, vec![], ys).unwrap();
        let theta = Theta::from_flat(HypothesisConfig::new(1, 1, 0, 0, 5.0).unwrap(), vec![z]).unwrap();
        let base = CostSpec::newsvendor(8.0, 2.0);
        let a = erm_cost(&theta, &data, &base).unwrap();
        let b = erm_cost(&theta, &data, &base.scaled(c).unwrap()).unwrap();
        prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + b.abs()));
    }

    #[test]
    fn clamping_projects_onto_the_box(v in prop::collection::vec(-20.0..20.0f64, 3)) {
        let cfg = HypothesisConfig::new(1, 1, 0, 2, 5.0).unwrap();
        let once = Theta::from_flat_clamped(cfg, v).unwrap();
        prop_assert!(once.in_box());
        let twice = Theta::from_flat_clamped(cfg, once.as_slice().to_vec()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn split_partitions_rows(n in 2usize..200, frac in 0.05..0.9f64, seed in any::<u64>()) {
        let (train, val) = split_indices(n, frac, seed);
        prop_assert!(!train.is_empty() && !val.is_empty());
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
