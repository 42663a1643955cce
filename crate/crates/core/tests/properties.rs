use proptest::prelude::*;
use sparselab::dyadic::{dyadic_maximal, weighted_dyadic_maximal, Cube, Grid, StepFunction};
use sparselab::lab::{ExperimentConfig, ExponentSpec, WeightSpec};
use sparselab::normest::{dual_extremal, power_iteration_with, proof_step_audit, Averaging, EstimatorSettings};
use sparselab::orlicz::{luxemburg_average, YoungFunction};
use sparselab::sparse::{apply_sparse, apply_sparse_r, generate_family, FamilyKind, SparseFamily};
use sparselab::weights::{
    ainfty_exp_table, ap_table, mixed_constant, Exponents, FactorKind, FactorSpec, Weight,
};

fn leaves(depth: u32, lo: f64, hi: f64) -> impl Strategy<Value = StepFunction> {
    prop::collection::vec(lo..hi, 1usize << depth).prop_map(move |v| StepFunction::new(depth, v).unwrap())
}

fn weight(depth: u32) -> impl Strategy<Value = Weight> {
    prop::collection::vec(-2.0f64..2.0, 1usize << depth)
        .prop_map(move |logs| Weight::from_values(depth, logs.into_iter().map(f64::exp).collect()).unwrap())
}

fn family(depth: u32) -> impl Strategy<Value = SparseFamily> {
    (any::<u64>(), 0.05f64..1.0).prop_map(move |(seed, keep)| {
        generate_family(FamilyKind::Random { seed, keep }, Grid::new(depth).unwrap()).unwrap()
    })
}

fn integral(f: &StepFunction) -> f64 {
    f.integral(&Cube::ROOT).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serde_round_trips(f in leaves(4, 0.0, 10.0), w in weight(4), s in family(4)) {
        let back: StepFunction = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        prop_assert_eq!(back, f);
        let back: Weight = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        prop_assert_eq!(back.values(), w.values());
        let back: SparseFamily = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn config_round_trips(depth in 1u32..12, p in 1.2f64..4.0, frac in 0.0f64..0.9, seed in any::<u64>(), a in -0.9f64..3.0) {
        let q = 1.0 + frac * (p - 1.0);
        let cfg = ExperimentConfig {
            depth,
            exponents: vec![ExponentSpec { p, q, r: vec![] }],
            weights: vec![WeightSpec::Power { a }, WeightSpec::Martingale { seed, delta: 0.3 }],
            ..ExperimentConfig::battery()
        };
        prop_assert!(cfg.validate().is_ok());
        prop_assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn jensen_orderings_hold_on_every_cube(w in weight(5)) {
        let exp = ainfty_exp_table(&w);
        for p in [1.0, 1.5, 2.0, 3.0] {
            let ap = ap_table(&w, p).unwrap();
            for (cube, e) in exp.iter() {
                prop_assert!(e >= 1.0 - 1e-12);
                prop_assert!(e <= ap.get(&cube) * (1.0 + 1e-12));
            }
        }
        for cube in w.grid().cubes() {
            let geo = w.log_average(&cube).unwrap().exp() * cube.measure();
            prop_assert!(geo <= w.mass(&cube).unwrap() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn mixed_constant_below_product_of_suprema(w in weight(5), p in 1.2f64..4.0, frac in 0.0f64..0.95) {
        let q = 1.0 + frac * (p - 1.0);
        let e = Exponents::new(p, q).unwrap();
        let mixed = mixed_constant(&w, &e.theorem_factors()).unwrap().value;
        let aq = mixed_constant(&w, &[FactorSpec::new(FactorKind::Ap(q), 1.0).unwrap()]).unwrap().value;
        let aexp = mixed_constant(&w, &[FactorSpec::new(FactorKind::AinftyExp, 1.0).unwrap()]).unwrap().value;
        prop_assert!(mixed <= aq.powf(1.0 / p) * aexp.powf(1.0 / e.p_prime()) * (1.0 + 1e-12));
    }

    #[test]
    fn sparse_operator_is_self_adjoint(f in leaves(5, 0.0, 5.0), g in leaves(5, 0.0, 5.0), s in family(5)) {
        let lhs = integral(&apply_sparse(&f, &s).unwrap().mul(&g).unwrap());
        let rhs = integral(&f.mul(&apply_sparse(&g, &s).unwrap()).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn power_averages_dominate(f in leaves(5, 0.0, 5.0), s in family(5), r in 1.0f64..3.0) {
        let plain = apply_sparse(&f, &s).unwrap();
        let powered = apply_sparse_r(&f, &s, r).unwrap();
        for (a, b) in plain.values().iter().zip(powered.values()) {
            prop_assert!(*a <= b * (1.0 + 1e-12) + 1e-12);
        }
        let one = apply_sparse_r(&f, &s, 1.0).unwrap();
        for (a, b) in plain.values().iter().zip(one.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn greedy_check_is_dual_to_packing(s in family(6)) {
        let lambda = s.carleson_packing_constant();
        prop_assert!(s.verify_sparse(1.0 / lambda).unwrap().ok);
        let above = 1.0 / lambda * (1.0 + 1e-8);
        if above <= 1.0 {
            prop_assert!(!s.verify_sparse(above).unwrap().ok);
        }
        prop_assert!(s.gamma() <= 1.0 / lambda * (1.0 + 1e-12));
    }

    #[test]
    fn maximal_functions_dominate(f in leaves(5, 0.0, 5.0), w in weight(5)) {
        let m = dyadic_maximal(&f, None).unwrap();
        let one = StepFunction::constant(f.grid(), 1.0).unwrap();
        prop_assert_eq!(weighted_dyadic_maximal(&f, &one).unwrap(), m.clone());
        let mw = weighted_dyadic_maximal(&f, w.as_function()).unwrap();
        for ((v, a), b) in f.values().iter().zip(m.values()).zip(mw.values()) {
            prop_assert!(a >= v && *b >= v * (1.0 - 1e-15));
        }
    }

    #[test]
    fn luxemburg_power_means_increase(f in leaves(4, 0.01, 5.0), s1 in 1.0f64..4.0, ds in 0.0f64..4.0, level in 0u32..=4) {
        let cube = Cube::new(level, 0).unwrap();
        let low = luxemburg_average(&f, &cube, YoungFunction::power(s1).unwrap()).unwrap();
        let high = luxemburg_average(&f, &cube, YoungFunction::power(s1 + ds).unwrap()).unwrap();
        let sup = luxemburg_average(&f, &cube, YoungFunction::EssSup).unwrap();
        prop_assert!(low <= high * (1.0 + 1e-12));
        prop_assert!(high <= sup * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn audit_holds_on_random_instances(w in weight(5), s in family(5), p in 1.3f64..4.0, frac in 0.0f64..0.9, use_r in any::<bool>(), seed in any::<u64>()) {
        let q = 1.0 + frac * (p - 1.0);
        let mut e = Exponents::new(p, q).unwrap();
        if use_r {
            e = e.with_r((1.0 + p / q) / 2.0).unwrap();
        }
        let op = Averaging::for_exponents(&e);
        let settings = EstimatorSettings { restarts: 2, iters: 200, seed, ..Default::default() };
        let est = power_iteration_with(op, &s, &w, p, &settings).unwrap();
        let g = dual_extremal(&op.apply(&est.certificate, &s).unwrap(), &w, p).unwrap();
        let report = proof_step_audit(&est.certificate, &g, &s, &w, &e).unwrap();
        prop_assert!(report.passes(), "{:?}", report.failures());
    }
}
