use nalgebra::DMatrix;
use proptest::prelude::*;

use miqcr::bb::{branch_and_bound, BbOptions};
use miqcr::bundle::{DualSolution, StepKind};
use miqcr::instances::{
    brute_force_optimum, enumerate_feasible, evaluate_objective, generate_eiqp, generate_kcluster, load_instance, save_instance,
    to_canonical_json,
};
use miqcr::pipeline::cap_for;
use miqcr::reform::{check_equivalence, lambda_max, Arithmetic, VarKind};
use miqcr::relaxation::{descriptor, violation};
use miqcr::{build_base_relaxation, build_reformulation, compute_beta, ensure_concavity, BundleOptions, ConstraintKey, IntegerPoint, QpInstance};

fn kc_strategy(max_n: usize) -> impl Strategy<Value = QpInstance> {
    (5..=max_n, 0.2f64..=1.0, any::<u64>())
        .prop_flat_map(|(n, d, seed)| (Just(n), Just(d), 3..=n - 2, Just(seed)))
        .prop_map(|(n, d, k, seed)| generate_kcluster(n, d, k, seed).unwrap())
}

fn eiqp_strategy(max_n: usize) -> impl Strategy<Value = QpInstance> {
    (2..=max_n, any::<u64>()).prop_map(|(n, seed)| generate_eiqp(1, n, seed).unwrap().with_clipped_bounds(3).unwrap())
}

fn small_instance() -> impl Strategy<Value = QpInstance> {
    prop_oneof![kc_strategy(8), eiqp_strategy(4)]
}

fn random_dual(n: usize, m: usize) -> impl Strategy<Value = DualSolution> {
    let pairs = n * (n - 1) / 2;
    (
        0.0f64..5.0,
        proptest::collection::vec(-5.0f64..5.0, n),
        proptest::collection::vec(proptest::option::weighted(0.4, 0.0f64..4.0), 4 * pairs),
    )
        .prop_map(move |(alpha, lambda, fam)| {
            let mut dual = DualSolution::zero(n);
            dual.alpha = if m > 0 { alpha } else { 0.0 };
            dual.lambda = lambda;
            let mut idx = 0;
            for i in 0..n {
                for j in i + 1..n {
                    let mut agg = 0.0;
                    for t in 1..=4u8 {
                        if let Some(v) = fam[idx] {
                            dual.beta_families.push((i, j, t, v));
                            agg += if t <= 2 { v } else { -v };
                        }
                        idx += 1;
                    }
                    if agg != 0.0 {
                        dual.beta.push((i, j, agg));
                    }
                }
            }
            dual
        })
}

fn instance_with_dual() -> impl Strategy<Value = (QpInstance, DualSolution)> {
    small_instance().prop_flat_map(|inst| {
        let (n, m) = (inst.n(), inst.m());
        (Just(inst), random_dual(n, m))
    })
}

fn box_point(u: &[i64]) -> impl Strategy<Value = Vec<f64>> {
    u.iter().map(|&b| 0.0..=b as f64).collect::<Vec<_>>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generators_are_pure(n in 5usize..12, d in 0.1f64..=1.0, seed in any::<u64>(), class in 1u8..=2) {
        let k = (n / 2).max(3);
        prop_assert_eq!(generate_kcluster(n, d, k, seed).unwrap(), generate_kcluster(n, d, k, seed).unwrap());
        prop_assert_eq!(generate_eiqp(class, 4, seed).unwrap(), generate_eiqp(class, 4, seed).unwrap());
    }

    #[test]
    fn kcluster_structure(inst in kc_strategy(14)) {
        prop_assert_eq!(inst.m(), 1);
        prop_assert!(inst.u().iter().all(|&u| u == 1));
        for (&(i, j), &v) in inst.q() {
            prop_assert!(i < j);
            prop_assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn save_load_round_trip(inst in small_instance()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        save_instance(&inst, &path).unwrap();
        let back = load_instance(&path).unwrap();
        prop_assert_eq!(&back, &inst);
        let text = std::fs::read_to_string(&path).unwrap();
        let canon = to_canonical_json(&back);
        prop_assert_eq!(text.trim_end(), canon.trim_end());
    }

    #[test]
    fn brute_force_point_is_feasible(inst in small_instance()) {
        let (v, x) = brute_force_optimum(&inst, 1_000_000).unwrap();
        prop_assert!(inst.is_feasible(&x));
        prop_assert_eq!(evaluate_objective(&inst, &x).unwrap(), v);
    }

    #[test]
    fn mccormick_valid_at_rank_one_points(
        (u, x) in proptest::collection::vec(1i64..6, 2..6).prop_flat_map(|u| { let b = box_point(&u); (Just(u), b) })
    ) {
        let n = u.len();
        let xm = DMatrix::from_fn(n, n, |i, j| x[i] * x[j]);
        for i in 0..n {
            for j in i + 1..n {
                for t in 1..=4u8 {
                    let d = descriptor(&u, i, j, t).unwrap();
                    let h = violation(&d, &xm, &x);
                    prop_assert!(h <= 1e-9 * (1.0 + (u[i] * u[j]) as f64), "h = {} for ({}, {}, {})", h, i, j, t);
                }
            }
        }
    }

    #[test]
    fn squared_row_vanishes_at_feasible_points(inst in small_instance()) {
        let relax = build_base_relaxation(&inst).unwrap();
        let Some(k) = relax.row_of(ConstraintKey::SquaredEqualities) else { return Ok(()); };
        for x in enumerate_feasible(&inst, 1_000_000).unwrap().into_iter().take(20) {
            let z = relax.embed_point(&x.as_f64()).unwrap();
            let s = relax.slacks_for(&z);
            let row = &relax.base().rows[k];
            let res = relax.base().apply(&z, &s)[k] - row.rhs;
            prop_assert!(res.abs() <= 1e-9 * (1.0 + row.rhs.abs()), "residual {}", res);
        }
    }

    #[test]
    fn objective_embedding(inst in small_instance()) {
        let relax = build_base_relaxation(&inst).unwrap();
        let sign = inst.sense().sign();
        for x in enumerate_feasible(&inst, 1_000_000).unwrap().into_iter().take(20) {
            let z = relax.embed_point(&x.as_f64()).unwrap();
            let s = relax.slacks_for(&z);
            let val = relax.base().primal_objective(&z, &s);
            let f = evaluate_objective(&inst, &x).unwrap() * sign;
            prop_assert!((val - f).abs() <= 1e-9 * (1.0 + f.abs()), "{} vs {}", val, f);
        }
    }

    #[test]
    fn digits_round_trip(u in 1i64..200) {
        let n = 2;
        let q: std::collections::BTreeMap<(usize, usize), f64> = [((0, 1), 1.0)].into_iter().collect();
        let inst = QpInstance::new("d", miqcr::Sense::Max, n, q, vec![0.0; n], vec![], vec![], vec![u, u]).unwrap();
        let mut dual = DualSolution::zero(n);
        dual.beta.push((0, 1, 1.0));
        let miqp = build_reformulation(&inst, &dual, 0.0).unwrap();
        for v in 0..=u {
            let point = miqp.induced_point(&IntegerPoint(vec![v, 0]));
            let sum: i64 = miqp
                .variables
                .iter()
                .zip(&point)
                .filter_map(|(var, &p)| match var.kind {
                    VarKind::T { i: 0, k } => Some(p << k),
                    _ => None,
                })
                .sum();
            if u == 1 {
                let digits = miqp.variables.iter().filter(|var| matches!(var.kind, VarKind::T { .. })).count();
                prop_assert_eq!(digits, 0);
            } else {
                prop_assert_eq!(sum, v);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn concave_after_repair((inst, dual) in instance_with_dual()) {
        let miqp = build_reformulation(&inst, &dual, 0.0).unwrap();
        let miqp = ensure_concavity(miqp).unwrap();
        let eig = nalgebra::SymmetricEigen::new(miqp.hessian.clone()).eigenvalues.max();
        prop_assert!(eig <= 1e-8, "largest eigenvalue {}", eig);
        prop_assert!(lambda_max(&miqp.hessian).unwrap() <= 1e-8);
    }

    #[test]
    fn equivalence_for_arbitrary_duals((inst, dual) in instance_with_dual()) {
        let miqp = ensure_concavity(build_reformulation(&inst, &dual, 0.0).unwrap()).unwrap();
        for x in enumerate_feasible(&inst, 1_000_000).unwrap().into_iter().take(30) {
            prop_assert!(check_equivalence(&inst, &miqp, &x, Arithmetic::Rational).unwrap());
            prop_assert!(check_equivalence(&inst, &miqp, &x, Arithmetic::Float).unwrap());
        }
    }

    #[test]
    fn bb_matches_brute_force_for_arbitrary_duals((inst, dual) in instance_with_dual()) {
        let miqp = ensure_concavity(build_reformulation(&inst, &dual, 0.0).unwrap()).unwrap();
        let (opt, _) = brute_force_optimum(&inst, 1_000_000).unwrap();
        let rep = branch_and_bound(&miqp, &BbOptions::default()).unwrap();
        let best = rep.best_value.unwrap();
        prop_assert!((best - opt).abs() <= 1e-6 * (1.0 + opt.abs()), "{} vs {}", best, opt);
        let sign = inst.sense().sign();
        prop_assert!(rep.root_bound.unwrap() * sign >= opt * sign - 1e-6 * (1.0 + opt.abs()));
        for w in rep.incumbents.windows(2) {
            prop_assert!(w[1].1 * sign >= w[0].1 * sign);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bundle_invariants(inst in small_instance(), delta in prop_oneof![Just(0.1), Just(0.5), Just(1.0)]) {
        let relax = build_base_relaxation(&inst).unwrap();
        let p = cap_for(inst.n(), delta);
        let dual = compute_beta(&relax, p, &BundleOptions::binary()).unwrap();
        let (opt, _) = brute_force_optimum(&inst, 1_000_000).unwrap();
        let opt = opt * inst.sense().sign();
        prop_assert!(dual.beta_families.len() <= p);
        prop_assert!(dual.beta_families.iter().all(|f| f.3 > 0.0));
        let mut center = f64::INFINITY;
        for r in &dual.history {
            prop_assert!(r.value >= opt - 1e-6 * (1.0 + opt.abs()), "g = {} below {}", r.value, opt);
            if r.step == StepKind::Descent {
                prop_assert!(r.center_value <= center + 1e-9 * (1.0 + center.abs()));
            }
            if r.step != StepKind::Null {
                center = r.center_value;
            }
        }
    }
}
