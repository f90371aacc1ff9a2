use potwell::chart::ChartMap;
use potwell::flows::{check_morphism, flow_map_tol, integrate, torus_distance, TorusFlow};
use potwell::trig::TrigPoly;
use proptest::prelude::*;

fn coeff() -> impl Strategy<Value = f64> {
    (-10i32..=10).prop_map(|c| c as f64 / 10.0)
}

/// Degree-1 fields on the 2-torus plus a constant drift.
fn flow_strategy() -> impl Strategy<Value = TorusFlow> {
    prop::collection::vec((coeff(), coeff(), coeff()), 2).prop_map(|parts| {
        let comps = parts
            .iter()
            .enumerate()
            .map(|(i, &(c0, c, s))| {
                let mut k = vec![0i64; 2];
                k[1 - i] = 1;
                TrigPoly::from_terms(2, &[(vec![0, 0], c0, 0.0), (k.clone(), c, 0.0), (k, 0.0, s)])
            })
            .collect();
        TorusFlow::new(comps).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rotation_matches_exact_solution(a in -3.0f64..3.0, b in -3.0f64..3.0, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let t_end = 2.0;
        let traj = integrate(&TorusFlow::rotation(&[a, b]), &[x, y], t_end, 1e-3).unwrap();
        let exact = [x + a * t_end, y + b * t_end];
        prop_assert!(torus_distance(traj.last(), &exact) < 1e-10 * t_end);
    }

    #[test]
    fn bryant_field_never_vanishes_along_paths(x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let flow = TorusFlow::bryant();
        let traj = integrate(&flow, &[x, y], 3.0, 1e-3).unwrap();
        for p in &traj.points {
            let v = flow.eval_field(p).unwrap();
            prop_assert!(v[0].hypot(v[1]) > 0.0);
        }
    }

    #[test]
    fn flow_map_is_a_semigroup(x in 0.0f64..1.0, y in 0.0f64..1.0, t in 0.0f64..1.0, s in 0.0f64..1.0) {
        let flow = TorusFlow::bryant();
        let tol = 1e-10;
        let direct = flow_map_tol(&flow, t + s, &[x, y], tol).unwrap();
        let mid = flow_map_tol(&flow, s, &[x, y], tol).unwrap();
        let composed = flow_map_tol(&flow, t, &mid, tol).unwrap();
        prop_assert!(torus_distance(&direct, &composed) < 10.0 * tol);
    }

    #[test]
    fn identity_is_an_exact_morphism(flow in flow_strategy()) {
        let r = check_morphism(&ChartMap::identity(2), &flow, &flow, 8, 0.0).unwrap();
        prop_assert_eq!(r.max_residual, 0.0);
        prop_assert!(r.pass);
    }
}
