use potwell::flows::TorusFlow;
use potwell::hamiltonian::{
    cotangent_lift, integrate_nlw, integrate_well, well_step, NlwState, Potential, Scheme, WellState,
};
use proptest::prelude::*;

fn one_step(v: &Potential, z: &[f64], dt: f64) -> Vec<f64> {
    let m = z.len() / 2;
    let mut s = WellState::new(z[..m].to_vec(), z[m..].to_vec()).unwrap();
    well_step(v, &mut s, dt, Scheme::Verlet);
    s.q.into_iter().chain(s.p).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn leapfrog_step_is_symplectic(z in prop::collection::vec(-1.5f64..1.5, 4)) {
        let v = Potential::quartic(2);
        let (n, h, dt) = (4, 1e-6, 1e-2);
        // jac[i][j] = d out_i / d z_j by central differences.
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let (mut up, mut down) = (z.clone(), z.clone());
            up[j] += h;
            down[j] -= h;
            let (fu, fd) = (one_step(&v, &up, dt), one_step(&v, &down, dt));
            for i in 0..n {
                jac[i][j] = (fu[i] - fd[i]) / (2.0 * h);
            }
        }
        let omega = |i: usize, j: usize| -> f64 {
            match (i < 2, j < 2) {
                (true, false) if j == i + 2 => 1.0,
                (false, true) if i == j + 2 => -1.0,
                _ => 0.0,
            }
        };
        for a in 0..n {
            for b in 0..n {
                let mut x = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        x += jac[i][a] * omega(i, j) * jac[j][b];
                    }
                }
                prop_assert!((x - omega(a, b)).abs() < 1e-6, "({a},{b}): {x}");
            }
        }
    }

    #[test]
    fn harmonic_well_is_reversible(q in -2.0f64..2.0, p in -2.0f64..2.0) {
        let v = Potential::harmonic(1);
        let fwd = integrate_well(&v, &WellState::new(vec![q], vec![p]).unwrap(), 10.0, 1e-3).unwrap();
        let end = fwd.last();
        let back = integrate_well(&v, &WellState::new(end.q.clone(), end.p.iter().map(|x| -x).collect()).unwrap(), 10.0, 1e-3).unwrap();
        let ret = back.last();
        prop_assert!((ret.q[0] - q).abs() < 1e-8 && (ret.p[0] + p).abs() < 1e-8);
    }

    #[test]
    fn lift_keeps_zero_section(x in 0.0f64..1.0, y in 0.0f64..1.0, which in 0usize..3) {
        let flow = [TorusFlow::bryant(), TorusFlow::rotation(&[1.0, 2f64.sqrt()]), TorusFlow::rotation(&[0.3, -0.7])][which].clone();
        let lift = cotangent_lift(&flow);
        let traj = lift.integrate(&lift.zero_section(&[x, y]), 10.0, 1e-3).unwrap();
        let max_p = traj.points.iter().flat_map(|s| s.p.iter()).fold(0.0f64, |m, p| m.max(p.abs()));
        prop_assert!(max_p < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(5))]

    #[test]
    fn constant_nlw_data_follows_the_well(q in -1.0f64..1.0, p in -1.0f64..1.0) {
        let v = Potential::quartic(1);
        let s0 = WellState::new(vec![q], vec![p]).unwrap();
        let dt = 1e-3;
        let well = integrate_well(&v, &s0, 5.0, dt).unwrap();
        let nlw = integrate_nlw(&v, &NlwState::constant(64, &s0).unwrap(), 5.0, dt, 1).unwrap();
        prop_assert_eq!(well.times.len(), nlw.times.len());
        for (w, u) in well.points.iter().zip(&nlw.points) {
            for j in 0..64 {
                prop_assert!((u.q[j][0] - w.q[0]).abs() < 1e-9 && (u.p[j][0] - w.p[0]).abs() < 1e-9);
            }
        }
    }
}
