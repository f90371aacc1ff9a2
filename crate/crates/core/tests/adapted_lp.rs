#![allow(clippy::approx_constant)]

use std::time::Instant;

use num_traits::Zero;
use potwell::adapted_lp::{build_lp, decide, solve, verify_farkas, Verdict};
use potwell::flows::TorusFlow;
use potwell::forms::{check_adapted, Adaptation};
use potwell::rational::ratio;

#[test]
fn bryant_infeasible_for_small_degrees_and_grids() {
    for grid in [32, 64, 128] {
        for k in 0..=3 {
            let start = Instant::now();
            let lp = build_lp(&TorusFlow::bryant(), k, &ratio(1, 1000), grid).unwrap();
            let cert = solve(&lp).unwrap();
            assert_eq!(cert.verdict, Verdict::InfeasibleAtDegree, "K={k} grid={grid}");
            let f = cert.farkas.as_ref().unwrap();
            let (residual, value) = verify_farkas(&lp, f);
            assert!(residual.is_zero());
            assert!(value > num_rational::BigRational::zero());
            eprintln!("grid {grid} K {k}: {} iterations via {} in {:?}", cert.iterations, cert.route, start.elapsed());
        }
    }
}

#[test]
fn feasibility_is_monotone_in_degree() {
    let flows = [
        TorusFlow::rotation(&[1.0, 1.41421356]),
        TorusFlow::rotation(&[0.5, 1.0]),
        TorusFlow::bryant().product(&TorusFlow::circle_shift()),
    ];
    for (flow, max_k) in flows.iter().zip([2, 2, 1]) {
        let mut seen_feasible = false;
        for k in 0..=max_k {
            let cert = decide(flow, k, &ratio(1, 1000), 32).unwrap();
            if seen_feasible {
                assert_eq!(cert.verdict, Verdict::Feasible);
            }
            if cert.verdict == Verdict::Feasible {
                seen_feasible = true;
                let w = cert.witness.unwrap();
                let report = check_adapted(flow, &w.form, 1e-9).unwrap();
                assert_eq!(report.classification, Adaptation::Strong);
                assert!(report.certified_lower >= 0.5e-3);
            }
        }
        assert!(seen_feasible);
    }
}
