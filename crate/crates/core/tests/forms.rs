use potwell::chart::ChartMap;
use potwell::flows::{check_morphism, TorusFlow};
use potwell::forms::{average, check_adapted, is_exact, pullback, Adaptation, OneForm};
use potwell::trig::TrigPoly;
use proptest::prelude::*;

fn trig_strategy(dim: usize) -> impl Strategy<Value = TrigPoly> {
    prop::collection::vec((prop::collection::vec(-3i64..=3, dim), -2.0f64..2.0, -2.0f64..2.0), 0..6)
        .prop_map(move |terms| TrigPoly::from_terms(dim, &terms))
}

/// Multiples of 1/64, so integer recombinations stay exact in f64.
fn dyadic_trig(dim: usize) -> impl Strategy<Value = TrigPoly> {
    let c = (-128i32..=128).prop_map(|n| n as f64 / 64.0);
    prop::collection::vec((prop::collection::vec(-3i64..=3, dim), c.clone(), c), 0..6)
        .prop_map(move |terms| TrigPoly::from_terms(dim, &terms))
}

fn unimodular() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (-2i64..=2, -2i64..=2, prop::bool::ANY).prop_map(|(a, b, swap)| {
        // Products of shears are unimodular integer matrices.
        let m = [[1 + a * b, a], [b, 1]];
        let m = if swap { [m[1], m[0]] } else { m };
        m.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn differentials_are_exact_with_their_potential(l in trig_strategy(2)) {
        let ex = is_exact(&OneForm::differential(&l));
        prop_assert!(ex.exact, "residual {}", ex.residual);
        let recovered = ex.potential.unwrap();
        let gap = recovered.sub(&l);
        let gap = gap.sub(&TrigPoly::constant(2, gap.mean()));
        prop_assert!(gap.max_coeff() < 1e-10);
    }

    #[test]
    fn pullback_is_functorial_for_integer_linear_maps(a in unimodular(), b in unimodular(), c in dyadic_trig(2), d in dyadic_trig(2)) {
        let theta = OneForm::new(vec![c, d]).unwrap();
        let phi = ChartMap::affine(a, vec![0.0, 0.0]).unwrap();
        let psi = ChartMap::affine(b, vec![0.0, 0.0]).unwrap();
        let whole = pullback(&ChartMap::compose(psi.clone(), phi.clone()).unwrap(), &theta).unwrap();
        let stepwise = pullback(&phi, &pullback(&psi, &theta).unwrap()).unwrap();
        prop_assert_eq!(whole.components(), stepwise.components());
    }

    #[test]
    fn pullback_along_product_projection_stays_strong(c in 0.5f64..2.0, w in -0.4f64..0.4) {
        // theta = (c + w sin 2 pi t) dt is strongly adapted to the circle shift.
        let circle = TorusFlow::circle_shift();
        let theta = OneForm::new(vec![TrigPoly::from_terms(1, &[(vec![0], c, 0.0), (vec![1], 0.0, w)])]).unwrap();
        prop_assert_eq!(check_adapted(&circle, &theta, 1e-3).unwrap().classification, Adaptation::Strong);
        let prod = TorusFlow::bryant().product(&circle);
        let proj = ChartMap::projection(3, vec![2]).unwrap();
        prop_assert!(check_morphism(&proj, &prod, &circle, 8, 1e-10).unwrap().pass);
        let up = pullback(&proj, &theta).unwrap();
        prop_assert_eq!(check_adapted(&prod, &up, 1e-3).unwrap().classification, Adaptation::Strong);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn averaging_keeps_weak_forms_weak(a in 0.2f64..1.0, s in -0.2f64..0.2) {
        // Y = (1, a); theta = dx + s sin(2 pi y) dy pairs to 1 + a s sin(2 pi y) > 0.
        let flow = TorusFlow::rotation(&[1.0, a]);
        let theta = OneForm::new(vec![
            TrigPoly::constant(2, 1.0),
            TrigPoly::from_terms(2, &[(vec![0, 1], 0.0, s)]),
        ])
        .unwrap();
        let before = check_adapted(&flow, &theta, 1e-3).unwrap().classification;
        let avg = average(&flow, &theta, 32).unwrap();
        let after = check_adapted(&flow, &avg.form, 1e-3).unwrap().classification;
        prop_assert!(before >= Adaptation::Weak);
        prop_assert_eq!(after, Adaptation::Strong);
    }
}
