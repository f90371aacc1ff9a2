use std::f64::consts::TAU;

use potwell::embedder::{
    build_metric, build_potential, embed_flat, flat_embedding, optimize_embedding, verify_embedding, MetricField,
};
use potwell::flows::TorusFlow;
use potwell::forms::OneForm;
use potwell::trig::TrigPoly;

#[test]
fn circle_end_to_end() {
    let flow = TorusFlow::circle_shift();
    let (_, emb, pot) = embed_flat(&flow, &OneForm::constant(&[1.0])).unwrap();
    assert_eq!(emb.target_dim(), 2);
    let r = 1.0 / TAU;
    for y in [0.0, 0.1, 0.37] {
        let q = emb.eval_q(&[y]);
        assert!((q[0] - r * (TAU * y).cos()).abs() < 1e-15);
        assert!((q[1] - r * (TAU * y).sin()).abs() < 1e-15);
        // a = q'' = -(2 pi)^2 q points at the centre.
        let a: Vec<f64> = pot.accel.iter().map(|c| c.eval(&[y])).collect();
        assert!((a[0] + TAU * TAU * q[0]).abs() < 1e-12 && (a[1] + TAU * TAU * q[1]).abs() < 1e-12);
        let g = pot.gradient(&q);
        assert!((g[0] + a[0]).abs() < 1e-8 && (g[1] + a[1]).abs() < 1e-8);
    }
    assert!((pot.reach - r).abs() < 1e-9);
    assert!(pot.identity_residual < 1e-8);
    let rep = verify_embedding(&flow, &emb, &pot, &[vec![0.0], vec![0.3]], 10.0, 1e-6).unwrap();
    eprintln!("circle deviation {:e}, energy drift {:e}", rep.max_deviation, rep.energy_drift);
    assert!(rep.pass);
    assert!(rep.energy_drift < 1e-6);
}

#[test]
fn rotation_end_to_end() {
    let flow = TorusFlow::rotation(&[1.0, 0.5]);
    let theta = OneForm::constant(&[1.0, 0.0]);
    let (metric, emb, pot) = embed_flat(&flow, &theta).unwrap();
    assert!(metric.symbolic);
    assert!(emb.residual < 1e-12);
    assert!(emb.pullback_residual(&theta) < 1e-12);
    // v is constant on q(N).
    assert!(pot.v.sub(&TrigPoly::constant(2, pot.v.mean())).max_coeff() < 1e-12);
    let rep = verify_embedding(&flow, &emb, &pot, &[vec![0.1, 0.2], vec![0.7, 0.4]], 10.0, 1e-4).unwrap();
    eprintln!("rotation deviation {:e}, drift {:e}", rep.max_deviation, rep.energy_drift);
    assert!(rep.pass);
    let zero = verify_embedding(&flow, &emb, &pot, &[vec![0.1, 0.2]], 0.0, 1e-4).unwrap();
    assert_eq!(zero.max_deviation, 0.0);
}

#[test]
fn clifford_torus_for_identity_metric() {
    let flow = TorusFlow::rotation(&[1.0, 0.0]);
    let metric = build_metric(&flow, &OneForm::constant(&[1.0, 0.0]), None, 1e-3).unwrap();
    // C = 1 already works: g~ = I.
    assert_eq!(metric.c, 1.0);
    let emb = flat_embedding(&metric).unwrap();
    assert_eq!(emb.target_dim(), 4);
    assert!(emb.residual < 1e-12);
    assert!(emb.min_separation > 0.0);
}

fn varying_metric() -> MetricField {
    let flow = TorusFlow::rotation(&[1.0, 0.0]);
    let mut m = build_metric(&flow, &OneForm::constant(&[1.0, 0.0]), None, 1e-3).unwrap();
    m.entries[0][0] = m.entries[0][0].add(&TrigPoly::cos_term(2, &[1, 0], 0.1));
    m
}

#[test]
fn optimizer_reaches_flat_solution() {
    let flow = TorusFlow::rotation(&[1.0, 0.0]);
    let metric = build_metric(&flow, &OneForm::constant(&[1.0, 0.0]), None, 1e-3).unwrap();
    let emb = optimize_embedding(&metric, 6, 1, 60, 1e-12).unwrap();
    eprintln!("flat optimizer residual {:e} history {:?}", emb.residual, emb.residual_history);
    assert!(emb.converged);
}

#[test]
fn optimizer_on_varying_metric() {
    let emb = optimize_embedding(&varying_metric(), 8, 4, 100, 1e-6).unwrap();
    eprintln!("varying residual {:e} history {:?}", emb.residual, emb.residual_history);
    assert!(emb.residual < 1e-6);
    assert!(emb.min_gram_det > 0.0);
}

#[test]
fn potential_serializes() {
    let flow = TorusFlow::circle_shift();
    let (_, _, pot) = embed_flat(&flow, &OneForm::constant(&[1.0])).unwrap();
    let json = serde_json::to_string(&pot).unwrap();
    let back: potwell::embedder::ExtendedPotential = serde_json::from_str(&json).unwrap();
    back.validate().unwrap();
    let z = [0.2, -0.05];
    assert_eq!(back.value(&z), pot.value(&z));
    let _ = build_potential;
}
