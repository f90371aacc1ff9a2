use std::collections::HashSet;

use num_rational::BigRational;
use num_traits::{One, Zero};
use potwell::forms::{check_adapted, Adaptation};
use potwell::rational::ratio;
use potwell::turing::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tape_strategy(k: u8) -> impl Strategy<Value = Tape> {
    (0..=k, 0..=k, -6i64..=2, prop::collection::vec(0..=k, 0..8))
        .prop_map(|(l, r, off, cells)| Tape::new(l, cells, off, r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn shift_relation_holds(k in 1u8..=4, tape in tape_strategy(4)) {
        let tape = clamp(tape, k);
        prop_assert!(shift_check(&tape, 10 * k as u64).unwrap());
    }

    #[test]
    fn step_commutes_with_encoding(seed in 0u64..10_000, n_states in 1usize..4, k in 1u8..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tm = TuringMachine::random(&mut rng, n_states, k);
        let tape = Tape::random(&mut rng, k, 6);
        let d = compile(&tm, 10 * k as u64).unwrap();
        let mut q = tm.start();
        let mut t = tape;
        for _ in 0..30 {
            if q == tm.halt() {
                let p = d.encode(q, &t).unwrap();
                prop_assert_eq!(d.step_point(&p), Err(TuringError::Halted));
                break;
            }
            let p = d.encode(q, &t).unwrap();
            let image = d.step_point(&p).unwrap();
            let (q2, t2) = symbolic_step(&tm, q, &t).unwrap();
            prop_assert_eq!(&image.w, &encode_tape(&t2, d.base).unwrap());
            prop_assert_eq!(d.state_at(&image.z), Some(q2));
            prop_assert_eq!(d.step_back(&image).unwrap(), p);
            q = q2;
            t = t2;
        }
    }
}

fn clamp(t: Tape, k: u8) -> Tape {
    let (lo, hi) = t.support();
    let cells = (lo..hi).map(|n| t.get(n).min(k)).collect();
    Tape::new(t.left().min(k), cells, lo, t.right().min(k))
}

#[test]
fn shift_example_lands_in_matching_rectangle() {
    let tape = Tape::from_cells(&[3]);
    let w = encode_tape(&tape, 30).unwrap();
    assert_eq!(w, TapePoint { u: BigRational::zero(), v: ratio(1, 10) });
    assert!(r_rect(3, 30, 3).contains(&w.u, &w.v));
    let image = phi(&w, 30, 3).unwrap();
    assert_eq!(image, TapePoint { u: ratio(1, 10), v: BigRational::zero() });
    assert!(shift_check(&tape, 30).unwrap());
}

#[test]
fn encoding_is_injective_on_distinct_tapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tapes: HashSet<Tape> = (0..400).map(|_| Tape::random(&mut rng, 2, 5)).collect();
    let points: HashSet<TapePoint> = tapes.iter().map(|t| encode_tape(t, 20).unwrap()).collect();
    assert_eq!(points.len(), tapes.len());
}

#[test]
fn piece_images_disjoint_for_incrementer() {
    let tm = TuringMachine::incrementer();
    let d = compile(&tm, 20).unwrap();
    assert_eq!(d.piece_count(), 2 * 2);
    for (i, a) in d.pieces.iter().enumerate() {
        for b in &d.pieces[i + 1..] {
            assert!(a.image.disjoint(&b.image));
        }
        assert!(a.image.within(&d.boxes[a.rule_next]));
    }
    d.check_layout().unwrap();
}

fn corpus_tapes(name: &str, k: u8, rng: &mut ChaCha8Rng) -> Vec<Tape> {
    let mut tapes = match name {
        "writer" => vec![Tape::blank()],
        "incrementer" => vec![Tape::from_cells(&[1, 1]), Tape::from_cells(&[1, 1, 1, 1])],
        "self-loop" => vec![Tape::blank(), Tape::from_cells(&[1, 0, 1])],
        "copier" => vec![Tape::from_cells(&[1]), Tape::from_cells(&[1, 1, 1])],
        _ => vec![Tape::parse("2^002").unwrap(), Tape::parse("2^0002").unwrap()],
    };
    tapes.extend((0..10).map(|_| Tape::random(rng, k, 6)));
    tapes
}

#[test]
fn orbit_and_machine_agree_on_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut random_tapes = 0;
    for (name, tm) in corpus() {
        let d = compile(&tm, 10 * tm.k() as u64).unwrap();
        for tape in corpus_tapes(name, tm.k(), &mut rng) {
            random_tapes += 1;
            let sym = symbolic_run(&tm, &tape, 1000).unwrap();
            let window = sym.tape.window(2);
            let set = halting_set(&d, Some(&window)).unwrap();
            let run = run_orbit(&d, &tape, 1000, &set).unwrap();
            assert!(run.conjugacy_holds, "{name} on {tape}");
            assert_eq!(run.entered_u(), sym.halted(), "{name} on {tape}");
            if sym.halted() {
                assert_eq!(run.entry_step, Some(sym.steps));
            } else {
                assert_eq!(run.verdict, OrbitVerdict::NoEntryWithinBudget);
                assert!(run.min_distance >= &d.side * ratio(3, 4));
            }
        }
    }
    assert!(random_tapes >= 50);
}

#[test]
fn named_orbit_examples() {
    let tm = TuringMachine::writer();
    let d = compile(&tm, 10).unwrap();
    let set = halting_set(&d, Some(&[0, 1, 0])).unwrap();
    let run = run_orbit(&d, &Tape::blank(), 10, &set).unwrap();
    assert_eq!((run.verdict, run.entry_step), (OrbitVerdict::EnteredU, Some(1)));

    let set = halting_set(&d, Some(&[0, 0, 0])).unwrap();
    let run = run_orbit(&d, &Tape::blank(), 10, &set).unwrap();
    assert_eq!(run.verdict, OrbitVerdict::HaltedOutsideU);

    let tm = TuringMachine::incrementer();
    let d = compile(&tm, 20).unwrap();
    let set = halting_set(&d, None).unwrap();
    let run = run_orbit(&d, &Tape::from_cells(&[1, 1]), 100, &set).unwrap();
    assert_eq!(run.entry_step, Some(6));

    let tm = TuringMachine::self_loop();
    let d = compile(&tm, 10).unwrap();
    let set = halting_set(&d, None).unwrap();
    let run = run_orbit(&d, &Tape::from_cells(&[1]), 1000, &set).unwrap();
    assert_eq!(run.verdict, OrbitVerdict::NoEntryWithinBudget);
    assert_eq!(run.steps, 1000);
    let floor = &d.side * ratio(3, 4);
    assert!(run.log.iter().all(|r| r.distance_to_u >= floor));
    assert!(run.log.iter().all(|r| r.conjugate));
}

#[test]
fn shadow_orbit_loses_precision_on_expanding_steps() {
    let tm = TuringMachine::self_loop();
    let d = compile(&tm, 10).unwrap();
    let set = halting_set(&d, None).unwrap();
    let tape = Tape::new(0, vec![1, 0, 1, 1, 0, 1, 1, 1], -30, 0);
    let run = run_orbit(&d, &tape, 40, &set).unwrap();
    assert_eq!(run.log[0].shadow_error, run.log[0].shadow_error.min(1e-16));
    assert!(run.log.iter().any(|r| r.shadow_error > 1e-6));
}

#[test]
fn suspension_time_one_is_the_map() {
    let tm = TuringMachine::incrementer();
    let d = compile(&tm, 20).unwrap();
    let tape = Tape::from_cells(&[1, 1]);
    let y = d.start_point(&tape).unwrap();
    let flow = suspend(d.clone());
    let p = SuspendedPoint { y: y.clone(), s: BigRational::zero() };
    let one = flow.eval(&p, &BigRational::one()).unwrap();
    assert_eq!(one.y, d.step_point(&y).unwrap());
    assert_eq!(one.s, BigRational::zero());

    let half = flow.eval(&p, &ratio(5, 2)).unwrap();
    assert_eq!(half.s, ratio(1, 2));
    let back = flow.eval(&half, &ratio(-5, 2)).unwrap();
    assert_eq!(back, p);
    assert_eq!(flow.form_on_field(), BigRational::one());

    let set = halting_set(&d, None).unwrap();
    let orbit = run_orbit(&d, &tape, 100, &set).unwrap();
    let entry = flow.first_entry(&y, 100, |pt| set.contains(pt)).unwrap();
    assert_eq!(entry, orbit.entry_step);

    let loop_d = compile(&TuringMachine::self_loop(), 10).unwrap();
    let loop_set = halting_set(&loop_d, None).unwrap();
    let y = loop_d.start_point(&Tape::blank()).unwrap();
    assert_eq!(suspend(loop_d).first_entry(&y, 200, |pt| loop_set.contains(pt)).unwrap(), None);
}

#[test]
fn rotation_suspension_is_strongly_adapted() {
    let (flow, theta) = suspension_of_rotation(&[0.25, 0.1]);
    let report = check_adapted(&flow, &theta, 1e-3).unwrap();
    assert_eq!(report.classification, Adaptation::Strong);
    let section = potwell::flows::flow_map(&flow, 1.0, &[0.1, 0.2, 0.0]).unwrap();
    assert!((section[0] - 0.35).abs() < 1e-12 && (section[1] - 0.3).abs() < 1e-12);

    let rot = RationalRotation { alpha: vec![ratio(1, 4)] };
    let s = suspend(rot);
    let p = SuspendedPoint { y: vec![ratio(7, 8)], s: ratio(1, 2) };
    let q = s.eval(&p, &ratio(3, 2)).unwrap();
    assert_eq!(q, SuspendedPoint { y: vec![ratio(3, 8)], s: BigRational::zero() });
}
