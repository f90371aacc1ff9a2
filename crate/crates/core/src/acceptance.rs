//! The acceptance suite as library code, shared by the `acceptance` test
//! target and the `verify-all` subcommand.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapted_lp::{decide, verify_farkas, build_lp, Verdict};
use crate::chart::ChartMap;
use crate::embedder::{embed_flat, verify_embedding};
use crate::flows::{check_morphism, integrate, TorusFlow};
use crate::forms::{arc_nonvanishing, average, canonical_form_check, check_adapted, pullback, Adaptation, OneForm};
use crate::hamiltonian::{
    cotangent_lift, energy, integrate_nlw, integrate_well, integrate_well_with, nlw_energy, NlwState, Potential,
    Scheme, WellState,
};
use crate::rational::ratio;
use crate::trig::TrigPoly;
use crate::turing::{compile, corpus, halting_set, run_orbit, shift_check, symbolic_run, OrbitVerdict, Tape};
use crate::Result;

pub const CRITERIA: [&str; 10] = [
    "Bryant obstruction and feasible controls",
    "Bryant trajectory structure",
    "Canonical-form identity",
    "Averaging",
    "Symplectic and energy suite",
    "NLW reduction",
    "Turing conjugacy",
    "Shift relation",
    "Embedding pipeline",
    "Pullback and morphism suite",
];

#[derive(Clone, Debug)]
pub struct CriterionResult {
    pub id: usize,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {} ({:.1} s): {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.seconds,
            self.detail
        )
    }
}

/// Runs criterion `id` (1-based). `seed` drives every random sample.
pub fn run_criterion(id: usize, seed: u64) -> CriterionResult {
    let start = Instant::now();
    let outcome = match id {
        1 => bryant_obstruction(),
        2 => bryant_trajectories(),
        3 => canonical_identity(seed),
        4 => averaging(seed),
        5 => symplectic_suite(),
        6 => nlw_reduction(seed),
        7 => turing_conjugacy(seed),
        8 => shift_relation(seed),
        9 => embedding_pipeline(),
        10 => morphism_suite(),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult {
        id,
        title: CRITERIA.get(id.wrapping_sub(1)).copied().unwrap_or("unknown"),
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_all(seed: u64) -> Vec<CriterionResult> {
    (1..=CRITERIA.len()).map(|id| run_criterion(id, seed)).collect()
}

type Outcome = Result<(bool, String)>;

const NLW_DRIFT_DT: f64 = 5e-4;

fn bryant_obstruction() -> Outcome {
    let eps = ratio(1, 1000);
    let mut pass = true;
    let mut notes = Vec::new();
    for k in 0..=3 {
        let t = Instant::now();
        let lp = build_lp(&TorusFlow::bryant(), k, &eps, 64)?;
        let cert = crate::adapted_lp::solve(&lp)?;
        let secs = t.elapsed().as_secs_f64();
        let verified = match &cert.farkas {
            Some(f) => {
                let (residual, value) = verify_farkas(&lp, f);
                residual == ratio(0, 1) && value > ratio(0, 1)
            }
            None => false,
        };
        let ok = cert.verdict == Verdict::InfeasibleAtDegree && verified && secs < 60.0;
        pass &= ok;
        notes.push(format!("K={k} {} verified={verified} {secs:.1}s", cert.verdict.as_str()));
    }
    let controls = [
        ("rotation", TorusFlow::rotation(&[1.0, 1.41421356]), 64),
        ("bryant x circle", TorusFlow::bryant().product(&TorusFlow::circle_shift()), 16),
    ];
    for (name, flow, grid) in controls {
        let t = Instant::now();
        let cert = decide(&flow, 1, &eps, grid)?;
        let secs = t.elapsed().as_secs_f64();
        let margin = cert.witness.as_ref().map(|w| w.report.certified_lower).unwrap_or(f64::NAN);
        let strong = cert.witness.as_ref().is_some_and(|w| w.report.classification == Adaptation::Strong);
        let ok = cert.verdict == Verdict::Feasible && strong && margin >= 0.5e-3 && secs < 10.0;
        pass &= ok;
        notes.push(format!("{name} {} margin={margin:.3e} {secs:.1}s", cert.verdict.as_str()));
    }
    Ok((pass, notes.join("; ")))
}

fn bryant_trajectories() -> Outcome {
    let flow = TorusFlow::bryant();
    let mut worst_half = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for x0 in [0.1, 0.25, 0.4] {
        let traj = integrate(&flow, &[x0, 0.0], 5.0, 1e-3)?;
        let x = traj.last()[0];
        let oracle = ((PI * x0).tan() * (TAU * 5.0).exp()).atan() / PI;
        worst_half = worst_half.max((x - 0.5).abs());
        worst_oracle = worst_oracle.max((x - oracle).abs());
    }
    let mut circle_drift = 0.0f64;
    for x0 in [0.0, 0.5] {
        let traj = integrate(&flow, &[x0, 0.3], 10.0, 1e-3)?;
        for p in &traj.points {
            circle_drift = circle_drift.max((p[0] - x0).abs());
        }
    }
    let pass = worst_half < 1e-6 && worst_oracle < 1e-6 && circle_drift < 1e-10;
    Ok((pass, format!("|x(5)-1/2|={worst_half:.2e}, closed form {worst_oracle:.2e}, circle drift {circle_drift:.2e}")))
}

fn canonical_identity(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<WellState> = (0..100)
        .map(|_| WellState {
            q: (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            p: (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        })
        .collect();
    let harmonic = canonical_form_check(&Potential::harmonic(2), &samples, 1e-5)?;
    let quartic = canonical_form_check(&Potential::quartic(2), &samples, 1e-5)?;
    Ok((harmonic < 1e-6 && quartic < 1e-6, format!("harmonic {harmonic:.2e}, quartic {quartic:.2e}")))
}

fn averaging(seed: u64) -> Outcome {
    let shift = TorusFlow::circle_shift();
    let theta = OneForm::new(vec![TrigPoly::from_terms(1, &[(vec![0], 1.0, 0.0), (vec![1], 0.0, 0.5)])])?;
    let avg = average(&shift, &theta, 256)?;
    let dist = avg.form.sub(&OneForm::constant(&[1.0])).max_coeff();
    let circle_strong = check_adapted(&shift, &avg.form, 1e-8)?.classification == Adaptation::Strong;

    let rot = TorusFlow::rotation(&[0.5, 2f64.sqrt()]);
    let weak = OneForm::new(vec![TrigPoly::from_terms(2, &[(vec![0, 0], 1.0, 0.0), (vec![1, 0], 1.0, 0.0)]), TrigPoly::zero(2)])?;
    let before = check_adapted(&rot, &weak, 1e-9)?.classification;
    let arcs = arc_nonvanishing(&rot, &weak, 100, 1e-12, seed)?.pass;
    let after = check_adapted(&rot, &average(&rot, &weak, 128)?.form, 1e-9)?;
    let pass = dist < 1e-8
        && circle_strong
        && before == Adaptation::Weak
        && arcs
        && after.classification == Adaptation::Strong
        && after.certified_lower > 0.0;
    Ok((
        pass,
        format!(
            "circle |avg - dt|={dist:.2e} strong={circle_strong}; rotation {} -> {} (margin {:.3e})",
            before.as_str(),
            after.classification.as_str(),
            after.certified_lower
        ),
    ))
}

fn symplectic_suite() -> Outcome {
    let v = Potential::harmonic(2);
    let s0 = WellState::new(vec![1.0, 0.3], vec![0.0, -0.5])?;
    let e0 = energy(&v, &s0);
    let traj = integrate_well_with(&v, &s0, 100.0, 1e-3, Scheme::Verlet, 1000)?;
    let drift = traj.points.iter().map(|s| ((energy(&v, s) - e0) / e0).abs()).fold(0.0, f64::max);

    let fwd = integrate_well(&v, &s0, 10.0, 1e-3)?;
    let mut flipped = fwd.last().clone();
    flipped.p.iter_mut().for_each(|p| *p = -*p);
    let back = integrate_well(&v, &flipped, 10.0, 1e-3)?;
    let end = back.last();
    let ret = end
        .q
        .iter()
        .zip(&s0.q)
        .map(|(a, b)| (a - b).abs())
        .chain(end.p.iter().zip(&s0.p).map(|(a, b)| (a + b).abs()))
        .fold(0.0, f64::max);

    let mut lift_max = 0.0f64;
    for flow in [TorusFlow::bryant(), TorusFlow::rotation(&[1.0, 2f64.sqrt()]), TorusFlow::circle_shift()] {
        let lift = cotangent_lift(&flow);
        let x0 = vec![0.2; flow.dim()];
        let t = lift.integrate(&lift.zero_section(&x0), 10.0, 1e-3)?;
        for s in &t.points {
            lift_max = lift_max.max(s.p.iter().map(|p| p.abs()).fold(0.0, f64::max));
        }
    }
    let pass = drift < 1e-6 && ret < 1e-8 && lift_max < 1e-10;
    Ok((pass, format!("energy drift {drift:.2e}, return error {ret:.2e}, zero-section |p| {lift_max:.2e}")))
}

fn nlw_reduction(seed: u64) -> Outcome {
    let v = Potential::quartic(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reduction = 0.0f64;
    for _ in 0..5 {
        let w = WellState::new(vec![rng.gen_range(-1.0..1.0)], vec![rng.gen_range(-1.0..1.0)])?;
        let field = integrate_nlw(&v, &NlwState::constant(64, &w)?, 5.0, 1e-3, 100)?;
        let well = integrate_well_with(&v, &w, 5.0, 1e-3, Scheme::Verlet, 100)?;
        if field.points.len() != well.points.len() {
            reduction = f64::INFINITY;
        }
        for (f, s) in field.points.iter().zip(&well.points) {
            for j in 0..f.n {
                reduction = reduction.max((f.q[j][0] - s.q[0]).abs()).max((f.p[j][0] - s.p[0]).abs());
            }
        }
    }

    let n = 64;
    let lin = integrate_nlw(&Potential::zero(1), &NlwState::sample(n, |x| vec![(TAU * x).sin()], |_| vec![0.0])?, 1.0, 1e-4, 100)?;
    let mut linear = 0.0f64;
    for (t, s) in lin.times.iter().zip(&lin.points) {
        for j in 0..n {
            let x = j as f64 / n as f64;
            linear = linear.max((s.q[j][0] - (TAU * x).sin() * (TAU * t).cos()).abs());
        }
    }

    let s0 = NlwState::sample(n, |x| vec![0.5 * (TAU * x).sin() + 0.2 * (2.0 * TAU * x).cos()], |x| vec![0.3 * (TAU * x).cos()])?;
    let h = Potential::harmonic(1);
    let e0 = nlw_energy(&h, &s0);
    let traj = integrate_nlw(&h, &s0, 10.0, NLW_DRIFT_DT, 100)?;
    let drift = traj.points.iter().map(|s| ((nlw_energy(&h, s) - e0) / e0).abs()).fold(0.0, f64::max);
    let pass = reduction < 1e-9 && linear < 1e-6 && drift < 1e-5;
    Ok((pass, format!("constant data {reduction:.2e}, linear wave {linear:.2e}, energy drift {drift:.2e}")))
}

struct TuringTally {
    runs: usize,
    random_tapes: usize,
    steps: usize,
    failures: Vec<String>,
    min_gap: f64,
}

fn turing_conjugacy(seed: u64) -> Outcome {
    let machines = corpus();
    let results: Vec<Result<TuringTally>> = std::thread::scope(|scope| {
        let handles: Vec<_> = machines
            .iter()
            .enumerate()
            .map(|(i, (name, tm))| {
                scope.spawn(move || -> Result<TuringTally> {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                    let d = compile(tm, 10 * tm.k() as u64)?;
                    let mut tapes = vec![Tape::blank()];
                    let random: Vec<Tape> = (0..10).map(|_| Tape::random(&mut rng, tm.k(), 6)).collect();
                    tapes.extend(random.iter().cloned());
                    let mut tally = TuringTally { runs: 0, random_tapes: random.len(), steps: 0, failures: Vec::new(), min_gap: f64::INFINITY };
                    for tape in &tapes {
                        let sym = symbolic_run(tm, tape, 1000)?;
                        let set = halting_set(&d, Some(&sym.tape.window(2)))?;
                        let run = run_orbit(&d, tape, 1000, &set)?;
                        tally.runs += 1;
                        tally.steps += run.steps;
                        let mut ok = run.conjugacy_holds && run.entered_u() == sym.halted();
                        if sym.halted() {
                            ok &= run.entry_step == Some(sym.steps);
                        } else {
                            ok &= run.verdict == OrbitVerdict::NoEntryWithinBudget;
                            let gap = num_traits::ToPrimitive::to_f64(&run.min_distance).unwrap_or(0.0);
                            ok &= gap > 0.0;
                            tally.min_gap = tally.min_gap.min(gap);
                        }
                        if !ok {
                            tally.failures.push(format!("{name} on {tape}"));
                        }
                    }
                    Ok(tally)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut runs = 0;
    let mut random = 0;
    let mut steps = 0;
    let mut failures = Vec::new();
    let mut min_gap = f64::INFINITY;
    for r in results {
        let t = r?;
        runs += t.runs;
        random += t.random_tapes;
        steps += t.steps;
        failures.extend(t.failures);
        min_gap = min_gap.min(t.min_gap);
    }
    let pass = failures.is_empty() && machines.len() >= 5 && random >= 50;
    Ok((
        pass,
        format!(
            "{} machines, {runs} runs ({random} random tapes), {steps} exact steps, min non-halting distance to U {min_gap:.3e}{}",
            machines.len(),
            if failures.is_empty() { String::new() } else { format!(", failures: {}", failures.join(", ")) }
        ),
    ))
}

fn shift_relation(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = 0;
    for i in 0..100 {
        let k = 1 + (i % 4) as u8;
        let tape = Tape::random(&mut rng, k, 8);
        if shift_check(&tape, 10 * k as u64)? {
            held += 1;
        }
    }
    Ok((held == 100, format!("{held}/100 tapes satisfy the shift relation exactly")))
}

fn embedding_pipeline() -> Outcome {
    let circle = TorusFlow::circle_shift();
    let (cm, ce, cp) = embed_flat(&circle, &OneForm::constant(&[1.0]))?;
    let crep = verify_embedding(&circle, &ce, &cp, &[vec![0.0], vec![0.3]], 10.0, 1e-6)?;

    let rot = TorusFlow::rotation(&[1.0, 0.5]);
    let (rm, re, rp) = embed_flat(&rot, &OneForm::constant(&[1.0, 0.0]))?;
    let rrep = verify_embedding(&rot, &re, &rp, &[vec![0.1, 0.2], vec![0.7, 0.4]], 10.0, 1e-4)?;

    let grad = cp.gradient_residual.max(rp.gradient_residual);
    let duality_exact = cm.symbolic && rm.symbolic && cm.duality_residual == 0.0 && rm.duality_residual == 0.0;
    let pass = crep.pass && crep.max_deviation < 1e-6 && rrep.pass && rrep.max_deviation < 1e-4 && grad < 1e-8 && duality_exact;
    Ok((
        pass,
        format!(
            "circle deviation {:.2e}, torus deviation {:.2e}, gradient residual {grad:.2e}, duality exact {duality_exact}",
            crep.max_deviation, rrep.max_deviation
        ),
    ))
}

fn morphism_suite() -> Outcome {
    let prod = TorusFlow::bryant().product(&TorusFlow::circle_shift());
    let proj = ChartMap::projection(3, vec![2])?;
    let morph = check_morphism(&proj, &prod, &TorusFlow::circle_shift(), 16, 0.0)?;
    let pulled = pullback(&proj, &OneForm::constant(&[1.0]))?;
    let upstream = check_adapted(&prod, &pulled, 1e-9)?.classification;

    let theta = OneForm::new(vec![TrigPoly::from_terms(2, &[(vec![1, 2], 0.5, -0.25)]), TrigPoly::cos_term(2, &[0, 1], 2.0)])?;
    let a = ChartMap::affine(vec![vec![2.0, 1.0], vec![1.0, 1.0]], vec![0.0, 0.0])?;
    let b = ChartMap::affine(vec![vec![1.0, 1.0], vec![0.0, 1.0]], vec![0.0, 0.0])?;
    let composed = pullback(&ChartMap::compose(a.clone(), b.clone())?, &theta)?;
    let stepwise = pullback(&b, &pullback(&a, &theta)?)?;
    let functorial = composed.sub(&stepwise).max_coeff();

    let pass = morph.max_residual == 0.0 && upstream == Adaptation::Strong && functorial == 0.0;
    Ok((
        pass,
        format!(
            "projection residual {:.1e}, pulled-back dt {}, functoriality gap {functorial:.1e}",
            morph.max_residual,
            upstream.as_str()
        ),
    ))
}
