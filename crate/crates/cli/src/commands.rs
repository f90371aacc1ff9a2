use std::path::Path;

use potwell::adapted_lp::{build_lp, decide, verify_farkas, Verdict};
use potwell::embedder::{build_metric, build_potential, embed_flat, lagrangian, optimize_embedding, verify_embedding};
use potwell::flows::{integrate, TorusFlow, Trajectory};
use potwell::forms::{average, check_adapted, AdaptationReport, OneForm};
use potwell::hamiltonian::{
    cotangent_lift, energy, integrate_nlw, integrate_well_with, nlw_energy, NlwState, Potential, Scheme, WellState,
};
use potwell::io;
use potwell::rational::{self, to_string as q};
use potwell::turing::{
    compile, halting_set, run_orbit, suspend, symbolic_run, CompiledDiffeo, HaltingSet, OrbitVerdict, Tape, TuringMachine,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::*;

type Res = Result<i32, Failure>;

pub fn run(cmd: &Command, seed: u64, s: &mut Session) -> Res {
    match cmd {
        Command::Simulate(Simulate::Flow(a)) => simulate_flow(a, s),
        Command::Simulate(Simulate::Well(a)) => simulate_well(a, s),
        Command::Simulate(Simulate::Nlw(a)) => simulate_nlw(a, s),
        Command::Lift(a) => lift(a, seed, s),
        Command::CheckAdapted(a) => check(a, s),
        Command::Lp(a) => lp(a, s),
        Command::Average(a) => average_cmd(a, s),
        Command::Embed(a) => embed(a, seed, s),
        Command::Tm(t) => tm(t, s),
        Command::VerifyAll(a) => verify_all(a, seed, s),
        Command::Replay(_) => unreachable!("replay is dispatched by the caller"),
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json serializes") + "\n"
}

fn read_flow(s: &mut Session, p: &Path) -> Result<TorusFlow, Failure> {
    Ok(io::read_flow(&s.input(p))?)
}

fn read_form(s: &mut Session, p: &Path) -> Result<OneForm, Failure> {
    Ok(io::read_form(&s.input(p))?)
}

fn read_potential(s: &mut Session, p: &Path) -> Result<Potential, Failure> {
    Ok(io::read_potential(&s.input(p))?)
}

fn thin<P: Clone>(mut traj: Trajectory<P>, stride: usize) -> Result<Trajectory<P>, Failure> {
    if stride == 0 {
        return Err(Failure::error("--stride must be positive"));
    }
    let last = traj.times.len().saturating_sub(1);
    let keep = |i: usize| i.is_multiple_of(stride) || i == last;
    traj.times = traj.times.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, t)| *t).collect();
    traj.points = traj.points.into_iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, p)| p).collect();
    Ok(traj)
}

/// Summary line printed when the CSV goes to a file.
fn summarize(s: &mut Session, out: Option<&Path>, summary: Value) {
    if out.is_some() {
        s.say(&serde_json::to_string(&summary).expect("json serializes"));
    }
}

fn simulate_flow(a: &SimFlowArgs, s: &mut Session) -> Res {
    let flow = read_flow(s, &a.spec)?;
    let traj = thin(integrate(&flow, &a.x0, a.t_end, a.dt)?, a.stride)?;
    s.emit(a.out.as_deref(), &io::trajectory_csv(&traj))?;
    summarize(
        s,
        a.out.as_deref(),
        json!({"rows": traj.times.len(), "step_size": traj.step_size, "method": traj.method, "final": traj.last()}),
    );
    Ok(EXIT_OK)
}

fn simulate_well(a: &SimWellArgs, s: &mut Session) -> Res {
    let v = read_potential(s, &a.spec)?;
    let p0 = if a.p0.is_empty() { vec![0.0; a.x0.len()] } else { a.p0.clone() };
    let s0 = WellState::new(a.x0.clone(), p0)?;
    let scheme = match a.scheme {
        SchemeArg::Verlet => Scheme::Verlet,
        SchemeArg::Yoshida4 => Scheme::Yoshida4,
    };
    let traj = integrate_well_with(&v, &s0, a.t_end, a.dt, scheme, a.stride)?;
    s.emit(a.out.as_deref(), &io::well_csv(&traj, |x| energy(&v, x)))?;
    let e0 = energy(&v, &s0);
    let drift = traj.points.iter().map(|x| (energy(&v, x) - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE);
    summarize(
        s,
        a.out.as_deref(),
        json!({"rows": traj.times.len(), "step_size": traj.step_size, "method": traj.method,
               "relative_energy_drift": drift, "final": traj.last()}),
    );
    Ok(EXIT_OK)
}

fn simulate_nlw(a: &SimNlwArgs, s: &mut Session) -> Res {
    let v = read_potential(s, &a.spec)?;
    let s0 = match &a.init {
        Some(path) => {
            let text = std::fs::read_to_string(s.input(path)).map_err(|e| Failure::error(format!("{}: {e}", path.display())))?;
            io::parse_nlw_csv(&text).map_err(|e| Failure::error(format!("{}: {e}", path.display())))?
        }
        None => {
            if a.x0.is_empty() {
                return Err(Failure::error("give either --init or --x0"));
            }
            let p0 = if a.p0.is_empty() { vec![0.0; a.x0.len()] } else { a.p0.clone() };
            NlwState::constant(a.n, &WellState::new(a.x0.clone(), p0)?)?
        }
    };
    let traj = integrate_nlw(&v, &s0, a.t_end, a.dt, a.stride)?;
    s.emit(a.out.as_deref(), &io::nlw_csv(&traj))?;
    let e0 = nlw_energy(&v, &s0);
    let drift = traj.points.iter().map(|x| (nlw_energy(&v, x) - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE);
    summarize(
        s,
        a.out.as_deref(),
        json!({"slices": traj.times.len(), "grid": s0.n, "step_size": traj.step_size, "relative_energy_drift": drift}),
    );
    Ok(EXIT_OK)
}

fn parse_points(text: &str, dim: usize) -> Result<Vec<Vec<f64>>, Failure> {
    text.split(';')
        .map(|p| {
            let x: Vec<f64> = p
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| Failure::error(format!("bad coordinate '{}'", v.trim()))))
                .collect::<Result<_, _>>()?;
            if x.len() != dim {
                return Err(Failure::error(format!("point '{p}' has {} coordinates, expected {dim}", x.len())));
            }
            Ok(x)
        })
        .collect()
}

fn random_points(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect()
}

fn lift(a: &LiftArgs, seed: u64, s: &mut Session) -> Res {
    let flow = read_flow(s, &a.flow)?;
    let points = match &a.x0 {
        Some(text) => parse_points(text, flow.dim())?,
        None => random_points(seed, 3, flow.dim()),
    };
    let system = cotangent_lift(&flow);
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for x0 in &points {
        let traj = system.integrate(&system.zero_section(x0), a.t_end, a.dt)?;
        let max_p = traj.points.iter().flat_map(|st| st.p.iter()).fold(0.0f64, |m, p| m.max(p.abs()));
        worst = worst.max(max_p);
        rows.push(json!({"x0": x0, "max_abs_p": max_p, "final_q": traj.last().q}));
    }
    let report = json!({"dim": flow.dim(), "T": a.t_end, "dt": a.dt, "points": rows,
                        "max_abs_p": worst, "tolerance": a.tol, "zero_section_invariant": worst < a.tol});
    s.emit(a.out.as_deref(), &pretty(&report))?;
    Ok(EXIT_OK)
}

fn adaptation_json(r: &AdaptationReport) -> Value {
    json!({
        "classification": r.classification.as_str(),
        "min_theta_y": r.min_theta_y,
        "certified_lower": r.certified_lower,
        "grid_resolution": r.grid_resolution,
        "exactness_residual": r.exactness_residual,
        "potential": r.potential,
    })
}

fn check(a: &CheckArgs, s: &mut Session) -> Res {
    let flow = read_flow(s, &a.flow)?;
    let theta = read_form(s, &a.form)?;
    let report = check_adapted(&flow, &theta, a.eps)?;
    let mut v = adaptation_json(&report);
    v["eps"] = json!(a.eps);
    s.emit(a.out.as_deref(), &pretty(&v))?;
    Ok(EXIT_OK)
}

fn lp(a: &LpArgs, s: &mut Session) -> Res {
    let flow = read_flow(s, &a.flow)?;
    let eps = rational::parse(&a.eps)?;
    let cert = decide(&flow, a.degree, &eps, a.grid)?;
    let program = build_lp(&flow, a.degree, &eps, a.grid)?;
    let variables: Vec<Value> = program
        .vars
        .iter()
        .map(|v| json!({"component": v.comp, "freq": v.freq, "part": if v.is_sin { "sin" } else { "cos" }}))
        .collect();
    let witness = cert.witness.as_ref().map(|w| {
        json!({
            "coefficients": w.coefficients.iter().map(q).collect::<Vec<_>>(),
            "form": serde_json::from_str::<Value>(&io::form_to_json(&w.form)).expect("form json"),
            "lp_margin": w.lp_margin,
            "adaptation": adaptation_json(&w.report),
        })
    });
    let farkas = cert.farkas.as_ref().map(|f| {
        let (residual, value) = verify_farkas(&program, f);
        let pairs = |v: &[(usize, potwell::rational::Q)]| -> Vec<Value> { v.iter().map(|(i, x)| json!([i, q(x)])).collect() };
        json!({
            "grid": f.grid.iter().map(|(g, y)| json!({"point": program.pos_points[*g], "y": q(y)})).collect::<Vec<_>>(),
            "equality": pairs(&f.equality),
            "upper": pairs(&f.upper),
            "lower": pairs(&f.lower),
            "value": q(&f.value),
            "identity_residual": q(&f.identity_residual),
            "scale_free": f.scale_free,
            "recomputed": {"value": q(&value), "identity_residual": q(&residual)},
            "verified": value > potwell::rational::int(0) && residual == potwell::rational::int(0),
        })
    });
    let report = json!({
        "verdict": cert.verdict.as_str(),
        "degree": a.degree,
        "eps": q(&eps),
        "eps_lp": q(&program.eps_lp),
        "rounding_radius": q(&program.rounding_radius),
        "grid": cert.grid_res,
        "route": cert.route,
        "iterations": cert.iterations,
        "optimum": cert.optimum,
        "variables": variables,
        "witness": witness,
        "farkas": farkas,
    });
    s.emit(a.out.as_deref(), &pretty(&report))?;
    summarize(s, a.out.as_deref(), json!({"verdict": cert.verdict.as_str(), "route": cert.route}));
    Ok(match cert.verdict {
        Verdict::Feasible => EXIT_OK,
        Verdict::InfeasibleAtDegree => EXIT_INFEASIBLE,
    })
}

fn average_cmd(a: &AverageArgs, s: &mut Session) -> Res {
    let flow = read_flow(s, &a.flow)?;
    let theta = read_form(s, &a.form)?;
    let avg = average(&flow, &theta, a.samples)?;
    let form = avg.form.pruned(1e-14);
    s.emit(a.out.as_deref(), &io::form_to_json(&form))?;
    let report = check_adapted(&flow, &form, a.eps)?;
    let summary = json!({"samples": a.samples, "degree": avg.degree, "fit_residual": avg.fit_residual,
                         "adaptation": adaptation_json(&report)});
    s.say(&serde_json::to_string(&summary).expect("json serializes"));
    Ok(EXIT_OK)
}

fn embed(a: &EmbedArgs, seed: u64, s: &mut Session) -> Res {
    let flow = read_flow(s, &a.flow)?;
    let theta = read_form(s, &a.form)?;
    let (metric, emb, pot) = if a.optimize {
        let metric = build_metric(&flow, &theta, None, 1e-3)?;
        let m = a.m.unwrap_or(2 * flow.dim() + 2);
        let emb = optimize_embedding(&metric, m, a.degree, a.iters, 1e-10)?;
        let pot = build_potential(&emb, &flow, &lagrangian(&flow, &theta)?)?;
        (metric, emb, pot)
    } else {
        embed_flat(&flow, &theta)?
    };
    let starts = random_points(seed, a.points, flow.dim());
    let verify = verify_embedding(&flow, &emb, &pot, &starts, a.t_end, a.tol)?;

    std::fs::create_dir_all(&a.out_dir).map_err(|e| Failure::error(format!("{}: {e}", a.out_dir.display())))?;
    let metric_json = json!({
        "dim": metric.dim,
        "entries": metric.entries,
        "theta": serde_json::from_str::<Value>(&io::form_to_json(&metric.theta)).expect("form json"),
        "c": metric.c,
        "c_history": metric.c_history,
        "min_eigenvalue": metric.min_eigenvalue,
        "duality_residual": metric.duality_residual,
        "symbolic": metric.symbolic,
        "fit_residual": metric.fit_residual,
    });
    let potential = Potential::Extended(Box::new(pot.clone()));
    let report = json!({
        "flat": !a.optimize,
        "target_dim": emb.target_dim(),
        "gram_residual": emb.residual,
        "min_gram_det": emb.min_gram_det,
        "min_separation": emb.min_separation,
        "converged": emb.converged,
        "reach": pot.reach,
        "tube_radius": pot.eps,
        "identity_residual": pot.identity_residual,
        "gradient_residual": pot.gradient_residual,
        "coercive": pot.coercive,
        "verification": {
            "T": a.t_end,
            "dt": verify.dt,
            "tolerance": a.tol,
            "max_deviation": verify.max_deviation,
            "energy_drift": verify.energy_drift,
            "pass": verify.pass,
            "samples": verify.samples.iter().map(|r| json!({"y0": r.y0, "max_deviation": r.max_deviation,
                "energy_drift": r.energy_drift, "base_error": r.base_error})).collect::<Vec<_>>(),
        },
    });
    let files: [(&str, String); 5] = [
        ("metric.json", pretty(&metric_json)),
        ("embedding.json", serde_json::to_string_pretty(&emb).expect("embedding json") + "\n"),
        ("potential.json", serde_json::to_string_pretty(&potential).expect("potential json") + "\n"),
        ("samples.csv", io::samples_csv(&pot)),
        ("report.json", pretty(&report)),
    ];
    for (name, text) in &files {
        s.emit(Some(&a.out_dir.join(name)), text)?;
    }
    s.default_manifest = Some(a.out_dir.join("manifest.json"));
    s.say(&serde_json::to_string(&json!({"out_dir": a.out_dir, "max_deviation": verify.max_deviation, "pass": verify.pass}))
        .expect("json serializes"));
    Ok(EXIT_OK)
}

struct TmSetup {
    tm: TuringMachine,
    tape: Tape,
    d: Option<CompiledDiffeo>,
}

fn tm_setup(a: &TmArgs, s: &mut Session, compiled: bool) -> Result<TmSetup, Failure> {
    let path = s.input(&a.machine);
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::error(format!("{}: {e}", path.display())))?;
    let tm = TuringMachine::from_json(&text).map_err(|e| Failure::error(format!("{}: {e}", path.display())))?;
    let tape = match &a.tape {
        Some(t) => Tape::parse(t)?,
        None => Tape::blank(),
    };
    let d = if compiled { Some(compile(&tm, a.base.unwrap_or(10 * tm.k() as u64))?) } else { None };
    Ok(TmSetup { tm, tape, d })
}

fn tm_halting_set(a: &TmArgs, setup: &TmSetup) -> Result<(HaltingSet, Option<Vec<u8>>), Failure> {
    let d = setup.d.as_ref().expect("compiled");
    let window = match (a.window, &a.expect) {
        (Some(n), Some(text)) => {
            let w: Vec<u8> = text
                .chars()
                .map(|c| c.to_digit(10).map(|x| x as u8).ok_or_else(|| Failure::error(format!("bad symbol '{c}' in --expect"))))
                .collect::<Result<_, _>>()?;
            if w.len() != 2 * n + 1 {
                return Err(Failure::error(format!("--expect needs {} symbols for --window {n}", 2 * n + 1)));
            }
            Some(w)
        }
        (Some(n), None) => {
            let sym = symbolic_run(&setup.tm, &setup.tape, a.steps)?;
            sym.halted().then(|| sym.tape.window(n))
        }
        _ => None,
    };
    Ok((halting_set(d, window.as_deref())?, window))
}

fn tm(t: &Tm, s: &mut Session) -> Res {
    match t {
        Tm::Run(a) => {
            let setup = tm_setup(a, s, false)?;
            let r = symbolic_run(&setup.tm, &setup.tape, a.steps)?;
            let n = a.window.unwrap_or(2);
            let report = json!({
                "verdict": r.verdict.as_str(),
                "steps": r.steps,
                "state": setup.tm.states()[r.state],
                "tape": r.tape.to_string(),
                "window": r.tape.window(n),
            });
            s.emit(a.out.as_deref(), &pretty(&report))?;
            Ok(if r.halted() { EXIT_OK } else { EXIT_BUDGET })
        }
        Tm::Compile(a) => {
            let setup = tm_setup(a, s, true)?;
            let d = setup.d.as_ref().expect("compiled");
            d.check_layout()?;
            let mut v = serde_json::to_value(d).map_err(|e| Failure::error(e.to_string()))?;
            v["machine"] = serde_json::to_value(setup.tm.to_spec()).map_err(|e| Failure::error(e.to_string()))?;
            s.emit(a.out.as_deref(), &pretty(&v))?;
            Ok(EXIT_OK)
        }
        Tm::Orbit(a) => {
            let setup = tm_setup(a, s, true)?;
            let d = setup.d.as_ref().expect("compiled");
            let (set, window) = tm_halting_set(a, &setup)?;
            let run = run_orbit(d, &setup.tape, a.steps, &set)?;
            s.emit(a.out.as_deref(), &run.to_csv(&setup.tm))?;
            let summary = json!({
                "verdict": run.verdict.as_str(),
                "entry_step": run.entry_step,
                "steps": run.steps,
                "symbolic": run.symbolic.verdict.as_str(),
                "symbolic_steps": run.symbolic.steps,
                "conjugacy_holds": run.conjugacy_holds,
                "min_distance_to_u": q(&run.min_distance),
                "window": window,
            });
            let line = serde_json::to_string(&summary).expect("json serializes");
            if a.out.is_some() {
                s.say(&line);
            } else {
                eprintln!("{line}");
            }
            if !run.conjugacy_holds {
                return Err(Failure::error("orbit and symbolic run disagree"));
            }
            Ok(if run.verdict == OrbitVerdict::NoEntryWithinBudget { EXIT_BUDGET } else { EXIT_OK })
        }
        Tm::Suspend(a) => {
            let setup = tm_setup(a, s, true)?;
            let d = setup.d.clone().expect("compiled");
            let (set, window) = tm_halting_set(a, &setup)?;
            let y = d.start_point(&setup.tape)?;
            let flow = suspend(d.clone());
            let entry = flow.first_entry(&y, a.steps, |p| set.contains(p))?;
            let p0 = potwell::turing::SuspendedPoint { y: y.clone(), s: rational::int(0) };
            let time_one = match d.step_point(&y) {
                Ok(next) => Some(flow.eval(&p0, &rational::int(1))?.y == next),
                Err(_) => None,
            };
            let report = json!({
                "entry_time": entry,
                "horizon": a.steps,
                "form_on_field": q(&flow.form_on_field()),
                "time_one_is_step": time_one,
                "window": window,
            });
            s.emit(a.out.as_deref(), &pretty(&report))?;
            Ok(if entry.is_some() { EXIT_OK } else { EXIT_BUDGET })
        }
    }
}

fn verify_all(a: &VerifyArgs, seed: u64, s: &mut Session) -> Res {
    let ids: Vec<usize> =
        if a.only.is_empty() { (1..=potwell::acceptance::CRITERIA.len()).collect() } else { a.only.clone() };
    let mut results = Vec::new();
    for id in ids {
        if !(1..=potwell::acceptance::CRITERIA.len()).contains(&id) {
            return Err(Failure::error(format!("no criterion {id}")));
        }
        let r = potwell::acceptance::run_criterion(id, seed);
        s.say(&r.line());
        results.push(r);
    }
    let failing = results.iter().filter(|r| !r.pass).count();
    s.say(&format!("verify-all: {} of {} passed", results.len() - failing, results.len()));
    if let Some(out) = &a.out {
        let v: Vec<Value> = results
            .iter()
            .map(|r| json!({"id": r.id, "title": r.title, "pass": r.pass, "detail": r.detail, "seconds": r.seconds}))
            .collect();
        s.emit(Some(out), &pretty(&json!({"seed": seed, "criteria": v})))?;
    }
    Ok(if failing == 0 { EXIT_OK } else { EXIT_ERROR })
}
