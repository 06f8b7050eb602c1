//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use seqflow_core::block::Block;
use seqflow_core::domain::{check_condition_ii_prime, Domain, DEFAULT_BOUNDARY_SAMPLES, DEFAULT_SIGN_EPS};
use seqflow_core::exec::Exec;
use seqflow_core::flow::FlowSettings;
use seqflow_core::lojasiewicz::{
    estimate_exponent, length_bound_check, verify_inequality, LojaEstimate, DEFAULT_SAFETY,
};
use seqflow_core::perturb::{escape_starts, escape_statistics, perturb_function, EscapeConfig, RadialPerturbation};
use seqflow_core::process::{run_batch, run_process, ProcessRun, StoppingCriteria, Verdict};
use seqflow_core::report::{trajectory_csv, RunSummary};
use seqflow_core::scenarios::{builtin, Scenario, BUILTIN_NAMES};
use seqflow_core::schedule::{fairness_check, Schedule};
use seqflow_core::{AnalyticFunction, Point};

const STARTS: usize = 20;
const START_SEED: u64 = 2024;
const SLACK: f64 = 1e-10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn quadratic() -> Scenario {
    builtin("quadratic_ab").unwrap()
}

/// Closed-form coordinate minimisation of a(x+y)² + b(x−y)²: the free
/// coordinate becomes −ρ times the other, ρ = (a−b)/(a+b).
fn recursion_oracle(q0: [f64; 2], first_free: usize, steps: usize) -> Vec<[f64; 2]> {
    let rho = (2.0 - 1.0) / (2.0 + 1.0);
    let mut q = q0;
    let mut out = Vec::new();
    let mut free = first_free;
    for _ in 0..steps {
        q[free] = -rho * q[1 - free];
        out.push(q);
        free = 1 - free;
    }
    out
}

fn phi_quadratic(q: [f64; 2]) -> f64 {
    2.0 * (q[0] + q[1]).powi(2) + (q[0] - q[1]).powi(2)
}

fn criterion_1(runs: &mut Vec<ProcessRun>) -> Outcome {
    let s = quadratic();
    let schedule = Schedule::cyclic_starting_at(1, 2, 1).unwrap();
    let run = run_process(
        &s.f,
        &s.domain,
        &Point::from([1.0, 1.0]),
        &schedule,
        &FlowSettings::default(),
        &StoppingCriteria::default(),
    )
    .unwrap();
    let oracle = recursion_oracle([1.0, 1.0], 0, 20);
    let mut notes = Vec::new();
    let mut ok = run.steps.len() >= 20;
    if !ok {
        notes.push(format!("only {} steps", run.steps.len()));
    }
    let mut max_err = 0.0f64;
    for (st, q) in run.steps.iter().zip(&oracle) {
        max_err = max_err.max((st.point[0] - q[0]).abs()).max((st.point[1] - q[1]).abs());
    }
    ok &= max_err <= 1e-8;
    notes.push(format!("max iterate error {max_err:.2e}"));

    // expected ratios from the oracle itself
    let mut phis = vec![phi_quadratic([1.0, 1.0])];
    phis.extend(oracle.iter().map(|q| phi_quadratic(*q)));
    let phis_run = run.phis();
    let mut worst = 0.0f64;
    for k in 0..19.min(phis_run.len() - 1) {
        let expected = phis[k + 1] / phis[k];
        let got = phis_run[k + 1] / phis_run[k];
        worst = worst.max((got - expected).abs());
    }
    ok &= worst <= 1e-6;
    notes.push(format!("max phi-ratio deviation from oracle {worst:.2e} (oracle ratios 1/3 then 1/9)"));

    let nontrivial = run.steps.iter().take_while(|s| s.arc_length > 1e-6).count();
    ok &= nontrivial >= 20;
    notes.push(format!("{nontrivial} leading steps with arc length > 1e-6 (need 20)"));
    runs.push(run);
    outcome(ok, notes.join(", "))
}

fn batch(s: &Scenario, schedule: &Schedule, seed: u64) -> Vec<(Point, Result<ProcessRun, String>)> {
    let starts = s.random_starts(STARTS, seed).unwrap();
    let results = run_batch(
        Exec::Parallel,
        &s.f,
        &s.domain,
        &starts,
        schedule,
        &FlowSettings::default(),
        &StoppingCriteria::default(),
    );
    starts.into_iter().zip(results.into_iter().map(|r| r.map_err(|e| e.to_string()))).collect()
}

fn tally(
    label: &str,
    results: Vec<(Point, Result<ProcessRun, String>)>,
    runs: &mut Vec<ProcessRun>,
    notes: &mut Vec<String>,
) -> bool {
    let mut good = 0;
    let total = results.len();
    let mut first_bad = None;
    for (q0, r) in results {
        match r {
            Ok(run) => {
                let pass = match &run.verdict {
                    Verdict::ConvergedTo { info, .. } => info.grad_norm <= 1e-6 && run.steps.len() <= 10_000,
                    _ => false,
                };
                if pass {
                    good += 1;
                } else if first_bad.is_none() {
                    first_bad = Some(format!("{q0:?} -> {:?}", verdict_tag(&run.verdict)));
                }
                runs.push(run);
            }
            Err(e) => {
                if first_bad.is_none() {
                    first_bad = Some(format!("{q0:?} -> {e}"));
                }
            }
        }
    }
    let ok = good == total;
    if !ok {
        notes.push(format!("{label}: {good}/{total} converged, e.g. {}", first_bad.unwrap_or_default()));
    } else {
        notes.push(format!("{label}: {good}/{total}"));
    }
    ok
}

fn verdict_tag(v: &Verdict) -> String {
    match v {
        Verdict::ConvergedTo { info, .. } => format!("converged |grad|={:.1e}", info.grad_norm),
        Verdict::MaxStepsReached => "max_steps_reached".into(),
        Verdict::Error { step, reason } => format!("error at step {step}: {reason}"),
    }
}

fn criterion_2(runs: &mut Vec<ProcessRun>) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in BUILTIN_NAMES {
        let s = builtin(name).unwrap();
        ok &= tally(name, batch(&s, &s.schedule_default, START_SEED), runs, &mut notes);
    }
    outcome(ok, notes.join("; "))
}

fn criterion_3(runs: &mut Vec<ProcessRun>) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in BUILTIN_NAMES {
        let s = builtin(name).unwrap();
        let m = s.dim();
        let mut all = true;
        let mut sub = Vec::new();
        for seed in 0..5u64 {
            let schedule = Schedule::RandomFair { blocks: s.blocks.clone(), seed, window: 3 * m };
            let fair = fairness_check(&schedule, m, 1000).unwrap();
            all &= fair.passed;
            all &= tally(&format!("seed {seed}"), batch(&s, &schedule, START_SEED + 1 + seed), runs, &mut sub);
        }
        if !all {
            notes.push(format!(
                "{name}: {}",
                sub.iter().filter(|n| !n.ends_with("20/20")).cloned().collect::<Vec<_>>().join(", ")
            ));
        } else {
            notes.push(format!("{name}: 5x20 converged"));
        }
        ok &= all;
        // an unfair schedule that never frees the last coordinate
        let unfair = Schedule::ExplicitSets { sets: (0..m - 1).map(Block::single).collect() };
        let rep = fairness_check(&unfair, m, 100).unwrap();
        let rejected = !rep.passed && rep.missing == vec![m];
        let refused = run_process(
            &s.f,
            &s.domain,
            &s.suggested_starts[0],
            &unfair,
            &FlowSettings::default(),
            &StoppingCriteria::default(),
        )
        .is_err();
        if !(rejected && refused) {
            notes.push(format!("{name}: unfair schedule not rejected"));
            ok = false;
        }
    }
    outcome(ok, notes.join("; "))
}

fn criterion_4(runs: &[ProcessRun]) -> Outcome {
    let mut step_violations = 0;
    let mut sample_violations = 0;
    for run in runs {
        for w in run.phis().windows(2) {
            if w[1] > w[0] + SLACK {
                step_violations += 1;
            }
        }
        for tr in &run.trajectories {
            for w in tr.samples.windows(2) {
                if w[1].phi > w[0].phi + SLACK {
                    sample_violations += 1;
                }
            }
        }
    }
    let ok = step_violations == 0 && sample_violations == 0 && !runs.is_empty();
    outcome(
        ok,
        format!("{} runs, {step_violations} step violations, {sample_violations} sample violations", runs.len()),
    )
}

fn criterion_5() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let cases = [("quadratic_ab", Point::zeros(2)), ("zigzag3d", Point::zeros(3))];
    for (i, (name, q)) in cases.iter().enumerate() {
        let s = builtin(name).unwrap();
        match estimate_exponent(&s.f, q, 0.5, 10_000, 100 + i as u64) {
            Ok(est) => {
                let check = verify_inequality(&s.f, &est, 10_000, 200 + i as u64).unwrap();
                let in_range = (0.45..=0.55).contains(&est.mu);
                ok &= in_range && check.passed && check.samples_checked >= 9_000;
                notes.push(format!(
                    "{name}: mu={:.4} c={:.4} verify {}/{} ok",
                    est.mu,
                    est.c,
                    check.samples_checked - check.violations,
                    check.samples_checked
                ));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("{name}: {e}"));
            }
        }
    }
    let lambda: f64 = 3.0;
    let f = AnalyticFunction::parse(3, &format!("{lambda:?}*(y1^2 + y2^2 + y3^2)")).unwrap();
    let est = estimate_exponent(&f, &Point::zeros(3), 0.5, 10_000, 300).unwrap();
    // |∇f| = 2λ|x| and f = λ|x|² give |∇f| = 2√λ f^{1/2}
    let sharp = 2.0 * lambda.sqrt();
    let rel = (est.c - sharp).abs() / sharp;
    let check = verify_inequality(&f, &est, 10_000, 301).unwrap();
    ok &= rel <= 0.2 && (0.45..=0.55).contains(&est.mu) && check.passed;
    notes.push(format!("3|x|^2: mu={:.4} c={:.4} vs 2*sqrt(3)={sharp:.4} ({:.1}%)", est.mu, est.c, 100.0 * rel));
    outcome(ok, notes.join("; "))
}

fn criterion_6() -> Outcome {
    let s = quadratic();
    // λ_min of the form xᵀAx with A = Hessian/2 = [[3,1],[1,3]] is 2
    let est = LojaEstimate {
        center: Point::zeros(2),
        radius: 0.5,
        c: 0.9 * 2.0 * 2.0f64.sqrt(),
        mu: 0.5,
        phi_at_center: 0.0,
        samples_used: 0,
    };
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for (q0, r) in batch(&s, &s.schedule_default, START_SEED + 77) {
        let run = r.unwrap();
        match length_bound_check(&run, &est, DEFAULT_SAFETY) {
            Ok(rep) => {
                worst = worst.max(rep.total_length / rep.r);
                if !(rep.hypothesis_holds && rep.total_length <= rep.r * (1.0 + 1e-3)) {
                    ok = false;
                    notes.push(format!("start {:?}: l={} length {:.4} > r", q0.coords(), rep.l, rep.total_length));
                }
            }
            Err(e) => {
                ok = false;
                notes.push(format!("start {:?}: {e}", q0.coords()));
            }
        }
    }
    notes.insert(0, format!("worst length/r {worst:.4}"));
    outcome(ok, notes.join("; "))
}

fn criterion_7() -> Outcome {
    let s = builtin("saddle_basin2d").unwrap();
    let saddle = Point::zeros(2);
    let cfg = EscapeConfig { trials: 200, offset: 1.0, slice: Some(Block::single(1)), seed: 7 };
    let starts = escape_starts(&saddle, &cfg).unwrap();
    let flow = FlowSettings::default();
    let stop = StoppingCriteria::default();
    let base = escape_statistics(Exec::Parallel, &s.f, &s.domain, &starts, &s.schedule_default, &flow, &stop);
    let pert = RadialPerturbation::new(Point::from([0.35, 0.6]), Point::from([1.0, 0.0]), 1, 1e-3).unwrap();
    let psi = perturb_function(&s.f, &pert).unwrap();
    let after = escape_statistics(Exec::Parallel, &psi, &s.domain, &starts, &s.schedule_default, &flow, &stop);
    let ok = base.fraction(base.to_saddle) >= 0.30
        && after.fraction(after.to_saddle) <= 0.05
        && after.fraction(after.to_minimum) >= 0.95;
    outcome(
        ok,
        format!(
            "unperturbed {}/200 to saddle; perturbed (a={:.4}, b=1e-3) {}/200 to saddle, {}/200 to a minimum",
            base.to_saddle, pert.a, after.to_saddle, after.to_minimum
        ),
    )
}

fn criterion_8() -> Outcome {
    let s = builtin("zigzag3d").unwrap();
    let stop = StoppingCriteria { max_steps: 200, ..StoppingCriteria::default() };
    let run = run_process(
        &s.f,
        &s.domain,
        &Point::from([0.0, 0.5, 0.5]),
        &s.schedule_default,
        &FlowSettings::default(),
        &stop,
    )
    .unwrap();
    let pts: Vec<&Point> = run.points().collect();
    let moved = (1..pts.len()).take(50).filter(|&k| pts[k].dist(pts[k - 1]) > 1e-9).count();
    let phis = run.phis();
    let strict = phis.windows(2).take(50).all(|w| w[1] < w[0]);
    let reached = pts.iter().take(201).any(|p| p.norm() < 1e-4);
    let ok = moved == 50 && strict && reached;
    outcome(
        ok,
        format!(
            "{} steps taken, verdict {}; {moved}/50 moved, strict descent {strict}, reached 1e-4 {reached}",
            run.steps.len(),
            verdict_tag(&run.verdict)
        ),
    )
}

fn relative_fd_error(f: &AnalyticFunction, x: &Point) -> f64 {
    let g = f.gradient(x).unwrap();
    let scale = g.coords().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for j in 0..x.dim() {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fd = (f.eval(&xp).unwrap() - f.eval(&xm).unwrap()) / (2.0 * h);
        worst = worst.max((fd - g[j]).abs() / scale);
    }
    worst
}

fn criterion_9() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let pert = RadialPerturbation::new(Point::from([0.35, 0.6]), Point::from([1.0, 0.0]), 1, 1e-3).unwrap();
    for name in BUILTIN_NAMES {
        let s = builtin(name).unwrap();
        let pts = s.random_starts(100, 900).unwrap();
        let mut fns = vec![(name.to_string(), s.f.clone())];
        if s.dim() == 2 {
            fns.push((format!("{name}∘h"), perturb_function(&s.f, &pert).unwrap()));
        }
        for (label, f) in fns {
            let worst = pts.iter().map(|x| relative_fd_error(&f, x)).fold(0.0, f64::max);
            ok &= worst <= 1e-6;
            notes.push(format!("{label} {worst:.1e}"));
        }
    }
    outcome(ok, notes.join(", "))
}

fn criterion_10() -> Outcome {
    let d = Domain::ball(Point::zeros(2), 1.0).unwrap();
    let samples = d.sample_boundary(DEFAULT_BOUNDARY_SAMPLES, 10).unwrap();
    let good = AnalyticFunction::parse(2, "y1^2 + y2^2").unwrap();
    let rep = check_condition_ii_prime(&good, &d, &samples, DEFAULT_SIGN_EPS).unwrap();
    let bad = AnalyticFunction::parse(2, "(y1 - 2)^2 + y2^2").unwrap();
    let rep_bad = check_condition_ii_prime(&bad, &d, &samples, DEFAULT_SIGN_EPS).unwrap();
    let named = rep_bad.violations.iter().all(|v| v.component == Some(1));
    let ok = rep.passed && rep.samples_checked == 10_000 && !rep_bad.passed && named;
    outcome(
        ok,
        format!(
            "|x|^2: {} violations in {}; (x-2)^2+y^2: {} violations, all on component 1: {named}",
            rep.violations.len(),
            rep.samples_checked,
            rep_bad.violations.len()
        ),
    )
}

fn artifacts(runs: &[ProcessRun]) -> Vec<String> {
    let flow = FlowSettings::default();
    let stop = StoppingCriteria::default();
    runs.iter()
        .enumerate()
        .flat_map(|(i, r)| [trajectory_csv(r), RunSummary::new("replay", i, r, &flow, &stop).to_json()])
        .collect()
}

fn criterion_11() -> Outcome {
    let collect = |exec: Exec| {
        let mut out = Vec::new();
        for name in ["quadratic_ab", "navfn_demo", "saddle_basin2d"] {
            let s = builtin(name).unwrap();
            let starts = s.random_starts(5, 31).unwrap();
            let schedule = Schedule::RandomFair { blocks: s.blocks.clone(), seed: 4, window: 3 * s.dim() };
            for r in run_batch(
                exec,
                &s.f,
                &s.domain,
                &starts,
                &schedule,
                &FlowSettings::default(),
                &StoppingCriteria::default(),
            ) {
                out.push(r.unwrap());
            }
        }
        let est = estimate_exponent(&quadratic().f, &Point::zeros(2), 0.5, 2000, 5).unwrap();
        let mut texts = artifacts(&out);
        texts.push(serde_json::to_string(&est).unwrap());
        texts
    };
    let a = collect(Exec::Parallel);
    let b = collect(Exec::Parallel);
    let c = collect(Exec::Sequential);
    let ok = a == b && a == c;
    outcome(ok, format!("{} artifacts compared across two parallel runs and one sequential run", a.len()))
}

fn main() {
    let mut runs = Vec::new();
    let mut failed = 0;
    let mut report = |n: usize, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        if !o.passed {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {title}: {} ({:.1}s) {}",
            if o.passed { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    };
    report(1, "quadratic oracle", &mut || criterion_1(&mut runs));
    report(2, "convergence to a critical point", &mut || criterion_2(&mut runs));
    report(3, "fair random schedules", &mut || criterion_3(&mut runs));
    report(4, "monotone descent", &mut || criterion_4(&runs));
    report(5, "exponent estimate", &mut criterion_5);
    report(6, "length bound", &mut criterion_6);
    report(7, "saddle escape", &mut criterion_7);
    report(8, "zigzag nontriviality", &mut criterion_8);
    report(9, "gradient fidelity", &mut criterion_9);
    report(10, "component sign condition", &mut criterion_10);
    report(11, "determinism", &mut criterion_11);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
