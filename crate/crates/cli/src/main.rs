//! `seqflow`: run sequential slice-flow processes on scenarios and write
//! plot-ready artifacts.
//!
//! Exit codes: 0 success, 1 usage, configuration or I/O error, 2 a run did not
//! converge or an invariant check failed.

mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use seqflow_core::domain::{check_condition_ii_prime, DEFAULT_BOUNDARY_SAMPLES, DEFAULT_SIGN_EPS};
use seqflow_core::flow::FlowSettings;
use seqflow_core::lojasiewicz::{
    angle_condition, estimate_exponent, length_bound_check, verify_inequality, InequalityCheck, LojaEstimate,
    DEFAULT_SAFETY,
};
use seqflow_core::perturb::{
    escape_starts, escape_statistics, perturb_function, perturb_report, saddle_escape_test, EscapeConfig, EscapeReport,
    PerturbReport, RadialPerturbation,
};
use seqflow_core::process::{run_batch, Classification, StoppingCriteria, Verdict};
use seqflow_core::report::{
    parse_trajectory_csv, trajectory_csv, AngleSummary, RunSummary, VerifyReport, SCHEMA_VERSION,
};
use seqflow_core::scenarios::{list_scenarios, resolve, KnownCritical, Scenario, ScenarioInfo};
use seqflow_core::{Block, Exec, Point};

use crate::args::{apply_overrides, parse_schedule, parse_start, point_for, resolve_starts, StartSpec};

const EXIT_ERROR: u8 = 1;
const EXIT_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "seqflow", version, about = "Sequential slice-flow descent on analytic functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the process from one or more starts and write trajectory_<i>.csv and run_<i>.json.
    Run(RunArgs),
    /// Re-check run artifacts (run_<i>.json plus trajectory_<i>.csv) in files or directories.
    Verify {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Estimate the gradient-inequality constants at a critical point.
    Estimate(EstimateArgs),
    /// Compose a scenario's function with a radial perturbation.
    Perturb(PerturbArgs),
    /// List the built-in scenarios as JSON.
    List,
    /// Print a scenario in the TOML file format.
    Export { scenario: String },
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name or path to a scenario TOML file.
    scenario: String,
    /// Start point `x1,x2,...` or `random(seed,count)`; repeatable. Defaults to the scenario's starts.
    #[arg(long = "start", value_name = "START", allow_hyphen_values = true)]
    starts: Vec<String>,
    /// Schedule override: `cyclic`, `cyclic:D`, `sets:1;2,3` or `random:SEED:WINDOW`.
    #[arg(long)]
    schedule: Option<String>,
    /// One-based block used by the first step (cyclic and explicit schedules).
    #[arg(long, value_name = "M")]
    first_block: Option<usize>,
    /// Flow setting override `key=value`, e.g. `rtol=1e-10`; repeatable.
    #[arg(long = "flow", value_name = "KEY=VALUE")]
    flow: Vec<String>,
    /// Stopping criterion override `key=value`, e.g. `max_steps=50`; repeatable.
    #[arg(long = "stop", value_name = "KEY=VALUE")]
    stop: Vec<String>,
    /// Output directory.
    #[arg(long, env = "SEQFLOW_OUT", default_value = "seqflow-out")]
    out: PathBuf,
    /// Estimate gradient-inequality constants at each limit.
    #[arg(long)]
    lojasiewicz: bool,
    /// Check the finite-length bound at each limit (implies --lojasiewicz).
    #[arg(long)]
    length_bound: bool,
    /// Record the angle ratio of every step.
    #[arg(long)]
    angle: bool,
    /// Check the component sign condition on sampled boundary points.
    #[arg(long)]
    boundary_check: bool,
    /// Radius of the estimate ball.
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    /// Samples used by the estimate.
    #[arg(long, default_value_t = 4000)]
    samples: usize,
    /// Seed for estimates and boundary sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run starts one after another instead of on the worker pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct EstimateArgs {
    scenario: String,
    /// Critical point `x1,x2,...`; defaults to the scenario's first known critical point.
    #[arg(long, allow_hyphen_values = true)]
    at: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    #[arg(long, default_value_t = 4000)]
    samples: usize,
    /// Fresh samples used to check the fitted inequality.
    #[arg(long, default_value_t = 2000)]
    check_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report to this file.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PerturbArgs {
    scenario: String,
    /// Centre of the perturbation `x1,x2,...`.
    #[arg(long, allow_hyphen_values = true)]
    o: String,
    /// Point kept fixed; defaults to the scenario's first known minimum.
    #[arg(long, allow_hyphen_values = true)]
    p: Option<String>,
    /// Positive integer frequency: `a = 2πk / |op|²`.
    #[arg(long, default_value_t = 1)]
    k: u32,
    /// Amplitude; must stay below the injectivity bound.
    #[arg(long, default_value_t = 1e-3)]
    b: f64,
    /// Output directory for the perturbed scenario and the report.
    #[arg(long, env = "SEQFLOW_OUT", default_value = "seqflow-out")]
    out: PathBuf,
    /// Escape trials near a saddle under both functions; 0 skips the test.
    #[arg(long, default_value_t = 0)]
    escape_trials: usize,
    /// Saddle for the escape test; defaults to the first known saddle.
    #[arg(long, allow_hyphen_values = true)]
    saddle: Option<String>,
    /// Restrict escape starts to these one-based coordinates, e.g. `2` or `1,3`.
    #[arg(long)]
    escape_slice: Option<String>,
    #[arg(long, default_value_t = 1e-3)]
    escape_offset: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify { paths } => cmd_verify(&paths),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::List => cmd_list(),
        Command::Export { scenario } => cmd_export(&scenario),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serialises");
    s.push('\n');
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(scenario: &str) -> Result<Scenario> {
    resolve(scenario).with_context(|| format!("loading scenario '{scenario}'"))
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    let scn = load(&a.scenario)?;
    let specs = a.starts.iter().map(|s| parse_start(s).context("--start")).collect::<Result<Vec<StartSpec>>>()?;
    let starts = resolve_starts(&scn, &specs)?;
    let mut schedule = match &a.schedule {
        Some(s) => parse_schedule(&scn, s)?,
        None => scn.schedule_default.clone(),
    };
    if let Some(m) = a.first_block {
        schedule = schedule.with_first_block(m).context("--first-block")?;
    }
    let flow: FlowSettings = apply_overrides(&FlowSettings::default(), &a.flow, "flow")?;
    flow.validate().context("flow settings")?;
    let stop: StoppingCriteria = apply_overrides(&StoppingCriteria::default(), &a.stop, "stop")?;
    stop.validate().context("stopping criteria")?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let exec = if a.sequential { Exec::Sequential } else { Exec::Parallel };
    let boundary = if a.boundary_check {
        let pts = scn.domain.sample_boundary(DEFAULT_BOUNDARY_SAMPLES, a.seed)?;
        Some(check_condition_ii_prime(&scn.f, &scn.domain, &pts, DEFAULT_SIGN_EPS)?)
    } else {
        None
    };

    let runs = run_batch(exec, &scn.f, &scn.domain, &starts, &schedule, &flow, &stop);
    let mut failed = false;
    for (i, run) in runs.into_iter().enumerate() {
        let run = run.with_context(|| format!("run {i} from {:?}", starts[i].coords()))?;
        let mut summary = RunSummary::new(&scn.name, i, &run, &flow, &stop);
        summary.boundary_check = boundary.clone();
        if a.angle {
            let per_step_min = run
                .trajectories
                .iter()
                .map(|tr| Ok(angle_condition(&scn.f, tr, &tr.block)?.delta_min))
                .collect::<Result<Vec<f64>>>()?;
            let overall_min = per_step_min.iter().copied().fold(1.0, f64::min);
            summary.angle = Some(AngleSummary { per_step_min, overall_min });
        }
        if let (true, Some(limit)) = (a.lojasiewicz || a.length_bound, run.verdict.limit()) {
            match estimate_exponent(&scn.f, &limit.point, a.radius, a.samples, a.seed.wrapping_add(i as u64)) {
                Ok(est) => {
                    if a.length_bound {
                        match length_bound_check(&run, &est, DEFAULT_SAFETY) {
                            Ok(lb) => {
                                failed |= lb.hypothesis_holds && !lb.bound_holds;
                                summary.length_bound = Some(lb);
                            }
                            Err(e) => eprintln!("run {i}: length bound skipped: {e}"),
                        }
                    }
                    summary.lojasiewicz = Some(est);
                }
                Err(e) => eprintln!("run {i}: estimate skipped: {e}"),
            }
        }
        write(&a.out.join(format!("trajectory_{i}.csv")), &trajectory_csv(&run))?;
        write(&a.out.join(format!("run_{i}.json")), &summary.to_json())?;
        println!("run {i}: {} after {} steps", verdict_line(&run.verdict), run.steps.len());
        failed |= !run.verdict.is_converged();
    }
    Ok(if failed { EXIT_FAILED } else { 0 })
}

fn verdict_line(v: &Verdict) -> String {
    match v {
        Verdict::ConvergedTo { point, info } => {
            format!(
                "converged_to {:?} ({})",
                point.coords(),
                serde_json::to_string(&info.classification).unwrap_or_default()
            )
        }
        Verdict::MaxStepsReached => "max_steps_reached".into(),
        Verdict::Error { step, reason } => format!("error at step {step}: {reason}"),
    }
}

#[derive(Serialize)]
struct VerifyOutput {
    schema_version: u32,
    runs: Vec<VerifyEntry>,
    passed: bool,
}

#[derive(Serialize)]
struct VerifyEntry {
    file: String,
    report: VerifyReport,
}

fn run_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| run_index(f).is_some())
                .collect();
            found.sort_by_key(|f| run_index(f));
            out.extend(found);
        } else if p.is_file() {
            if run_index(p).is_none() {
                bail!("{} is not a run_<i>.json file", p.display());
            }
            out.push(p.clone());
        } else {
            bail!("{} does not exist", p.display());
        }
    }
    if out.is_empty() {
        bail!("no run_<i>.json files found");
    }
    Ok(out)
}

fn run_index(p: &Path) -> Option<usize> {
    p.file_name()?.to_str()?.strip_prefix("run_")?.strip_suffix(".json")?.parse().ok()
}

fn cmd_verify(paths: &[PathBuf]) -> Result<u8> {
    let files = run_files(paths)?;
    let mut entries = Vec::new();
    for f in files {
        let idx = run_index(&f).expect("filtered above");
        let text = fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
        let summary = RunSummary::from_json(&text).with_context(|| format!("parsing {}", f.display()))?;
        let csv_path = f.with_file_name(format!("trajectory_{idx}.csv"));
        let csv = fs::read_to_string(&csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
        let rows = parse_trajectory_csv(&csv).with_context(|| format!("parsing {}", csv_path.display()))?;
        let report = seqflow_core::report::verify_artifacts(&summary, &rows);
        for c in report.checks.iter().filter(|c| !c.passed) {
            eprintln!("{}: {} violated: {}", f.display(), c.name, c.detail);
        }
        entries.push(VerifyEntry { file: f.display().to_string(), report });
    }
    let passed = entries.iter().all(|e| e.report.passed);
    print!("{}", to_json(&VerifyOutput { schema_version: SCHEMA_VERSION, runs: entries, passed }));
    Ok(if passed { 0 } else { EXIT_FAILED })
}

#[derive(Serialize)]
struct EstimateOutput {
    schema_version: u32,
    scenario: String,
    estimate: LojaEstimate,
    check: InequalityCheck,
}

fn cmd_estimate(a: EstimateArgs) -> Result<u8> {
    let scn = load(&a.scenario)?;
    let at = match &a.at {
        Some(s) => point_for(&scn, s, "at")?,
        None => scn
            .known_critical_points
            .first()
            .map(|k| k.point.clone())
            .ok_or_else(|| anyhow!("scenario has no known critical point; pass --at"))?,
    };
    let estimate = estimate_exponent(&scn.f, &at, a.radius, a.samples, a.seed).context("estimate")?;
    let check =
        verify_inequality(&scn.f, &estimate, a.check_samples, a.seed.wrapping_add(1)).context("inequality check")?;
    let passed = check.passed;
    let text = to_json(&EstimateOutput { schema_version: SCHEMA_VERSION, scenario: scn.name.clone(), estimate, check });
    if let Some(path) = &a.output {
        write(path, &text)?;
    }
    print!("{text}");
    Ok(if passed { 0 } else { EXIT_FAILED })
}

#[derive(Serialize)]
struct PerturbOutput {
    schema_version: u32,
    scenario: String,
    perturbed_scenario: String,
    report: PerturbReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    escape: Option<EscapeComparison>,
}

#[derive(Serialize)]
struct EscapeComparison {
    saddle: Point,
    config: EscapeConfig,
    unperturbed: EscapeReport,
    perturbed: EscapeReport,
}

fn first_known(scn: &Scenario, pick: impl Fn(&KnownCritical) -> bool, what: &str) -> Result<Point> {
    scn.known_critical_points
        .iter()
        .find(|k| pick(k))
        .map(|k| k.point.clone())
        .ok_or_else(|| anyhow!("scenario {} has no known {what}; pass it explicitly", scn.name))
}

fn cmd_perturb(a: PerturbArgs) -> Result<u8> {
    let scn = load(&a.scenario)?;
    let o = point_for(&scn, &a.o, "o")?;
    let p = match &a.p {
        Some(s) => point_for(&scn, s, "p")?,
        None => first_known(&scn, |k| k.classification == Classification::Minimum, "minimum")?,
    };
    let pert = RadialPerturbation::new(o, p, a.k, a.b)?;
    let report = perturb_report(&scn.f, &pert)?;
    let psi = perturb_function(&scn.f, &pert)?;

    let mut perturbed = scn.clone();
    perturbed.name = format!("{}_perturbed", scn.name);
    perturbed.description = format!(
        "{} composed with the radial map h about o={:?}, fixing p={:?}, k={}, b={:e}",
        scn.name,
        pert.o.coords(),
        pert.p.coords(),
        pert.k,
        pert.b
    );
    perturbed.f = psi.clone();
    perturbed.known_critical_points = vec![KnownCritical {
        point: report.minimum.point.clone(),
        classification: if report.minimum.positive_definite {
            Classification::Minimum
        } else {
            Classification::Degenerate
        },
    }];

    let escape = if a.escape_trials > 0 {
        let saddle = match &a.saddle {
            Some(s) => point_for(&scn, s, "saddle")?,
            None => first_known(&scn, |k| matches!(k.classification, Classification::Saddle { .. }), "saddle")?,
        };
        let slice = match &a.escape_slice {
            Some(s) => {
                let idx = s
                    .split(',')
                    .map(|i| i.trim().parse::<usize>().with_context(|| format!("--escape-slice: bad index '{i}'")))
                    .collect::<Result<Vec<usize>>>()?;
                Some(Block::from_one_based(&idx).context("--escape-slice")?)
            }
            None => None,
        };
        let config = EscapeConfig { trials: a.escape_trials, offset: a.escape_offset, slice, seed: a.seed };
        let flow = FlowSettings::default();
        let stop = StoppingCriteria::default();
        let starts = escape_starts(&saddle, &config)?;
        let unperturbed =
            escape_statistics(Exec::Parallel, &scn.f, &scn.domain, &starts, &scn.schedule_default, &flow, &stop);
        let perturbed = saddle_escape_test(
            Exec::Parallel,
            &scn.f,
            &pert,
            &scn.domain,
            &saddle,
            &config,
            &scn.schedule_default,
            &flow,
            &stop,
        )?;
        Some(EscapeComparison { saddle, config, unperturbed, perturbed })
    } else {
        None
    };

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let scn_path = a.out.join(format!("{}.toml", perturbed.name));
    write(&scn_path, &perturbed.to_toml()?)?;
    let out = PerturbOutput {
        schema_version: SCHEMA_VERSION,
        scenario: scn.name.clone(),
        perturbed_scenario: scn_path.display().to_string(),
        report,
        escape,
    };
    let text = to_json(&out);
    write(&a.out.join(format!("perturb_{}.json", scn.name)), &text)?;
    print!("{text}");
    Ok(0)
}

#[derive(Serialize)]
struct ListOutput {
    schema_version: u32,
    scenarios: Vec<ScenarioInfo>,
}

fn cmd_list() -> Result<u8> {
    print!("{}", to_json(&ListOutput { schema_version: SCHEMA_VERSION, scenarios: list_scenarios() }));
    Ok(0)
}

fn cmd_export(scenario: &str) -> Result<u8> {
    print!("{}", load(scenario)?.to_toml()?);
    Ok(0)
}
