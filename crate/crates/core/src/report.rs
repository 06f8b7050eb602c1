//! Run artifacts: the JSON run summary, the trajectory CSV, and re-checking
//! both from disk.
//!
//! CSV columns are `step,t,y_1..y_M,phi,grad_norm,slice_grad_norm`, one row
//! per trajectory sample, floats written with 17 significant digits so they
//! parse back to the same bits.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::BoundaryReport;
use crate::error::{Error, Result};
use crate::flow::{FlowSettings, DESCENT_SLACK};
use crate::lojasiewicz::{LengthBoundReport, LojaEstimate};
use crate::point::Point;
use crate::process::{ProcessRun, StepRecord, StoppingCriteria, Verdict};
use crate::schedule::Schedule;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSummary {
    /// Smallest angle ratio over each step's samples, in step order.
    pub per_step_min: Vec<f64>,
    pub overall_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub run_index: usize,
    pub initial: Point,
    pub initial_phi: f64,
    pub schedule: Schedule,
    pub schedule_description: String,
    pub flow: FlowSettings,
    pub stopping: StoppingCriteria,
    pub steps: Vec<StepRecord>,
    pub verdict: Verdict,
    pub total_arc_length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lojasiewicz: Option<LojaEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_bound: Option<LengthBoundReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<AngleSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_check: Option<BoundaryReport>,
}

impl RunSummary {
    pub fn new(
        scenario: &str,
        run_index: usize,
        run: &ProcessRun,
        flow: &FlowSettings,
        stop: &StoppingCriteria,
    ) -> Self {
        RunSummary {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.to_string(),
            run_index,
            initial: run.initial.clone(),
            initial_phi: run.initial_phi,
            schedule: run.schedule.clone(),
            schedule_description: run.schedule.describe(),
            flow: flow.clone(),
            stopping: stop.clone(),
            steps: run.steps.clone(),
            verdict: run.verdict.clone(),
            total_arc_length: run.total_arc_length,
            lojasiewicz: None,
            length_bound: None,
            angle: None,
            boundary_check: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("run summary: {e}")))
    }
}

fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("write to string");
}

pub fn csv_header(dim: usize) -> String {
    let mut h = String::from("step,t");
    for j in 1..=dim {
        write!(h, ",y_{j}").expect("write to string");
    }
    h.push_str(",phi,grad_norm,slice_grad_norm\n");
    h
}

/// All trajectory samples of a run, step by step.
pub fn trajectory_csv(run: &ProcessRun) -> String {
    let mut out = csv_header(run.initial.dim());
    for (tr, st) in run.trajectories.iter().zip(&run.steps) {
        for s in &tr.samples {
            write!(out, "{}", st.k).expect("write to string");
            for v in
                std::iter::once(s.t).chain(s.x.coords().iter().copied()).chain([s.phi, s.grad_norm, s.slice_grad_norm])
            {
                out.push(',');
                num(&mut out, v);
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub step: usize,
    pub t: f64,
    pub y: Vec<f64>,
    pub phi: f64,
    pub grad_norm: f64,
    pub slice_grad_norm: f64,
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<CsvRow>> {
    let bad = |line: usize, msg: &str| Error::InvalidArgument(format!("trajectory csv line {line}: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6
        || cols[0] != "step"
        || cols[1] != "t"
        || cols[cols.len() - 3..] != ["phi", "grad_norm", "slice_grad_norm"]
    {
        return Err(bad(1, "unexpected header"));
    }
    let dim = cols.len() - 5;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(i + 2, "wrong number of fields"));
        }
        let step = f[0].parse::<usize>().map_err(|_| bad(i + 2, "bad step"))?;
        let v = f[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| bad(i + 2, "bad number"))?;
        rows.push(CsvRow {
            step,
            t: v[0],
            y: v[1..1 + dim].to_vec(),
            phi: v[1 + dim],
            grad_norm: v[2 + dim],
            slice_grad_norm: v[3 + dim],
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

fn check(checks: &mut Vec<Check>, name: &str, failures: Vec<String>) {
    checks.push(Check {
        name: name.into(),
        passed: failures.is_empty(),
        detail: failures.into_iter().take(5).collect::<Vec<_>>().join("; "),
    });
}

/// Re-checks the invariants of a run from its artifacts.
pub fn verify_artifacts(summary: &RunSummary, rows: &[CsvRow]) -> VerifyReport {
    let mut checks = Vec::new();

    let mut fails = Vec::new();
    let mut prev = summary.initial_phi;
    for s in &summary.steps {
        if s.phi > prev + DESCENT_SLACK {
            fails.push(format!("step {}: phi rose from {prev:e} to {:e}", s.k, s.phi));
        }
        prev = s.phi;
    }
    for w in rows.windows(2) {
        if w[1].phi > w[0].phi + DESCENT_SLACK {
            fails.push(format!("step {}: sample phi rose from {:e} to {:e}", w[1].step, w[0].phi, w[1].phi));
        }
    }
    check(&mut checks, "monotone_descent", fails);

    let mut fails = Vec::new();
    let mut prev_point = &summary.initial;
    for s in &summary.steps {
        for j in 0..prev_point.dim() {
            if !s.block.contains(j) && s.point[j].to_bits() != prev_point[j].to_bits() {
                fails.push(format!("step {}: frozen coordinate y_{} moved", s.k, j + 1));
            }
        }
        prev_point = &s.point;
    }
    let mut start_of_step: Option<&CsvRow> = None;
    for r in rows {
        match start_of_step {
            Some(first) if first.step == r.step => {
                if let Some(st) = summary.steps.iter().find(|s| s.k == r.step) {
                    for j in 0..r.y.len() {
                        if !st.block.contains(j) && r.y[j].to_bits() != first.y[j].to_bits() {
                            fails.push(format!(
                                "step {}: frozen coordinate y_{} moved inside the trajectory",
                                r.step,
                                j + 1
                            ));
                        }
                    }
                }
            }
            _ => start_of_step = Some(r),
        }
    }
    check(&mut checks, "slice_consistency", fails);

    let mut fails = Vec::new();
    if let Verdict::ConvergedTo { info, .. } = &summary.verdict {
        if !(info.grad_norm <= summary.stopping.eps_crit) {
            fails.push(format!("limit gradient {:e} exceeds {:e}", info.grad_norm, summary.stopping.eps_crit));
        }
    }
    check(&mut checks, "limit_criticality", fails);

    if let Some(lb) = &summary.length_bound {
        let fails = if lb.hypothesis_holds && !lb.bound_holds {
            vec![format!("total length {:e} exceeds r = {:e}", lb.total_length, lb.r)]
        } else {
            vec![]
        };
        check(&mut checks, "length_bound", fails);
    }

    let passed = checks.iter().all(|c| c.passed);
    VerifyReport { checks, passed }
}
