//! The sequential process: repeated slice flows under a block schedule.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::expr::AnalyticFunction;
use crate::flow::{integrate_slice, FlowSettings, PolishStatus, TerminationReason, Trajectory};
use crate::point::Point;
use crate::schedule::{fairness_check, Schedule};

pub const DEFAULT_EPS_CRIT: f64 = 1e-7;
pub const DEFAULT_EPS_MOVE: f64 = 1e-10;
pub const DEFAULT_EPS_EIG: f64 = 1e-6;
pub const DEFAULT_MAX_STEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingCriteria {
    /// Threshold on the full gradient norm at `q_k`.
    pub eps_crit: f64,
    /// Threshold on the largest step displacement inside the window.
    pub eps_move: f64,
    /// Window length in steps; `None` means one schedule period.
    pub window: Option<usize>,
    pub max_steps: usize,
    /// Relative eigenvalue threshold used when classifying the limit.
    pub eps_eig: f64,
}

impl Default for StoppingCriteria {
    fn default() -> Self {
        StoppingCriteria {
            eps_crit: DEFAULT_EPS_CRIT,
            eps_move: DEFAULT_EPS_MOVE,
            window: None,
            max_steps: DEFAULT_MAX_STEPS,
            eps_eig: DEFAULT_EPS_EIG,
        }
    }
}

impl StoppingCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_crit > 0.0) || !(self.eps_move > 0.0) || !(self.eps_eig > 0.0) {
            return Err(Error::InvalidArgument("stopping thresholds must be positive".into()));
        }
        if self.window == Some(0) {
            return Err(Error::InvalidArgument("stopping window must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    Minimum,
    Saddle {
        index: usize,
    },
    Maximum,
    Degenerate,
    /// Gradient above the criticality threshold.
    NotCritical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointInfo {
    pub point: Point,
    pub grad_norm: f64,
    /// Hessian eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    pub morse_index: usize,
    pub nondegenerate: bool,
    pub classification: Classification,
}

/// Morse data at `q`. Nondegenerate means `min|λ| > eps_eig · max|λ|`.
pub fn classify_point(f: &AnalyticFunction, q: &Point, eps_crit: f64, eps_eig: f64) -> Result<CriticalPointInfo> {
    let grad_norm = f.grad_norm(q)?;
    let hess = f.hessian(q)?;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(hess).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let max_abs = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_abs = eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let nondegenerate = max_abs > 0.0 && min_abs > eps_eig * max_abs;
    let morse_index = eigenvalues.iter().filter(|&&l| l < 0.0).count();
    let classification = if grad_norm > eps_crit {
        Classification::NotCritical
    } else if !nondegenerate {
        Classification::Degenerate
    } else if morse_index == 0 {
        Classification::Minimum
    } else if morse_index == eigenvalues.len() {
        Classification::Maximum
    } else {
        Classification::Saddle { index: morse_index }
    };
    Ok(CriticalPointInfo { point: q.clone(), grad_norm, eigenvalues, morse_index, nondegenerate, classification })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub block: Block,
    pub point: Point,
    pub phi: f64,
    pub grad_norm: f64,
    pub arc_length: f64,
    pub termination_reason: TerminationReason,
    pub polish: PolishStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    ConvergedTo { point: Point, info: CriticalPointInfo },
    MaxStepsReached,
    Error { step: usize, reason: String },
}

impl Verdict {
    pub fn is_converged(&self) -> bool {
        matches!(self, Verdict::ConvergedTo { .. })
    }

    pub fn limit(&self) -> Option<&CriticalPointInfo> {
        match self {
            Verdict::ConvergedTo { info, .. } => Some(info),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessRun {
    pub initial: Point,
    pub initial_phi: f64,
    pub schedule: Schedule,
    pub steps: Vec<StepRecord>,
    pub verdict: Verdict,
    pub total_arc_length: f64,
    /// One trajectory per step, in step order.
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

impl ProcessRun {
    /// `q_0, q_1, …` including the initial point.
    pub fn points(&self) -> impl Iterator<Item = &Point> {
        std::iter::once(&self.initial).chain(self.steps.iter().map(|s| &s.point))
    }

    /// `φ(q_0), φ(q_1), …`.
    pub fn phis(&self) -> Vec<f64> {
        std::iter::once(self.initial_phi).chain(self.steps.iter().map(|s| s.phi)).collect()
    }
}

/// Runs the process from `q0` until the convergence test passes, a slice step
/// fails, or `stop.max_steps` steps have been taken.
pub fn run_process(
    f: &AnalyticFunction,
    domain: &Domain,
    q0: &Point,
    schedule: &Schedule,
    flow: &FlowSettings,
    stop: &StoppingCriteria,
) -> Result<ProcessRun> {
    let dim = f.arity();
    if q0.dim() != dim {
        return Err(Error::Arity { expected: dim, got: q0.dim() });
    }
    if !q0.is_finite() {
        return Err(Error::NonFinite("initial point"));
    }
    flow.validate()?;
    stop.validate()?;
    schedule.validate(dim)?;
    let fair = fairness_check(schedule, dim, 4 * schedule.period())?;
    if !fair.passed {
        return Err(Error::InvalidArgument(format!("schedule is not fair: missing indices {:?}", fair.missing)));
    }
    if !domain.contains(q0, 0.0)? {
        return Err(Error::InvalidArgument("initial point is outside the domain".into()));
    }

    let window = stop.window.unwrap_or_else(|| schedule.period());
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut trajectories = Vec::new();
    let mut moves: Vec<f64> = Vec::new();
    let mut q = q0.clone();
    let mut total = 0.0;
    let mut verdict = Verdict::MaxStepsReached;

    for (i, block) in schedule.iter(dim).take(stop.max_steps).enumerate() {
        let k = i + 1;
        let tr = integrate_slice(f, domain, &q, &block, flow)?;
        let next = tr.terminal.clone();
        let (phi, grad) = f.value_and_gradient(next.coords())?;
        let grad_norm = crate::point::norm(&grad);
        moves.push(q.dist(&next));
        total += tr.arc_length;
        steps.push(StepRecord {
            k,
            block,
            point: next.clone(),
            phi,
            grad_norm,
            arc_length: tr.arc_length,
            termination_reason: tr.termination_reason,
            polish: tr.polish,
        });
        let reason = tr.termination_reason;
        trajectories.push(tr);
        if reason != TerminationReason::Stationary {
            verdict = Verdict::Error { step: k, reason: reason.as_str().to_string() };
            break;
        }
        q = next;
        if grad_norm <= stop.eps_crit && moves.len() >= window {
            let recent = moves[moves.len() - window..].iter().fold(0.0f64, |m, v| m.max(*v));
            if recent <= stop.eps_move {
                let info = classify_point(f, &q, stop.eps_crit, stop.eps_eig)?;
                verdict = Verdict::ConvergedTo { point: q.clone(), info };
                break;
            }
        }
    }

    Ok(ProcessRun {
        initial: q0.clone(),
        initial_phi: f.eval(q0)?,
        schedule: schedule.clone(),
        steps,
        verdict,
        total_arc_length: total,
        trajectories,
    })
}

/// Runs one process per start; results come back in start order.
pub fn run_batch(
    exec: Exec,
    f: &AnalyticFunction,
    domain: &Domain,
    starts: &[Point],
    schedule: &Schedule,
    flow: &FlowSettings,
    stop: &StoppingCriteria,
) -> Vec<Result<ProcessRun>> {
    exec.map(starts, |q0| run_process(f, domain, q0, schedule, flow, stop))
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        BoxRegion { lo: vec![-half_width; dim], hi: vec![half_width; dim] }
    }
}

/// Points of `{∂f/∂y_j = 0}` inside `region`: sign changes of the partial
/// along grid edges, refined by bisection. `j` is zero-based.
pub fn component_zero_locus_sample(
    f: &AnalyticFunction,
    j: usize,
    region: &BoxRegion,
    grid: usize,
) -> Result<Vec<Point>> {
    let dim = f.arity();
    if grid < 2 {
        return Err(Error::InvalidArgument("grid must be at least 2".into()));
    }
    if j >= dim {
        return Err(Error::VariableOutOfRange { index: j + 1, arity: dim });
    }
    if region.lo.len() != dim || region.hi.len() != dim {
        return Err(Error::Arity { expected: dim, got: region.lo.len() });
    }
    let partial = |x: &[f64]| -> Result<f64> { Ok(f.partials(x, &[j])?.1[0]) };
    let node = |idx: &[usize]| -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| region.lo[a] + (region.hi[a] - region.lo[a]) * i as f64 / (grid - 1) as f64)
            .collect()
    };

    let total = grid.pow(dim as u32);
    let mut values = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        values.push(partial(&node(&idx))?);
        increment(&mut idx, grid);
    }

    let mut out = Vec::new();
    let mut idx = vec![0usize; dim];
    for flat in 0..total {
        let x = node(&idx);
        let gx = values[flat];
        if gx == 0.0 {
            out.push(Point::new(x.clone()));
        }
        for axis in 0..dim {
            if idx[axis] + 1 >= grid {
                continue;
            }
            let stride = grid.pow((dim - 1 - axis) as u32);
            let gy = values[flat + stride];
            if gx == 0.0 || gy == 0.0 || (gx > 0.0) == (gy > 0.0) {
                continue;
            }
            let mut nb = idx.clone();
            nb[axis] += 1;
            let (mut a, mut b) = (x.clone(), node(&nb));
            let mut ga = gx;
            for _ in 0..100 {
                let mid: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect();
                if mid == a || mid == b {
                    break;
                }
                let gm = partial(&mid)?;
                if gm == 0.0 {
                    a = mid.clone();
                    b = mid;
                    break;
                }
                if (gm > 0.0) == (ga > 0.0) {
                    a = mid;
                    ga = gm;
                } else {
                    b = mid;
                }
            }
            let pick = if partial(&a)?.abs() <= partial(&b)?.abs() { a } else { b };
            out.push(Point::new(pick));
        }
        increment(&mut idx, grid);
    }
    Ok(out)
}

/// Row-major multi-index increment, last axis fastest.
fn increment(idx: &mut [usize], grid: usize) {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < grid {
            return;
        }
        idx[a] = 0;
    }
}
