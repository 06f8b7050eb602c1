//! Projected gradient flow on a single slice.
//!
//! On the slice through `anchor` with free coordinates `n`, the flow is
//! `ẏ_j = -∂f/∂y_j` for `j ∈ n`, every other coordinate frozen. It is
//! integrated with the Dormand–Prince 5(4) pair until the restricted gradient
//! is below `eps_stat`, then optionally polished by Newton's method on the
//! restricted first-order conditions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::expr::AnalyticFunction;
use crate::point::{dist, norm, Point};

/// Accepted steps may raise `f` by at most this much.
pub const DESCENT_SLACK: f64 = 1e-10;
/// A polish step may raise `f` by at most this much.
pub const POLISH_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSettings {
    /// Stationarity threshold on the restricted gradient norm.
    pub eps_stat: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Flow-time budget for one slice.
    pub t_max: f64,
    /// Hard cap on accepted + rejected integrator steps.
    pub max_rk_steps: usize,
    pub newton_polish: bool,
    pub newton_tol: f64,
    pub max_polish_iters: usize,
    /// Polished points must stay within this distance of the flow terminal.
    pub polish_radius: f64,
    /// Membership tolerance used to detect domain exit.
    pub domain_tol: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings {
            eps_stat: 1e-9,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 10.0,
            rtol: 1e-9,
            atol: 1e-12,
            t_max: 1e4,
            max_rk_steps: 2_000_000,
            newton_polish: true,
            newton_tol: 1e-12,
            max_polish_iters: 12,
            polish_radius: 1e-3,
            domain_tol: 1e-8,
        }
    }
}

impl FlowSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_stat", self.eps_stat),
            ("h_min", self.h_min),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("t_max", self.t_max),
            ("newton_tol", self.newton_tol),
            ("polish_radius", self.polish_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return Err(Error::InvalidArgument(format!(
                "need h_min <= h_init <= h_max, got {} / {} / {}",
                self.h_min, self.h_init, self.h_max
            )));
        }
        if self.domain_tol < 0.0 {
            return Err(Error::InvalidArgument("domain_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Stationary,
    TimeBudget,
    LeftDomain,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::Stationary => "stationary",
            TerminationReason::TimeBudget => "time_budget",
            TerminationReason::LeftDomain => "left_domain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolishStatus {
    /// Polish disabled, or the start was already stationary.
    NotAttempted,
    /// Restricted gradient reduced to `newton_tol` or below.
    Converged,
    /// Newton made progress but stalled above `newton_tol`.
    Stalled,
    /// No Newton step satisfied the trust-region, domain and descent tests.
    Rejected,
    /// Restricted Hessian singular at the flow terminal.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Point,
    pub phi: f64,
    pub grad_norm: f64,
    pub slice_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub block: Block,
    pub samples: Vec<Sample>,
    pub arc_length: f64,
    pub terminal: Point,
    pub termination_reason: TerminationReason,
    pub polish: PolishStatus,
}

impl Trajectory {
    pub fn is_stationary(&self) -> bool {
        self.termination_reason == TerminationReason::Stationary
    }

    pub fn start(&self) -> &Point {
        &self.samples[0].x
    }

    /// Converts a non-stationary termination into the matching error.
    pub fn into_result(self) -> Result<Trajectory> {
        let last = self.samples.last().expect("at least one sample");
        match self.termination_reason {
            TerminationReason::Stationary => Ok(self),
            TerminationReason::LeftDomain => Err(Error::LeftDomain { t: last.t }),
            TerminationReason::TimeBudget => {
                Err(Error::TimeBudget { t: last.t, slice_grad_norm: last.slice_grad_norm })
            }
        }
    }
}

/// Sum of chord lengths between consecutive samples.
pub fn arc_length(samples: &[Sample]) -> f64 {
    samples.windows(2).map(|w| w[0].x.dist(&w[1].x)).sum()
}

/// `-∇f(x)` with the components outside `block` set to zero.
pub fn project_gradient(f: &AnalyticFunction, x: &Point, block: &Block) -> Result<Point> {
    block.check_dim(x.dim())?;
    let (_, g) = f.partials(x.coords(), block.indices())?;
    let mut out = Point::zeros(x.dim());
    for (&j, gj) in block.indices().iter().zip(&g) {
        out[j] = -gj;
    }
    Ok(out)
}

// Dormand–Prince 5(4) tableau. The field is autonomous, so the nodes are unused.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

/// Restricted field evaluation at a full point: `(f, -∂f/∂y_j for j ∈ free)`.
fn field(f: &AnalyticFunction, x: &[f64], free: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (v, g) = f.partials(x, free)?;
    Ok((v, g.into_iter().map(|d| -d).collect()))
}

fn make_sample(f: &AnalyticFunction, t: f64, x: &[f64], phi: f64, slice_field: &[f64]) -> Result<Sample> {
    let (_, g) = f.value_and_gradient(x)?;
    Ok(Sample { t, x: Point::new(x.to_vec()), phi, grad_norm: norm(&g), slice_grad_norm: norm(slice_field) })
}

enum StepOutcome {
    Accept { x: Vec<f64>, phi: f64, k7: Vec<f64>, err: f64 },
    Reject { err: f64, outside: bool },
}

struct Stepper<'a> {
    f: &'a AnalyticFunction,
    domain: &'a Domain,
    free: &'a [usize],
    s: &'a FlowSettings,
}

impl Stepper<'_> {
    fn attempt(&self, x: &[f64], phi: f64, k1: &[f64], h: f64) -> StepOutcome {
        let nf = self.free.len();
        let mut ks: Vec<Vec<f64>> = Vec::with_capacity(7);
        ks.push(k1.to_vec());
        let mut stage = x.to_vec();
        for s in 1..7 {
            for (i, &j) in self.free.iter().enumerate() {
                let incr: f64 = (0..s).map(|r| A[s][r] * ks[r][i]).sum();
                stage[j] = x[j] + h * incr;
            }
            match field(self.f, &stage, self.free) {
                Ok((_, k)) => ks.push(k),
                Err(_) => return StepOutcome::Reject { err: f64::INFINITY, outside: true },
            }
        }
        // stage 7 is evaluated at the fifth-order solution (FSAL)
        let x_new = stage;
        let mut err_sq = 0.0;
        for i in 0..nf {
            let j = self.free[i];
            let e: f64 = h * (0..7).map(|r| E[r] * ks[r][i]).sum::<f64>();
            let scale = self.s.atol + self.s.rtol * x[j].abs().max(x_new[j].abs());
            err_sq += (e / scale).powi(2);
        }
        let err = (err_sq / nf as f64).sqrt();
        if !(err <= 1.0) {
            return StepOutcome::Reject { err, outside: false };
        }
        if !self.domain.contains_slice(&x_new, self.s.domain_tol).unwrap_or(false) {
            return StepOutcome::Reject { err, outside: true };
        }
        let phi_new = match self.f.eval_slice(&x_new) {
            Ok(v) => v,
            Err(_) => return StepOutcome::Reject { err, outside: true },
        };
        if phi_new > phi + DESCENT_SLACK {
            return StepOutcome::Reject { err: 2.0, outside: false };
        }
        StepOutcome::Accept { x: x_new, phi: phi_new, k7: ks.pop().expect("seven stages"), err }
    }
}

/// Integrates the projected flow of `f` on the slice through `start` of type
/// `block` until it is stationary, leaves `domain`, or runs out of budget.
pub fn integrate_slice(
    f: &AnalyticFunction,
    domain: &Domain,
    start: &Point,
    block: &Block,
    settings: &FlowSettings,
) -> Result<Trajectory> {
    settings.validate()?;
    if start.dim() != f.arity() {
        return Err(Error::Arity { expected: f.arity(), got: start.dim() });
    }
    if domain.dim() != f.arity() {
        return Err(Error::Arity { expected: f.arity(), got: domain.dim() });
    }
    block.check_dim(f.arity())?;
    let free = block.indices();

    let mut x = start.coords().to_vec();
    let (mut phi, mut k) = field(f, &x, free)?;
    let mut t = 0.0;
    let mut samples = vec![make_sample(f, t, &x, phi, &k)?];

    let finish = |samples: Vec<Sample>, reason: TerminationReason, polish: PolishStatus| {
        let terminal = samples.last().expect("non-empty").x.clone();
        Trajectory {
            block: block.clone(),
            arc_length: arc_length(&samples),
            samples,
            terminal,
            termination_reason: reason,
            polish,
        }
    };

    if norm(&k) <= settings.eps_stat {
        return Ok(finish(samples, TerminationReason::Stationary, PolishStatus::NotAttempted));
    }

    let stepper = Stepper { f, domain, free, s: settings };
    let mut h = settings.h_init;
    let mut steps = 0usize;
    loop {
        if t >= settings.t_max || steps >= settings.max_rk_steps {
            return Ok(finish(samples, TerminationReason::TimeBudget, PolishStatus::NotAttempted));
        }
        steps += 1;
        let h_try = h.min(settings.t_max - t).max(settings.h_min);
        match stepper.attempt(&x, phi, &k, h_try) {
            StepOutcome::Accept { x: xn, phi: pn, k7, err } => {
                t += h_try;
                x = xn;
                phi = pn;
                k = k7;
                samples.push(make_sample(f, t, &x, phi, &k)?);
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (h_try * factor).clamp(settings.h_min, settings.h_max);
                if norm(&k) <= settings.eps_stat {
                    break;
                }
            }
            StepOutcome::Reject { err, outside } => {
                if h_try <= settings.h_min {
                    if outside {
                        return Ok(finish(samples, TerminationReason::LeftDomain, PolishStatus::NotAttempted));
                    }
                    // error control cannot be met at h_min; descent slack is what remains
                    return Ok(finish(samples, TerminationReason::TimeBudget, PolishStatus::NotAttempted));
                }
                let factor = if outside || !err.is_finite() { 0.25 } else { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) };
                h = (h_try * factor).max(settings.h_min);
            }
        }
    }

    let mut polish = PolishStatus::NotAttempted;
    if settings.newton_polish {
        let (status, polished) = newton_polish(f, domain, &x, phi, free, settings)?;
        polish = status;
        if let Some((xp, pp, kp)) = polished {
            if xp != x {
                samples.push(make_sample(f, t, &xp, pp, &kp)?);
            }
        }
    }
    Ok(finish(samples, TerminationReason::Stationary, polish))
}

type Polished = Option<(Vec<f64>, f64, Vec<f64>)>;

/// Damped Newton on `∂f/∂y_j = 0, j ∈ free`, started at the flow terminal.
fn newton_polish(
    f: &AnalyticFunction,
    domain: &Domain,
    x0: &[f64],
    phi0: f64,
    free: &[usize],
    s: &FlowSettings,
) -> Result<(PolishStatus, Polished)> {
    let mut x = x0.to_vec();
    let (_, mut k) = field(f, &x, free)?;
    let mut phi = phi0;
    let mut gnorm = norm(&k);
    let mut moved = false;
    let mut status = PolishStatus::Stalled;
    for _ in 0..s.max_polish_iters {
        if gnorm == 0.0 {
            break;
        }
        let hess = f.hessian_block(&x, free)?;
        let Some(delta) = solve_restricted(&hess, &k) else {
            if !moved {
                return Ok((PolishStatus::Degenerate, None));
            }
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut cand = x.clone();
            for (i, &j) in free.iter().enumerate() {
                cand[j] = x[j] + lambda * delta[i];
            }
            let ok = dist(&cand, x0) <= s.polish_radius && domain.contains_slice(&cand, s.domain_tol).unwrap_or(false);
            if ok {
                if let Ok((pc, kc)) = field(f, &cand, free) {
                    if pc <= phi0 + POLISH_SLACK {
                        accepted = Some((cand, pc, kc));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        let Some((cand, pc, kc)) = accepted else {
            if !moved {
                return Ok((PolishStatus::Rejected, None));
            }
            break;
        };
        let gn = norm(&kc);
        if moved && gn >= gnorm {
            break;
        }
        x = cand;
        phi = pc;
        k = kc;
        gnorm = gn;
        moved = true;
    }
    if gnorm <= s.newton_tol {
        status = PolishStatus::Converged;
    }
    if !moved {
        return Ok((status, None));
    }
    Ok((status, Some((x, phi, k))))
}

/// Newton step `δ` with `H δ = k` where `k = -∇f` on the free block; `None`
/// when the block Hessian is numerically singular.
fn solve_restricted(hess: &DMatrix<f64>, k: &[f64]) -> Option<Vec<f64>> {
    let eig = SymmetricEigen::new(hess.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(max > 0.0) || min <= 1e-12 * max.max(1.0) {
        return None;
    }
    let rhs = DVector::from_column_slice(k);
    hess.clone().lu().solve(&rhs).map(|d| d.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> AnalyticFunction {
        AnalyticFunction::parse(2, "2*(y1 + y2)^2 + (y1 - y2)^2").unwrap()
    }

    fn big_ball(dim: usize) -> Domain {
        Domain::ball(Point::zeros(dim), 10.0).unwrap()
    }

    #[test]
    fn projected_gradient_cases() {
        let f = quad();
        let p = Point::from([1.0, 1.0]);
        assert_eq!(project_gradient(&f, &p, &Block::all(2)).unwrap().coords(), &[-8.0, -8.0]);
        assert_eq!(project_gradient(&f, &p, &Block::single(0)).unwrap().coords(), &[-8.0, 0.0]);
        let origin = Point::zeros(2);
        assert_eq!(project_gradient(&f, &origin, &Block::single(1)).unwrap(), Point::zeros(2));
    }

    #[test]
    fn one_dimensional_step_on_quadratic() {
        let f = quad();
        let tr =
            integrate_slice(&f, &big_ball(2), &Point::from([1.0, 1.0]), &Block::single(0), &FlowSettings::default())
                .unwrap();
        assert!(tr.is_stationary());
        // restricted minimiser x = -y(a-b)/(a+b)
        assert!((tr.terminal[0] + 1.0 / 3.0).abs() <= 1e-8);
        assert_eq!(tr.terminal[1], 1.0);
        assert_eq!(tr.polish, PolishStatus::Converged);
        for s in &tr.samples {
            assert_eq!(s.x[1].to_bits(), 1.0f64.to_bits());
        }
        for w in tr.samples.windows(2) {
            assert!(w[1].phi <= w[0].phi + DESCENT_SLACK);
        }
        assert!((tr.arc_length - 4.0 / 3.0).abs() <= 1e-8);
    }

    #[test]
    fn stationary_start_is_trivial() {
        let f = quad();
        let p = Point::from([-1.0 / 3.0 * 0.0, 0.0]);
        let tr = integrate_slice(&f, &big_ball(2), &p, &Block::single(0), &FlowSettings::default()).unwrap();
        assert_eq!(tr.samples.len(), 1);
        assert_eq!(tr.arc_length, 0.0);
        assert_eq!(tr.terminal, p);
    }

    #[test]
    fn straight_line_flow_length() {
        let f = AnalyticFunction::parse(2, "y1^2 + y2^2").unwrap();
        let tr =
            integrate_slice(&f, &big_ball(2), &Point::from([1.0, 0.0]), &Block::single(0), &FlowSettings::default())
                .unwrap();
        assert!(tr.terminal.norm() <= 1e-12);
        assert!((tr.arc_length - 1.0).abs() <= 1e-6);
        // x(t) = e^{-2t}
        for s in tr.samples.iter().filter(|s| s.t < 5.0) {
            assert!((s.x[0] - (-2.0 * s.t).exp()).abs() <= 1e-7, "t={}", s.t);
        }
    }

    #[test]
    fn leaving_the_domain_is_reported() {
        // linear in y1: the restricted flow runs off at unit speed
        let f = AnalyticFunction::parse(2, "-y1 + y2^2").unwrap();
        let d = Domain::ball(Point::zeros(2), 1.0).unwrap();
        let tr =
            integrate_slice(&f, &d, &Point::from([0.0, 0.0]), &Block::single(0), &FlowSettings::default()).unwrap();
        assert_eq!(tr.termination_reason, TerminationReason::LeftDomain);
        assert!(tr.terminal[0] > 0.99);
        assert!(matches!(tr.into_result(), Err(Error::LeftDomain { .. })));
    }

    #[test]
    fn time_budget_is_reported() {
        let f = AnalyticFunction::parse(1, "y1^4").unwrap();
        let s = FlowSettings { t_max: 5.0, newton_polish: false, ..FlowSettings::default() };
        let tr = integrate_slice(&f, &big_ball(1), &Point::from([1.0]), &Block::single(0), &s).unwrap();
        assert_eq!(tr.termination_reason, TerminationReason::TimeBudget);
    }

    #[test]
    fn degenerate_polish_is_flagged() {
        // restricted function y1^4: Hessian vanishes at the limit
        let f = AnalyticFunction::parse(1, "y1^4").unwrap();
        let s = FlowSettings { eps_stat: 1e-3, ..FlowSettings::default() };
        let tr = integrate_slice(&f, &big_ball(1), &Point::from([1.0]), &Block::single(0), &s).unwrap();
        assert!(tr.is_stationary());
        assert_ne!(tr.polish, PolishStatus::Converged);
    }

    #[test]
    fn invalid_settings_rejected() {
        let f = quad();
        let s = FlowSettings { h_min: 1.0, h_init: 0.5, ..FlowSettings::default() };
        assert!(integrate_slice(&f, &big_ball(2), &Point::from([1.0, 1.0]), &Block::single(0), &s).is_err());
    }
}
