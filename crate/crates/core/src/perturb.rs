//! Radial analytic perturbation of the coordinates.
//!
//! `h(x) = x + b·(x − o)·a·sinc(a·|x − o|²)` fixes `o`, and fixes `p` whenever
//! `a·|op|² = 2πk`. Composing `f` with `h` moves the stable sets of saddles off
//! the coordinate slices while leaving the minimum at `p` in place.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::expr::{scalar::sinc, AnalyticFunction, AnalyticMap, Expr};
use crate::flow::FlowSettings;
use crate::point::{norm, Point};
use crate::process::{run_process, Classification, StoppingCriteria, Verdict};
use crate::sampling;
use crate::schedule::Schedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialPerturbation {
    pub o: Point,
    pub p: Point,
    pub k: u32,
    pub a: f64,
    pub b: f64,
}

/// `sup_u max(|2cos u − sinc u|, |sinc u|)`: the largest stretch factor of the
/// radial profile per unit of `a·b`.
pub fn radial_stretch_sup() -> f64 {
    static SUP: OnceLock<f64> = OnceLock::new();
    *SUP.get_or_init(|| {
        let g = |u: f64| (2.0 * u.cos() - sinc(u)).abs().max(sinc(u).abs());
        // |2cos u − sinc u| ≤ 2 + 1/u, so the sup lives at small u
        let (n, hi) = (200_000, 50.0);
        let step = hi / n as f64;
        let (mut best_u, mut best) = (0.0, g(0.0));
        for i in 1..=n {
            let u = i as f64 * step;
            let v = g(u);
            if v > best {
                best = v;
                best_u = u;
            }
        }
        // golden-section refinement around the grid maximum
        let (mut lo, mut hi) = ((best_u - step).max(0.0), best_u + step);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let m1 = hi - r * (hi - lo);
            let m2 = lo + r * (hi - lo);
            if g(m1) < g(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        best.max(g(0.5 * (lo + hi)))
    })
}

impl RadialPerturbation {
    /// Builds the perturbation with `a = 2πk / |op|²`, rejecting amplitudes
    /// at or above the injectivity bound.
    pub fn new(o: Point, p: Point, k: u32, b: f64) -> Result<Self> {
        if o.dim() != p.dim() {
            return Err(Error::Arity { expected: o.dim(), got: p.dim() });
        }
        if !o.is_finite() || !p.is_finite() {
            return Err(Error::NonFinite("perturbation center"));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be a positive integer".into()));
        }
        let d2 = o.dist(&p).powi(2);
        if !(d2 > 0.0) {
            return Err(Error::InvalidArgument("o and p must differ".into()));
        }
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::InvalidArgument(format!("b must be non-negative, got {b}")));
        }
        let a = 2.0 * PI * k as f64 / d2;
        let bound = 1.0 / (a * radial_stretch_sup());
        if b >= bound {
            return Err(Error::InjectivityBound { b, bound });
        }
        Ok(RadialPerturbation { o, p, k, a, b })
    }

    pub fn dim(&self) -> usize {
        self.o.dim()
    }

    /// Largest admissible `b` for this `a` (exclusive).
    pub fn injectivity_bound(&self) -> f64 {
        1.0 / (self.a * radial_stretch_sup())
    }

    /// `h(x)` evaluated directly, without building expressions.
    pub fn apply(&self, x: &Point) -> Point {
        let r2 = x.dist(&self.o).powi(2);
        let s = self.b * self.a * sinc(self.a * r2);
        Point::new(x.coords().iter().zip(self.o.coords()).map(|(xi, oi)| xi + s * (xi - oi)).collect())
    }
}

pub fn make_h(pert: &RadialPerturbation) -> AnalyticMap {
    let dim = pert.dim();
    let vars: Vec<Expr> = (0..dim).map(Expr::var).collect();
    let factor =
        Expr::constant(pert.b * pert.a) * (Expr::constant(pert.a) * Expr::dist_sq(&vars, pert.o.coords())).sinc();
    let components = vars
        .iter()
        .zip(pert.o.coords())
        .map(|(v, &oi)| {
            let shifted = if oi == 0.0 { v.clone() } else { v - oi };
            AnalyticFunction::new(dim, v + &(&factor * &shifted)).expect("variables in range")
        })
        .collect();
    AnalyticMap::new(components).expect("square map")
}

/// `ψ = f ∘ h`.
pub fn perturb_function(f: &AnalyticFunction, pert: &RadialPerturbation) -> Result<AnalyticFunction> {
    if f.arity() != pert.dim() {
        return Err(Error::Arity { expected: f.arity(), got: pert.dim() });
    }
    f.compose(&make_h(pert))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonResult {
    pub point: Point,
    pub grad_norm: f64,
    pub iterations: usize,
    pub eigenvalues: Vec<f64>,
    pub positive_definite: bool,
}

/// Full Newton iteration on `∇f = 0` from `x0`, stopping when the gradient
/// no longer decreases or drops below `tol`.
pub fn newton_critical(f: &AnalyticFunction, x0: &Point, tol: f64, max_iter: usize) -> Result<NewtonResult> {
    let mut x = x0.clone();
    let mut g = f.gradient(&x)?;
    let mut gn = g.norm();
    let mut iterations = 0;
    while gn > tol && iterations < max_iter {
        let hess = f.hessian(&x)?;
        let rhs = DVector::from_iterator(g.dim(), g.coords().iter().map(|v| -v));
        let Some(step) = hess.lu().solve(&rhs) else { break };
        let cand = Point::new(x.coords().iter().zip(step.iter()).map(|(a, d)| a + d).collect());
        let gc = f.gradient(&cand)?;
        if !(gc.norm() < gn) {
            break;
        }
        x = cand;
        g = gc;
        gn = g.norm();
        iterations += 1;
    }
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(f.hessian(&x)?).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let positive_definite = eigenvalues.iter().all(|&l| l > 0.0);
    Ok(NewtonResult { point: x, grad_norm: gn, iterations, eigenvalues, positive_definite })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub perturbation: RadialPerturbation,
    pub injectivity_bound: f64,
    /// `|h(o) − o|` and `|h(p) − p|`.
    pub fixed_point_residuals: [f64; 2],
    /// Newton from `p` under `ψ`.
    pub minimum: NewtonResult,
    pub minimum_shift: f64,
}

pub fn perturb_report(f: &AnalyticFunction, pert: &RadialPerturbation) -> Result<PerturbReport> {
    let psi = perturb_function(f, pert)?;
    let h = make_h(pert);
    let res_o = h.apply(&pert.o)?.dist(&pert.o);
    let res_p = h.apply(&pert.p)?.dist(&pert.p);
    let minimum = newton_critical(&psi, &pert.p, 1e-13, 50)?;
    Ok(PerturbReport {
        perturbation: pert.clone(),
        injectivity_bound: pert.injectivity_bound(),
        fixed_point_residuals: [res_o, res_p],
        minimum_shift: minimum.point.dist(&pert.p),
        minimum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeConfig {
    pub trials: usize,
    /// Starts lie within this distance of the saddle.
    pub offset: f64,
    /// When set, starts move only these coordinates away from the saddle.
    pub slice: Option<Block>,
    pub seed: u64,
}

impl Default for EscapeConfig {
    fn default() -> Self {
        EscapeConfig { trials: 200, offset: 1e-3, slice: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeOutcome {
    Minimum,
    Saddle,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub trials: usize,
    pub to_minimum: usize,
    pub to_saddle: usize,
    pub unresolved: usize,
    pub outcomes: Vec<EscapeOutcome>,
}

impl EscapeReport {
    pub fn fraction(&self, count: usize) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            count as f64 / self.trials as f64
        }
    }
}

/// Starts within `offset` of `saddle`, never equal to it.
pub fn escape_starts(saddle: &Point, cfg: &EscapeConfig) -> Result<Vec<Point>> {
    if !(cfg.offset > 0.0) {
        return Err(Error::InvalidArgument("offset must be positive".into()));
    }
    let free: Vec<usize> = match &cfg.slice {
        Some(b) => {
            b.check_dim(saddle.dim())?;
            b.indices().to_vec()
        }
        None => (0..saddle.dim()).collect(),
    };
    let mut out = Vec::with_capacity(cfg.trials);
    for i in 0..cfg.trials {
        let mut rng = sampling::rng(sampling::substream(cfg.seed, i as u64));
        loop {
            let dir = sampling::unit_vector(&mut rng, free.len());
            let u: f64 = rng.random();
            let r = cfg.offset * u.powf(1.0 / free.len() as f64);
            if r == 0.0 {
                continue;
            }
            let mut x = saddle.clone();
            for (&j, d) in free.iter().zip(&dir) {
                x[j] += r * d;
            }
            if x != *saddle {
                out.push(x);
                break;
            }
        }
    }
    Ok(out)
}

/// Runs the process under `g` from every start and tallies where it ends.
pub fn escape_statistics(
    exec: Exec,
    g: &AnalyticFunction,
    domain: &Domain,
    starts: &[Point],
    schedule: &Schedule,
    flow: &FlowSettings,
    stop: &StoppingCriteria,
) -> EscapeReport {
    let outcomes: Vec<EscapeOutcome> = exec.map(starts, |q0| match run_process(g, domain, q0, schedule, flow, stop) {
        Ok(run) => match run.verdict {
            Verdict::ConvergedTo { info, .. } => match info.classification {
                Classification::Minimum => EscapeOutcome::Minimum,
                Classification::Saddle { .. } => EscapeOutcome::Saddle,
                _ => EscapeOutcome::Unresolved,
            },
            _ => EscapeOutcome::Unresolved,
        },
        Err(_) => EscapeOutcome::Unresolved,
    });
    let count = |o| outcomes.iter().filter(|&&x| x == o).count();
    EscapeReport {
        trials: outcomes.len(),
        to_minimum: count(EscapeOutcome::Minimum),
        to_saddle: count(EscapeOutcome::Saddle),
        unresolved: count(EscapeOutcome::Unresolved),
        outcomes,
    }
}

/// Escape statistics of the perturbed function `f ∘ h` from starts near `saddle`.
#[allow(clippy::too_many_arguments)]
pub fn saddle_escape_test(
    exec: Exec,
    f: &AnalyticFunction,
    pert: &RadialPerturbation,
    domain: &Domain,
    saddle: &Point,
    cfg: &EscapeConfig,
    schedule: &Schedule,
    flow: &FlowSettings,
    stop: &StoppingCriteria,
) -> Result<EscapeReport> {
    let psi = perturb_function(f, pert)?;
    let starts = escape_starts(saddle, cfg)?;
    Ok(escape_statistics(exec, &psi, domain, &starts, schedule, flow, stop))
}

/// `max |h(x) − x|` over `n` uniform samples in `B_radius(center)`.
pub fn max_displacement(pert: &RadialPerturbation, center: &Point, radius: f64, n: usize, seed: u64) -> f64 {
    let mut rng = sampling::rng(seed);
    (0..n)
        .map(|_| {
            let x = sampling::uniform_in_ball(&mut rng, center, radius);
            let hx = pert.apply(&x);
            norm(&hx.coords().iter().zip(x.coords()).map(|(a, b)| a - b).collect::<Vec<_>>())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pert(b: f64) -> RadialPerturbation {
        RadialPerturbation::new(Point::from([0.35, 0.6]), Point::from([1.0, 0.0]), 1, b).unwrap()
    }

    #[test]
    fn stretch_sup_exceeds_two() {
        let s = radial_stretch_sup();
        assert!(s > 2.0 && s < 2.2, "{s}");
    }

    #[test]
    fn fixes_o_and_p() {
        let pr = pert(1e-3);
        let h = make_h(&pr);
        assert!(h.apply(&pr.o).unwrap().dist(&pr.o) <= 1e-12);
        assert!(h.apply(&pr.p).unwrap().dist(&pr.p) <= 1e-12);
        assert_eq!(pr.a * pr.o.dist(&pr.p).powi(2), 2.0 * PI);
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let pr = pert(0.0);
        let h = make_h(&pr);
        let mut rng = sampling::rng(3);
        for _ in 0..100 {
            let x = sampling::uniform_in_ball(&mut rng, &Point::zeros(2), 3.0);
            assert_eq!(h.apply(&x).unwrap(), x);
        }
    }

    #[test]
    fn expression_matches_direct_form() {
        let pr = pert(1e-2);
        let h = make_h(&pr);
        let mut rng = sampling::rng(5);
        for _ in 0..100 {
            let x = sampling::uniform_in_ball(&mut rng, &Point::zeros(2), 2.0);
            assert!(h.apply(&x).unwrap().dist(&pr.apply(&x)) <= 1e-15);
        }
    }

    #[test]
    fn injectivity_bound_enforced() {
        let o = Point::from([0.35, 0.6]);
        let p = Point::from([1.0, 0.0]);
        let bound = pert(0.0).injectivity_bound();
        assert!(matches!(RadialPerturbation::new(o.clone(), p.clone(), 1, bound), Err(Error::InjectivityBound { .. })));
        assert!(RadialPerturbation::new(o.clone(), p.clone(), 1, 0.99 * bound).is_ok());
        assert!(RadialPerturbation::new(o.clone(), o.clone(), 1, 0.0).is_err());
        assert!(RadialPerturbation::new(o, p, 0, 0.0).is_err());
    }

    #[test]
    fn radial_profile_monotone_below_bound() {
        // r ↦ r(1 + a b sinc(a r²)) has positive derivative when b < bound
        let pr = pert(0.0);
        let b = 0.999 * pr.injectivity_bound();
        let a = pr.a;
        let prof = |r: f64| r * (1.0 + a * b * sinc(a * r * r));
        let mut prev = prof(0.0);
        for i in 1..20_000 {
            let v = prof(i as f64 * 1e-4);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn minimum_persists() {
        let f = AnalyticFunction::parse(2, "y1^4/4 - y1^2/2 + y2^2").unwrap();
        let rep = perturb_report(&f, &pert(1e-3)).unwrap();
        assert!(rep.minimum.grad_norm <= 1e-12);
        assert!(rep.minimum.positive_definite);
        assert!(rep.minimum_shift <= 1e-2);
    }

    #[test]
    fn empty_escape_report() {
        let f = AnalyticFunction::parse(2, "y1^2 + y2^2").unwrap();
        let d = Domain::ball(Point::zeros(2), 2.0).unwrap();
        let cfg = EscapeConfig { trials: 0, ..EscapeConfig::default() };
        let rep = saddle_escape_test(
            Exec::Sequential,
            &f,
            &pert(1e-3),
            &d,
            &Point::zeros(2),
            &cfg,
            &Schedule::cyclic(1, 2),
            &FlowSettings::default(),
            &StoppingCriteria::default(),
        )
        .unwrap();
        assert_eq!(rep.trials, 0);
        assert_eq!(rep.fraction(rep.to_saddle), 0.0);
    }

    #[test]
    fn slice_starts_keep_frozen_coordinates() {
        let cfg = EscapeConfig { trials: 50, offset: 0.5, slice: Some(Block::single(1)), seed: 9 };
        let s = escape_starts(&Point::zeros(2), &cfg).unwrap();
        assert_eq!(s.len(), 50);
        assert!(s.iter().all(|p| p[0] == 0.0 && p[1] != 0.0 && p[1].abs() <= 0.5));
    }
}
