//! Compact domains and sample-based checks of the boundary conditions.
//!
//! Two boundary conditions are checked on sampled boundary points:
//!
//! * inwardness: `-∇φ` points into the domain, `⟨∇φ, ν⟩ ≥ 0` for the
//!   outward normal `ν`;
//! * component-wise inwardness: for every coordinate `j`, `∂φ/∂y_j` and
//!   `∂f_a/∂y_j` share a sign (or one of them vanishes), where `f_a` is the
//!   boundary defining function with outward gradient. This makes every
//!   projected field inward on every slice boundary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::expr::AnalyticFunction;
use crate::point::{dot, norm, Point};
use crate::sampling;

/// Derivative components with magnitude at or below this count as zero.
pub const DEFAULT_SIGN_EPS: f64 = 1e-10;

/// Default number of boundary samples used by scenario checks.
pub const DEFAULT_BOUNDARY_SAMPLES: usize = 10_000;

const PROJECTION_ATTEMPTS: usize = 200;
const RAY_GRID: usize = 256;

#[derive(Debug, Clone)]
pub enum DomainKind {
    Ball {
        center: Point,
        radius: f64,
    },
    /// Intersection of the sublevel sets `{f_a ≤ 0}`, each `∇f_a` outward.
    /// `interior` is any interior point and `reach` bounds the distance from
    /// it to the boundary along any ray.
    LevelSet {
        boundary_fns: Vec<AnalyticFunction>,
        interior: Point,
        reach: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Domain {
    kind: DomainKind,
    dim: usize,
}

impl Domain {
    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidDomain(format!("ball radius must be positive, got {radius}")));
        }
        if !center.is_finite() {
            return Err(Error::InvalidDomain("ball center must be finite".into()));
        }
        let dim = center.dim();
        Ok(Domain { kind: DomainKind::Ball { center, radius }, dim })
    }

    pub fn level_set(boundary_fns: Vec<AnalyticFunction>, interior: Point, reach: f64) -> Result<Self> {
        let dim = interior.dim();
        if boundary_fns.is_empty() {
            return Err(Error::InvalidDomain("need at least one boundary function".into()));
        }
        if let Some(f) = boundary_fns.iter().find(|f| f.arity() != dim) {
            return Err(Error::Arity { expected: dim, got: f.arity() });
        }
        if !(reach > 0.0 && reach.is_finite()) {
            return Err(Error::InvalidDomain(format!("reach must be positive, got {reach}")));
        }
        for f in &boundary_fns {
            if f.eval(&interior)? >= 0.0 {
                return Err(Error::InvalidDomain("reference point is not interior".into()));
            }
        }
        Ok(Domain { kind: DomainKind::LevelSet { boundary_fns, interior, reach }, dim })
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Arity { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// Closed-domain membership up to `tol`.
    pub fn contains(&self, x: &Point, tol: f64) -> Result<bool> {
        self.contains_slice(x.coords(), tol)
    }

    pub fn contains_slice(&self, x: &[f64], tol: f64) -> Result<bool> {
        self.check_dim(x)?;
        Ok(match &self.kind {
            DomainKind::Ball { center, radius } => crate::point::dist(x, center.coords()) <= radius + tol,
            DomainKind::LevelSet { boundary_fns, .. } => {
                boundary_fns.iter().all(|f| f.eval_slice(x).map(|v| v <= tol).unwrap_or(false))
            }
        })
    }

    /// Value and gradient of the boundary defining function active at `x`
    /// (for a ball, `|x-c|² - r²`; for level sets, the largest `f_a`).
    pub fn defining_function(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x)?;
        match &self.kind {
            DomainKind::Ball { center, radius } => {
                let d: Vec<f64> = x.iter().zip(center.coords()).map(|(a, c)| a - c).collect();
                let v = dot(&d, &d) - radius * radius;
                Ok((v, d.iter().map(|di| 2.0 * di).collect()))
            }
            DomainKind::LevelSet { boundary_fns, .. } => {
                let mut best: Option<(usize, f64)> = None;
                for (a, f) in boundary_fns.iter().enumerate() {
                    let v = f.eval_slice(x)?;
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((a, v));
                    }
                }
                let (a, _) = best.expect("non-empty");
                boundary_fns[a].value_and_gradient(x)
            }
        }
    }

    /// `n` points on the boundary, deterministic in `seed`.
    pub fn sample_boundary(&self, n: usize, seed: u64) -> Result<Vec<Point>> {
        if n == 0 {
            return Err(Error::InvalidArgument("boundary sample count must be at least 1".into()));
        }
        let mut rng = sampling::rng(seed);
        match &self.kind {
            DomainKind::Ball { center, radius } => Ok((0..n)
                .map(|_| {
                    let u = sampling::unit_vector(&mut rng, self.dim);
                    Point::new(center.coords().iter().zip(&u).map(|(c, ui)| c + radius * ui).collect())
                })
                .collect()),
            DomainKind::LevelSet { interior, reach, .. } => {
                let mut out = Vec::with_capacity(n);
                while out.len() < n {
                    out.push(self.project_ray(&mut rng, interior, *reach)?);
                }
                Ok(out)
            }
        }
    }

    fn project_ray<R: Rng>(&self, rng: &mut R, origin: &Point, reach: f64) -> Result<Point> {
        let g = |t: f64, d: &[f64]| -> Option<f64> {
            let x: Vec<f64> = origin.coords().iter().zip(d).map(|(o, di)| o + t * di).collect();
            self.defining_function(&x).ok().map(|(v, _)| v)
        };
        'attempt: for _ in 0..PROJECTION_ATTEMPTS {
            let d = sampling::unit_vector(rng, self.dim);
            // first sign change along the ray
            let mut lo = 0.0;
            let mut hi = None;
            for k in 1..=RAY_GRID {
                let t = reach * k as f64 / RAY_GRID as f64;
                match g(t, &d) {
                    Some(v) if v >= 0.0 => {
                        hi = Some(t);
                        break;
                    }
                    Some(_) => lo = t,
                    None => continue 'attempt,
                }
            }
            let Some(mut hi) = hi else { continue };
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                match g(mid, &d) {
                    Some(v) if v >= 0.0 => hi = mid,
                    Some(_) => lo = mid,
                    None => continue 'attempt,
                }
                if hi - lo <= 1e-15 * hi.max(1.0) {
                    break;
                }
            }
            // Newton polish along the ray on the active defining function
            let mut t = 0.5 * (lo + hi);
            for _ in 0..8 {
                let x: Vec<f64> = origin.coords().iter().zip(&d).map(|(o, di)| o + t * di).collect();
                let Ok((v, grad)) = self.defining_function(&x) else { continue 'attempt };
                let slope = dot(&grad, &d);
                if slope.abs() < 1e-14 {
                    break;
                }
                let step = v / slope;
                t -= step;
                if step.abs() <= 1e-16 * t.abs().max(1.0) {
                    break;
                }
            }
            let x: Vec<f64> = origin.coords().iter().zip(&d).map(|(o, di)| o + t * di).collect();
            let Ok((v, grad)) = self.defining_function(&x) else { continue };
            if v.abs() <= 1e-10 && norm(&grad) > 1e-10 {
                return Ok(Point::new(x));
            }
        }
        Err(Error::ProjectionFailed(PROJECTION_ATTEMPTS))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub point: Point,
    /// Coordinate index (one-based) for the component check; `None` for the
    /// inwardness check.
    pub component: Option<usize>,
    /// `∂φ/∂y_j`, or `⟨∇φ, ν⟩` for the inwardness check.
    pub phi_derivative: f64,
    /// `∂f_a/∂y_j`, or `|∇f_a|` for the inwardness check.
    pub boundary_derivative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub samples_checked: usize,
    pub violations: Vec<Violation>,
    pub passed: bool,
}

impl BoundaryReport {
    fn from_violations(samples_checked: usize, violations: Vec<Violation>) -> Self {
        let passed = violations.is_empty();
        BoundaryReport { samples_checked, violations, passed }
    }
}

/// Records a violation wherever `⟨-∇φ, ν⟩ > 0`.
pub fn check_inward(phi: &AnalyticFunction, domain: &Domain, samples: &[Point]) -> Result<BoundaryReport> {
    let per_sample = Exec::default().map(samples, |x| -> Result<Option<Violation>> {
        let (_, gphi) = phi.value_and_gradient(x.coords())?;
        let (_, gf) = domain.defining_function(x.coords())?;
        let nf = norm(&gf);
        let along = dot(&gphi, &gf) / nf;
        Ok((-along > 0.0).then(|| Violation {
            point: x.clone(),
            component: None,
            phi_derivative: along,
            boundary_derivative: nf,
        }))
    });
    let mut violations = Vec::new();
    for v in per_sample {
        violations.extend(v?);
    }
    Ok(BoundaryReport::from_violations(samples.len(), violations))
}

/// Component-wise sign agreement of `∇φ` and the outward `∇f_a`.
pub fn check_condition_ii_prime(
    phi: &AnalyticFunction,
    domain: &Domain,
    samples: &[Point],
    sign_eps: f64,
) -> Result<BoundaryReport> {
    let per_sample = Exec::default().map(samples, |x| -> Result<Vec<Violation>> {
        let (_, gphi) = phi.value_and_gradient(x.coords())?;
        let (_, gf) = domain.defining_function(x.coords())?;
        Ok(gphi
            .iter()
            .zip(&gf)
            .enumerate()
            .filter(|(_, (p, f))| p.abs() > sign_eps && f.abs() > sign_eps && p.signum() != f.signum())
            .map(|(j, (p, f))| Violation {
                point: x.clone(),
                component: Some(j + 1),
                phi_derivative: *p,
                boundary_derivative: *f,
            })
            .collect())
    });
    let mut violations = Vec::new();
    for v in per_sample {
        violations.extend(v?);
    }
    Ok(BoundaryReport::from_violations(samples.len(), violations))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_disk(dim: usize) -> Domain {
        Domain::ball(Point::zeros(dim), 1.0).unwrap()
    }

    #[test]
    fn ball_membership() {
        let d = unit_disk(2);
        assert!(d.contains(&Point::from([0.0, 0.0]), 0.0).unwrap());
        assert!(!d.contains(&Point::from([2.0, 0.0]), 0.0).unwrap());
        assert!(d.contains(&Point::from([1.0, 0.0]), 0.0).unwrap());
        assert!(d.contains(&Point::from([0.0, 3.0]), 0.0).is_ok());
        assert!(d.contains(&Point::from([0.0]), 0.0).is_err());
        assert!(Domain::ball(Point::zeros(2), 0.0).is_err());
    }

    #[test]
    fn sphere_samples() {
        let d = unit_disk(3);
        let s = d.sample_boundary(4, 11).unwrap();
        assert_eq!(s.len(), 4);
        for p in &s {
            assert!((p.norm() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(s, d.sample_boundary(4, 11).unwrap());
        assert!(d.sample_boundary(0, 11).is_err());
    }

    #[test]
    fn level_set_samples_lie_on_boundary() {
        // unit disk written as a level set, minus a small disk around (0.5, 0)
        let outer = AnalyticFunction::parse(2, "y1^2 + y2^2 - 1").unwrap();
        let hole = AnalyticFunction::parse(2, "0.01 - ((y1 - 0.5)^2 + y2^2)").unwrap();
        let d = Domain::level_set(vec![outer, hole], Point::from([-0.5, 0.0]), 3.0).unwrap();
        let pts = d.sample_boundary(200, 3).unwrap();
        for p in &pts {
            let (v, g) = d.defining_function(p.coords()).unwrap();
            assert!(v.abs() <= 1e-10);
            assert!(norm(&g) > 0.0);
            assert!(d.contains(p, 1e-10).unwrap());
        }
        assert_eq!(pts, d.sample_boundary(200, 3).unwrap());
    }

    #[test]
    fn inward_check_radial_cases() {
        let d = unit_disk(3);
        let s = d.sample_boundary(500, 1).unwrap();
        let bowl = AnalyticFunction::parse(3, "y1^2 + y2^2 + y3^2").unwrap();
        assert!(check_inward(&bowl, &d, &s).unwrap().passed);
        let cap = AnalyticFunction::parse(3, "-(y1^2 + y2^2 + y3^2)").unwrap();
        let r = check_inward(&cap, &d, &s).unwrap();
        assert_eq!(r.violations.len(), s.len());
        // shifted bowl: ⟨-2(x-p), x⟩ = -2 + 2⟨p,x⟩ < 0 for |p| < 1
        let shifted = AnalyticFunction::parse(3, "(y1 - 0.3)^2 + (y2 + 0.4)^2 + (y3 - 0.5)^2").unwrap();
        assert!(check_inward(&shifted, &d, &s).unwrap().passed);
    }

    #[test]
    fn component_sign_check_examples() {
        let d = unit_disk(2);
        let bowl = AnalyticFunction::parse(2, "y1^2 + y2^2").unwrap();
        let s = d.sample_boundary(1000, 2).unwrap();
        assert!(check_condition_ii_prime(&bowl, &d, &s, DEFAULT_SIGN_EPS).unwrap().passed);

        // x² − xy at (0,1): ∇φ = (−1, 0), ∇f = (0, 2); each pair has a zero
        let f = AnalyticFunction::parse(2, "y1^2 - y1*y2").unwrap();
        let r = check_condition_ii_prime(&f, &d, &[Point::from([0.0, 1.0])], DEFAULT_SIGN_EPS).unwrap();
        assert!(r.passed);

        // x² + 3xy at (0,1), (−1,0) and (1/√2, 1/√2)
        let g = AnalyticFunction::parse(2, "y1^2 + 3*y1*y2").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let pts = [Point::from([0.0, 1.0]), Point::from([-1.0, 0.0]), Point::from([h, h])];
        assert!(check_condition_ii_prime(&g, &d, &pts, DEFAULT_SIGN_EPS).unwrap().passed);
        // but at (0.6, -0.8): ∂φ/∂y1 = 1.2 - 2.4 < 0 while ∂f/∂y1 > 0
        let r = check_condition_ii_prime(&g, &d, &[Point::from([0.6, -0.8])], DEFAULT_SIGN_EPS).unwrap();
        assert!(!r.passed);
        assert_eq!(r.violations[0].component, Some(1));
    }
}
