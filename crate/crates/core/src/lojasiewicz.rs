//! Łojasiewicz data near a critical point and the trajectory-length bound.
//!
//! The gradient inequality `|∇f(x)| > c·|f(x) − f(q)|^μ` is estimated from
//! samples in a ball around `q`, then re-checked on fresh samples. The length
//! bound sums step arc lengths once an iterate is close enough in value.

use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::expr::AnalyticFunction;
use crate::flow::Trajectory;
use crate::point::{norm, Point};
use crate::process::{ProcessRun, DEFAULT_EPS_CRIT};
use crate::sampling;

/// Samples with `|f(x) − f(q)|` below this are ignored.
pub const VALUE_FLOOR: f64 = 1e-14;
/// Shrink factor applied to the fitted constant.
pub const C_SHRINK: f64 = 0.9;
/// Fraction of each radius bin kept as the lower envelope.
pub const ENVELOPE_FRACTION: f64 = 0.05;
pub const RADIUS_BINS: usize = 20;
/// Cap on envelope re-selection rounds.
pub const ENVELOPE_ITERS: usize = 50;
pub const MIN_SAMPLES: usize = 20;
pub const DEFAULT_SAFETY: f64 = 1.05;
/// Relative slack on the summed arc length.
pub const LENGTH_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LojaEstimate {
    pub center: Point,
    pub radius: f64,
    pub c: f64,
    pub mu: f64,
    pub phi_at_center: f64,
    /// Samples that entered the fit.
    pub samples_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub samples_checked: usize,
    pub violations: usize,
    /// Smallest `|∇f| / (c·|Δf|^μ)` seen; above 1 means every sample passed.
    pub min_ratio: f64,
    pub passed: bool,
}

struct Obs {
    log_r: f64,
    log_v: f64,
    log_g: f64,
    v: f64,
    g: f64,
}

fn observe(
    exec: Exec,
    f: &AnalyticFunction,
    center: &Point,
    radius: f64,
    n: usize,
    seed: u64,
    f0: f64,
) -> Result<Vec<Obs>> {
    let mut rng = sampling::rng(seed);
    let pts: Vec<Point> = (0..n).map(|_| sampling::uniform_in_ball(&mut rng, center, radius)).collect();
    let evals = exec.map(&pts, |x| {
        let (v, g) = f.value_and_gradient(x.coords())?;
        Ok::<_, Error>((x.dist(center), (v - f0).abs(), norm(&g)))
    });
    let mut out = Vec::with_capacity(n);
    for e in evals {
        let (r, v, g) = e?;
        if v < VALUE_FLOOR || r == 0.0 {
            continue;
        }
        out.push(Obs { log_r: r.ln(), log_v: v.ln(), log_g: g.ln(), v, g });
    }
    Ok(out)
}

/// Fits `(c, μ)` at the critical point `q` from `nsamples` uniform samples in
/// `B_r(q)`.
pub fn estimate_exponent(f: &AnalyticFunction, q: &Point, r: f64, nsamples: usize, seed: u64) -> Result<LojaEstimate> {
    estimate_exponent_with(Exec::default(), f, q, r, nsamples, seed)
}

pub fn estimate_exponent_with(
    exec: Exec,
    f: &AnalyticFunction,
    q: &Point,
    r: f64,
    nsamples: usize,
    seed: u64,
) -> Result<LojaEstimate> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    let gq = f.grad_norm(q)?;
    if gq > DEFAULT_EPS_CRIT {
        return Err(Error::InvalidArgument(format!("center is not critical: |grad| = {gq:e}")));
    }
    let f0 = f.eval(q)?;
    let obs = observe(exec, f, q, r, nsamples, seed, f0)?;
    if obs.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: obs.len(), need: MIN_SAMPLES });
    }
    if obs.iter().any(|o| o.g == 0.0) {
        return Err(Error::InvalidArgument("gradient vanishes at a sample off the level of the center".into()));
    }

    let lo = obs.iter().map(|o| o.log_r).fold(f64::INFINITY, f64::min);
    let hi = obs.iter().map(|o| o.log_r).fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / RADIUS_BINS as f64).max(f64::MIN_POSITIVE);
    let mut bins: Vec<Vec<&Obs>> = vec![Vec::new(); RADIUS_BINS];
    for o in &obs {
        let b = (((o.log_r - lo) / width) as usize).min(RADIUS_BINS - 1);
        bins[b].push(o);
    }
    bins.retain(|b| !b.is_empty());

    // The envelope points of a bin are those where the inequality binds,
    // i.e. the smallest `log g − μ·log v`; iterate from μ = 0.
    let mut slope: f64 = 0.0;
    let mut centroid = (0.0, 0.0);
    let mut prev_selection: Vec<usize> = Vec::new();
    for _ in 0..ENVELOPE_ITERS {
        let mu_sel = slope.clamp(0.0, 1.0);
        let mut envelope: Vec<&Obs> = Vec::new();
        let mut selection: Vec<usize> = Vec::new();
        for bin in &bins {
            let mut order: Vec<usize> = (0..bin.len()).collect();
            let key = |o: &Obs| o.log_g - mu_sel * o.log_v;
            order.sort_by(|&a, &b| key(bin[a]).total_cmp(&key(bin[b])).then(a.cmp(&b)));
            let keep = ((bin.len() as f64 * ENVELOPE_FRACTION).ceil() as usize).max(1);
            for &i in order.iter().take(keep) {
                envelope.push(bin[i]);
                selection.push(i);
            }
            selection.push(usize::MAX);
        }
        if envelope.len() < 2 {
            return Err(Error::TooFewSamples { got: envelope.len(), need: 2 });
        }
        let n = envelope.len() as f64;
        let mx = envelope.iter().map(|o| o.log_v).sum::<f64>() / n;
        let my = envelope.iter().map(|o| o.log_g).sum::<f64>() / n;
        let sxx: f64 = envelope.iter().map(|o| (o.log_v - mx).powi(2)).sum();
        let sxy: f64 = envelope.iter().map(|o| (o.log_v - mx) * (o.log_g - my)).sum();
        if !(sxx > 0.0) {
            return Err(Error::TooFewSamples { got: 1, need: 2 });
        }
        slope = sxy / sxx;
        centroid = (mx, my);
        if selection == prev_selection {
            break;
        }
        prev_selection = selection;
    }
    if slope >= 1.0 {
        return Err(Error::DegenerateExponent(slope));
    }
    let mu = slope.max(0.0);
    let floor = obs.iter().map(|o| o.g / o.v.powf(mu)).fold(f64::INFINITY, f64::min);
    let intercept = (centroid.1 - mu * centroid.0).exp();
    let c = C_SHRINK * intercept.min(floor);
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::DegenerateExponent(mu));
    }
    Ok(LojaEstimate { center: q.clone(), radius: r, c, mu, phi_at_center: f0, samples_used: obs.len() })
}

/// Checks the gradient inequality on fresh samples in the estimate's ball.
pub fn verify_inequality(
    f: &AnalyticFunction,
    est: &LojaEstimate,
    nsamples: usize,
    seed: u64,
) -> Result<InequalityCheck> {
    verify_inequality_with(Exec::default(), f, est, nsamples, seed)
}

pub fn verify_inequality_with(
    exec: Exec,
    f: &AnalyticFunction,
    est: &LojaEstimate,
    nsamples: usize,
    seed: u64,
) -> Result<InequalityCheck> {
    let obs = observe(exec, f, &est.center, est.radius, nsamples, seed, est.phi_at_center)?;
    let mut violations = 0;
    let mut min_ratio = f64::INFINITY;
    for o in &obs {
        let ratio = o.g / (est.c * o.v.powf(est.mu));
        min_ratio = min_ratio.min(ratio);
        if !(o.g > est.c * o.v.powf(est.mu)) {
            violations += 1;
        }
    }
    Ok(InequalityCheck { samples_checked: obs.len(), violations, min_ratio, passed: violations == 0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub delta_min: f64,
    /// `|G^n(x)| / |∇f(x)|` per trajectory sample.
    pub deltas: Vec<f64>,
}

/// Ratio of restricted to full gradient norm along a slice trajectory; this is
/// the sharp angle constant of the flow at each sample.
pub fn angle_condition(f: &AnalyticFunction, traj: &Trajectory, block: &Block) -> Result<AngleReport> {
    let mut deltas = Vec::with_capacity(traj.samples.len());
    for s in &traj.samples {
        let (_, g) = f.value_and_gradient(s.x.coords())?;
        let full = norm(&g);
        let restricted = block.indices().iter().map(|&j| g[j] * g[j]).sum::<f64>().sqrt();
        deltas.push(if full == 0.0 { 0.0 } else { (restricted / full).min(1.0) });
    }
    let delta_min = deltas.iter().copied().fold(1.0f64, f64::min);
    Ok(AngleReport { delta_min, deltas })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBoundReport {
    /// First step index whose point meets the hypothesis (0 is the start).
    pub l: usize,
    /// Last step index such that every point from `l` to `n` is in the ball.
    pub n: usize,
    pub r: f64,
    pub c_prime: f64,
    pub hypothesis_value: f64,
    pub hypothesis_holds: bool,
    pub total_length: f64,
    pub bound_holds: bool,
    /// Some summed trajectory left the ball even though its endpoints did not.
    pub arc_exits_ball: bool,
}

/// Finds the first `q_l` in `B_r(q)` with `c′·(φ(q_l) − φ(q))^{1−μ} < r`,
/// `c′ = safety / (c(1 − μ))`, and sums the arc lengths of the following
/// steps while their endpoints stay in the ball.
pub fn length_bound_check(run: &ProcessRun, est: &LojaEstimate, safety: f64) -> Result<LengthBoundReport> {
    if !(safety > 1.0) {
        return Err(Error::InvalidArgument(format!("safety must exceed 1, got {safety}")));
    }
    let r = est.radius;
    let c_prime = safety / (est.c * (1.0 - est.mu));
    let points: Vec<&Point> = run.points().collect();
    let phis = run.phis();
    let inside = |i: usize| points[i].dist(&est.center) <= r;

    let mut found = None;
    for i in 0..points.len() {
        let dphi = phis[i] - est.phi_at_center;
        if !inside(i) || dphi < 0.0 {
            continue;
        }
        let h = c_prime * dphi.powf(1.0 - est.mu);
        if h < r {
            found = Some((i, h));
            break;
        }
    }
    let Some((l, hypothesis_value)) = found else {
        return Err(Error::NoQualifyingStep(r));
    };

    let mut n = l;
    while n + 1 < points.len() && inside(n + 1) {
        n += 1;
    }
    let mut total = 0.0;
    let mut arc_exits_ball = false;
    for i in l + 1..=n {
        total += run.steps[i - 1].arc_length;
        if let Some(tr) = run.trajectories.get(i - 1) {
            arc_exits_ball |= tr.samples.iter().any(|s| s.x.dist(&est.center) > r);
        }
    }
    Ok(LengthBoundReport {
        l,
        n,
        r,
        c_prime,
        hypothesis_value,
        hypothesis_holds: true,
        total_length: total,
        bound_holds: total <= r * (1.0 + LENGTH_SLACK),
        arc_exits_ball,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::flow::{integrate_slice, FlowSettings};
    use crate::process::{run_process, StoppingCriteria};
    use crate::schedule::Schedule;

    fn scaled_norm(lambda: f64) -> AnalyticFunction {
        AnalyticFunction::parse(2, &format!("{lambda} * (y1^2 + y2^2)")).unwrap()
    }

    #[test]
    fn isotropic_quadratic_exponent() {
        let f = scaled_norm(3.0);
        let est = estimate_exponent(&f, &Point::zeros(2), 0.5, 4000, 1).unwrap();
        assert!((est.mu - 0.5).abs() < 1e-6);
        let sharp = 2.0 * 3.0f64.sqrt();
        assert!(est.c <= sharp && est.c >= 0.8 * sharp);
        assert!(verify_inequality(&f, &est, 2000, 2).unwrap().passed);
        let doubled = LojaEstimate { c: 2.0 * est.c, ..est.clone() };
        assert!(!verify_inequality(&f, &doubled, 2000, 2).unwrap().passed);
    }

    #[test]
    fn constant_lower_bound_case() {
        let f = AnalyticFunction::parse(2, "y1 + 2*y2").unwrap();
        // |∇f| = √5 everywhere
        let est =
            LojaEstimate { center: Point::zeros(2), radius: 1.0, c: 2.0, mu: 0.0, phi_at_center: 0.0, samples_used: 0 };
        assert!(verify_inequality(&f, &est, 500, 3).unwrap().passed);
    }

    #[test]
    fn estimate_needs_critical_center() {
        let f = scaled_norm(1.0);
        assert!(estimate_exponent(&f, &Point::from([0.3, 0.0]), 0.1, 100, 0).is_err());
        assert!(estimate_exponent(&f, &Point::zeros(2), 0.0, 100, 0).is_err());
        assert!(matches!(estimate_exponent(&f, &Point::zeros(2), 0.1, 5, 0), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn degenerate_germ_flagged() {
        // |∇f| ~ |f|^{5/6}: still < 1
        let f = AnalyticFunction::parse(1, "y1^6").unwrap();
        let est = estimate_exponent(&f, &Point::zeros(1), 0.5, 2000, 4).unwrap();
        assert!((est.mu - 5.0 / 6.0).abs() < 1e-6);
    }

    #[test]
    fn angle_ratios() {
        let f = AnalyticFunction::parse(2, "2*(y1 + y2)^2 + (y1 - y2)^2").unwrap();
        let d = Domain::ball(Point::zeros(2), 4.0).unwrap();
        let all = Block::all(2);
        let tr = integrate_slice(&f, &d, &Point::from([1.0, 1.0]), &all, &FlowSettings::default()).unwrap();
        let rep = angle_condition(&f, &tr, &all).unwrap();
        assert!(rep.deltas.iter().all(|&d| d == 1.0 || d == 0.0));

        let one = Block::single(0);
        let tr = integrate_slice(&f, &d, &Point::from([1.0, 1.0]), &one, &FlowSettings::default()).unwrap();
        let rep = angle_condition(&f, &tr, &one).unwrap();
        assert!((rep.deltas[0] - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!(*rep.deltas.last().unwrap() < 1e-8);
        assert!(rep.deltas.iter().all(|d| (0.0..=1.0).contains(d)));
    }

    #[test]
    fn length_bound_edge_cases() {
        let f = AnalyticFunction::parse(2, "2*(y1 + y2)^2 + (y1 - y2)^2").unwrap();
        let d = Domain::ball(Point::zeros(2), 4.0).unwrap();
        let run = run_process(
            &f,
            &d,
            &Point::from([1.0, 1.0]),
            &Schedule::cyclic(1, 2),
            &FlowSettings::default(),
            &StoppingCriteria::default(),
        )
        .unwrap();
        // a ball far from every iterate
        let far = LojaEstimate {
            center: Point::from([3.0, 3.0]),
            radius: 0.1,
            c: 1.0,
            mu: 0.5,
            phi_at_center: 0.0,
            samples_used: 0,
        };
        assert!(matches!(length_bound_check(&run, &far, 1.05), Err(Error::NoQualifyingStep(_))));
        // a run that starts at the critical point: every step is trivial
        let still = run_process(
            &f,
            &d,
            &Point::zeros(2),
            &Schedule::cyclic(1, 2),
            &FlowSettings::default(),
            &StoppingCriteria::default(),
        )
        .unwrap();
        let at_min =
            LojaEstimate { center: Point::zeros(2), radius: 0.5, c: 1.0, mu: 0.5, phi_at_center: 0.0, samples_used: 0 };
        let rep = length_bound_check(&still, &at_min, 1.05).unwrap();
        assert_eq!(rep.l, 0);
        assert_eq!(rep.n, still.steps.len());
        assert_eq!(rep.total_length, 0.0);
        assert!(rep.bound_holds);
    }
}
