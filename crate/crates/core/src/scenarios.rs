//! Named example systems and the scenario file format.
//!
//! A scenario bundles a function, its domain, a region for random starts,
//! suggested starts, known critical points and a default schedule. Scenario
//! files are TOML with expressions written as strings over `y1..yM`.

use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::domain::{Domain, DomainKind};
use crate::error::{Error, Result};
use crate::expr::{AnalyticFunction, Expr};
use crate::perturb::newton_critical;
use crate::point::Point;
use crate::process::{classify_point, Classification, DEFAULT_EPS_EIG};
use crate::sampling;
use crate::schedule::Schedule;

pub const BUILTIN_NAMES: [&str; 5] = ["quadratic_ab", "zigzag3d", "saddle_basin2d", "finite_hit2d", "navfn_demo"];

const START_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    Ball { center: Vec<f64>, radius: f64 },
    LevelSet { boundary: Vec<String>, interior: Vec<f64>, reach: f64 },
}

/// Where random starts are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartRegion {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// Points of the domain at least `margin` inside every boundary function,
    /// drawn by rejection from the domain's reference ball.
    DomainInterior {
        margin: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownCritical {
    pub point: Point,
    pub classification: Classification,
}

/// On-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    pub dim: usize,
    pub description: String,
    pub function: String,
    pub notes: String,
    pub domain: DomainSpec,
    pub start_region: StartRegion,
    #[serde(default)]
    pub starts: Vec<Vec<f64>>,
    #[serde(default)]
    pub blocks: Vec<Block>,
    pub schedule: Schedule,
    #[serde(default)]
    pub critical_points: Vec<KnownCritical>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub f: AnalyticFunction,
    pub domain: Domain,
    pub start_region: StartRegion,
    pub suggested_starts: Vec<Point>,
    /// Slice types available to random schedules.
    pub blocks: Vec<Block>,
    pub schedule_default: Schedule,
    pub known_critical_points: Vec<KnownCritical>,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub name: String,
    pub dim: usize,
    pub description: String,
}

pub fn list_scenarios() -> Vec<ScenarioInfo> {
    BUILTIN_NAMES
        .iter()
        .map(|n| {
            let s = builtin(n).expect("builtin scenarios build");
            ScenarioInfo { name: s.name, dim: s.f.arity(), description: s.description }
        })
        .collect()
}

pub fn builtin(name: &str) -> Result<Scenario> {
    match name {
        "quadratic_ab" => Ok(quadratic_ab(2.0, 1.0)),
        "zigzag3d" => Ok(zigzag3d()),
        "saddle_basin2d" => Ok(saddle_basin2d()),
        "finite_hit2d" => Ok(finite_hit2d()),
        "navfn_demo" => navfn_demo(&NavfnParams::default()),
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

/// Builtin name or path to a scenario file.
pub fn resolve(name_or_path: &str) -> Result<Scenario> {
    if BUILTIN_NAMES.contains(&name_or_path) {
        return builtin(name_or_path);
    }
    let path = std::path::Path::new(name_or_path);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ScenarioFile(format!("{name_or_path}: {e}")))?;
        return Scenario::from_toml(&text);
    }
    Err(Error::UnknownScenario(name_or_path.to_string()))
}

fn ball(dim: usize, r: f64) -> Domain {
    Domain::ball(Point::zeros(dim), r).expect("valid ball")
}

fn fun(dim: usize, src: &str) -> AnalyticFunction {
    AnalyticFunction::parse(dim, src).expect("builtin expression parses")
}

/// `a(y1 + y2)² + b(y1 − y2)²`.
pub fn quadratic_ab(a: f64, b: f64) -> Scenario {
    Scenario {
        name: "quadratic_ab".into(),
        description: "a(x+y)^2 + b(x-y)^2 with a=2, b=1: coordinate steps zigzag to the minimum forever".into(),
        f: fun(2, &format!("{a:?}*(y1 + y2)^2 + {b:?}*(y1 - y2)^2")),
        domain: ball(2, 4.0),
        start_region: StartRegion::Ball { center: vec![0.0, 0.0], radius: 2.0 },
        suggested_starts: vec![Point::from([1.0, 1.0]), Point::from([-1.5, 0.5])],
        blocks: Schedule::singletons(2),
        schedule_default: Schedule::cyclic(1, 2),
        known_critical_points: vec![KnownCritical { point: Point::zeros(2), classification: Classification::Minimum }],
        notes: "The component sign condition fails on parts of the radius-4 circle, e.g. near (0.1,-1)*4/|.|. \
                Starts within radius 2 never reach it: every step lowers f and the sublevel set of f at \
                radius 2 lies inside radius 2*sqrt(8/4) < 4."
            .into(),
    }
}

pub fn zigzag3d() -> Scenario {
    Scenario {
        name: "zigzag3d".into(),
        description: "(x-z)^2 + 2(x+z)^2 - 2y(3x+z): a single saddle at the origin, axis-parallel slices".into(),
        f: fun(3, "(y1 - y3)^2 + 2*(y1 + y3)^2 - 2*y2*(3*y1 + y3)"),
        domain: ball(3, 2.0),
        start_region: StartRegion::Ball { center: vec![0.0; 3], radius: 1.0 },
        suggested_starts: vec![Point::from([0.0, 0.5, 0.5])],
        blocks: Schedule::singletons(3),
        schedule_default: Schedule::cyclic(1, 3),
        known_critical_points: vec![KnownCritical {
            point: Point::zeros(3),
            classification: Classification::Saddle { index: 1 },
        }],
        notes: "f is linear in y, so a y-step either does nothing or runs to the boundary. The component sign \
                condition fails on parts of the radius-2 sphere, so such runs end with left_domain."
            .into(),
    }
}

pub fn saddle_basin2d() -> Scenario {
    Scenario {
        name: "saddle_basin2d".into(),
        description: "x^4/4 - x^2/2 + y^2: minima at (+-1,0), saddle at the origin; the line x=0 is trapped".into(),
        f: fun(2, "0.25*y1^4 - 0.5*y1^2 + y2^2"),
        domain: ball(2, 2.5),
        start_region: StartRegion::Ball { center: vec![0.0, 0.0], radius: 1.5 },
        suggested_starts: vec![Point::from([0.5, 1.0]), Point::from([0.0, 1.0])],
        blocks: Schedule::singletons(2),
        schedule_default: Schedule::cyclic(1, 2),
        known_critical_points: vec![
            KnownCritical { point: Point::from([-1.0, 0.0]), classification: Classification::Minimum },
            KnownCritical { point: Point::from([1.0, 0.0]), classification: Classification::Minimum },
            KnownCritical { point: Point::zeros(2), classification: Classification::Saddle { index: 1 } },
        ],
        notes: "Every process started on x=0 stays there and ends at the saddle. The component sign condition \
                fails on parts of the radius-2.5 circle; starts within radius 1.5 have f < 2.25 and the \
                sublevel set {f <= 2.25} stays inside radius 2.5."
            .into(),
    }
}

pub fn finite_hit2d() -> Scenario {
    Scenario {
        name: "finite_hit2d".into(),
        description: "x^2 + (y-x^2)^2: from the y-axis a single y-step lands on the minimum".into(),
        f: fun(2, "y1^2 + (y2 - y1^2)^2"),
        domain: ball(2, 3.0),
        start_region: StartRegion::Ball { center: vec![0.0, 0.0], radius: 1.0 },
        suggested_starts: vec![Point::from([0.0, 0.8]), Point::from([0.6, -0.4])],
        blocks: Schedule::singletons(2),
        schedule_default: Schedule::cyclic(1, 2),
        known_critical_points: vec![KnownCritical { point: Point::zeros(2), classification: Classification::Minimum }],
        notes: "The component sign condition fails on parts of the radius-3 circle; starts within radius 1 have \
                f <= 2 and {f <= 2} stays inside radius 3."
            .into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavfnParams {
    pub workspace_radius: f64,
    pub robot_radius: f64,
    pub targets: [[f64; 2]; 2],
    pub kappa: u32,
}

impl Default for NavfnParams {
    fn default() -> Self {
        NavfnParams { workspace_radius: 1.0, robot_radius: 0.1, targets: [[-0.5, 0.0], [0.5, 0.0]], kappa: 1 }
    }
}

/// Two disk robots in a disk workspace, `y1,y2` and `y3,y4` their centres.
/// The potential is `γ^κ / (γ^κ + β)` with `γ` the squared distance to the
/// targets and `β` the product of the clearances; it is Morse at the targets
/// only for `κ = 1`.
pub fn navfn_demo(p: &NavfnParams) -> Result<Scenario> {
    if p.kappa == 0 {
        return Err(Error::InvalidArgument("kappa must be at least 1".into()));
    }
    let free = p.workspace_radius - p.robot_radius;
    if !(free > 0.0) {
        return Err(Error::InvalidArgument("robots do not fit in the workspace".into()));
    }
    let y: Vec<Expr> = (0..4).map(Expr::var).collect();
    let r1 = [y[0].clone(), y[1].clone()];
    let r2 = [y[2].clone(), y[3].clone()];
    let [t1, t2] = p.targets;
    let gamma = Expr::dist_sq(&r1, &t1) + Expr::dist_sq(&r2, &t2);
    let wall1 = Expr::dist_sq(&r1, &[0.0, 0.0]) - free * free;
    let wall2 = Expr::dist_sq(&r2, &[0.0, 0.0]) - free * free;
    let sep = 2.0 * p.robot_radius;
    let apart = (sep * sep) - ((&y[0] - &y[2]).square() + (&y[1] - &y[3]).square());
    let beta = (-&wall1) * (-&wall2) * (-&apart);
    let gk = if p.kappa == 1 { gamma } else { gamma.powi(p.kappa as i32) };
    let phi = &gk / &(&gk + &beta);

    let f = AnalyticFunction::new(4, phi)?;
    let boundary: Vec<AnalyticFunction> =
        [wall1, wall2, apart].into_iter().map(|e| AnalyticFunction::new(4, e)).collect::<Result<_>>()?;
    let target = Point::from([t1[0], t1[1], t2[0], t2[1]]);
    let domain = Domain::level_set(boundary, target.clone(), 2.0 * free + 1.0)?;
    let minimum = if p.kappa == 1 { Classification::Minimum } else { Classification::Degenerate };
    Ok(Scenario {
        name: "navfn_demo".into(),
        description: "two disk robots in a disk, potential gamma/(gamma+beta) over their 4 centre coordinates".into(),
        f,
        domain,
        start_region: StartRegion::DomainInterior { margin: 0.02 },
        suggested_starts: vec![Point::from([0.4, 0.3, -0.4, -0.3]), Point::from([0.0, 0.5, 0.0, -0.5])],
        blocks: vec![Block::tuple(2, 1), Block::tuple(2, 2)],
        schedule_default: Schedule::cyclic(2, 2),
        known_critical_points: vec![KnownCritical { point: target, classification: minimum }],
        notes: "On each boundary piece the gradient is a positive multiple of the outward normal of that piece, \
                so the component sign condition holds. Only robot positions are free: each step moves one robot."
            .into(),
    })
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.f.arity()
    }

    /// `count` starts from the start region, deterministic in `seed`.
    pub fn random_starts(&self, count: usize, seed: u64) -> Result<Vec<Point>> {
        (0..count)
            .map(|i| {
                let mut rng = sampling::rng(sampling::substream(seed, i as u64));
                for _ in 0..START_ATTEMPTS {
                    let x = match &self.start_region {
                        StartRegion::Ball { center, radius } => {
                            sampling::uniform_in_ball(&mut rng, &Point::new(center.clone()), *radius)
                        }
                        StartRegion::DomainInterior { margin } => match self.domain.kind() {
                            DomainKind::Ball { center, radius } => {
                                sampling::uniform_in_ball(&mut rng, center, (radius - margin).max(0.0))
                            }
                            DomainKind::LevelSet { interior, reach, boundary_fns } => {
                                let x = sampling::uniform_in_ball(&mut rng, interior, *reach);
                                let inside =
                                    boundary_fns.iter().all(|g| g.eval(&x).map(|v| v <= -margin).unwrap_or(false));
                                if !inside {
                                    continue;
                                }
                                x
                            }
                        },
                    };
                    if self.domain.contains(&x, 0.0)? {
                        return Ok(x);
                    }
                }
                Err(Error::InvalidArgument(format!("start region of {} yields no interior points", self.name)))
            })
            .collect()
    }

    /// Newton-polishes each known critical point and checks its classification.
    pub fn check_known_critical_points(&self) -> Result<Vec<(KnownCritical, f64, Classification)>> {
        self.known_critical_points
            .iter()
            .map(|kc| {
                let polished = newton_critical(&self.f, &kc.point, 1e-14, 50)?;
                let info = classify_point(&self.f, &polished.point, 1e-8, DEFAULT_EPS_EIG)?;
                Ok((kc.clone(), info.grad_norm, info.classification))
            })
            .collect()
    }

    pub fn to_file(&self) -> ScenarioFile {
        let domain = match self.domain.kind() {
            DomainKind::Ball { center, radius } => {
                DomainSpec::Ball { center: center.coords().to_vec(), radius: *radius }
            }
            DomainKind::LevelSet { boundary_fns, interior, reach } => DomainSpec::LevelSet {
                boundary: boundary_fns.iter().map(|g| g.expr().to_string()).collect(),
                interior: interior.coords().to_vec(),
                reach: *reach,
            },
        };
        ScenarioFile {
            name: self.name.clone(),
            dim: self.dim(),
            description: self.description.clone(),
            function: self.f.expr().to_string(),
            notes: self.notes.clone(),
            domain,
            start_region: self.start_region.clone(),
            starts: self.suggested_starts.iter().map(|p| p.coords().to_vec()).collect(),
            blocks: self.blocks.clone(),
            schedule: self.schedule_default.clone(),
            critical_points: self.known_critical_points.clone(),
        }
    }

    pub fn from_file(file: ScenarioFile) -> Result<Scenario> {
        let dim = file.dim;
        if dim == 0 {
            return Err(Error::ScenarioFile("dim must be positive".into()));
        }
        let field = |what: &str, e: Error| Error::ScenarioFile(format!("{what}: {e}"));
        let f = AnalyticFunction::parse(dim, &file.function).map_err(|e| field("function", e))?;
        let domain = match &file.domain {
            DomainSpec::Ball { center, radius } => {
                if center.len() != dim {
                    return Err(Error::ScenarioFile(format!(
                        "domain.center has {} entries, expected {dim}",
                        center.len()
                    )));
                }
                Domain::ball(Point::try_new(center.clone())?, *radius).map_err(|e| field("domain", e))?
            }
            DomainSpec::LevelSet { boundary, interior, reach } => {
                let fns = boundary
                    .iter()
                    .map(|s| AnalyticFunction::parse(dim, s))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| field("domain.boundary", e))?;
                Domain::level_set(fns, Point::try_new(interior.clone())?, *reach).map_err(|e| field("domain", e))?
            }
        };
        if let StartRegion::Ball { center, radius } = &file.start_region {
            if center.len() != dim || !(*radius > 0.0) {
                return Err(Error::ScenarioFile("start_region ball does not match dim or has no radius".into()));
            }
        }
        let suggested_starts = file
            .starts
            .iter()
            .map(|s| {
                if s.len() != dim {
                    return Err(Error::ScenarioFile(format!("start {s:?} has {} entries, expected {dim}", s.len())));
                }
                Point::try_new(s.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        file.schedule.validate(dim).map_err(|e| field("schedule", e))?;
        for b in &file.blocks {
            b.check_dim(dim).map_err(|e| field("blocks", e))?;
        }
        for kc in &file.critical_points {
            if kc.point.dim() != dim {
                return Err(Error::ScenarioFile("critical point dimension mismatch".into()));
            }
        }
        let blocks = if file.blocks.is_empty() { Schedule::singletons(dim) } else { file.blocks };
        Ok(Scenario {
            name: file.name,
            description: file.description,
            f,
            domain,
            start_region: file.start_region,
            suggested_starts,
            blocks,
            schedule_default: file.schedule,
            known_critical_points: file.critical_points,
            notes: file.notes,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_file()).map_err(|e| Error::ScenarioFile(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::ScenarioFile(e.to_string()))?;
        Scenario::from_file(file)
    }
}
