//! Parsing of the small value languages used on the command line.

use anyhow::{anyhow, bail, Context, Result};
use seqflow_core::scenarios::Scenario;
use seqflow_core::schedule::fairness_check;
use seqflow_core::{Block, Point, Schedule};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Where the process starts.
#[derive(Debug, Clone, PartialEq)]
pub enum StartSpec {
    Point(Vec<f64>),
    Random { seed: u64, count: usize },
}

/// `x1,x2,...` or `random(seed,count)`.
pub fn parse_start(s: &str) -> Result<StartSpec> {
    let t = s.trim();
    if let Some(inner) = t.strip_prefix("random(").and_then(|r| r.strip_suffix(')')) {
        let (seed, count) = inner.split_once(',').ok_or_else(|| anyhow!("expected random(seed,count), got '{s}'"))?;
        let seed = seed.trim().parse().with_context(|| format!("bad seed in '{s}'"))?;
        let count = count.trim().parse().with_context(|| format!("bad count in '{s}'"))?;
        return Ok(StartSpec::Random { seed, count });
    }
    Ok(StartSpec::Point(parse_vector(t)?))
}

pub fn parse_vector(s: &str) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|c| c.trim().parse::<f64>().with_context(|| format!("bad number '{c}' in '{s}'")))
        .collect::<Result<Vec<f64>>>()?;
    if v.iter().any(|x| !x.is_finite()) {
        bail!("non-finite coordinate in '{s}'");
    }
    Ok(v)
}

pub fn point_for(scn: &Scenario, s: &str, what: &str) -> Result<Point> {
    let v = parse_vector(s).with_context(|| format!("--{what}"))?;
    if v.len() != scn.dim() {
        bail!("--{what}: expected {} coordinates for {}, got {}", scn.dim(), scn.name, v.len());
    }
    Ok(Point::new(v))
}

pub fn resolve_starts(scn: &Scenario, specs: &[StartSpec]) -> Result<Vec<Point>> {
    if specs.is_empty() {
        if scn.suggested_starts.is_empty() {
            bail!("scenario {} has no suggested starts; pass --start", scn.name);
        }
        return Ok(scn.suggested_starts.clone());
    }
    let mut out = Vec::new();
    for s in specs {
        match s {
            StartSpec::Point(v) => {
                if v.len() != scn.dim() {
                    bail!("--start: expected {} coordinates for {}, got {}", scn.dim(), scn.name, v.len());
                }
                out.push(Point::new(v.clone()));
            }
            StartSpec::Random { seed, count } => out.extend(scn.random_starts(*count, *seed)?),
        }
    }
    Ok(out)
}

/// `cyclic`, `cyclic:D`, `sets:1;2,3` or `random:SEED:WINDOW`.
pub fn parse_schedule(scn: &Scenario, s: &str) -> Result<Schedule> {
    let dim = scn.dim();
    let mut parts = s.splitn(2, ':');
    let kind = parts.next().unwrap_or_default();
    let rest = parts.next();
    let sched = match (kind, rest) {
        ("cyclic", None) => Schedule::cyclic(1, dim),
        ("cyclic", Some(d)) => {
            let d: usize = d.parse().with_context(|| format!("--schedule: bad block size '{d}'"))?;
            if d == 0 || !dim.is_multiple_of(d) {
                bail!("--schedule: block size {d} does not divide dimension {dim}");
            }
            Schedule::cyclic(d, dim / d)
        }
        ("sets", Some(list)) => {
            let sets = list
                .split(';')
                .map(|set| {
                    let idx = set
                        .split(',')
                        .map(|i| i.trim().parse::<usize>().with_context(|| format!("--schedule: bad index '{i}'")))
                        .collect::<Result<Vec<usize>>>()?;
                    Ok(Block::from_one_based(&idx)?)
                })
                .collect::<Result<Vec<Block>>>()?;
            Schedule::ExplicitSets { sets }
        }
        ("random", Some(args)) => {
            let (seed, window) =
                args.split_once(':').ok_or_else(|| anyhow!("--schedule: expected random:SEED:WINDOW"))?;
            Schedule::RandomFair {
                blocks: scn.blocks.clone(),
                seed: seed.parse().with_context(|| format!("--schedule: bad seed '{seed}'"))?,
                window: window.parse().with_context(|| format!("--schedule: bad window '{window}'"))?,
            }
        }
        _ => bail!("--schedule: unknown form '{s}' (cyclic, cyclic:D, sets:1;2,3, random:SEED:WINDOW)"),
    };
    sched.validate(dim).context("--schedule")?;
    let fair = fairness_check(&sched, dim, 4 * sched.period())?;
    if !fair.passed {
        bail!("--schedule: indices {:?} are never updated", fair.missing);
    }
    Ok(sched)
}

/// Applies `key=value` overrides to a settings struct through its serde
/// form, so unknown keys and ill-typed values are reported by field name.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(base: &T, overrides: &[String], what: &str) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("settings serialise to an object");
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| anyhow!("{what} override '{o}' is not key=value"))?;
        let key = key.trim();
        if !obj.contains_key(key) {
            let known: Vec<&str> = obj.keys().map(String::as_str).collect();
            bail!("unknown {what} setting '{key}' (known: {})", known.join(", "));
        }
        let v: serde_json::Value =
            serde_json::from_str(raw.trim()).unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
        let expected = &obj[key];
        let ok = matches!(
            (expected, &v),
            (serde_json::Value::Null, _)
                | (serde_json::Value::Number(_), serde_json::Value::Number(_))
                | (serde_json::Value::Bool(_), serde_json::Value::Bool(_))
        );
        if !ok {
            bail!("{what} setting '{key}': cannot use '{}' here", raw.trim());
        }
        obj.insert(key.to_string(), v);
    }
    serde_json::from_value(value).map_err(|e| anyhow!("{what} settings: {e}"))
}
