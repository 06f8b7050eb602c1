//! Block schedules: which slice type each process step uses.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::error::{Error, Result};
use crate::sampling;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Step `k` uses the `m_k`-th block of `d` consecutive coordinates,
    /// `m_k = ((k + offset) mod n_blocks) + 1`.
    CyclicBlocks {
        d: usize,
        n_blocks: usize,
        #[serde(default)]
        offset: usize,
    },
    /// Step `k` uses `sets[(k - 1) mod len]`.
    ExplicitSets { sets: Vec<Block> },
    /// Seeded random choice among `blocks`, forced so that every index is
    /// covered at least once in every `window` consecutive steps.
    RandomFair { blocks: Vec<Block>, seed: u64, window: usize },
}

impl Schedule {
    pub fn cyclic(d: usize, n_blocks: usize) -> Self {
        Schedule::CyclicBlocks { d, n_blocks, offset: 0 }
    }

    /// Cyclic schedule whose first step uses block `first` (one-based).
    pub fn cyclic_starting_at(d: usize, n_blocks: usize, first: usize) -> Result<Self> {
        if first == 0 || first > n_blocks {
            return Err(Error::InvalidArgument(format!("first block must be in 1..={n_blocks}, got {first}")));
        }
        // m_1 = ((1 + offset) mod N) + 1 = first
        let offset = (first + 2 * n_blocks - 2) % n_blocks;
        Ok(Schedule::CyclicBlocks { d, n_blocks, offset })
    }

    /// Coordinate singletons `{1}, {2}, …, {dim}`.
    pub fn singletons(dim: usize) -> Vec<Block> {
        (0..dim).map(Block::single).collect()
    }

    /// Rewrites a cyclic schedule so that step 1 uses block `first`; other
    /// kinds are rotated so that their `first`-th entry comes first.
    pub fn with_first_block(self, first: usize) -> Result<Self> {
        match self {
            Schedule::CyclicBlocks { d, n_blocks, .. } => Schedule::cyclic_starting_at(d, n_blocks, first),
            Schedule::ExplicitSets { mut sets } => {
                if first == 0 || first > sets.len() {
                    return Err(Error::InvalidArgument(format!(
                        "first block must be in 1..={}, got {first}",
                        sets.len()
                    )));
                }
                sets.rotate_left(first - 1);
                Ok(Schedule::ExplicitSets { sets })
            }
            Schedule::RandomFair { .. } => {
                Err(Error::InvalidArgument("first block offset does not apply to random schedules".into()))
            }
        }
    }

    /// Checks the schedule against the ambient dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Schedule::CyclicBlocks { d, n_blocks, offset: _ } => {
                if *d == 0 || *n_blocks == 0 {
                    return Err(Error::InvalidArgument("cyclic blocks need d >= 1 and N >= 1".into()));
                }
                if d * n_blocks != dim {
                    return Err(Error::InvalidArgument(format!(
                        "cyclic blocks need M = d*N, got d={d}, N={n_blocks}, M={dim}"
                    )));
                }
            }
            Schedule::ExplicitSets { sets } => {
                if sets.is_empty() {
                    return Err(Error::InvalidArgument("explicit schedule has no sets".into()));
                }
                for s in sets {
                    s.check_dim(dim)?;
                }
            }
            Schedule::RandomFair { blocks, window, .. } => {
                if blocks.is_empty() {
                    return Err(Error::InvalidArgument("random schedule has no blocks".into()));
                }
                for s in blocks {
                    s.check_dim(dim)?;
                }
                if *window <= dim {
                    return Err(Error::InvalidArgument(format!(
                        "random schedule window must exceed M={dim}, got {window}"
                    )));
                }
                if let Some(j) = (0..dim).find(|&j| !blocks.iter().any(|b| b.contains(j))) {
                    return Err(Error::InvalidArgument(format!("no block contains index {}", j + 1)));
                }
            }
        }
        Ok(())
    }

    /// Length of one period: the natural window for convergence checks.
    pub fn period(&self) -> usize {
        match self {
            Schedule::CyclicBlocks { n_blocks, .. } => *n_blocks,
            Schedule::ExplicitSets { sets } => sets.len(),
            Schedule::RandomFair { window, .. } => *window,
        }
    }

    /// Iterator over the blocks of steps `1, 2, …`.
    pub fn iter(&self, dim: usize) -> ScheduleIter<'_> {
        let state = match self {
            Schedule::RandomFair { seed, window, .. } => {
                Some(FairState { rng: sampling::rng(*seed), deadline: vec![*window; dim] })
            }
            _ => None,
        };
        ScheduleIter { schedule: self, k: 0, state }
    }

    pub fn describe(&self) -> String {
        match self {
            Schedule::CyclicBlocks { d, n_blocks, offset } => {
                format!("cyclic d={d} N={n_blocks} offset={offset}")
            }
            Schedule::ExplicitSets { sets } => {
                let s: Vec<String> = sets.iter().map(|b| b.to_string()).collect();
                format!("explicit [{}]", s.join(", "))
            }
            Schedule::RandomFair { blocks, seed, window } => {
                let s: Vec<String> = blocks.iter().map(|b| b.to_string()).collect();
                format!("random_fair [{}] seed={seed} window={window}", s.join(", "))
            }
        }
    }
}

/// Block used at step `k ≥ 1`. Random schedules are replayed from step 1.
pub fn next_block(schedule: &Schedule, dim: usize, k: usize) -> Result<Block> {
    if k == 0 {
        return Err(Error::InvalidArgument("steps are numbered from 1".into()));
    }
    schedule.validate(dim)?;
    Ok(schedule.iter(dim).nth(k - 1).expect("schedules are infinite"))
}

struct FairState {
    rng: rand_chacha::ChaCha8Rng,
    /// Last step by which each index must be covered again.
    deadline: Vec<usize>,
}

pub struct ScheduleIter<'a> {
    schedule: &'a Schedule,
    k: usize,
    state: Option<FairState>,
}

impl Iterator for ScheduleIter<'_> {
    type Item = Block;

    fn next(&mut self) -> Option<Block> {
        self.k += 1;
        let k = self.k;
        let block = match self.schedule {
            Schedule::CyclicBlocks { d, n_blocks, offset } => Block::tuple(*d, (k + offset) % n_blocks + 1),
            Schedule::ExplicitSets { sets } => sets[(k - 1) % sets.len()].clone(),
            Schedule::RandomFair { blocks, window, .. } => {
                let st = self.state.as_mut().expect("fair state");
                let dim = st.deadline.len();
                // earliest deadline first once any slack drops below M
                let (urgent, due) = st
                    .deadline
                    .iter()
                    .enumerate()
                    .min_by_key(|(j, d)| (**d, *j))
                    .map(|(j, d)| (j, *d))
                    .expect("dim >= 1");
                let pick = if due < k + dim {
                    let candidates: Vec<&Block> = blocks.iter().filter(|b| b.contains(urgent)).collect();
                    (*candidates.choose(&mut st.rng).expect("validated coverage")).clone()
                } else {
                    blocks.choose(&mut st.rng).expect("non-empty").clone()
                };
                for &j in pick.indices() {
                    st.deadline[j] = k + window;
                }
                pick
            }
        };
        Some(block)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub horizon: usize,
    /// Per index (zero-based position, one-based meaning): largest gap between
    /// consecutive appearances, counting from step 0; `None` if never seen.
    pub max_gaps: Vec<Option<usize>>,
    /// One-based indices absent from the first full period.
    pub missing: Vec<usize>,
    pub passed: bool,
}

/// Appearance gaps of every index over `horizon` steps.
pub fn fairness_check(schedule: &Schedule, dim: usize, horizon: usize) -> Result<FairnessReport> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if let Schedule::CyclicBlocks { d, n_blocks, .. } = schedule {
        if d * n_blocks != dim {
            return Err(Error::InvalidArgument(format!(
                "cyclic blocks need M = d*N, got d={d}, N={n_blocks}, M={dim}"
            )));
        }
    }
    for b in schedule_blocks(schedule) {
        b.check_dim(dim)?;
    }
    let period = schedule.period();
    let mut last = vec![0usize; dim];
    let mut max_gaps: Vec<Option<usize>> = vec![None; dim];
    let mut seen_in_period = vec![false; dim];
    let steps = horizon.max(period);
    let mut iter = schedule.iter(dim);
    for k in 1..=steps {
        let b = iter.next().expect("infinite");
        for &j in b.indices() {
            let gap = k - last[j];
            max_gaps[j] = Some(max_gaps[j].map_or(gap, |g| g.max(gap)));
            last[j] = k;
            if k <= period {
                seen_in_period[j] = true;
            }
        }
    }
    let missing: Vec<usize> = (0..dim).filter(|&j| !seen_in_period[j]).map(|j| j + 1).collect();
    let gaps_ok = match schedule {
        Schedule::RandomFair { window, .. } => max_gaps.iter().all(|g| g.is_some_and(|g| g <= *window)),
        _ => true,
    };
    Ok(FairnessReport { horizon: steps, max_gaps, passed: missing.is_empty() && gaps_ok, missing })
}

fn schedule_blocks(schedule: &Schedule) -> Vec<Block> {
    match schedule {
        Schedule::CyclicBlocks { d, n_blocks, .. } => (1..=*n_blocks).map(|m| Block::tuple(*d, m)).collect(),
        Schedule::ExplicitSets { sets } => sets.clone(),
        Schedule::RandomFair { blocks, .. } => blocks.clone(),
    }
}
