//! Turn-taking timelines for a circle of people. Every turn lasts exactly two
//! timesteps; the dynamics decide who speaks next.

use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, GroupMeta, MetaSample, SequencePair};
use crate::seeding::{rng_for, streams};

pub const TURN_LEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// Successor is always the left (or always the right) neighbour.
    Dual,
    /// Successor is the left or right neighbour, chosen per turn.
    DualRandom,
    /// Successor is anybody else.
    FullRandom,
    /// One person speaks every other turn; the rest rotate in a fixed direction.
    Dominating,
}

impl Dynamics {
    pub const ALL: [Dynamics; 4] = [Dynamics::Dual, Dynamics::DualRandom, Dynamics::FullRandom, Dynamics::Dominating];
    pub const FREE_FOR_ALL: [Dynamics; 3] = [Dynamics::Dual, Dynamics::DualRandom, Dynamics::FullRandom];

    pub fn as_str(&self) -> &'static str {
        match self {
            Dynamics::Dual => "dual",
            Dynamics::DualRandom => "dual_random",
            Dynamics::FullRandom => "full_random",
            Dynamics::Dominating => "dominating",
        }
    }
}

impl fmt::Display for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dynamics {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dynamics::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| DataError::InvalidDynamics(s.to_string()))
    }
}

/// Left is a decrement of the seat index, right an increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    fn step(self, seat: usize, n: usize) -> usize {
        match self {
            Direction::Left => (seat + n - 1) % n,
            Direction::Right => (seat + 1) % n,
        }
    }

    fn random<R: Rng>(rng: &mut R) -> Self {
        if rng.random_bool(0.5) { Direction::Left } else { Direction::Right }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakingTimeline {
    pub dynamics: Dynamics,
    pub n_people: usize,
    /// Speaker seat at every timestep.
    pub speakers: Vec<usize>,
    pub direction: Option<Direction>,
    pub dominator: Option<usize>,
}

impl SpeakingTimeline {
    /// Speaker of each turn.
    pub fn turns(&self) -> Vec<usize> {
        self.speakers.iter().step_by(TURN_LEN).copied().collect()
    }

    /// Per-person binary speaking status, `[T × n × 1]`, for `start..start+len`.
    pub fn window(&self, start: usize, len: usize) -> Array3<f64> {
        let mut w = Array3::zeros((len, self.n_people, 1));
        for (t, &s) in self.speakers[start..start + len].iter().enumerate() {
            w[[t, s, 0]] = 1.0;
        }
        w
    }
}

pub fn generate_speaking_group(dynamics: Dynamics, n_people: usize, length: usize, seed: u64) -> Result<SpeakingTimeline, DataError> {
    if length < 6 || length % TURN_LEN != 0 {
        return Err(DataError::InvalidLength(length));
    }
    if n_people < 3 {
        return Err(DataError::InvalidGroupSize(n_people));
    }
    let mut rng = rng_for(seed, streams::SPEAKING_GROUP, 0);
    let n_turns = length / TURN_LEN;
    let mut turns = Vec::with_capacity(n_turns);
    let (mut direction, mut dominator) = (None, None);

    match dynamics {
        Dynamics::Dual => {
            let dir = Direction::random(&mut rng);
            direction = Some(dir);
            let mut cur = rng.random_range(0..n_people);
            for _ in 0..n_turns {
                turns.push(cur);
                cur = dir.step(cur, n_people);
            }
        }
        Dynamics::DualRandom => {
            let mut cur = rng.random_range(0..n_people);
            for _ in 0..n_turns {
                turns.push(cur);
                cur = Direction::random(&mut rng).step(cur, n_people);
            }
        }
        Dynamics::FullRandom => {
            let mut cur = rng.random_range(0..n_people);
            for _ in 0..n_turns {
                turns.push(cur);
                let pick = rng.random_range(0..n_people - 1);
                cur = if pick >= cur { pick + 1 } else { pick };
            }
        }
        Dynamics::Dominating => {
            let dom = rng.random_range(0..n_people);
            let dir = Direction::random(&mut rng);
            dominator = Some(dom);
            direction = Some(dir);
            let pick = rng.random_range(0..n_people - 1);
            let mut other = if pick >= dom { pick + 1 } else { pick };
            for k in 0..n_turns {
                if k % 2 == 0 {
                    turns.push(dom);
                } else {
                    turns.push(other);
                    other = dir.step(other, n_people);
                    if other == dom {
                        other = dir.step(other, n_people);
                    }
                }
            }
        }
    }
    let speakers = turns.iter().flat_map(|&s| [s; TURN_LEN]).collect();
    Ok(SpeakingTimeline { dynamics, n_people, speakers, direction, dominator })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakingConfig {
    pub n_people: usize,
    pub timeline_len: usize,
    pub context_size: usize,
    pub target_size: usize,
    pub obs_len: usize,
    pub fut_len: usize,
}

impl Default for SpeakingConfig {
    fn default() -> Self {
        Self { n_people: 5, timeline_len: 60, context_size: 8, target_size: 11, obs_len: 2, fut_len: 4 }
    }
}

impl SpeakingConfig {
    pub fn window_len(&self) -> usize {
        self.obs_len + self.fut_len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakingMeta {
    pub dynamics: Dynamics,
    pub direction: Option<Direction>,
    pub dominator: Option<usize>,
    pub context_starts: Vec<usize>,
    pub target_starts: Vec<usize>,
}

/// One task per group. Context windows are drawn anywhere in the timeline;
/// target windows are drawn so that no context window starts after a target
/// future window begins.
pub fn build_speaking_meta_dataset(dynamics: Dynamics, n_groups: usize, seed: u64, cfg: &SpeakingConfig) -> Result<Vec<MetaSample>, DataError> {
    let win = cfg.window_len();
    if cfg.timeline_len < win {
        return Err(DataError::InvalidLength(cfg.timeline_len));
    }
    (0..n_groups)
        .map(|g| {
            let group_seed = crate::seeding::derive_seed(seed, streams::SPEAKING_GROUP, g as u64);
            let tl = generate_speaking_group(dynamics, cfg.n_people, cfg.timeline_len, group_seed)?;
            let mut rng = rng_for(seed, streams::SPEAKING_WINDOWS, g as u64);
            let last = cfg.timeline_len - win;
            let context_starts: Vec<usize> = (0..cfg.context_size).map(|_| rng.random_range(0..=last)).collect();
            let latest = context_starts.iter().copied().max().unwrap_or(0);
            let lo = latest.saturating_sub(cfg.obs_len).min(last);
            let target_starts: Vec<usize> = (0..cfg.target_size).map(|_| rng.random_range(lo..=last)).collect();
            let pair = |s: usize| SequencePair {
                observed: tl.window(s, cfg.obs_len),
                future: tl.window(s + cfg.obs_len, cfg.fut_len),
                offset: 1,
            };
            Ok(MetaSample {
                context: context_starts.iter().map(|&s| pair(s)).collect(),
                target: target_starts.iter().map(|&s| pair(s)).collect(),
                group_id: format!("{dynamics}/{g}"),
                group_meta: GroupMeta::Speaking(SpeakingMeta {
                    dynamics,
                    direction: tl.direction,
                    dominator: tl.dominator,
                    context_starts,
                    target_starts,
                }),
            })
        })
        .collect()
}
