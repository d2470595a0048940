//! Synthetic datasets and their assembly into meta-learning tasks.

mod glancing;
mod io;
mod speaking;

pub use glancing::{
    build_glancing_meta_dataset, eval_context_phases, eval_tasks, generate_glancing_corpus, glance_values, ContextMode,
    GlanceKind, GlanceLabel, GlancingMeta, GlancingSequence, GlancingTrainStream, probe_contexts, Split, EVAL_CONTEXT_PHASES,
    GLANCE_LEN, GLANCE_OBS, N_PHASES,
};
pub use io::{
    load_corpus, load_dataset, read_dataset, serialize_corpus, serialize_dataset, write_dataset, DatasetBody,
    DatasetFile, DatasetHeader, DATASET_FORMAT, GENERATOR_VERSION, SCHEMA_VERSION,
};
pub use speaking::{
    build_speaking_meta_dataset, generate_speaking_group, Direction, Dynamics, SpeakingConfig, SpeakingMeta,
    SpeakingTimeline,
};

use ndarray::{Array3, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown context mode `{0}` (expected `mixed` or `separated`)")]
    InvalidMode(String),
    #[error("unknown split `{0}` (expected `train` or `eval`)")]
    InvalidSplit(String),
    #[error("unknown speaking dynamics `{0}` (expected dual, dual_random, full_random or dominating)")]
    InvalidDynamics(String),
    #[error("timeline length {0} must be even and at least 6")]
    InvalidLength(usize),
    #[error("group needs at least 3 people, got {0}")]
    InvalidGroupSize(usize),
    #[error("invalid sequence pair: {0}")]
    InvalidPair(String),
    #[error("dataset schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt dataset at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Observed and future windows of one group, time-major
/// `[T × participants × cue_dims]`, with window offset `Δt = f1 − oT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePair {
    pub observed: Array3<f64>,
    pub future: Array3<f64>,
    pub offset: u32,
}

impl SequencePair {
    pub fn new(observed: Array3<f64>, future: Array3<f64>, offset: u32) -> Result<Self, DataError> {
        let (to, no, do_) = observed.dim();
        let (tf, nf, df) = future.dim();
        if to == 0 || tf == 0 {
            return Err(DataError::InvalidPair("empty window".into()));
        }
        if offset == 0 {
            return Err(DataError::InvalidPair("future window must start after the observed one".into()));
        }
        if no != nf || do_ != df {
            return Err(DataError::InvalidPair(format!(
                "observed is {no}×{do_} per step but future is {nf}×{df}"
            )));
        }
        Ok(Self { observed, future, offset })
    }

    pub fn obs_len(&self) -> usize {
        self.observed.dim().0
    }

    pub fn fut_len(&self) -> usize {
        self.future.dim().0
    }

    pub fn participants(&self) -> usize {
        self.observed.dim().1
    }

    pub fn cue_dims(&self) -> usize {
        self.observed.dim().2
    }

    pub fn observed_step(&self, t: usize) -> ArrayView2<'_, f64> {
        self.observed.index_axis(ndarray::Axis(0), t)
    }

    pub fn future_step(&self, t: usize) -> ArrayView2<'_, f64> {
        self.future.index_axis(ndarray::Axis(0), t)
    }

    /// View participants as cue channels of a single joint stream:
    /// `[T × n × 1]` becomes `[T × 1 × n]`.
    pub fn joint_stream(&self) -> SequencePair {
        let merge = |a: &Array3<f64>| {
            let (t, n, d) = a.dim();
            a.to_shape((t, 1, n * d)).expect("contiguous window").to_owned()
        };
        SequencePair { observed: merge(&self.observed), future: merge(&self.future), offset: self.offset }
    }
}

/// Generator-side descriptors kept for evaluation; models never see them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupMeta {
    Glancing(GlancingMeta),
    Speaking(SpeakingMeta),
}

/// One task: context and target pairs from a single group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaSample {
    pub context: Vec<SequencePair>,
    pub target: Vec<SequencePair>,
    pub group_id: String,
    pub group_meta: GroupMeta,
}

impl MetaSample {
    pub fn without_context(&self) -> MetaSample {
        MetaSample { context: Vec::new(), ..self.clone() }
    }

    pub fn joint_stream(&self) -> MetaSample {
        MetaSample {
            context: self.context.iter().map(SequencePair::joint_stream).collect(),
            target: self.target.iter().map(SequencePair::joint_stream).collect(),
            ..self.clone()
        }
    }
}

/// Source of training tasks. Draws must be a pure function of the rng.
pub trait TaskSource: Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> MetaSample;
}

/// Cycles uniformly over a fixed list of tasks.
pub struct FixedTasks {
    samples: Vec<MetaSample>,
    joint: bool,
}

impl FixedTasks {
    pub fn new(samples: Vec<MetaSample>) -> Self {
        Self { samples, joint: false }
    }

    /// Present participants as channels of one joint stream.
    pub fn joint(samples: Vec<MetaSample>) -> Self {
        Self { samples, joint: true }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl TaskSource for FixedTasks {
    fn draw(&self, rng: &mut ChaCha8Rng) -> MetaSample {
        use rand::Rng;
        let s = &self.samples[rng.random_range(0..self.samples.len())];
        if self.joint { s.joint_stream() } else { s.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn pair_validation() {
        let o = Array3::zeros((2, 5, 1));
        let f = Array3::zeros((4, 5, 1));
        assert!(SequencePair::new(o.clone(), f.clone(), 1).is_ok());
        assert!(SequencePair::new(o.clone(), f.clone(), 0).is_err());
        assert!(SequencePair::new(Array3::zeros((0, 5, 1)), f, 1).is_err());
        assert!(SequencePair::new(o, Array3::zeros((4, 4, 1)), 1).is_err());
    }

    #[test]
    fn joint_stream_moves_people_into_channels() {
        let mut o = Array3::zeros((2, 5, 1));
        o[[0, 3, 0]] = 1.0;
        o[[1, 4, 0]] = 1.0;
        let p = SequencePair::new(o, Array3::zeros((4, 5, 1)), 1).unwrap();
        let j = p.joint_stream();
        assert_eq!(j.observed.dim(), (2, 1, 5));
        assert_eq!(j.observed[[0, 0, 3]], 1.0);
        assert_eq!(j.observed[[1, 0, 4]], 1.0);
    }
}
