//! Glancing corpus: a sweeping (Type I) head rotation is a sinusoid over 20
//! steps, `r_n = sin(n (3π + φ) / 19)`; the gaze-fixating (Type III) variant
//! holds the step-13 value for the last six steps.

use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, GroupMeta, MetaSample, SequencePair, TaskSource};
use crate::seeding::{rng_for, streams};

pub const GLANCE_LEN: usize = 20;
pub const GLANCE_OBS: usize = 10;
pub const N_PHASES: usize = 6284;
pub const EVAL_CONTEXT_PHASES: usize = 785;
const PHASE_STEP: f64 = 0.001;
const CLIP_FROM: usize = 14;
const TRAIN_BATCH: usize = 100;
const TRAIN_CONTEXT: usize = 25;
const EVAL_TARGET_CHUNK: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GlanceKind {
    TypeI,
    TypeIII,
}

impl fmt::Display for GlanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GlanceKind::TypeI => "type_i",
            GlanceKind::TypeIII => "type_iii",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlancingSequence {
    pub phase_index: u32,
    pub phase: f64,
    pub kind: GlanceKind,
    pub values: Vec<f64>,
}

impl GlancingSequence {
    pub fn to_pair(&self) -> SequencePair {
        let obs = Array3::from_shape_vec((GLANCE_OBS, 1, 1), self.values[..GLANCE_OBS].to_vec()).unwrap();
        let fut = Array3::from_shape_vec((GLANCE_LEN - GLANCE_OBS, 1, 1), self.values[GLANCE_OBS..].to_vec()).unwrap();
        SequencePair { observed: obs, future: fut, offset: 1 }
    }

    pub fn label(&self) -> GlanceLabel {
        GlanceLabel { phase_index: self.phase_index, kind: self.kind }
    }
}

/// Values of one glance for phase index `p` (φ = p·0.001).
pub fn glance_values(phase_index: u32, kind: GlanceKind) -> Vec<f64> {
    let phi = phase_index as f64 * PHASE_STEP;
    let mut v: Vec<f64> = (0..GLANCE_LEN)
        .map(|n| (n as f64 * (3.0 * std::f64::consts::PI + phi) / 19.0).sin())
        .collect();
    if kind == GlanceKind::TypeIII {
        let hold = v[CLIP_FROM - 1];
        v[CLIP_FROM..].iter_mut().for_each(|x| *x = hold);
    }
    v
}

/// All 6284 phases in both kinds; entry `2p` is Type I and `2p + 1` Type III.
pub fn generate_glancing_corpus() -> Vec<GlancingSequence> {
    (0..N_PHASES as u32)
        .flat_map(|p| {
            [GlanceKind::TypeI, GlanceKind::TypeIII].map(|kind| GlancingSequence {
                phase_index: p,
                phase: p as f64 * PHASE_STEP,
                kind,
                values: glance_values(p, kind),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    Mixed,
    Separated,
}

impl FromStr for ContextMode {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mixed" => Ok(Self::Mixed),
            "separated" => Ok(Self::Separated),
            other => Err(DataError::InvalidMode(other.to_string())),
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::Mixed => "mixed",
            ContextMode::Separated => "separated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl FromStr for Split {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "eval" => Ok(Self::Eval),
            other => Err(DataError::InvalidSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GlanceLabel {
    pub phase_index: u32,
    pub kind: GlanceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlancingMeta {
    pub mode: ContextMode,
    pub context: Vec<GlanceLabel>,
    pub target: Vec<GlanceLabel>,
}

/// The fixed evaluation context phases for a seed, sorted.
pub fn eval_context_phases(seed: u64) -> Vec<u32> {
    let mut rng = rng_for(seed, streams::GLANCE_EVAL, 0);
    let mut phases: Vec<u32> = sample(&mut rng, N_PHASES, EVAL_CONTEXT_PHASES).into_iter().map(|p| p as u32).collect();
    phases.sort_unstable();
    phases
}

fn assemble(corpus: &[GlancingSequence], mode: ContextMode, ctx: &[usize], tgt: &[usize], group_id: String) -> MetaSample {
    MetaSample {
        context: ctx.iter().map(|&i| corpus[i].to_pair()).collect(),
        target: tgt.iter().map(|&i| corpus[i].to_pair()).collect(),
        group_id,
        group_meta: GroupMeta::Glancing(GlancingMeta {
            mode,
            context: ctx.iter().map(|&i| corpus[i].label()).collect(),
            target: tgt.iter().map(|&i| corpus[i].label()).collect(),
        }),
    }
}

fn corpus_index(phase: u32, kind: GlanceKind) -> usize {
    2 * phase as usize + (kind == GlanceKind::TypeIII) as usize
}

/// Random 100-sequence training batches with a 25-sequence context.
pub struct GlancingTrainStream {
    corpus: Vec<GlancingSequence>,
    mode: ContextMode,
    seed: u64,
}

impl GlancingTrainStream {
    pub fn new(corpus: Vec<GlancingSequence>, mode: ContextMode, seed: u64) -> Self {
        Self { corpus, mode, seed }
    }

    /// The `index`-th batch of this stream.
    pub fn sample(&self, index: u64) -> MetaSample {
        self.draw(&mut rng_for(self.seed, streams::GLANCE_TRAIN, index))
    }

    pub fn take(&self, n: usize) -> impl Iterator<Item = MetaSample> + '_ {
        (0..n as u64).map(move |i| self.sample(i))
    }
}

impl TaskSource for GlancingTrainStream {
    fn draw(&self, rng: &mut ChaCha8Rng) -> MetaSample {
        let picked: Vec<usize> = match self.mode {
            ContextMode::Mixed => loop {
                let idx = sample(rng, self.corpus.len(), TRAIN_BATCH).into_vec();
                let first = self.corpus[idx[0]].kind;
                if idx[..TRAIN_CONTEXT].iter().any(|&i| self.corpus[i].kind != first) {
                    break idx;
                }
            },
            ContextMode::Separated => {
                let kind = if rng.random_bool(0.5) { GlanceKind::TypeI } else { GlanceKind::TypeIII };
                sample(rng, N_PHASES, TRAIN_BATCH)
                    .into_iter()
                    .map(|p| corpus_index(p as u32, kind))
                    .collect()
            }
        };
        let (ctx, tgt) = picked.split_at(TRAIN_CONTEXT);
        assemble(&self.corpus, self.mode, ctx, tgt, format!("glance/train/{}", self.mode))
    }
}

/// Evaluation tasks share one fixed context (785 phases) and split the
/// remaining sequences into target chunks. Separated mode yields the Type I
/// tasks first, then the Type III ones.
pub fn eval_tasks(corpus: &[GlancingSequence], mode: ContextMode, seed: u64) -> Vec<MetaSample> {
    let ctx_phases = eval_context_phases(seed);
    let mut is_ctx = vec![false; N_PHASES];
    ctx_phases.iter().for_each(|&p| is_ctx[p as usize] = true);
    let rest: Vec<u32> = (0..N_PHASES as u32).filter(|&p| !is_ctx[p as usize]).collect();

    let groups: Vec<(Vec<GlanceKind>, String)> = match mode {
        ContextMode::Mixed => vec![(vec![GlanceKind::TypeI, GlanceKind::TypeIII], "mixed".into())],
        ContextMode::Separated => vec![
            (vec![GlanceKind::TypeI], GlanceKind::TypeI.to_string()),
            (vec![GlanceKind::TypeIII], GlanceKind::TypeIII.to_string()),
        ],
    };
    let mut out = Vec::new();
    for (kinds, tag) in groups {
        let ctx: Vec<usize> = ctx_phases.iter().flat_map(|&p| kinds.iter().map(move |&k| corpus_index(p, k))).collect();
        let tgt: Vec<usize> = rest.iter().flat_map(|&p| kinds.iter().map(move |&k| corpus_index(p, k))).collect();
        for (c, chunk) in tgt.chunks(EVAL_TARGET_CHUNK).enumerate() {
            out.push(assemble(corpus, mode, &ctx, chunk, format!("glance/eval/{tag}/{c}")));
        }
    }
    out
}

/// `n` single-kind contexts of training size, alternating Type I and Type III,
/// for probing how a model's context encoder separates them.
pub fn probe_contexts(corpus: &[GlancingSequence], n: usize, seed: u64) -> Vec<(GlanceKind, Vec<SequencePair>)> {
    (0..n)
        .map(|i| {
            let kind = if i % 2 == 0 { GlanceKind::TypeI } else { GlanceKind::TypeIII };
            let mut rng = rng_for(seed, streams::GLANCE_EVAL, 1 + i as u64);
            let ctx = sample(&mut rng, N_PHASES, TRAIN_CONTEXT).into_iter().map(|p| corpus[corpus_index(p as u32, kind)].to_pair()).collect();
            (kind, ctx)
        })
        .collect()
}

/// Train split yields `n_train` batches from the stream; eval split yields
/// the fixed-context evaluation tasks.
pub fn build_glancing_meta_dataset(
    corpus: &[GlancingSequence],
    mode: ContextMode,
    split: Split,
    seed: u64,
    n_train: usize,
) -> Vec<MetaSample> {
    match split {
        Split::Train => GlancingTrainStream::new(corpus.to_vec(), mode, seed).take(n_train).collect(),
        Split::Eval => eval_tasks(corpus, mode, seed),
    }
}
