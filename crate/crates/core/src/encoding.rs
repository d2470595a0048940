//! Per-participant embeddings of an observed window.
//!
//! `e = W·[e_self; e_partner] + OE(Δt)` where `e_self` encodes the
//! participant's own cues, `e_partner` encodes a max-pooled view of the
//! partners' cues expressed relative to the participant, and `OE` is a
//! sinusoidal encoding of the gap between observed and future windows.
//!
//! Batches are laid out row-wise: row `p·n + i` is participant `i` of pair `p`.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{relative_features, CueLayout};
use crate::nn::{Graph, Gru, Linear, Mat, Mlp, ParamStore, Var};
use crate::synthdata::SequencePair;

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("embedding dimension {0} must be even")]
    OddEmbedDim(usize),
    #[error("a group needs at least one participant")]
    NoParticipants,
    #[error("MLP backbone was built for {expected} steps, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Mlp,
    Gru,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub embed_dim: usize,
    /// Hidden widths of MLP backbones.
    pub hidden: Vec<usize>,
    pub embedder_dim: usize,
    pub pool_dim: usize,
    /// When false, `e_partner` is the zero vector.
    pub pool: bool,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncodingError> {
        if self.embed_dim % 2 != 0 {
            return Err(EncodingError::OddEmbedDim(self.embed_dim));
        }
        Ok(())
    }
}

/// `OE[2m] = sin(Δt / 10000^(2m/d))`, `OE[2m+1] = cos(Δt / 10000^(2m/d))`.
pub fn offset_encoding(offset: u32, dim: usize) -> Result<Vec<f64>, EncodingError> {
    if dim % 2 != 0 {
        return Err(EncodingError::OddEmbedDim(dim));
    }
    let mut out = vec![0.0; dim];
    for m in 0..dim / 2 {
        let angle = offset as f64 / 10000f64.powf(2.0 * m as f64 / dim as f64);
        out[2 * m] = angle.sin();
        out[2 * m + 1] = angle.cos();
    }
    Ok(out)
}

/// Rows of cues at step `t`, one per (pair, participant).
pub(crate) fn step_matrix(pairs: &[&SequencePair], t: usize, future: bool) -> Mat {
    let n = pairs[0].participants();
    let d = pairs[0].cue_dims();
    let mut m = Array2::zeros((pairs.len() * n, d));
    for (p, pair) in pairs.iter().enumerate() {
        let step = if future { pair.future_step(t) } else { pair.observed_step(t) };
        m.slice_mut(ndarray::s![p * n..(p + 1) * n, ..]).assign(&step);
    }
    m
}

/// Encodes a sequence of `rows × in_dim` steps into `rows × embed_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SequenceEncoder {
    Gru(Gru),
    Mlp { mlp: Mlp, steps: usize },
}

impl SequenceEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, cfg: &EncoderConfig, in_dim: usize, steps: usize) -> Self {
        match cfg.backbone {
            Backbone::Gru => SequenceEncoder::Gru(Gru::new(store, rng, name, in_dim, cfg.embed_dim)),
            Backbone::Mlp => SequenceEncoder::Mlp {
                mlp: Mlp::new(store, rng, name, in_dim * steps, &cfg.hidden, cfg.embed_dim),
                steps,
            },
        }
    }

    /// GRU: last hidden state. MLP: flatten time and features, then project.
    pub fn encode(&self, g: &mut Graph, steps: &[Var]) -> Result<Var, EncodingError> {
        if steps.is_empty() {
            return Err(EncodingError::EmptySequence);
        }
        match self {
            SequenceEncoder::Gru(gru) => Ok(*gru.run(g, steps, None).last().unwrap()),
            SequenceEncoder::Mlp { mlp, steps: expected } => {
                if steps.len() != *expected {
                    return Err(EncodingError::LengthMismatch { expected: *expected, got: steps.len() });
                }
                let flat = g.concat(steps);
                Ok(mlp.forward(g, flat))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PartnerPooler {
    embedder: Mlp,
    pre_pooler: Mlp,
    f_partner: SequenceEncoder,
}

/// Observed-window encoder producing `e` for every participant row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualEncoder {
    pub cfg: EncoderConfig,
    pub layout: CueLayout,
    f_self: SequenceEncoder,
    pooler: Option<PartnerPooler>,
    fuse: Linear,
}

impl IndividualEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cfg: &EncoderConfig,
        layout: CueLayout,
        in_dim: usize,
        obs_len: usize,
    ) -> Result<Self, EncodingError> {
        cfg.validate()?;
        let f_self = SequenceEncoder::new(store, rng, &format!("{name}.self"), cfg, in_dim, obs_len);
        let pooler = cfg.pool.then(|| PartnerPooler {
            embedder: Mlp::new(store, rng, &format!("{name}.embedder"), in_dim, &[cfg.embedder_dim], cfg.embedder_dim),
            pre_pooler: Mlp::new(
                store,
                rng,
                &format!("{name}.pre_pooler"),
                cfg.embedder_dim + cfg.embed_dim,
                &[cfg.pool_dim],
                cfg.pool_dim,
            ),
            f_partner: SequenceEncoder::new(store, rng, &format!("{name}.partner"), cfg, cfg.pool_dim, obs_len),
        });
        let fuse = Linear::new(store, rng, &format!("{name}.fuse"), 2 * cfg.embed_dim, cfg.embed_dim, false);
        Ok(Self { cfg: cfg.clone(), layout, f_self, pooler, fuse })
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    pub fn pools(&self) -> bool {
        self.pooler.is_some()
    }

    pub fn fuse_layer(&self) -> &Linear {
        &self.fuse
    }

    pub fn encode_self(&self, g: &mut Graph, steps: &[Var]) -> Result<Var, EncodingError> {
        self.f_self.encode(g, steps)
    }

    /// Pooled partner representation `ψ_t` for every participant row and
    /// observed step. Each partner's relative cue is embedded, joined with that
    /// partner's `e_self`, passed through the pre-pooler and max-pooled.
    pub fn pool_partners(&self, g: &mut Graph, pairs: &[&SequencePair], e_self: Var) -> Result<Vec<Var>, EncodingError> {
        let pooler = self.pooler.as_ref().expect("pool_partners on a no-pool encoder");
        let n = pairs[0].participants();
        if n == 0 {
            return Err(EncodingError::NoParticipants);
        }
        if n == 1 {
            // nobody to pool over
            let rows = pairs.len();
            return Ok((0..pairs[0].obs_len()).map(|_| g.zeros(rows, self.cfg.pool_dim)).collect());
        }
        let j = n - 1;
        let d = pairs[0].cue_dims();
        let rows = pairs.len() * n;
        // row (p, i, k) -> row index of partner k of i in pair p
        let mut partner_rows = Vec::with_capacity(rows * j);
        for p in 0..pairs.len() {
            for i in 0..n {
                partner_rows.extend((0..n).filter(|&q| q != i).map(|q| p * n + q));
            }
        }
        let partner_self = g.gather_rows(e_self, &partner_rows);

        let mut pooled = Vec::with_capacity(pairs[0].obs_len());
        for t in 0..pairs[0].obs_len() {
            let mut rel = Array2::zeros((rows * j, d));
            let mut r = 0;
            for pair in pairs {
                let step = pair.observed_step(t);
                for i in 0..n {
                    let this = step.row(i).to_vec();
                    for q in (0..n).filter(|&q| q != i) {
                        let other = step.row(q).to_vec();
                        let f = relative_features(&self.layout, &this, &other).expect("cue width matches layout");
                        rel.row_mut(r).assign(&ndarray::ArrayView1::from(&f));
                        r += 1;
                    }
                }
            }
            let rel = g.constant(rel);
            let emb = pooler.embedder.forward(g, rel);
            let joined = g.concat(&[emb, partner_self]);
            let pre = pooler.pre_pooler.forward(g, joined);
            let per_partner: Vec<Var> = (0..j)
                .map(|k| {
                    let idx: Vec<usize> = (0..rows).map(|row| row * j + k).collect();
                    g.gather_rows(pre, &idx)
                })
                .collect();
            pooled.push(g.max(&per_partner));
        }
        Ok(pooled)
    }

    pub fn encode_partner(&self, g: &mut Graph, pooled: Option<&[Var]>, rows: usize) -> Result<Var, EncodingError> {
        match (&self.pooler, pooled) {
            (Some(p), Some(steps)) => p.f_partner.encode(g, steps),
            _ => Ok(g.zeros(rows, self.cfg.embed_dim)),
        }
    }

    pub fn fuse_individual(&self, g: &mut Graph, e_self: Var, e_partner: Var) -> Var {
        let joined = g.concat(&[e_self, e_partner]);
        self.fuse.forward(g, joined)
    }

    /// `e = e_ind + OE(Δt)`, with one offset per pair.
    pub fn compose_representation(&self, g: &mut Graph, e_ind: Var, offsets: &[u32]) -> Result<Var, EncodingError> {
        let (rows, d) = g.shape(e_ind);
        let per_pair = rows / offsets.len();
        let mut oe = Array2::zeros((rows, d));
        for (p, &dt) in offsets.iter().enumerate() {
            let v = ndarray::Array1::from(offset_encoding(dt, d)?);
            for r in p * per_pair..(p + 1) * per_pair {
                oe.row_mut(r).assign(&v);
            }
        }
        let oe = g.constant(oe);
        Ok(g.add(e_ind, oe))
    }

    /// Full observed-window encoding for a batch of pairs.
    pub fn encode(&self, g: &mut Graph, pairs: &[&SequencePair]) -> Result<Var, EncodingError> {
        let obs_len = pairs[0].obs_len();
        if obs_len == 0 {
            return Err(EncodingError::EmptySequence);
        }
        let rows = pairs.len() * pairs[0].participants();
        let steps: Vec<Var> = (0..obs_len).map(|t| g.constant(step_matrix(pairs, t, false))).collect();
        let e_self = self.encode_self(g, &steps)?;
        let pooled = if self.pools() { Some(self.pool_partners(g, pairs, e_self)?) } else { None };
        let e_partner = self.encode_partner(g, pooled.as_deref(), rows)?;
        let e_ind = self.fuse_individual(g, e_self, e_partner);
        let offsets: Vec<u32> = pairs.iter().map(|p| p.offset).collect();
        self.compose_representation(g, e_ind, &offsets)
    }
}

/// Pooled partner representation of participant `self_idx` for a single
/// group window, one vector per observed step.
pub fn pool_partners_of(
    store: &ParamStore,
    enc: &IndividualEncoder,
    pair: &SequencePair,
    self_idx: usize,
) -> Result<Vec<Vec<f64>>, EncodingError> {
    let n = pair.participants();
    if n == 0 {
        return Err(EncodingError::NoParticipants);
    }
    let mut g = Graph::new(store);
    let pairs = [pair];
    let steps: Vec<Var> = (0..pair.obs_len()).map(|t| g.constant(step_matrix(&pairs, t, false))).collect();
    let e_self = enc.encode_self(&mut g, &steps)?;
    let pooled = enc.pool_partners(&mut g, &pairs, e_self)?;
    Ok(pooled.iter().map(|&v| g.value(v).index_axis(Axis(0), self_idx).to_vec()).collect())
}
