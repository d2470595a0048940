//! Model variants and the task-level forward pass.
//!
//! Every variant shares one pipeline: encode context and target pairs,
//! aggregate the context into `q(z | C)` (plus `r_C` or `r*` when a
//! deterministic path is present) and decode target futures from
//! `[x-representation; r; z]`. Variants differ in how pairs are represented:
//! SP/ASP/VED use the per-participant encoder, NP/ANP flatten each window
//! into one vector.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoding::{DecodeMode, DecoderConfig, DecodingError, Forecast, Likelihood, SequenceDecoder, StepOutput, OBS_STD_FLOOR};
use crate::encoding::{step_matrix, Backbone, EncoderConfig, EncodingError, IndividualEncoder, SequenceEncoder};
use crate::geometry::CueLayout;
use crate::latent::{
    reparameterize, AttentionKind, CrossAttention, DeterministicEncoder, GaussianVars, LatentEncoder, LatentError,
    LatentGaussian,
};
use crate::nn::{Graph, Mat, ParamId, ParamStore, Var};
use crate::seeding::{rng_for, streams};
use crate::synthdata::{MetaSample, SequencePair};

pub const VARIANT_NAMES: &[&str] = &[
    "NP-latent",
    "NP-uniform",
    "ANP-dot",
    "ANP-mh",
    "SP-MLP-latent",
    "SP-GRU-latent",
    "SP-MLP-uniform",
    "SP-GRU-uniform",
    "ASP-MLP-dot",
    "ASP-GRU-dot",
    "ASP-MLP-mh",
    "ASP-GRU-mh",
    "VED-MLP",
    "VED-GRU",
];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model variant `{0}`; expected one of: {list}", list = VARIANT_NAMES.join(", "))]
    InvalidVariant(String),
    #[error("data does not fit the model: {0}")]
    Incompatible(String),
    #[error("latent sweep needs a 1-dimensional latent, model has {0}")]
    LatentDim(usize),
    #[error("checkpoint parameters do not match the model configuration")]
    ParamMismatch,
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Decoding(#[from] DecodingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Np,
    Anp,
    Sp,
    Asp,
    Ved,
}

/// How the context reaches the decoder besides `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPath {
    Latent,
    Uniform,
    Dot,
    Multihead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub family: Family,
    pub path: ContextPath,
    pub backbone: Backbone,
}

impl Variant {
    pub fn flattens(&self) -> bool {
        matches!(self.family, Family::Np | Family::Anp)
    }

    pub fn uses_context(&self) -> bool {
        self.family != Family::Ved
    }

    pub fn attention(&self) -> Option<AttentionKind> {
        match self.path {
            ContextPath::Dot => Some(AttentionKind::Dot),
            ContextPath::Multihead => Some(AttentionKind::Multihead { heads: 4 }),
            _ => None,
        }
    }

    pub fn deterministic(&self) -> bool {
        self.path != ContextPath::Latent
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bb = match self.backbone {
            Backbone::Mlp => "MLP",
            Backbone::Gru => "GRU",
        };
        let path = match self.path {
            ContextPath::Latent => "latent",
            ContextPath::Uniform => "uniform",
            ContextPath::Dot => "dot",
            ContextPath::Multihead => "mh",
        };
        match self.family {
            Family::Np => write!(f, "NP-{path}"),
            Family::Anp => write!(f, "ANP-{path}"),
            Family::Sp => write!(f, "SP-{bb}-{path}"),
            Family::Asp => write!(f, "ASP-{bb}-{path}"),
            Family::Ved => write!(f, "VED-{bb}"),
        }
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidVariant(s.to_string());
        let parts: Vec<String> = s.split('-').map(str::to_ascii_lowercase).collect();
        let backbone = |b: &str| match b {
            "mlp" => Ok(Backbone::Mlp),
            "gru" => Ok(Backbone::Gru),
            _ => Err(bad()),
        };
        let path = |p: &str| match p {
            "latent" => Ok(ContextPath::Latent),
            "uniform" => Ok(ContextPath::Uniform),
            "dot" => Ok(ContextPath::Dot),
            "mh" => Ok(ContextPath::Multihead),
            _ => Err(bad()),
        };
        let parts: Vec<&str> = parts.iter().map(String::as_str).collect();
        let v = match parts.as_slice() {
            ["np", p] => Variant { family: Family::Np, path: path(p)?, backbone: Backbone::Mlp },
            ["anp", p] => Variant { family: Family::Anp, path: path(p)?, backbone: Backbone::Mlp },
            ["sp", b, p] => Variant { family: Family::Sp, path: path(p)?, backbone: backbone(b)? },
            ["asp", b, p] => Variant { family: Family::Asp, path: path(p)?, backbone: backbone(b)? },
            ["ved", b] => Variant { family: Family::Ved, path: ContextPath::Latent, backbone: backbone(b)? },
            _ => return Err(bad()),
        };
        let attentive = matches!(v.path, ContextPath::Dot | ContextPath::Multihead);
        let ok = match v.family {
            Family::Np | Family::Sp => !attentive,
            Family::Anp | Family::Asp => attentive,
            Family::Ved => true,
        };
        if ok { Ok(v) } else { Err(bad()) }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Per-participant cue layout of the data.
    pub layout: CueLayout,
    /// People per group in the data.
    pub people: usize,
    /// Feed participants to the model as channels of one stream.
    pub joint_stream: bool,
    pub obs_len: usize,
    pub fut_len: usize,
    pub embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub embedder_dim: usize,
    pub pool_dim: usize,
    pub pool: bool,
    /// Width of the context-aggregation MLPs.
    pub width: usize,
    pub latent_dim: usize,
    pub det_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub gru_dim: usize,
    pub likelihood: Likelihood,
    pub decode_mode: DecodeMode,
    pub teacher_forcing: bool,
    pub std_floor: f64,
}

impl ModelConfig {
    pub fn glancing(variant: Variant) -> Self {
        Self {
            variant,
            layout: CueLayout::GLANCE,
            people: 1,
            joint_stream: false,
            obs_len: crate::synthdata::GLANCE_OBS,
            fut_len: crate::synthdata::GLANCE_LEN - crate::synthdata::GLANCE_OBS,
            embed_dim: 32,
            encoder_hidden: vec![64, 64],
            embedder_dim: 16,
            pool_dim: 32,
            pool: false,
            width: 64,
            latent_dim: 1,
            det_dim: 32,
            decoder_hidden: vec![64, 64],
            gru_dim: 32,
            likelihood: Likelihood::Gaussian,
            decode_mode: DecodeMode::Direct,
            teacher_forcing: true,
            std_floor: OBS_STD_FLOOR,
        }
    }

    pub fn speaking(variant: Variant, people: usize, obs_len: usize, fut_len: usize) -> Self {
        Self {
            variant,
            layout: CueLayout::SPEAKING,
            people,
            joint_stream: true,
            obs_len,
            fut_len,
            embed_dim: 32,
            encoder_hidden: vec![64, 64],
            embedder_dim: 16,
            pool_dim: 32,
            pool: false,
            width: 64,
            latent_dim: 64,
            det_dim: 32,
            decoder_hidden: vec![64, 64],
            gru_dim: 32,
            likelihood: Likelihood::Categorical,
            decode_mode: DecodeMode::Autoregressive,
            teacher_forcing: true,
            std_floor: OBS_STD_FLOOR,
        }
    }

    /// Participants per window as the model sees them.
    pub fn participants(&self) -> usize {
        if self.joint_stream { 1 } else { self.people }
    }

    /// Cue channels per participant as the model sees them.
    pub fn cue_dims(&self) -> usize {
        if self.joint_stream { self.people * self.layout.dims() } else { self.layout.dims() }
    }

    fn decoder_layout(&self) -> CueLayout {
        if self.joint_stream { CueLayout { orientation: false, ..self.layout } } else { self.layout }
    }

    fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            backbone: self.variant.backbone,
            embed_dim: self.embed_dim,
            hidden: self.encoder_hidden.clone(),
            embedder_dim: self.embedder_dim,
            pool_dim: self.pool_dim,
            pool: self.pool,
        }
    }

    fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            backbone: if self.variant.flattens() { Backbone::Mlp } else { self.variant.backbone },
            likelihood: self.likelihood,
            mode: self.decode_mode,
            hidden: self.decoder_hidden.clone(),
            gru_dim: self.gru_dim,
            teacher_forcing: self.teacher_forcing,
            std_floor: self.std_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum PairEncoder {
    Social { x: IndividualEncoder, y: SequenceEncoder },
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Net {
    pairs: PairEncoder,
    latent: LatentEncoder,
    det: Option<DeterministicEncoder>,
    attention: Option<CrossAttention>,
    decoder: SequenceDecoder,
    /// Learned log-variances `(ŝ_l, ŝ_q)` weighting the pose losses.
    loss_scales: Option<(ParamId, ParamId)>,
}

/// Which `z` the decoder sees.
#[derive(Debug, Clone)]
pub enum ZChoice {
    /// Reparameterised draw from `q(z | C ∪ targets)`; `eps` is `1 × d_z`.
    Posterior(Mat),
    /// Mean of `q(z | C)`.
    ContextMean,
    /// Reparameterised draw from `q(z | C)`.
    ContextSample(Mat),
    /// Bypass the context encoder.
    Fixed(Vec<f64>),
}

/// Forward pass of one task on a graph.
pub struct TaskOutput {
    pub steps: Vec<StepOutput>,
    /// True future steps, `rows × D` each.
    pub truth: Vec<Var>,
    pub q_context: GaussianVars,
    pub q_posterior: Option<GaussianVars>,
    pub rows: usize,
}

struct Encoded {
    x: Var,
    pair: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    net: Net,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = rng_for(seed, streams::INIT, 0);
        let mut store = ParamStore::new();
        let c = &config;
        let (n, d) = (c.participants(), c.cue_dims());
        let (pairs, x_dim, pair_dim, out_dim) = if c.variant.flattens() {
            let x_dim = c.obs_len * n * d;
            let y_dim = c.fut_len * n * d;
            (PairEncoder::Flatten, x_dim, x_dim + y_dim, n * d)
        } else {
            let enc_cfg = c.encoder_config();
            let layout = if c.joint_stream { CueLayout { orientation: false, location_dim: 0, speaking: false } } else { c.layout };
            let x = IndividualEncoder::new(&mut store, &mut rng, "x", &enc_cfg, layout, d, c.obs_len)?;
            let y = SequenceEncoder::new(&mut store, &mut rng, "y", &enc_cfg, d, c.fut_len);
            (PairEncoder::Social { x, y }, c.embed_dim, 2 * c.embed_dim, d)
        };
        let latent = LatentEncoder::new(&mut store, &mut rng, "latent", pair_dim, c.width, c.latent_dim);
        let det = (c.variant.uses_context() && c.variant.deterministic())
            .then(|| DeterministicEncoder::new(&mut store, &mut rng, "det", pair_dim, c.width, c.det_dim));
        let attention = c
            .variant
            .attention()
            .map(|kind| CrossAttention::new(&mut store, &mut rng, "attn", kind, x_dim, c.width, c.det_dim));
        let cond_dim = x_dim + if det.is_some() { c.det_dim } else { 0 } + c.latent_dim;
        let decoder = SequenceDecoder::new(
            &mut store,
            &mut rng,
            "dec",
            &c.decoder_config(),
            c.decoder_layout(),
            cond_dim,
            out_dim,
            c.fut_len,
        );
        let loss_scales = (c.layout.orientation && !c.joint_stream)
            .then(|| (store.insert("loss.s_l", Mat::zeros((1, 1))), store.insert("loss.s_q", Mat::zeros((1, 1)))));
        let net = Net { pairs, latent, det, attention, decoder, loss_scales };
        Ok(Self { config, params: store, net })
    }

    /// Rebuild from saved parameters.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        if !model.params.shapes_match(&params) {
            return Err(ModelError::ParamMismatch);
        }
        model.params = params;
        Ok(model)
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Parameters `(ŝ_l, ŝ_q)` of the auxiliary pose loss, for pose layouts.
    pub fn loss_scales(&self) -> Option<(ParamId, ParamId)> {
        self.net.loss_scales
    }

    /// The task as the model consumes it (joint-stream view when configured).
    pub fn view<'a>(&self, pairs: &'a [SequencePair]) -> Vec<Cow<'a, SequencePair>> {
        pairs
            .iter()
            .map(|p| if self.config.joint_stream { Cow::Owned(p.joint_stream()) } else { Cow::Borrowed(p) })
            .collect()
    }

    fn check(&self, pairs: &[&SequencePair]) -> Result<(), ModelError> {
        let c = &self.config;
        for p in pairs {
            if p.obs_len() != c.obs_len || p.fut_len() != c.fut_len {
                return Err(ModelError::Incompatible(format!(
                    "windows are {}+{} steps, model expects {}+{}",
                    p.obs_len(),
                    p.fut_len(),
                    c.obs_len,
                    c.fut_len
                )));
            }
            if p.cue_dims() != c.cue_dims() || (c.variant.flattens() && p.participants() != c.participants()) {
                return Err(ModelError::Incompatible(format!(
                    "{} participants × {} cue dims per step",
                    p.participants(),
                    p.cue_dims()
                )));
            }
        }
        Ok(())
    }

    fn encode(&self, g: &mut Graph, pairs: &[&SequencePair]) -> Result<Encoded, ModelError> {
        self.check(pairs)?;
        match &self.net.pairs {
            PairEncoder::Flatten => {
                let (x, y) = flatten_pairs(pairs);
                let xv = g.constant(x.clone());
                let mut joined = ndarray::concatenate![ndarray::Axis(1), x, y];
                joined = joined.as_standard_layout().to_owned();
                let pair = g.constant(joined);
                Ok(Encoded { x: xv, pair })
            }
            PairEncoder::Social { x, y } => {
                let e = x.encode(g, pairs)?;
                let fut: Vec<Var> = (0..pairs[0].fut_len()).map(|t| g.constant(step_matrix(pairs, t, true))).collect();
                let ey = y.encode(g, &fut)?;
                let pair = g.concat(&[e, ey]);
                Ok(Encoded { x: e, pair })
            }
        }
    }

    /// Target future steps as `rows × D` matrices matching the decoder rows.
    fn truth(&self, g: &mut Graph, pairs: &[&SequencePair]) -> Vec<Var> {
        (0..self.config.fut_len).map(|t| g.constant(step_matrix(pairs, t, true))).collect()
    }

    /// `q(z | C)`; the prior for empty contexts and for VED.
    pub fn context_latent(&self, g: &mut Graph, context: &[SequencePair]) -> Result<GaussianVars, ModelError> {
        if context.is_empty() || !self.config.variant.uses_context() {
            return Ok(GaussianVars::standard(g, self.config.latent_dim));
        }
        let view = self.view(context);
        let refs: Vec<&SequencePair> = view.iter().map(|c| c.as_ref()).collect();
        let enc = self.encode(g, &refs)?;
        Ok(self.net.latent.aggregate_stochastic(g, Some(enc.pair)))
    }

    pub fn context_posterior(&self, context: &[SequencePair]) -> Result<LatentGaussian, ModelError> {
        let mut g = Graph::new(&self.params);
        let q = self.context_latent(&mut g, context)?;
        Ok(q.values(&g))
    }

    pub fn forward(&self, g: &mut Graph, task: &MetaSample, z: &ZChoice) -> Result<TaskOutput, ModelError> {
        let context = if self.config.variant.uses_context() { &task.context[..] } else { &[][..] };
        let ctx_view = self.view(context);
        let tgt_view = self.view(&task.target);
        let ctx: Vec<&SequencePair> = ctx_view.iter().map(|c| c.as_ref()).collect();
        let tgt: Vec<&SequencePair> = tgt_view.iter().map(|c| c.as_ref()).collect();
        if tgt.is_empty() {
            return Err(ModelError::Incompatible("task has no targets".into()));
        }

        let ctx_enc = if ctx.is_empty() { None } else { Some(self.encode(g, &ctx)?) };
        let tgt_enc = self.encode(g, &tgt)?;
        let rows = g.shape(tgt_enc.x).0;

        let q_context = match &ctx_enc {
            Some(e) => self.net.latent.aggregate_stochastic(g, Some(e.pair)),
            None => GaussianVars::standard(g, self.config.latent_dim),
        };
        let mut q_posterior = None;
        let zv = match z {
            ZChoice::Posterior(eps) => {
                let all = match &ctx_enc {
                    Some(e) => g.stack_rows(&[e.pair, tgt_enc.pair]),
                    None => tgt_enc.pair,
                };
                let q = self.net.latent.aggregate_stochastic(g, Some(all));
                q_posterior = Some(q);
                reparameterize(g, q, eps.clone())
            }
            ZChoice::ContextMean => q_context.mean,
            ZChoice::ContextSample(eps) => reparameterize(g, q_context, eps.clone()),
            ZChoice::Fixed(v) => {
                if v.len() != self.config.latent_dim {
                    return Err(ModelError::LatentDim(self.config.latent_dim));
                }
                g.constant(Array2::from_shape_vec((1, v.len()), v.clone()).expect("row vector"))
            }
        };
        let zb = g.broadcast_rows(zv, rows);

        let mut cond_parts = vec![tgt_enc.x];
        if let Some(det) = &self.net.det {
            let ctx_enc = ctx_enc.as_ref();
            let r = match &self.net.attention {
                Some(att) => {
                    let ce = ctx_enc.ok_or(LatentError::EmptyContext)?;
                    let values = det.pair_values(g, ce.pair);
                    att.attend(g, tgt_enc.x, Some(ce.x), values)?
                }
                None => {
                    let rc = det.aggregate_deterministic(g, ctx_enc.map(|e| e.pair))?;
                    g.broadcast_rows(rc, rows)
                }
            };
            cond_parts.push(r);
        }
        cond_parts.push(zb);
        let cond = g.concat(&cond_parts);

        let truth_rows = self.truth(g, &tgt);
        let steps = if self.config.variant.flattens() && self.config.participants() > 1 {
            let flat_truth = self.flat_truth(g, &tgt);
            let flat = self.net.decoder.decode(g, cond, Some(&flat_truth))?;
            flat.iter().map(|s| self.unflatten_step(g, s, tgt.len())).collect()
        } else {
            self.net.decoder.decode(g, cond, Some(&truth_rows))?
        };
        let rows = g.shape(truth_rows[0]).0;
        Ok(TaskOutput { steps, truth: truth_rows, q_context, q_posterior, rows })
    }

    fn flat_truth(&self, g: &mut Graph, pairs: &[&SequencePair]) -> Vec<Var> {
        let (n, d) = (self.config.participants(), self.config.cue_dims());
        (0..self.config.fut_len)
            .map(|t| {
                let m = step_matrix(pairs, t, true);
                g.constant(m.into_shape_with_order((pairs.len(), n * d)).expect("contiguous"))
            })
            .collect()
    }

    /// `[P × n·D]` decoder rows to `[P·n × D]` participant rows.
    fn unflatten_step(&self, g: &mut Graph, step: &StepOutput, p: usize) -> StepOutput {
        let (n, d) = (self.config.participants(), self.config.cue_dims());
        let order: Vec<usize> = (0..p * n).map(|row| (row % n) * p + row / n).collect();
        let mut split = |v: Var| {
            let parts: Vec<Var> = (0..n).map(|i| g.slice_cols(v, i * d, d)).collect();
            let stacked = g.stack_rows(&parts);
            g.gather_rows(stacked, &order)
        };
        match *step {
            StepOutput::Gaussian { mean, std } => StepOutput::Gaussian { mean: split(mean), std: split(std) },
            StepOutput::Categorical { log_probs } => StepOutput::Categorical { log_probs: split(log_probs) },
        }
    }

    /// Forecast of every target window, with the truth it is compared to.
    pub fn predict(&self, task: &MetaSample, z: &ZChoice) -> Result<(Forecast, Array3<f64>), ModelError> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, task, z)?;
        let forecast = Forecast::from_steps(&mut g, &out.steps);
        let truth: Vec<_> = out.truth.iter().map(|&v| g.value(v).view()).collect();
        let truth = ndarray::stack(ndarray::Axis(0), &truth).expect("equal step shapes");
        Ok((forecast, truth))
    }
}

/// Flatten time, participant and cue axes of each window into one row:
/// `x[p] = observed[p]` in `(t, i, d)` order, likewise `y` for futures.
pub fn flatten_pairs(pairs: &[&SequencePair]) -> (Mat, Mat) {
    let flat = |a: &Array3<f64>| a.iter().copied().collect::<Vec<f64>>();
    let x_dim = pairs[0].observed.len();
    let y_dim = pairs[0].future.len();
    let mut x = Mat::zeros((pairs.len(), x_dim));
    let mut y = Mat::zeros((pairs.len(), y_dim));
    for (p, pair) in pairs.iter().enumerate() {
        x.row_mut(p).assign(&ndarray::Array1::from(flat(&pair.observed)));
        y.row_mut(p).assign(&ndarray::Array1::from(flat(&pair.future)));
    }
    (x, y)
}
