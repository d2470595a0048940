//! Objectives and the optimisation loop.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoding::{step_loglik, StepOutput};
use crate::exec::{map_indices, Execution};
use crate::geometry::CueLayout;
use crate::latent::gaussian_kl;
use crate::model::{flatten_pairs, Model, ModelConfig, ModelError, TaskOutput, ZChoice};
use crate::nn::{Adam, Gradients, Graph, Mat, ParamId, Var};
use crate::seeding::{rng_for, streams};
use crate::synthdata::{MetaSample, SequencePair, TaskSource};

pub const CODE_VERSION: &str = concat!("groupcast/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("checkpoint written by {found}, this is {expected}")]
    CodeVersion { found: String, expected: String },
    #[error("ragged sequences: {0}")]
    Ragged(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub steps: u64,
    /// Tasks per optimisation step.
    pub meta_batch: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    /// Ramp the KL weight linearly from 0 to 1 over the first 10% of steps.
    pub kl_anneal: bool,
    pub elbo_weight: f64,
    pub aux_weight: f64,
    pub log_every: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64, steps: u64) -> Self {
        Self {
            model,
            seed,
            steps,
            meta_batch: 4,
            lr: 1e-3,
            clip_norm: None,
            kl_anneal: false,
            elbo_weight: 1.0,
            aux_weight: 1.0,
            log_every: 50,
            execution: Execution::default(),
        }
    }

    pub fn kl_weight(&self, step: u64) -> f64 {
        if !self.kl_anneal {
            return 1.0;
        }
        let ramp = (self.steps as f64 * 0.1).max(1.0);
        (step as f64 / ramp).min(1.0)
    }
}

/// Loss weights and the learned log-variances `ŝ_l`, `ŝ_q`.
#[derive(Debug, Clone, Copy)]
pub struct LossState {
    pub s_l: ParamId,
    pub s_q: ParamId,
    pub elbo_weight: f64,
    pub aux_weight: f64,
}

/// ELBO terms of one task, scaled per target row.
pub struct ElboTerms {
    /// Negated ELBO, the quantity minimised.
    pub loss: Var,
    pub loglik: f64,
    pub kl: f64,
    pub rows: usize,
}

/// `−(E_q(z|D)[log p(Y | X, C, z)] − KL(q(z|D) ‖ q(z|C))) / rows`, with the
/// expectation taken at the single `z` the forward pass used.
pub fn elbo_loss(g: &mut Graph, out: &TaskOutput, kl_weight: f64) -> ElboTerms {
    let per_step: Vec<Var> = out
        .steps
        .iter()
        .zip(&out.truth)
        .map(|(s, &y)| {
            let ll = step_loglik(g, s, y);
            g.sum_rows(ll)
        })
        .collect();
    let ll_rows = g.concat(&per_step);
    let ll = g.sum_all(ll_rows);
    let loglik = g.scalar(ll);
    let neg = g.neg(ll);
    let (total, kl) = match out.q_posterior {
        Some(q) => {
            let kl = gaussian_kl(g, q, out.q_context);
            let klv = g.scalar(kl);
            let weighted = g.scale(kl, kl_weight);
            (g.add(neg, weighted), klv)
        }
        None => (neg, 0.0),
    };
    let loss = g.scale(total, 1.0 / out.rows as f64);
    ElboTerms { loss, loglik, kl, rows: out.rows }
}

/// Homoscedastically weighted pose losses plus speaking cross-entropy,
/// summed over participants and future steps:
/// `Σ (L_l e^{−ŝ_l} + ŝ_l + L_q e^{−ŝ_q} + ŝ_q) + BCE`.
pub fn auxiliary_loss(g: &mut Graph, layout: &CueLayout, steps: &[StepOutput], truth: &[Var], state: &LossState) -> Var {
    let s_l = g.param(state.s_l);
    let s_q = g.param(state.s_q);
    let w_l = {
        let n = g.neg(s_l);
        g.exp(n)
    };
    let w_q = {
        let n = g.neg(s_q);
        g.exp(n)
    };
    let mut terms = Vec::new();
    for (step, &y) in steps.iter().zip(truth) {
        let StepOutput::Gaussian { mean, .. } = *step else { continue };
        let rows = g.shape(y).0 as f64;
        if layout.location_dim > 0 {
            let off = layout.location_offset();
            let l = g.slice_cols(y, off, layout.location_dim);
            let lh = g.slice_cols(mean, off, layout.location_dim);
            let diff = g.sub(l, lh);
            let err = g.row_norm(diff);
            let err = g.sum_all(err);
            let weighted = g.mul(err, w_l);
            let reg = g.scale(s_l, rows);
            terms.push(g.add(weighted, reg));
        }
        if layout.orientation {
            let q = g.slice_cols(y, 0, 4);
            let qh = g.slice_cols(mean, 0, 4);
            let qh = crate::decoding::normalize_quaternion_block(g, qh);
            let diff = g.sub(q, qh);
            let err = g.row_norm(diff);
            let err = g.sum_all(err);
            let weighted = g.mul(err, w_q);
            let reg = g.scale(s_q, rows);
            terms.push(g.add(weighted, reg));
        }
        if let Some(off) = layout.speaking_offset() {
            let s = g.slice_cols(y, off, 1);
            let p = g.slice_cols(mean, off, 1);
            let p = g.clamp(p, 1e-12, 1.0 - 1e-12);
            let ln_p = g.ln(p);
            let one_minus = {
                let n = g.neg(p);
                g.offset(n, 1.0)
            };
            let ln_q = g.ln(one_minus);
            let not_s = {
                let n = g.neg(s);
                g.offset(n, 1.0)
            };
            let a = g.mul(s, ln_p);
            let b = g.mul(not_s, ln_q);
            let ll = g.add(a, b);
            let ll = g.sum_all(ll);
            terms.push(g.neg(ll));
        }
    }
    if terms.is_empty() {
        return g.zeros(1, 1);
    }
    let all = g.concat(&terms);
    g.sum_all(all)
}

/// Windows flattened over time, participant and cue axes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTask {
    pub context_x: Mat,
    pub context_y: Mat,
    pub target_x: Mat,
    pub target_y: Mat,
    /// `(T_obs, T_fut, participants, cue_dims)`.
    pub shape: (usize, usize, usize, usize),
}

/// Present a task the way the flat baselines see it: each window becomes one
/// vector, and context futures are plain inputs.
pub fn baseline_flatten_adapter(sample: &MetaSample) -> Result<FlatTask, TrainError> {
    let first = sample.target.first().or(sample.context.first()).ok_or(TrainError::Ragged("empty task".into()))?;
    let shape = (first.obs_len(), first.fut_len(), first.participants(), first.cue_dims());
    for p in sample.context.iter().chain(&sample.target) {
        let s = (p.obs_len(), p.fut_len(), p.participants(), p.cue_dims());
        if s != shape {
            return Err(TrainError::Ragged(format!("window {s:?} differs from {shape:?}")));
        }
    }
    let flat = |pairs: &[SequencePair]| -> (Mat, Mat) {
        if pairs.is_empty() {
            return (Mat::zeros((0, shape.0 * shape.2 * shape.3)), Mat::zeros((0, shape.1 * shape.2 * shape.3)));
        }
        let refs: Vec<&SequencePair> = pairs.iter().collect();
        flatten_pairs(&refs)
    };
    let (context_x, context_y) = flat(&sample.context);
    let (target_x, target_y) = flat(&sample.target);
    Ok(FlatTask { context_x, context_y, target_x, target_y, shape })
}

/// Inverse of the flattening for one row.
pub fn unflatten(row: &[f64], steps: usize, participants: usize, dims: usize) -> Array3<f64> {
    Array3::from_shape_vec((steps, participants, dims), row.to_vec()).expect("row length matches shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    /// Mean per-row ELBO over the step's tasks.
    pub elbo: f64,
    pub kl: f64,
    pub aux: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub code_version: String,
    pub config: TrainConfig,
    /// Steps completed; task and noise draws are keyed by step, so this is
    /// the whole training rng state.
    pub step: u64,
    pub params: crate::nn::ParamStore,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string(self).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path)?;
        let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let found = probe.get("code_version").and_then(|v| v.as_str()).unwrap_or("unknown");
        if found != CODE_VERSION {
            return Err(TrainError::CodeVersion { found: found.to_string(), expected: CODE_VERSION.to_string() });
        }
        serde_json::from_value(probe).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }
}

struct TaskResult {
    grads: Gradients,
    loss: f64,
    elbo: f64,
    kl: f64,
    aux: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Adam,
    pub step: u64,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        let model = Model::new(config.model.clone(), config.seed)?;
        let mut optimizer = Adam::new(&model.params, config.lr);
        optimizer.clip_norm = config.clip_norm;
        Ok(Self { config, model, optimizer, step: 0, started: Instant::now() })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, TrainError> {
        let model = Model::from_params(ckpt.config.model.clone(), ckpt.params)?;
        Ok(Self { config: ckpt.config, model, optimizer: ckpt.optimizer, step: ckpt.step, started: Instant::now() })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            code_version: CODE_VERSION.to_string(),
            config: self.config.clone(),
            step: self.step,
            params: self.model.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    fn task_gradient(&self, task: &MetaSample, eps: Mat, kl_weight: f64) -> Result<TaskResult, ModelError> {
        let model = &self.model;
        let mut g = Graph::new(&model.params);
        let out = model.forward(&mut g, task, &ZChoice::Posterior(eps))?;
        let terms = elbo_loss(&mut g, &out, kl_weight);
        let mut loss = g.scale(terms.loss, self.config.elbo_weight);
        let mut aux = 0.0;
        if let Some((s_l, s_q)) = model.loss_scales() {
            let state = LossState { s_l, s_q, elbo_weight: self.config.elbo_weight, aux_weight: self.config.aux_weight };
            let a = auxiliary_loss(&mut g, &model.config.layout, &out.steps, &out.truth, &state);
            aux = g.scalar(a);
            let a = g.scale(a, state.aux_weight);
            loss = g.add(loss, a);
        }
        let grads = g.backward(loss);
        let rows = terms.rows as f64;
        Ok(TaskResult { grads, loss: g.scalar(loss), elbo: (terms.loglik - terms.kl) / rows, kl: terms.kl, aux })
    }

    /// One optimisation step over `meta_batch` tasks drawn for this step.
    pub fn train_step(&mut self, source: &dyn TaskSource) -> Result<LogRecord, TrainError> {
        let cfg = &self.config;
        let base = self.step * cfg.meta_batch as u64;
        let kl_weight = cfg.kl_weight(self.step);
        let d_z = self.model.latent_dim();
        let results = map_indices(cfg.meta_batch, cfg.execution, |k| {
            let idx = base + k as u64;
            let task = source.draw(&mut rng_for(cfg.seed, streams::TRAIN_TASK, idx));
            let mut noise = rng_for(cfg.seed, streams::TRAIN_NOISE, idx);
            let eps = Mat::from_shape_fn((1, d_z), |_| noise.sample(StandardNormal));
            self.task_gradient(&task, eps, kl_weight)
        });
        let results: Vec<TaskResult> = results.into_iter().collect::<Result<_, _>>()?;
        let n = results.len() as f64;
        let parts: Vec<Gradients> = results.iter().map(|r| r.grads.clone()).collect();
        let mut grads = Gradients::sum_ordered(&self.model.params, &parts);
        grads.scale(1.0 / n);
        let loss = results.iter().map(|r| r.loss).sum::<f64>() / n;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(TrainError::Divergence { step: self.step, loss });
        }
        self.optimizer.step(&mut self.model.params, &grads);
        self.step += 1;
        Ok(LogRecord {
            step: self.step,
            elbo: results.iter().map(|r| r.elbo).sum::<f64>() / n,
            kl: results.iter().map(|r| r.kl).sum::<f64>() / n,
            aux: results.iter().map(|r| r.aux).sum::<f64>() / n,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Train until `config.steps`, writing every `log_every`-th record (and
    /// the last) as a JSON line to `log`.
    pub fn run(&mut self, source: &dyn TaskSource, mut log: Option<&mut dyn Write>) -> Result<Vec<LogRecord>, TrainError> {
        let mut records = Vec::new();
        while self.step < self.config.steps {
            let rec = self.train_step(source)?;
            if rec.step % self.config.log_every.max(1) == 0 || rec.step == self.config.steps {
                if let Some(w) = log.as_deref_mut() {
                    writeln!(w, "{}", serde_json::to_string(&rec).expect("record serialises"))?;
                }
                records.push(rec);
            }
        }
        Ok(records)
    }
}

/// Train a fresh model for `config.steps` steps.
pub fn fit(config: TrainConfig, source: &dyn TaskSource) -> Result<(Model, Vec<LogRecord>), TrainError> {
    let mut trainer = Trainer::new(config)?;
    let log = trainer.run(source, None)?;
    Ok((trainer.model, log))
}

/// Negated ELBO of one task with `z` at the posterior mean of
/// `q(z | C ∪ targets)`, summed over target rows.
pub fn task_loss(model: &Model, task: &MetaSample) -> Result<f64, ModelError> {
    let mut g = Graph::new(&model.params);
    let out = model.forward(&mut g, task, &ZChoice::Posterior(Mat::zeros((1, model.latent_dim()))))?;
    let terms = elbo_loss(&mut g, &out, 1.0);
    Ok(g.scalar(terms.loss) * terms.rows as f64)
}
