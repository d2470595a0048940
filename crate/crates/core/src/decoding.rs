//! Future-window decoders and observation likelihoods.

use ndarray::{Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::Backbone;
use crate::geometry::CueLayout;
use crate::nn::{Graph, Gru, Linear, Mat, Mlp, ParamStore, Var};

/// Lower bound on the predicted observation standard deviation.
pub const OBS_STD_FLOOR: f64 = 0.01;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Error, PartialEq)]
pub enum DecodingError {
    #[error("forecast is {forecast:?} but truth is {truth:?}")]
    ShapeMismatch { forecast: (usize, usize, usize), truth: (usize, usize, usize) },
    #[error("teacher forcing needs {expected} ground-truth steps, got {got}")]
    MissingTeacher { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Gaussian,
    /// One-of-`D` over the cue channels at each step.
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Each step sees only the conditioning vector.
    Direct,
    /// Each step also sees the previous step's output (or truth when teacher forcing).
    Autoregressive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub backbone: Backbone,
    pub likelihood: Likelihood,
    pub mode: DecodeMode,
    pub hidden: Vec<usize>,
    pub gru_dim: usize,
    pub teacher_forcing: bool,
    pub std_floor: f64,
}

/// Distribution parameters for one future step, one row per participant row.
#[derive(Debug, Clone, Copy)]
pub enum StepOutput {
    Gaussian { mean: Var, std: Var },
    Categorical { log_probs: Var },
}

impl StepOutput {
    /// Point prediction: the mean, or the class probabilities.
    pub fn point(&self, g: &mut Graph) -> Var {
        match *self {
            StepOutput::Gaussian { mean, .. } => mean,
            StepOutput::Categorical { log_probs } => g.exp(log_probs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum DecoderBody {
    Gru { init: Linear, gru: Gru, head: Linear },
    Mlp { mlp: Mlp },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDecoder {
    cfg: DecoderConfig,
    layout: CueLayout,
    out_dim: usize,
    fut_len: usize,
    body: DecoderBody,
}

impl SequenceDecoder {
    /// `out_dim` cue channels per step, conditioned on a `cond_dim` vector.
    /// The MLP backbone emits all steps at once, laid out as
    /// `[means (T·D) | raw scales (T·D)]` (logits only, for categorical).
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cfg: &DecoderConfig,
        layout: CueLayout,
        cond_dim: usize,
        out_dim: usize,
        fut_len: usize,
    ) -> Self {
        let per_step = match cfg.likelihood {
            Likelihood::Gaussian => 2 * out_dim,
            Likelihood::Categorical => out_dim,
        };
        let body = match cfg.backbone {
            Backbone::Gru => {
                let in_dim = match cfg.mode {
                    DecodeMode::Direct => cond_dim,
                    DecodeMode::Autoregressive => cond_dim + out_dim,
                };
                DecoderBody::Gru {
                    init: Linear::new(store, rng, &format!("{name}.init"), cond_dim, cfg.gru_dim, true),
                    gru: Gru::new(store, rng, &format!("{name}.gru"), in_dim, cfg.gru_dim),
                    head: Linear::new(store, rng, &format!("{name}.head"), cfg.gru_dim, per_step, true),
                }
            }
            Backbone::Mlp => DecoderBody::Mlp {
                mlp: Mlp::new(store, rng, &format!("{name}.mlp"), cond_dim, &cfg.hidden, per_step * fut_len),
            },
        };
        Self { cfg: cfg.clone(), layout, out_dim, fut_len, body }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn fut_len(&self) -> usize {
        self.fut_len
    }

    /// Decode `fut_len` steps for every row of `cond`. `teacher` holds the
    /// true future steps and is only read by autoregressive decoders with
    /// teacher forcing enabled.
    pub fn decode(&self, g: &mut Graph, cond: Var, teacher: Option<&[Var]>) -> Result<Vec<StepOutput>, DecodingError> {
        let rows = g.shape(cond).0;
        let d = self.out_dim;
        match &self.body {
            DecoderBody::Mlp { mlp } => {
                let out = mlp.forward(g, cond);
                let t_len = self.fut_len;
                Ok((0..t_len)
                    .map(|t| match self.cfg.likelihood {
                        Likelihood::Gaussian => {
                            let mean = g.slice_cols(out, t * d, d);
                            let raw = g.slice_cols(out, t_len * d + t * d, d);
                            self.gaussian(g, mean, raw)
                        }
                        Likelihood::Categorical => {
                            let logits = g.slice_cols(out, t * d, d);
                            StepOutput::Categorical { log_probs: g.log_softmax(logits) }
                        }
                    })
                    .collect())
            }
            DecoderBody::Gru { init, gru, head } => {
                let forcing = self.cfg.mode == DecodeMode::Autoregressive && self.cfg.teacher_forcing;
                let teacher = match (forcing, teacher) {
                    (true, Some(steps)) if steps.len() >= self.fut_len - 1 => Some(steps),
                    (true, Some(steps)) => {
                        return Err(DecodingError::MissingTeacher { expected: self.fut_len - 1, got: steps.len() })
                    }
                    _ => None,
                };
                let h0 = init.forward(g, cond);
                let mut h = g.tanh(h0);
                let mut prev = g.zeros(rows, d);
                let mut outs = Vec::with_capacity(self.fut_len);
                for t in 0..self.fut_len {
                    let x = match self.cfg.mode {
                        DecodeMode::Direct => cond,
                        DecodeMode::Autoregressive => g.concat(&[cond, prev]),
                    };
                    h = gru.step(g, x, h);
                    let o = head.forward(g, h);
                    let step = match self.cfg.likelihood {
                        Likelihood::Gaussian => {
                            let mean = g.slice_cols(o, 0, d);
                            let raw = g.slice_cols(o, d, d);
                            self.gaussian(g, mean, raw)
                        }
                        Likelihood::Categorical => StepOutput::Categorical { log_probs: g.log_softmax(o) },
                    };
                    prev = match teacher {
                        Some(steps) if t + 1 < self.fut_len => steps[t],
                        _ => step.point(g),
                    };
                    outs.push(step);
                }
                Ok(outs)
            }
        }
    }

    fn gaussian(&self, g: &mut Graph, mean: Var, raw: Var) -> StepOutput {
        let mean = if self.layout.orientation { normalize_quaternion_block(g, mean) } else { mean };
        let std = g.softplus(raw);
        let std = g.offset(std, self.cfg.std_floor);
        StepOutput::Gaussian { mean, std }
    }
}

/// Rescales columns 0..4 of every row to unit norm.
pub fn normalize_quaternion_block(g: &mut Graph, mean: Var) -> Var {
    let cols = g.shape(mean).1;
    let q = g.slice_cols(mean, 0, 4);
    let n = g.row_norm(q);
    let n = g.offset(n, 1e-12);
    let q = g.div(q, n);
    if cols == 4 {
        q
    } else {
        let rest = g.slice_cols(mean, 4, cols - 4);
        g.concat(&[q, rest])
    }
}

/// Log-likelihood of `y` under one step, summed over cue dimensions: `rows × 1`.
pub fn step_loglik(g: &mut Graph, out: &StepOutput, y: Var) -> Var {
    match *out {
        StepOutput::Gaussian { mean, std } => {
            let diff = g.sub(y, mean);
            let z = g.div(diff, std);
            let z2 = g.square(z);
            let z2 = g.scale(z2, -0.5);
            let ln_std = g.ln(std);
            let ll = g.sub(z2, ln_std);
            let ll = g.offset(ll, -HALF_LN_2PI);
            g.sum_cols(ll)
        }
        StepOutput::Categorical { log_probs } => {
            let picked = g.mul(y, log_probs);
            g.sum_cols(picked)
        }
    }
}

/// Predicted distribution over a batch of future windows, `[T × rows × D]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Forecast {
    Gaussian { mean: Array3<f64>, std: Array3<f64> },
    Categorical { probs: Array3<f64> },
}

impl Forecast {
    pub fn from_steps(g: &mut Graph, steps: &[StepOutput]) -> Self {
        let stack = |g: &Graph, vs: Vec<Var>| {
            let views: Vec<_> = vs.iter().map(|&v| g.value(v).view()).collect();
            ndarray::stack(Axis(0), &views).expect("equal step shapes")
        };
        match steps[0] {
            StepOutput::Gaussian { .. } => {
                let (means, stds): (Vec<Var>, Vec<Var>) = steps
                    .iter()
                    .map(|s| match *s {
                        StepOutput::Gaussian { mean, std } => (mean, std),
                        StepOutput::Categorical { .. } => unreachable!("mixed step kinds"),
                    })
                    .unzip();
                Forecast::Gaussian { mean: stack(g, means), std: stack(g, stds) }
            }
            StepOutput::Categorical { .. } => {
                let probs: Vec<Var> = steps.iter().map(|s| s.point(g)).collect();
                Forecast::Categorical { probs: stack(g, probs) }
            }
        }
    }

    /// The mean forecast, or class probabilities.
    pub fn point(&self) -> &Array3<f64> {
        match self {
            Forecast::Gaussian { mean, .. } => mean,
            Forecast::Categorical { probs } => probs,
        }
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.point().dim()
    }
}

/// Per-step log-likelihood summed over rows and cue dimensions.
pub fn observation_loglik(forecast: &Forecast, truth: &Array3<f64>) -> Result<Vec<f64>, DecodingError> {
    if forecast.dim() != truth.dim() {
        return Err(DecodingError::ShapeMismatch { forecast: forecast.dim(), truth: truth.dim() });
    }
    let t_len = truth.dim().0;
    let out = (0..t_len)
        .map(|t| match forecast {
            Forecast::Gaussian { mean, std } => {
                let (m, s, y) = (mean.index_axis(Axis(0), t), std.index_axis(Axis(0), t), truth.index_axis(Axis(0), t));
                let mut ll = 0.0;
                ndarray::Zip::from(&m).and(&s).and(&y).for_each(|&m, &s, &y| {
                    ll += -HALF_LN_2PI - s.ln() - 0.5 * ((y - m) / s).powi(2);
                });
                ll
            }
            Forecast::Categorical { probs } => {
                let (p, y) = (probs.index_axis(Axis(0), t), truth.index_axis(Axis(0), t));
                let mut ll = 0.0;
                ndarray::Zip::from(&p).and(&y).for_each(|&p, &y| {
                    if y != 0.0 {
                        ll += y * p.max(f64::MIN_POSITIVE).ln();
                    }
                });
                ll
            }
        })
        .collect();
    Ok(out)
}

/// `rows × D` matrix of the `t`-th step of a `[T × rows × D]` array.
pub fn step_of(a: &Array3<f64>, t: usize) -> Mat {
    a.index_axis(Axis(0), t).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(backbone: Backbone, likelihood: Likelihood, mode: DecodeMode, teacher_forcing: bool) -> DecoderConfig {
        DecoderConfig { backbone, likelihood, mode, hidden: vec![16], gru_dim: 12, teacher_forcing, std_floor: OBS_STD_FLOOR }
    }

    #[test]
    fn gaussian_loglik_examples() {
        let f = Forecast::Gaussian { mean: Array3::zeros((1, 1, 1)), std: Array3::ones((1, 1, 1)) };
        let ll = observation_loglik(&f, &Array3::zeros((1, 1, 1))).unwrap();
        assert!((ll[0] + 0.918_938_5).abs() < 1e-6);
        assert!((ll[0] + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

        let wrong = observation_loglik(&f, &Array3::zeros((2, 1, 1)));
        assert!(matches!(wrong, Err(DecodingError::ShapeMismatch { .. })));
    }

    #[test]
    fn categorical_loglik_examples() {
        let p = Forecast::Categorical { probs: Array3::from_shape_vec((1, 1, 5), vec![0.2; 5]).unwrap() };
        let mut y = Array3::zeros((1, 1, 5));
        y[[0, 0, 2]] = 1.0;
        let ll = observation_loglik(&p, &y).unwrap();
        assert!((ll[0] - 0.2f64.ln()).abs() < 1e-12);
        // a sure, correct forecast costs nothing
        let mut sure = Array3::zeros((1, 1, 5));
        sure[[0, 0, 2]] = 1.0;
        let ll = observation_loglik(&Forecast::Categorical { probs: sure }, &y).unwrap();
        assert_eq!(ll[0], 0.0);
    }

    #[test]
    fn graph_loglik_matches_value_level() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let mean = g.constant(array![[0.1, -0.2], [0.5, 0.0]]);
        let std = g.constant(array![[0.3, 1.2], [0.05, 2.0]]);
        let y = g.constant(array![[0.0, 0.4], [0.45, -1.0]]);
        let out = StepOutput::Gaussian { mean, std };
        let ll = step_loglik(&mut g, &out, y);
        let f = Forecast::from_steps(&mut g, &[out]);
        let truth = g.value(y).clone().insert_axis(Axis(0));
        let v = observation_loglik(&f, &truth).unwrap();
        assert!((g.value(ll).sum() - v[0]).abs() < 1e-12);
    }

    #[test]
    fn output_shapes_and_std_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for backbone in [Backbone::Gru, Backbone::Mlp] {
            for mode in [DecodeMode::Direct, DecodeMode::Autoregressive] {
                let mut store = ParamStore::new();
                let dec = SequenceDecoder::new(
                    &mut store,
                    &mut rng,
                    "dec",
                    &cfg(backbone, Likelihood::Gaussian, mode, false),
                    CueLayout::POSE_2D,
                    6,
                    7,
                    4,
                );
                let mut g = Graph::new(&store);
                let cond = g.constant(Mat::from_elem((3, 6), 0.3));
                let steps = dec.decode(&mut g, cond, None).unwrap();
                let f = Forecast::from_steps(&mut g, &steps);
                let Forecast::Gaussian { mean, std } = f else { panic!() };
                assert_eq!(mean.dim(), (4, 3, 7));
                assert!(std.iter().all(|&s| s >= OBS_STD_FLOOR));
                for t in 0..4 {
                    for r in 0..3 {
                        let q: f64 = (0..4).map(|k| mean[[t, r, k]].powi(2)).sum();
                        assert!((q.sqrt() - 1.0).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn categorical_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let dec = SequenceDecoder::new(
            &mut store,
            &mut rng,
            "dec",
            &cfg(Backbone::Gru, Likelihood::Categorical, DecodeMode::Autoregressive, false),
            CueLayout { orientation: false, location_dim: 0, speaking: true },
            4,
            5,
            3,
        );
        let mut g = Graph::new(&store);
        let cond = g.constant(Mat::from_elem((2, 4), -0.1));
        let steps = dec.decode(&mut g, cond, None).unwrap();
        let f = Forecast::from_steps(&mut g, &steps);
        for row in f.point().lanes(Axis(2)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn teacher_forcing_feeds_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let c = cfg(Backbone::Gru, Likelihood::Gaussian, DecodeMode::Autoregressive, true);
        let dec = SequenceDecoder::new(&mut store, &mut rng, "dec", &c, CueLayout::GLANCE, 3, 1, 3);
        let mut g = Graph::new(&store);
        let cond = g.constant(Mat::from_elem((1, 3), 0.2));
        let a = g.constant(array![[5.0]]);
        let b = g.constant(array![[-5.0]]);
        let with_a = dec.decode(&mut g, cond, Some(&[a, a])).unwrap();
        let with_b = dec.decode(&mut g, cond, Some(&[b, b])).unwrap();
        let (StepOutput::Gaussian { mean: m0a, .. }, StepOutput::Gaussian { mean: m0b, .. }) = (with_a[0], with_b[0]) else {
            panic!()
        };
        // first step does not see the teacher; later steps do
        assert_eq!(g.value(m0a), g.value(m0b));
        let (StepOutput::Gaussian { mean: m1a, .. }, StepOutput::Gaussian { mean: m1b, .. }) = (with_a[1], with_b[1]) else {
            panic!()
        };
        assert_ne!(g.value(m1a), g.value(m1b));
        assert!(matches!(dec.decode(&mut g, cond, Some(&[a])), Err(DecodingError::MissingTeacher { .. })));
    }
}
