//! Context aggregation: the global latent `z`, the deterministic summary
//! `r_C`, and target-specific summaries by cross-attention.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Graph, Linear, Mat, Mlp, ParamStore, Var};

/// Lower bound on the latent standard deviation.
pub const LATENT_STD_FLOOR: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum LatentError {
    #[error("the deterministic path needs at least one context pair")]
    EmptyContext,
}

/// Diagonal Gaussian over `z`, both entries `1 × d_z`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mean: Var,
    pub log_var: Var,
}

impl GaussianVars {
    pub fn standard(g: &mut Graph, dim: usize) -> Self {
        let mean = g.zeros(1, dim);
        let log_var = g.zeros(1, dim);
        Self { mean, log_var }
    }

    pub fn values(&self, g: &Graph) -> LatentGaussian {
        LatentGaussian { mean: g.value(self.mean).row(0).to_vec(), log_var: g.value(self.log_var).row(0).to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentGaussian {
    pub fn std(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        sample_latent(&self.mean, &self.log_var, &eps)
    }
}

/// `z = μ + exp(log_var / 2) · ε`.
pub fn sample_latent(mean: &[f64], log_var: &[f64], eps: &[f64]) -> Vec<f64> {
    mean.iter().zip(log_var).zip(eps).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect()
}

/// Reparameterised sample on the tape; `eps` is `1 × d_z`.
pub fn reparameterize(g: &mut Graph, q: GaussianVars, eps: Mat) -> Var {
    let half = g.scale(q.log_var, 0.5);
    let std = g.exp(half);
    let eps = g.constant(eps);
    let noise = g.mul(std, eps);
    g.add(q.mean, noise)
}

/// `KL(q ‖ p)` between diagonal Gaussians, summed over dimensions.
pub fn kl_diag_gaussian(q: &LatentGaussian, p: &LatentGaussian) -> f64 {
    q.mean
        .iter()
        .zip(&q.log_var)
        .zip(p.mean.iter().zip(&p.log_var))
        .map(|((mq, lq), (mp, lp))| 0.5 * (lp - lq + (lq.exp() + (mq - mp).powi(2)) / lp.exp() - 1.0))
        .sum()
}

pub fn gaussian_kl(g: &mut Graph, q: GaussianVars, p: GaussianVars) -> Var {
    let var_q = g.exp(q.log_var);
    let diff = g.sub(q.mean, p.mean);
    let diff2 = g.square(diff);
    let num = g.add(var_q, diff2);
    let var_p = g.exp(p.log_var);
    let ratio = g.div(num, var_p);
    let dlv = g.sub(p.log_var, q.log_var);
    let inner = g.add(dlv, ratio);
    let inner = g.offset(inner, -1.0);
    let s = g.sum_all(inner);
    g.scale(s, 0.5)
}

/// Permutation-invariant map from context pairs to `q(z | C)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEncoder {
    pair_mlp: Mlp,
    hidden: Linear,
    mean_head: Linear,
    std_head: Linear,
    latent_dim: usize,
}

impl LatentEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, width: usize, latent_dim: usize) -> Self {
        Self {
            pair_mlp: Mlp::new(store, rng, &format!("{name}.pair"), in_dim, &[width], width),
            hidden: Linear::new(store, rng, &format!("{name}.hidden"), width, width, true),
            mean_head: Linear::new(store, rng, &format!("{name}.mean"), width, latent_dim, true),
            std_head: Linear::new(store, rng, &format!("{name}.std"), width, latent_dim, true),
            latent_dim,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// `rows` holds one encoded pair per row; `None` yields the prior N(0, I).
    pub fn aggregate_stochastic(&self, g: &mut Graph, rows: Option<Var>) -> GaussianVars {
        let Some(rows) = rows else {
            return GaussianVars::standard(g, self.latent_dim);
        };
        let s = self.pair_mlp.forward(g, rows);
        let s = g.mean_rows(s);
        let h = self.hidden.forward(g, s);
        let h = g.relu(h);
        let mean = self.mean_head.forward(g, h);
        let raw = self.std_head.forward(g, h);
        let std = g.softplus(raw);
        let std = g.offset(std, LATENT_STD_FLOOR);
        let ln_std = g.ln(std);
        let log_var = g.scale(ln_std, 2.0);
        GaussianVars { mean, log_var }
    }
}

/// Mean of per-pair encodings, `1 × d_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicEncoder {
    pair_mlp: Mlp,
}

impl DeterministicEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, width: usize, out_dim: usize) -> Self {
        Self { pair_mlp: Mlp::new(store, rng, &format!("{name}.pair"), in_dim, &[width], out_dim) }
    }

    pub fn out_dim(&self) -> usize {
        self.pair_mlp.out_dim()
    }

    /// Per-pair values `r_i`, one row per context pair.
    pub fn pair_values(&self, g: &mut Graph, rows: Var) -> Var {
        self.pair_mlp.forward(g, rows)
    }

    pub fn aggregate_deterministic(&self, g: &mut Graph, rows: Option<Var>) -> Result<Var, LatentError> {
        let rows = rows.ok_or(LatentError::EmptyContext)?;
        let r = self.pair_values(g, rows);
        Ok(g.mean_rows(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Dot,
    Multihead { heads: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Head {
    q: Linear,
    k: Linear,
    v: Linear,
}

/// Target-specific `r*` from context keys and values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossAttention {
    kind: AttentionKind,
    key_mlp: Mlp,
    heads: Vec<Head>,
    out: Option<Linear>,
}

impl CrossAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        kind: AttentionKind,
        key_in: usize,
        key_dim: usize,
        value_dim: usize,
    ) -> Self {
        let key_mlp = Mlp::new(store, rng, &format!("{name}.key"), key_in, &[key_dim], key_dim);
        let (heads, out) = match kind {
            AttentionKind::Dot => (Vec::new(), None),
            AttentionKind::Multihead { heads } => {
                let hs = (0..heads)
                    .map(|h| Head {
                        q: Linear::new(store, rng, &format!("{name}.h{h}.q"), key_dim, key_dim, false),
                        k: Linear::new(store, rng, &format!("{name}.h{h}.k"), key_dim, key_dim, false),
                        v: Linear::new(store, rng, &format!("{name}.h{h}.v"), value_dim, value_dim, false),
                    })
                    .collect();
                let out = Linear::new(store, rng, &format!("{name}.out"), heads * value_dim, value_dim, true);
                (hs, Some(out))
            }
        };
        Self { kind, key_mlp, heads, out }
    }

    /// `queries`: `R × key_in`, `keys`: `C × key_in`, `values`: `C × d_r`.
    pub fn attend(&self, g: &mut Graph, queries: Var, keys: Option<Var>, values: Var) -> Result<Var, LatentError> {
        let keys = keys.ok_or(LatentError::EmptyContext)?;
        let q = self.key_mlp.forward(g, queries);
        let k = self.key_mlp.forward(g, keys);
        match self.kind {
            AttentionKind::Dot => Ok(scaled_dot(g, q, k, values)),
            AttentionKind::Multihead { .. } => {
                let outs: Vec<Var> = self
                    .heads
                    .iter()
                    .map(|h| {
                        let qh = h.q.forward(g, q);
                        let kh = h.k.forward(g, k);
                        let vh = h.v.forward(g, values);
                        scaled_dot(g, qh, kh, vh)
                    })
                    .collect();
                let joined = g.concat(&outs);
                Ok(self.out.as_ref().expect("multihead output layer").forward(g, joined))
            }
        }
    }
}

fn scaled_dot(g: &mut Graph, q: Var, k: Var, v: Var) -> Var {
    let d = g.shape(q).1 as f64;
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt);
    let scores = g.scale(scores, 1.0 / d.sqrt());
    let w = g.softmax(scores);
    g.matmul(w, v)
}

/// Row-softmax of `q kᵀ / (√d · temperature)`.
pub fn dot_attention_weights(queries: &Mat, keys: &Mat, temperature: f64) -> Mat {
    let d = queries.ncols() as f64;
    let mut s = queries.dot(&keys.t()) / (d.sqrt() * temperature);
    for mut row in s.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - m).exp());
        let z = row.sum();
        row /= z;
    }
    s
}

/// Stacks `1 × d` rows into a matrix.
pub fn rows_to_mat(rows: &[Vec<f64>]) -> Mat {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(mean: f64, var: f64) -> LatentGaussian {
        LatentGaussian { mean: vec![mean], log_var: vec![var.ln()] }
    }

    #[test]
    fn kl_closed_form_examples() {
        assert_eq!(kl_diag_gaussian(&gauss(0.0, 1.0), &gauss(0.0, 1.0)), 0.0);
        assert!((kl_diag_gaussian(&gauss(1.0, 1.0), &gauss(0.0, 1.0)) - 0.5).abs() < 1e-12);
        // independent oracle: 0.5 (ln(s_p²/s_q²) + (s_q² + Δ²)/s_p² − 1)
        let (mq, vq, mp, vp) = (0.3f64, 0.4f64, -0.2f64, 2.5f64);
        let oracle = 0.5 * ((vp / vq).ln() + (vq + (mq - mp).powi(2)) / vp - 1.0);
        assert!((kl_diag_gaussian(&gauss(mq, vq), &gauss(mp, vp)) - oracle).abs() < 1e-12);
    }

    #[test]
    fn kl_graph_matches_value_and_is_nonnegative() {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = LatentGaussian {
                mean: (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
                log_var: (0..3).map(|_| rng.random_range(-3.0..2.0)).collect(),
            };
            let p = LatentGaussian {
                mean: (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
                log_var: (0..3).map(|_| rng.random_range(-3.0..2.0)).collect(),
            };
            let mut g = Graph::new(&store);
            let qv = GaussianVars { mean: g.constant(rows_to_mat(&[q.mean.clone()])), log_var: g.constant(rows_to_mat(&[q.log_var.clone()])) };
            let pv = GaussianVars { mean: g.constant(rows_to_mat(&[p.mean.clone()])), log_var: g.constant(rows_to_mat(&[p.log_var.clone()])) };
            let kl = gaussian_kl(&mut g, qv, pv);
            let v = kl_diag_gaussian(&q, &p);
            assert!((g.scalar(kl) - v).abs() < 1e-10);
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn reparameterised_draws_match_moments() {
        let q = LatentGaussian { mean: vec![1.5, -0.5], log_var: vec![(0.25f64).ln(), (4.0f64).ln()] };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| q.sample(&mut rng)).collect();
        for d in 0..2 {
            let mean = draws.iter().map(|z| z[d]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|z| (z[d] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = q.log_var[d].exp().sqrt();
            assert!((mean - q.mean[d]).abs() < 0.01 * sd.max(1.0) * 2.0);
            assert!((var.sqrt() - sd).abs() / sd < 0.02);
        }
    }

    #[test]
    fn empty_context_gives_prior_and_deterministic_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lat = LatentEncoder::new(&mut store, &mut rng, "z", 4, 8, 3);
        let det = DeterministicEncoder::new(&mut store, &mut rng, "r", 4, 8, 5);
        let mut g = Graph::new(&store);
        let q = lat.aggregate_stochastic(&mut g, None).values(&g);
        assert_eq!(q, LatentGaussian { mean: vec![0.0; 3], log_var: vec![0.0; 3] });
        assert_eq!(det.aggregate_deterministic(&mut g, None), Err(LatentError::EmptyContext));
    }

    #[test]
    fn aggregation_is_permutation_invariant_and_floored() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lat = LatentEncoder::new(&mut store, &mut rng, "z", 2, 8, 2);
        let mut g = Graph::new(&store);
        let a = g.constant(array![[0.1, 0.2], [0.5, -0.3], [1.0, 0.0]]);
        let b = g.constant(array![[1.0, 0.0], [0.1, 0.2], [0.5, -0.3]]);
        let qa = lat.aggregate_stochastic(&mut g, Some(a)).values(&g);
        let qb = lat.aggregate_stochastic(&mut g, Some(b)).values(&g);
        for (x, y) in qa.mean.iter().zip(&qb.mean) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(qa.std().iter().all(|&s| s > LATENT_STD_FLOOR));
    }

    #[test]
    fn sharp_attention_picks_the_matching_key() {
        let keys = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let q = array![[0.0, 1.0, 0.0]];
        let w = dot_attention_weights(&q, &keys, 0.05);
        assert!(w[[0, 1]] > 0.9);
        assert!((w.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_outputs_convex_combination_of_values() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [AttentionKind::Dot, AttentionKind::Multihead { heads: 2 }] {
            let att = CrossAttention::new(&mut store, &mut rng, &format!("att{kind:?}"), kind, 3, 4, 2);
            let mut g = Graph::new(&store);
            let q = g.constant(array![[0.2, 0.1, -0.4], [1.0, 1.0, 1.0]]);
            let k = g.constant(array![[0.0, 0.3, 0.3], [0.5, 0.5, -1.0], [1.0, 0.0, 0.0]]);
            let v = g.constant(array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]);
            let out = att.attend(&mut g, q, Some(k), v).unwrap();
            assert_eq!(g.shape(out), (2, 2));
            if kind == AttentionKind::Dot {
                // every value row sums to one, so every output row does too
                for row in g.value(out).rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-12);
                }
            }
            assert_eq!(att.attend(&mut g, q, None, v), Err(LatentError::EmptyContext));
        }
    }
}
