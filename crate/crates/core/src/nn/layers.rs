use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};

/// Affine map `x·W + b` applied row-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let weight = store.uniform(format!("{name}.weight"), in_dim, out_dim, in_dim, rng);
        let bias = bias.then(|| store.uniform(format!("{name}.bias"), 1, out_dim, in_dim, rng));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => y,
        }
    }
}

/// Stack of linear layers with ReLU between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        h
    }
}

/// Single-layer gated recurrent unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    w_input: ParamId,
    w_hidden: ParamId,
    b_input: ParamId,
    b_hidden: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, hidden: usize) -> Self {
        Self {
            w_input: store.uniform(format!("{name}.w_input"), in_dim, 3 * hidden, hidden, rng),
            w_hidden: store.uniform(format!("{name}.w_hidden"), hidden, 3 * hidden, hidden, rng),
            b_input: store.uniform(format!("{name}.b_input"), 1, 3 * hidden, hidden, rng),
            b_hidden: store.uniform(format!("{name}.b_hidden"), 1, 3 * hidden, hidden, rng),
            in_dim,
            hidden,
        }
    }

    /// One recurrence step; gate order is (reset, update, candidate).
    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let n = self.hidden;
        let wi = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let bi = g.param(self.b_input);
        let bh = g.param(self.b_hidden);
        let gi = g.matmul(x, wi);
        let gi = g.add(gi, bi);
        let gh = g.matmul(h, wh);
        let gh = g.add(gh, bh);

        let ri = g.slice_cols(gi, 0, 2 * n);
        let rh = g.slice_cols(gh, 0, 2 * n);
        let rz = g.add(ri, rh);
        let rz = g.sigmoid(rz);
        let reset = g.slice_cols(rz, 0, n);
        let update = g.slice_cols(rz, n, n);

        let ni = g.slice_cols(gi, 2 * n, n);
        let nh = g.slice_cols(gh, 2 * n, n);
        let nh = g.mul(reset, nh);
        let cand = g.add(ni, nh);
        let cand = g.tanh(cand);

        // h' = cand + update * (h - cand)
        let diff = g.sub(h, cand);
        let keep = g.mul(update, diff);
        g.add(cand, keep)
    }

    /// Run over a sequence of `rows × in_dim` inputs, returning every hidden
    /// state.
    pub fn run(&self, g: &mut Graph, inputs: &[Var], h0: Option<Var>) -> Vec<Var> {
        assert!(!inputs.is_empty(), "GRU over an empty sequence");
        let rows = g.shape(inputs[0]).0;
        let mut h = h0.unwrap_or_else(|| g.zeros(rows, self.hidden));
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            h = self.step(g, x, h);
            out.push(h);
        }
        out
    }
}
