//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over the node list is a valid
//! topological order for back-propagation. Everything is two-dimensional:
//! rows are batch elements, columns are features.
//!
//! Binary element-wise ops broadcast a `1 × m` row, an `n × 1` column or a
//! `1 × 1` scalar against the other operand; gradients are summed back down
//! to the operand's shape.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use super::params::{Gradients, ParamId, ParamStore};

pub type Mat = Array2<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    RowNorm(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Max(Vec<Var>, Array2<u32>),
    MeanRows(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    BroadcastRows(Var),
    LogSoftmax(Var),
    Softmax(Var),
    Transpose(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Computation tape bound to a parameter store for the duration of one pass.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Mat::zeros((rows, cols)))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(self.params.value(id).clone(), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x / y);
        self.push(value, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        self.push(value, Op::Offset(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.push(value, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push(value, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::abs);
        self.push(value, Op::Abs(a))
    }

    /// Euclidean norm of each row, `n × 1`. The gradient at a zero row is zero.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let value = self.value(a).map_axis(Axis(1), |r| r.dot(&r).sqrt()).insert_axis(Axis(1));
        self.push(value, Op::RowNorm(a))
    }

    /// Element-wise clamp to `[lo, hi]`; no gradient outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat: row counts differ");
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    /// Row-wise concatenation.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack of nothing");
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("stack: column counts differ");
        self.push(value, Op::StackRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let src = self.value(a);
        let value = src.select(Axis(0), rows);
        self.push(value, Op::GatherRows(a, rows.to_vec()))
    }

    /// Element-wise maximum over same-shaped operands. Ties go to the
    /// earliest operand.
    pub fn max(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "max of nothing");
        if parts.len() == 1 {
            return parts[0];
        }
        let mut value = self.value(parts[0]).clone();
        let mut winner = Array2::<u32>::zeros(value.dim());
        for (k, &p) in parts.iter().enumerate().skip(1) {
            Zip::from(&mut value)
                .and(&mut winner)
                .and(self.value(p))
                .for_each(|v, w, &x| {
                    if x > *v {
                        *v = x;
                        *w = k as u32;
                    }
                });
        }
        self.push(value, Op::Max(parts.to_vec(), winner))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = m.sum_axis(Axis(0)).insert_axis(Axis(0)) / m.nrows() as f64;
        self.push(value, Op::MeanRows(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(value, Op::SumRows(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// Repeat a `1 × m` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), 1, "broadcast_rows expects a single row");
        let value = src.broadcast((rows, src.ncols())).unwrap().to_owned();
        self.push(value, Op::BroadcastRows(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(value, Op::LogSoftmax(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let total = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        self.push(value, Op::Softmax(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    /// Back-propagate from a `1 × 1` node, returning gradients for every
    /// parameter that took part in the pass (zeros elsewhere).
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones((1, 1)));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reduce_to(&g, self.shape(*a)));
                    acc(&mut grads, *b, reduce_to(&g, self.shape(*b)));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, reduce_to(&g, self.shape(*a)));
                    acc(&mut grads, *b, reduce_to(&(-&g), self.shape(*b)));
                }
                Op::Mul(a, b) => {
                    let ga = broadcast_zip(&g, self.value(*b), |g, y| g * y);
                    let gb = broadcast_zip(&g, self.value(*a), |g, x| g * x);
                    acc(&mut grads, *a, reduce_to(&ga, self.shape(*a)));
                    acc(&mut grads, *b, reduce_to(&gb, self.shape(*b)));
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let ga = broadcast_zip(&g, bv, |g, d| g / d);
                    // d(a/b)/db = -(a/b)/b = -y/b
                    let yb = broadcast_zip(y, bv, |y, d| -y / d);
                    let gb = &g * &yb;
                    acc(&mut grads, *a, reduce_to(&ga, self.shape(*a)));
                    acc(&mut grads, *b, reduce_to(&gb, self.shape(*b)));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Offset(a) => acc(&mut grads, *a, g),
                Op::Tanh(a) => acc(&mut grads, *a, zip_map(&g, y, |g, y| g * (1.0 - y * y))),
                Op::Sigmoid(a) => acc(&mut grads, *a, zip_map(&g, y, |g, y| g * y * (1.0 - y))),
                Op::Relu(a) => acc(
                    &mut grads,
                    *a,
                    zip_map(&g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
                ),
                Op::Softplus(a) => acc(&mut grads, *a, zip_map(&g, self.value(*a), |g, x| g * sigmoid(x))),
                Op::Exp(a) => acc(&mut grads, *a, zip_map(&g, y, |g, y| g * y)),
                Op::Ln(a) => acc(&mut grads, *a, zip_map(&g, self.value(*a), |g, x| g / x)),
                Op::Square(a) => acc(&mut grads, *a, zip_map(&g, self.value(*a), |g, x| 2.0 * g * x)),
                Op::Sqrt(a) => acc(&mut grads, *a, zip_map(&g, y, |g, y| g / (2.0 * y))),
                Op::Abs(a) => acc(&mut grads, *a, zip_map(&g, self.value(*a), |g, x| g * x.signum())),
                Op::RowNorm(a) => {
                    let x = self.value(*a);
                    let mut ga = x.clone();
                    for ((mut row, n), gr) in ga.rows_mut().into_iter().zip(y.column(0)).zip(g.column(0)) {
                        let c = if *n > 0.0 { gr / n } else { 0.0 };
                        row *= c;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => acc(
                    &mut grads,
                    *a,
                    zip_map(&g, self.value(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
                ),
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::StackRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        acc(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, rows) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    for (r, &src) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Max(parts, winner) => {
                    for (k, &p) in parts.iter().enumerate() {
                        let gp = zip_map_u32(&g, winner, |g, w| if w as usize == k { g } else { 0.0 });
                        acc(&mut grads, p, gp);
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.shape(*a).0;
                    let ga = g.broadcast(self.shape(*a)).unwrap().to_owned() / n as f64;
                    acc(&mut grads, *a, ga);
                }
                Op::SumRows(a) | Op::SumCols(a) | Op::SumAll(a) | Op::BroadcastRows(a) => {
                    let shape = self.shape(*a);
                    let ga = if g.dim() == shape {
                        g
                    } else if shape.0 == 1 && shape.1 == g.ncols() {
                        g.sum_axis(Axis(0)).insert_axis(Axis(0))
                    } else {
                        g.broadcast(shape).unwrap().to_owned()
                    };
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let mut ga = g.clone();
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let total = row.sum();
                        Zip::from(&mut row).and(&yrow).for_each(|gi, &yi| *gi -= yi.exp() * total);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let total = row.sum();
                        Zip::from(&mut row).and(&yrow).for_each(|gi, &yi| *gi -= yi * total);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    let mut out = a.clone();
    Zip::from(&mut out).and(b).for_each(|o, &y| *o = f(*o, y));
    out
}

fn zip_map_u32(a: &Mat, b: &Array2<u32>, f: impl Fn(f64, u32) -> f64) -> Mat {
    let mut out = a.clone();
    Zip::from(&mut out).and(b).for_each(|o, &y| *o = f(*o, y));
    out
}

fn broadcast_zip(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    let shape = (a.nrows().max(b.nrows()), a.ncols().max(b.ncols()));
    let av = a.broadcast(shape).unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", a.dim(), shape));
    let bv = b.broadcast(shape).unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", b.dim(), shape));
    let mut out = Mat::zeros(shape);
    Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    out
}

fn reduce_to(g: &Mat, shape: (usize, usize)) -> Mat {
    let mut r = if g.nrows() != shape.0 {
        g.sum_axis(Axis(0)).insert_axis(Axis(0))
    } else {
        g.clone()
    };
    if r.ncols() != shape.1 {
        r = r.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    r
}
