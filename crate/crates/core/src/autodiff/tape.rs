use std::cell::{Ref, RefCell};

use ndarray::{concatenate, s, Array2, Axis, Zip};
use rand::Rng;

use super::params::{ParamId, Params};
use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Slope of the negative half of [`Var::leaky_relu`] as used by the layers.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// `b` is either the same shape as `a` or a single row broadcast down.
    Add(usize, usize),
    Sub(usize, usize),
    /// broadcasts like `Add`
    Mul(usize, usize),
    Scale(usize, f64),
    Concat {
        axis: usize,
        parts: Vec<usize>,
    },
    LeakyRelu(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    L1Rows(usize),
    /// `a` (n x d) scaled row-wise by `s` (n x 1).
    RowScale(usize, usize),
    Gather(usize, Vec<usize>),
    Scatter(usize, Vec<usize>),
    /// argmax row for every (group, column)
    SegmentMax(usize, Array2<usize>),
    MeanRows(usize),
    MaxRows(usize, Vec<usize>),
    Sum(usize),
    LayerNorm {
        input: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Dropout(usize, Matrix),
    SoftmaxCe {
        logits: usize,
        probs: Matrix,
        labels: Vec<usize>,
    },
    BceLogits {
        logits: usize,
        targets: Matrix,
        mask: Matrix,
        count: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Records a computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the reverse of insertion
/// order is a valid reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Matrix> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Adds parameter gradients into `params`, accumulating across calls.
    pub fn accumulate(&self, params: &mut Params) {
        for &(node, pid) in &self.params {
            if let Some(g) = &self.grads[node] {
                params.add_grad(pid, g);
            }
        }
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool, param: Option<ParamId>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn var(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true, None)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false, None)
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Leaf bound to a stored parameter; its gradient flows back through
    /// [`Gradients::accumulate`].
    pub fn param(&self, params: &Params, id: ParamId) -> Var<'_> {
        self.push(params.value(id).clone(), Op::Leaf, true, Some(id))
    }

    fn value_of(&self, id: usize) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, a: usize, value: Matrix, op: Op) -> Var<'_> {
        let rg = self.needs(&[a]);
        self.push(value, op, rg, None)
    }

    fn binary(&self, a: usize, b: usize, value: Matrix, op: Op) -> Var<'_> {
        let rg = self.needs(&[a, b]);
        self.push(value, op, rg, None)
    }

    /// Reverse pass from a 1 x 1 `loss`. Every node is visited once, in
    /// reverse insertion order.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.dim() != (1, 1) {
            return Err(Error::dim(
                "backward",
                format!("loss must be 1 x 1, got {:?}", nodes[loss.id].value.dim()),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Matrix>], nodes: &[Node], id: usize, g: Matrix) {
            if !nodes[id].requires_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if node.requires_grad {
                match &node.op {
                    Op::Leaf => {}
                    Op::MatMul(a, b) => {
                        let ga = g.dot(&nodes[*b].value.t());
                        let gb = nodes[*a].value.t().dot(&g);
                        acc(&mut grads, &nodes, *a, ga);
                        acc(&mut grads, &nodes, *b, gb);
                    }
                    Op::Add(a, b) => {
                        let gb = if nodes[*b].value.nrows() == 1 && g.nrows() != 1 {
                            g.sum_axis(Axis(0)).insert_axis(Axis(0))
                        } else {
                            g.clone()
                        };
                        acc(&mut grads, &nodes, *a, g.clone());
                        acc(&mut grads, &nodes, *b, gb);
                    }
                    Op::Sub(a, b) => {
                        acc(&mut grads, &nodes, *b, -&g);
                        acc(&mut grads, &nodes, *a, g.clone());
                    }
                    Op::Mul(a, b) => {
                        let ga = &g * &nodes[*b].value;
                        let mut gb = &g * &nodes[*a].value;
                        if nodes[*b].value.nrows() == 1 && gb.nrows() != 1 {
                            gb = gb.sum_axis(Axis(0)).insert_axis(Axis(0));
                        }
                        acc(&mut grads, &nodes, *a, ga);
                        acc(&mut grads, &nodes, *b, gb);
                    }
                    Op::Scale(a, c) => acc(&mut grads, &nodes, *a, &g * *c),
                    Op::Concat { axis, parts } => {
                        let mut offset = 0;
                        for &p in parts {
                            let (r, c) = nodes[p].value.dim();
                            let piece = if *axis == 0 {
                                g.slice(s![offset..offset + r, ..]).to_owned()
                            } else {
                                g.slice(s![.., offset..offset + c]).to_owned()
                            };
                            offset += if *axis == 0 { r } else { c };
                            acc(&mut grads, &nodes, p, piece);
                        }
                    }
                    Op::LeakyRelu(a, slope) => {
                        let mut ga = g.clone();
                        Zip::from(&mut ga)
                            .and(&nodes[*a].value)
                            .for_each(|gi, &x| {
                                if x < 0.0 {
                                    *gi *= slope
                                }
                            });
                        acc(&mut grads, &nodes, *a, ga);
                    }
                    Op::Relu(a) => {
                        let mut ga = g.clone();
                        Zip::from(&mut ga)
                            .and(&nodes[*a].value)
                            .for_each(|gi, &x| {
                                if x <= 0.0 {
                                    *gi = 0.0
                                }
                            });
                        acc(&mut grads, &nodes, *a, ga);
                    }
                    Op::Sigmoid(a) => {
                        let ga = Zip::from(&g)
                            .and(&node.value)
                            .map_collect(|&gi, &y| gi * y * (1.0 - y));
                        acc(&mut grads, &nodes, *a, ga);
                    }
                    Op::L1Rows(a) => {
                        let x = &nodes[*a].value;
                        let mut ga = x.mapv(|v| {
                            if v > 0.0 {
                                1.0
                            } else if v < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        });
                        for (mut row, gr) in ga.rows_mut().into_iter().zip(g.column(0)) {
                            row *= *gr;
                        }
                        acc(&mut grads, &nodes, *a, ga);
                    }
                    Op::RowScale(a, sc) => {
                        let x = &nodes[*a].value;
                        let scale = &nodes[*sc].value;
                        let mut ga = g.clone();
                        for (mut row, s) in ga.rows_mut().into_iter().zip(scale.column(0)) {
                            row *= *s;
                        }
                        let gs = (&g * x).sum_axis(Axis(1)).insert_axis(Axis(1));
                        acc(&mut grads, &nodes, *a, ga);
                        acc(&mut grads, &nodes, *sc, gs);
                    }
                    Op::Gather(a, idx) => {
                        let mut ga = Array2::zeros(nodes[*a].value.raw_dim());
                        for (r, &i) in idx.iter().enumerate() {
                            let mut row = ga.row_mut(i);
                            row += &g.row(r);
                        }
                        acc(&mut grads, &nodes, *a, ga);
                    }
                    Op::Scatter(a, idx) => {
                        acc(&mut grads, &nodes, *a, g.select(Axis(0), idx));
                    }
                    Op::SegmentMax(a, argmax) => {
                        let mut ga = Array2::zeros(nodes[*a].value.raw_dim());
                        for ((grp, j), &row) in argmax.indexed_iter() {
                            ga[[row, j]] += g[[grp, j]];
                        }
                        acc(&mut grads, &nodes, *a, ga);
                    }
                    Op::MeanRows(a) => {
                        let n = nodes[*a].value.nrows();
                        let ga = Array2::from_shape_fn(nodes[*a].value.raw_dim(), |(_, j)| {
                            g[[0, j]] / n as f64
                        });
                        acc(&mut grads, &nodes, *a, ga);
                    }
                    Op::MaxRows(a, argmax) => {
                        let mut ga = Array2::zeros(nodes[*a].value.raw_dim());
                        for (j, &row) in argmax.iter().enumerate() {
                            ga[[row, j]] = g[[0, j]];
                        }
                        acc(&mut grads, &nodes, *a, ga);
                    }
                    Op::Sum(a) => {
                        let ga = Array2::from_elem(nodes[*a].value.raw_dim(), g[[0, 0]]);
                        acc(&mut grads, &nodes, *a, ga);
                    }
                    Op::LayerNorm {
                        input,
                        xhat,
                        inv_std,
                    } => {
                        let d = xhat.ncols() as f64;
                        let mut ga = Array2::zeros(xhat.raw_dim());
                        for (i, mut out) in ga.rows_mut().into_iter().enumerate() {
                            let gr = g.row(i);
                            let xr = xhat.row(i);
                            let mean_g = gr.sum() / d;
                            let mean_gx = gr.dot(&xr) / d;
                            for j in 0..out.len() {
                                out[j] = inv_std[i] * (gr[j] - mean_g - xr[j] * mean_gx);
                            }
                        }
                        acc(&mut grads, &nodes, *input, ga);
                    }
                    Op::Dropout(a, mask) => acc(&mut grads, &nodes, *a, &g * mask),
                    Op::SoftmaxCe {
                        logits,
                        probs,
                        labels,
                    } => {
                        let b = labels.len() as f64;
                        let mut ga = probs.clone();
                        for (i, &y) in labels.iter().enumerate() {
                            ga[[i, y]] -= 1.0;
                        }
                        ga *= g[[0, 0]] / b;
                        acc(&mut grads, &nodes, *logits, ga);
                    }
                    Op::BceLogits {
                        logits,
                        targets,
                        mask,
                        count,
                    } => {
                        let x = &nodes[*logits].value;
                        let scale = g[[0, 0]] / count;
                        let ga = Zip::from(x)
                            .and(targets)
                            .and(mask)
                            .map_collect(|&xi, &yi, &mi| mi * (sigmoid(xi) - yi) * scale);
                        acc(&mut grads, &nodes, *logits, ga);
                    }
                }
            }
            grads[id] = Some(g);
        }

        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (i, p)))
            .collect();
        Ok(Gradients { grads, params })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Matrix> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().dim()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// The single entry of a 1 x 1 value.
    pub fn item(&self) -> f64 {
        self.value()[[0, 0]]
    }

    /// Same value, cut off from the gradient.
    pub fn detach(&self) -> Var<'t> {
        let v = self.value().clone();
        self.tape.constant(v)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let b = other.value();
            if a.ncols() != b.nrows() {
                return Err(Error::dim(
                    "matmul",
                    format!("{:?} x {:?}", a.dim(), b.dim()),
                ));
            }
            a.dot(&*b)
        };
        Ok(self
            .tape
            .binary(self.id, other.id, value, Op::MatMul(self.id, other.id)))
    }

    /// Elementwise sum; `other` may also be a single row added to every row.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let b = other.value();
            if a.dim() == b.dim() || (b.nrows() == 1 && b.ncols() == a.ncols()) {
                &*a + &*b
            } else {
                return Err(Error::dim("add", format!("{:?} + {:?}", a.dim(), b.dim())));
            }
        };
        Ok(self
            .tape
            .binary(self.id, other.id, value, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let b = other.value();
            check_same("sub", &a, &b)?;
            &*a - &*b
        };
        Ok(self
            .tape
            .binary(self.id, other.id, value, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product; `other` may also be a single row applied to
    /// every row.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let b = other.value();
            if a.dim() == b.dim() || (b.nrows() == 1 && b.ncols() == a.ncols()) {
                &*a * &*b
            } else {
                return Err(Error::dim("mul", format!("{:?} * {:?}", a.dim(), b.dim())));
            }
        };
        Ok(self
            .tape
            .binary(self.id, other.id, value, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let value = &*self.value() * c;
        self.tape.unary(self.id, value, Op::Scale(self.id, c))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        let value = self.value().mapv(|x| if x < 0.0 { slope * x } else { x });
        self.tape.unary(self.id, value, Op::LeakyRelu(self.id, slope))
    }

    pub fn relu(&self) -> Var<'t> {
        let value = self.value().mapv(|x| x.max(0.0));
        self.tape.unary(self.id, value, Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let value = self.value().mapv(sigmoid);
        self.tape.unary(self.id, value, Op::Sigmoid(self.id))
    }

    /// L1 norm of every row, as an n x 1 column.
    pub fn l1_rows(&self) -> Var<'t> {
        let value = self
            .value()
            .map_axis(Axis(1), |r| r.iter().map(|x| x.abs()).sum::<f64>())
            .insert_axis(Axis(1));
        self.tape.unary(self.id, value, Op::L1Rows(self.id))
    }

    /// Multiplies row `i` by `scale[i, 0]`.
    pub fn row_scale(&self, scale: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let sc = scale.value();
            if sc.dim() != (a.nrows(), 1) {
                return Err(Error::dim(
                    "hadamard_broadcast",
                    format!("{:?} rows scaled by {:?}", a.dim(), sc.dim()),
                ));
            }
            let mut out = a.clone();
            for (mut row, s) in out.rows_mut().into_iter().zip(sc.column(0)) {
                row *= *s;
            }
            out
        };
        Ok(self
            .tape
            .binary(self.id, scale.id, value, Op::RowScale(self.id, scale.id)))
    }

    /// Rows `indices` of `self`, in that order (repeats allowed).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            if let Some(&bad) = indices.iter().find(|&&i| i >= a.nrows()) {
                return Err(Error::dim(
                    "row_gather",
                    format!("row {bad} of {} rows", a.nrows()),
                ));
            }
            a.select(Axis(0), indices)
        };
        Ok(self
            .tape
            .unary(self.id, value, Op::Gather(self.id, indices.to_vec())))
    }

    /// `num_rows` x d zeros with row `indices[r]` set to row `r` of `self`.
    /// Indices must be distinct.
    pub fn scatter_rows(&self, indices: &[usize], num_rows: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            if indices.len() != a.nrows() {
                return Err(Error::dim(
                    "row_scatter",
                    format!("{} indices for {} rows", indices.len(), a.nrows()),
                ));
            }
            let mut seen = vec![false; num_rows];
            let mut out = Array2::zeros((num_rows, a.ncols()));
            for (r, &i) in indices.iter().enumerate() {
                if i >= num_rows || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::dim("row_scatter", format!("bad target row {i}")));
                }
                out.row_mut(i).assign(&a.row(r));
            }
            out
        };
        Ok(self
            .tape
            .unary(self.id, value, Op::Scatter(self.id, indices.to_vec())))
    }

    /// Column-wise max over each group of rows: one output row per group.
    /// Gradient goes to the arg-max row; ties resolve to the lowest row index.
    pub fn segment_max(&self, groups: &[Vec<usize>]) -> Result<Var<'t>> {
        let (value, argmax) = {
            let a = self.value();
            let d = a.ncols();
            let mut value = Array2::zeros((groups.len(), d));
            let mut argmax = Array2::zeros((groups.len(), d));
            for (gi, members) in groups.iter().enumerate() {
                if members.is_empty() {
                    return Err(Error::dim("segment_max", format!("group {gi} is empty")));
                }
                if let Some(&bad) = members.iter().find(|&&i| i >= a.nrows()) {
                    return Err(Error::dim(
                        "segment_max",
                        format!("row {bad} of {} rows", a.nrows()),
                    ));
                }
                for j in 0..d {
                    let mut best = members[0];
                    for &r in &members[1..] {
                        let (x, y) = (a[[r, j]], a[[best, j]]);
                        if x > y || (x == y && r < best) {
                            best = r;
                        }
                    }
                    value[[gi, j]] = a[[best, j]];
                    argmax[[gi, j]] = best;
                }
            }
            (value, argmax)
        };
        Ok(self
            .tape
            .unary(self.id, value, Op::SegmentMax(self.id, argmax)))
    }

    /// Column means as a 1 x d row.
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            a.mean_axis(Axis(0))
                .ok_or_else(|| Error::dim("mean_rows", "no rows"))?
                .insert_axis(Axis(0))
        };
        Ok(self.tape.unary(self.id, value, Op::MeanRows(self.id)))
    }

    /// Column maxima as a 1 x d row (lowest row index wins ties).
    pub fn max_rows(&self) -> Result<Var<'t>> {
        let (value, argmax) = {
            let a = self.value();
            if a.nrows() == 0 {
                return Err(Error::dim("max_rows", "no rows"));
            }
            let mut value = Array2::zeros((1, a.ncols()));
            let mut argmax = vec![0; a.ncols()];
            for j in 0..a.ncols() {
                let mut best = 0;
                for r in 1..a.nrows() {
                    if a[[r, j]] > a[[best, j]] {
                        best = r;
                    }
                }
                value[[0, j]] = a[[best, j]];
                argmax[j] = best;
            }
            (value, argmax)
        };
        Ok(self
            .tape
            .unary(self.id, value, Op::MaxRows(self.id, argmax)))
    }

    /// Sum of all entries, 1 x 1.
    pub fn sum(&self) -> Var<'t> {
        let value = Array2::from_elem((1, 1), self.value().sum());
        self.tape.unary(self.id, value, Op::Sum(self.id))
    }

    /// Per-row standardization to zero mean and unit variance (biased
    /// variance, `eps` inside the square root). No affine part.
    pub fn layer_norm(&self, eps: f64) -> Var<'t> {
        let (xhat, inv_std) = {
            let a = self.value();
            let d = a.ncols() as f64;
            let mut xhat = a.clone();
            let mut inv_std = Vec::with_capacity(a.nrows());
            for mut row in xhat.rows_mut() {
                let mean = row.sum() / d;
                let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d;
                let is = 1.0 / (var + eps).sqrt();
                row.mapv_inplace(|x| (x - mean) * is);
                inv_std.push(is);
            }
            (xhat, inv_std)
        };
        let op = Op::LayerNorm {
            input: self.id,
            xhat: xhat.clone(),
            inv_std,
        };
        self.tape.unary(self.id, xhat, op)
    }

    /// Inverted dropout: in training mode entries are zeroed with
    /// probability `rate` and survivors scaled by `1 / (1 - rate)`.
    /// Identity in eval mode.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, train: bool, rng: &mut R) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate}")));
        }
        if !train || rate == 0.0 {
            return Ok(*self);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = self
            .value()
            .mapv(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep });
        let value = &*self.value() * &mask;
        Ok(self.tape.unary(self.id, value, Op::Dropout(self.id, mask)))
    }

    /// Mean softmax cross-entropy of B x C logits against class labels.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Var<'t>> {
        let (loss, probs) = {
            let x = self.value();
            if x.nrows() != labels.len() {
                return Err(Error::dim(
                    "softmax_cross_entropy",
                    format!("{} rows but {} labels", x.nrows(), labels.len()),
                ));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= x.ncols()) {
                return Err(Error::dim(
                    "softmax_cross_entropy",
                    format!("label {bad} with {} classes", x.ncols()),
                ));
            }
            let mut probs = x.clone();
            let mut loss = 0.0;
            for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                loss += lse - row[y];
                row.mapv_inplace(|v| (v - lse).exp());
            }
            (loss / labels.len() as f64, probs)
        };
        let op = Op::SoftmaxCe {
            logits: self.id,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.tape.unary(self.id, Array2::from_elem((1, 1), loss), op))
    }

    /// Mean binary cross-entropy over the labeled entries of B x T logits;
    /// `None` targets are masked out.
    pub fn bce_with_logits(&self, targets: &[Vec<Option<bool>>]) -> Result<Var<'t>> {
        let (loss, t, mask, count) = {
            let x = self.value();
            if targets.len() != x.nrows() || targets.iter().any(|r| r.len() != x.ncols()) {
                return Err(Error::dim(
                    "binary_cross_entropy_with_logits",
                    format!("targets do not match logits {:?}", x.dim()),
                ));
            }
            let mut t = Array2::zeros(x.raw_dim());
            let mut mask = Array2::zeros(x.raw_dim());
            let mut loss = 0.0;
            let mut count = 0usize;
            for (i, row) in targets.iter().enumerate() {
                for (j, y) in row.iter().enumerate() {
                    if let Some(y) = y {
                        let yv = if *y { 1.0 } else { 0.0 };
                        let xv = x[[i, j]];
                        loss += xv.max(0.0) - xv * yv + (-xv.abs()).exp().ln_1p();
                        t[[i, j]] = yv;
                        mask[[i, j]] = 1.0;
                        count += 1;
                    }
                }
            }
            let count = count.max(1) as f64;
            (loss / count, t, mask, count)
        };
        let op = Op::BceLogits {
            logits: self.id,
            targets: t,
            mask,
            count,
        };
        Ok(self.tape.unary(self.id, Array2::from_elem((1, 1), loss), op))
    }
}

/// Concatenates along `axis` (0 stacks rows, 1 joins columns).
pub fn concat<'t>(axis: usize, parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat", "no inputs"))?;
    let tape = first.tape;
    if axis > 1 {
        return Err(Error::dim("concat", format!("axis {axis}")));
    }
    let value = {
        let vals: Vec<Ref<'_, Matrix>> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        concatenate(Axis(axis), &views).map_err(|e| Error::dim("concat", e.to_string()))?
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.needs(&ids);
    Ok(tape.push(value, Op::Concat { axis, parts: ids }, rg, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sigmoid_at_zero() {
        let t = Tape::new();
        assert_eq!(t.scalar(0.0).sigmoid().item(), 0.5);
    }

    #[test]
    fn segment_max_example() {
        let t = Tape::new();
        let x = t.var(array![[1.0, 0.0], [0.0, 2.0]]);
        let z = x.segment_max(&[vec![0, 1]]).unwrap();
        assert_eq!(*z.value(), array![[1.0, 2.0]]);
    }

    #[test]
    fn segment_max_tie_goes_to_lowest_row() {
        let t = Tape::new();
        let x = t.var(array![[5.0], [1.0], [5.0]]);
        let z = x.segment_max(&[vec![2, 0, 1]]).unwrap();
        let g = t.backward(z.sum()).unwrap();
        assert_eq!(*g.get(x).unwrap(), array![[1.0], [0.0], [0.0]]);
    }

    #[test]
    fn segment_max_rejects_empty_group() {
        let t = Tape::new();
        let x = t.var(array![[1.0]]);
        assert!(x.segment_max(&[vec![]]).is_err());
    }

    #[test]
    fn concat_feature_axis_shape() {
        let t = Tape::new();
        let a = t.var(Array2::zeros((3, 2)));
        let b = t.var(Array2::ones((3, 2)));
        assert_eq!(concat(1, &[a, b]).unwrap().shape(), (3, 4));
        assert_eq!(concat(0, &[a, b]).unwrap().shape(), (6, 2));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let t = Tape::new();
        let x = t.var(array![[1.0, 2.0, 3.0]]);
        let loss = x.mul(x).unwrap().sum();
        let g = t.backward(loss).unwrap();
        assert_eq!(*g.get(x).unwrap(), array![[2.0, 4.0, 6.0]]);
    }

    #[test]
    fn sigmoid_of_zero_weight_gradient() {
        let t = Tape::new();
        let w = t.var(Array2::zeros((1, 3)));
        let x = t.constant(array![[1.0], [-2.0], [0.5]]);
        let loss = w.matmul(x).unwrap().sigmoid();
        let g = t.backward(loss).unwrap();
        assert_eq!(*g.get(w).unwrap(), array![[0.25, -0.5, 0.125]]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let t = Tape::new();
        let x = t.var(Array2::zeros((2, 1)));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let t = Tape::new();
        let a = t.var(Array2::zeros((2, 3)));
        let b = t.var(Array2::zeros((2, 3)));
        let err = a.matmul(b).unwrap_err().to_string();
        assert!(err.starts_with("matmul"), "{err}");
        let err = a.row_scale(b).unwrap_err().to_string();
        assert!(err.starts_with("hadamard_broadcast"), "{err}");
    }

    #[test]
    fn dropout_eval_identity_and_train_scaling() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let t = Tape::new();
        let x = t.var(Array2::ones((50, 20)));
        let eval = x.dropout(0.5, false, &mut rng).unwrap();
        assert_eq!(eval.id(), x.id());
        let tr = x.dropout(0.5, true, &mut rng).unwrap();
        assert!(tr.value().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = tr.value().iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let t = Tape::new();
        let x = t.var(array![[1.0, 2.0, 3.0, 10.0], [-4.0, 0.5, 0.25, 8.0]]);
        let y = x.layer_norm(1e-12);
        for row in y.value().rows() {
            let mean = row.sum() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn scatter_leaves_exact_zeros() {
        let t = Tape::new();
        let x = t.var(array![[3.0, -1.0]]);
        let y = x.scatter_rows(&[2], 4).unwrap();
        let v = y.value();
        for r in [0, 1, 3] {
            assert!(v.row(r).iter().all(|x| x.to_bits() == 0));
        }
        assert_eq!(v.row(2).to_vec(), vec![3.0, -1.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let t = Tape::new();
        let x = t.var(Array2::zeros((2, 4)));
        let l = x.softmax_cross_entropy(&[0, 3]).unwrap();
        assert!((l.item() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bce_masks_missing_targets() {
        let t = Tape::new();
        let x = t.var(array![[0.0, 100.0]]);
        let l = x.bce_with_logits(&[vec![Some(true), None]]).unwrap();
        assert!((l.item() - 2f64.ln()).abs() < 1e-15);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap()[[0, 1]], 0.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let t = Tape::new();
        let c = t.constant(array![[2.0]]);
        let x = t.var(array![[3.0]]);
        let g = t.backward(c.mul(x).unwrap()).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn shared_node_visited_once_and_accumulates() {
        // y = x * x + x uses x three times
        let t = Tape::new();
        let x = t.var(array![[1.5]]);
        let y = x.mul(x).unwrap().add(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap()[[0, 0]], 4.0);
    }
}
