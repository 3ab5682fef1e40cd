//! Graph convolution, contextual embedding, normalization, readout and the
//! classifier head.
//!
//! Hidden states are `n x d` matrices with one row per node, so a weight
//! applied to a node vector appears on the right (`H W`).

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{concat, Matrix, ParamId, Params, Tape, Var, LEAKY_SLOPE};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Glorot-uniform matrix.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let a = (6.0 / (rows + cols).max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

/// Structure-derived constant matrices of one (possibly pooled) graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphOperators {
    /// `e_uv / sqrt(|N(u)| |N(v)|)` over self-looped direct neighborhoods.
    pub direct: Matrix,
    /// Same normalization over `{v}` plus the nodes at distance exactly two,
    /// with unit pair weights.
    pub context: Matrix,
    /// 0/1 adjacency without self-loops.
    pub binary: Matrix,
}

impl GraphOperators {
    /// Builds the operators from a symmetric weighted adjacency with zero
    /// diagonal (nonzero entries are edges).
    pub fn from_adjacency(adj: &Matrix) -> Self {
        let n = adj.nrows();
        let binary = adj.mapv(|w| if w != 0.0 { 1.0 } else { 0.0 });

        let deg_t: Vec<f64> = (0..n)
            .map(|v| 1.0 + binary.row(v).sum())
            .collect();
        let mut direct = Array2::zeros((n, n));
        for v in 0..n {
            direct[[v, v]] = 1.0 / deg_t[v];
            for u in 0..n {
                if u != v && adj[[v, u]] != 0.0 {
                    direct[[v, u]] = adj[[v, u]] / (deg_t[u] * deg_t[v]).sqrt();
                }
            }
        }

        let reach2 = binary.dot(&binary);
        let mut two_hop = Array2::<f64>::zeros((n, n));
        for v in 0..n {
            for u in 0..n {
                if u != v && binary[[v, u]] == 0.0 && reach2[[v, u]] > 0.0 {
                    two_hop[[v, u]] = 1.0;
                }
            }
        }
        let deg_c: Vec<f64> = (0..n).map(|v| 1.0 + two_hop.row(v).sum()).collect();
        let mut context = Array2::zeros((n, n));
        for v in 0..n {
            context[[v, v]] = 1.0 / deg_c[v];
            for u in 0..n {
                if two_hop[[v, u]] != 0.0 {
                    context[[v, u]] = 1.0 / (deg_c[u] * deg_c[v]).sqrt();
                }
            }
        }
        Self {
            direct,
            context,
            binary,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.binary.nrows()
    }
}

fn check_rows(op: &'static str, h: &Var<'_>, n: usize) -> Result<()> {
    if h.rows() != n {
        return Err(Error::dim(op, format!("{} rows for {n} nodes", h.rows())));
    }
    Ok(())
}

/// `Â H W + b` with the symmetric self-looped normalization.
#[derive(Debug, Clone, Copy)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl GcnLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: params.add(format!("{name}.weight"), glorot(rng, d_in, d_out)),
            bias: params.add(format!("{name}.bias"), Array2::zeros((1, d_out))),
        }
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &Params,
        h: Var<'t>,
        ops: &GraphOperators,
    ) -> Result<Var<'t>> {
        check_rows("gcn_forward", &h, ops.num_nodes())?;
        let a = tape.constant(ops.direct.clone());
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        let msg = a.matmul(h)?;
        msg.matmul(w)?.add(b)
    }
}

/// Residual contextual embedding from one-hop and exactly-two-hop
/// neighborhoods: `H + LeakyReLU([T, C] W + b)`.
#[derive(Debug, Clone, Copy)]
pub struct ContextualBlock {
    pub weight: ParamId,
    pub bias: ParamId,
    pub w_target: ParamId,
    pub w_context: ParamId,
}

impl ContextualBlock {
    pub fn new<R: Rng + ?Sized>(params: &mut Params, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            weight: params.add(format!("{name}.weight"), glorot(rng, 2 * d, d)),
            bias: params.add(format!("{name}.bias"), Array2::zeros((1, d))),
            w_target: params.add(format!("{name}.w_target"), glorot(rng, d, d)),
            w_context: params.add(format!("{name}.w_context"), glorot(rng, d, d)),
        }
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &Params,
        h: Var<'t>,
        ops: &GraphOperators,
    ) -> Result<Var<'t>> {
        check_rows("contextual_embed", &h, ops.num_nodes())?;
        let t = tape
            .constant(ops.direct.clone())
            .matmul(h)?
            .matmul(tape.param(params, self.w_target))?;
        let c = tape
            .constant(ops.context.clone())
            .matmul(h)?
            .matmul(tape.param(params, self.w_context))?;
        let mixed = concat(1, &[t, c])?
            .matmul(tape.param(params, self.weight))?
            .add(tape.param(params, self.bias))?
            .leaky_relu(LEAKY_SLOPE);
        h.add(mixed)
    }
}

/// Row-wise layer normalization followed by a learned scale and shift.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut Params, name: &str, d: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), Array2::ones((1, d))),
            beta: params.add(format!("{name}.beta"), Array2::zeros((1, d))),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &Params, h: Var<'t>) -> Result<Var<'t>> {
        h.layer_norm(LAYER_NORM_EPS)
            .mul(tape.param(params, self.gamma))?
            .add(tape.param(params, self.beta))
    }
}

/// Column-wise mean concatenated with column-wise max: `1 x 2d`.
pub fn readout<'t>(h: Var<'t>) -> Result<Var<'t>> {
    if h.rows() == 0 {
        return Err(Error::dim("readout", "graph has no nodes"));
    }
    concat(1, &[h.mean_rows()?, h.max_rows()?])
}

/// Two affine layers with a ReLU between and dropout before the output.
#[derive(Debug, Clone, Copy)]
pub struct MlpHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl MlpHead {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: params.add(format!("{name}.w1"), glorot(rng, d_in, d_hidden)),
            b1: params.add(format!("{name}.b1"), Array2::zeros((1, d_hidden))),
            w2: params.add(format!("{name}.w2"), glorot(rng, d_hidden, d_out)),
            b2: params.add(format!("{name}.b2"), Array2::zeros((1, d_out))),
        }
    }

    pub fn forward<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape,
        params: &Params,
        hs: Var<'t>,
        dropout: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var<'t>> {
        let hidden = hs
            .matmul(tape.param(params, self.w1))
            .map_err(|_| {
                Error::dim(
                    "mlp_head",
                    format!("input {:?}, w1 {:?}", hs.shape(), params.value(self.w1).dim()),
                )
            })?
            .add(tape.param(params, self.b1))?
            .relu();
        hidden
            .dropout(dropout, train, rng)?
            .matmul(tape.param(params, self.w2))?
            .add(tape.param(params, self.b2))
    }
}
