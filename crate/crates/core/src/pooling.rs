//! Prototype-guided node scoring and Top-K pooled-graph generation.
//!
//! One pooling step runs, in order:
//!
//! 1. contextual embedding `H~` of the input hidden state `H`;
//! 2. one prototype vector per set: the column-wise max of `H~` over its
//!    members;
//! 3. the prototype score: per kind, a relation module applied to the sum of
//!    the prototype vectors containing the node (exactly zero when the node
//!    belongs to no set of that kind), plus a linear node term;
//! 4. the auxiliary score `|| h~_v - sum_{u in N(v)} W_aux h~_u ||_1`;
//! 5. `phi = sigmoid(prototype + lambda * aux)`;
//! 6. keep the `ceil(p n)` best nodes, scale their rows of `H~` by `phi` and
//!    take the induced adjacency. Nodes are ranked by the argument of the
//!    sigmoid, which orders them as `phi` does but stays distinct once `phi`
//!    rounds to 1.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{concat, Matrix, ParamId, Params, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{glorot, ContextualBlock, GraphOperators};
use crate::structure::{restrict_prototypes, PrototypeKind, PrototypeSet};

/// Number of nodes kept by Top-K: `ceil(ratio * n)`, at least one.
///
/// A tolerance of 1e-9 absorbs products such as `0.3 * 10` landing just
/// above an integer.
pub fn keep_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Hidden state and structure of a graph between pooling layers.
#[derive(Debug, Clone)]
pub struct LayerState<'t> {
    pub h: Var<'t>,
    /// Symmetric weighted adjacency, zero diagonal.
    pub adjacency: Matrix,
    /// One set family per configured kind, indexed by current node ids.
    pub prototypes: Vec<PrototypeSet>,
    /// Original node id of every current node.
    pub orig_ids: Vec<usize>,
}

impl<'t> LayerState<'t> {
    pub fn new(h: Var<'t>, adjacency: Matrix, prototypes: Vec<PrototypeSet>) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n || h.rows() != n {
            return Err(Error::dim(
                "layer_state",
                format!("hidden {:?} with adjacency {:?}", h.shape(), adjacency.dim()),
            ));
        }
        if let Some(m) = prototypes.iter().filter_map(PrototypeSet::max_index).max() {
            if m >= n {
                return Err(Error::InvalidArgument(format!(
                    "prototype references node {m} of {n}"
                )));
            }
        }
        Ok(Self {
            h,
            adjacency,
            prototypes,
            orig_ids: (0..n).collect(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.orig_ids.len()
    }
}

/// Per-node scores of one pooling step, with original node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    pub orig_ids: Vec<usize>,
    pub prototype_score: Vec<f64>,
    pub aux_score: Vec<f64>,
    pub total: Vec<f64>,
}

impl ScoreBreakdown {
    /// CSV rows `graph_idx,node_orig_id,prototype_score,aux_score,total`
    /// (no header).
    pub fn csv_rows(&self, graph_idx: usize) -> String {
        let mut out = String::new();
        for i in 0..self.total.len() {
            let _ = writeln!(
                out,
                "{graph_idx},{},{},{},{}",
                self.orig_ids[i], self.prototype_score[i], self.aux_score[i], self.total[i]
            );
        }
        out
    }
}

pub const SCORE_CSV_HEADER: &str = "graph_idx,node_orig_id,prototype_score,aux_score,total";

/// Relation-module weights of one prototype kind.
#[derive(Debug, Clone, Copy)]
pub struct RelationModule {
    pub kind: PrototypeKind,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Learnable parameters of one pooling step.
#[derive(Debug, Clone)]
pub struct SpgpLayer {
    pub contextual: ContextualBlock,
    pub w_node: ParamId,
    pub b_node: ParamId,
    pub relations: Vec<RelationModule>,
    pub w_aux: ParamId,
    pub lambda: f64,
    pub ratio: f64,
}

impl SpgpLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        name: &str,
        d: usize,
        kinds: &[PrototypeKind],
        lambda: f64,
        ratio: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
        }
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!("pooling ratio {ratio} outside (0, 1]")));
        }
        let contextual = ContextualBlock::new(params, &format!("{name}.ctx"), d, rng);
        let w_node = params.add(format!("{name}.w_node"), glorot(rng, d, 1));
        let b_node = params.add(format!("{name}.b_node"), Array2::zeros((1, 1)));
        let relations = kinds
            .iter()
            .map(|&kind| RelationModule {
                kind,
                weight: params.add(format!("{name}.rel_{kind}.weight"), glorot(rng, 2 * d, 1)),
                bias: params.add(format!("{name}.rel_{kind}.bias"), Array2::zeros((1, 1))),
            })
            .collect();
        let w_aux = params.add(format!("{name}.w_aux"), glorot(rng, d, d));
        Ok(Self {
            contextual,
            w_node,
            b_node,
            relations,
            w_aux,
            lambda,
            ratio,
        })
    }
}

/// One prototype vector per set (rows follow the set order).
pub fn prototype_vectors<'t>(h_tilde: Var<'t>, ps: &PrototypeSet) -> Result<Var<'t>> {
    if ps.sets().iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("empty prototype set".into()));
    }
    h_tilde.segment_max(ps.sets())
}

/// `[z_sum, h] W_s + b_s` for a batch of member nodes (one row each).
pub fn relation_module<'t>(
    tape: &'t Tape,
    params: &Params,
    module: &RelationModule,
    z_sum: Var<'t>,
    h: Var<'t>,
) -> Result<Var<'t>> {
    concat(1, &[z_sum, h])?
        .matmul(tape.param(params, module.weight))?
        .add(tape.param(params, module.bias))
}

/// Relation-module output for every node as an `n x 1` column. Nodes in no
/// set of this kind get exactly zero.
pub fn relation_scores<'t>(
    tape: &'t Tape,
    params: &Params,
    module: &RelationModule,
    h_tilde: Var<'t>,
    ps: &PrototypeSet,
) -> Result<Var<'t>> {
    let n = h_tilde.rows();
    let member_of = ps.memberships(n);
    let members: Vec<usize> = (0..n).filter(|&v| !member_of[v].is_empty()).collect();
    if members.is_empty() {
        return Ok(tape.constant(Array2::zeros((n, 1))));
    }
    let z = prototype_vectors(h_tilde, ps)?;
    let mut incidence = Array2::zeros((members.len(), ps.len()));
    for (r, &v) in members.iter().enumerate() {
        for &t in &member_of[v] {
            incidence[[r, t]] = 1.0;
        }
    }
    let z_sum = tape.constant(incidence).matmul(z)?;
    let h_members = h_tilde.gather_rows(&members)?;
    relation_module(tape, params, module, z_sum, h_members)?.scatter_rows(&members, n)
}

/// Sum of the relation modules over kinds plus `h~ W_node + b_node`.
pub fn prototype_score<'t>(
    tape: &'t Tape,
    params: &Params,
    layer: &SpgpLayer,
    h_tilde: Var<'t>,
    prototypes: &[PrototypeSet],
) -> Result<Var<'t>> {
    let mut score = h_tilde
        .matmul(tape.param(params, layer.w_node))?
        .add(tape.param(params, layer.b_node))?;
    for module in &layer.relations {
        if let Some(ps) = prototypes.iter().find(|p| p.kind == module.kind) {
            score = score.add(relation_scores(tape, params, module, h_tilde, ps)?)?;
        }
    }
    Ok(score)
}

/// `|| h~_v - sum_{u in N(v)} W_aux h~_u ||_1` as an `n x 1` column.
pub fn aux_score<'t>(
    tape: &'t Tape,
    params: &Params,
    w_aux: ParamId,
    h_tilde: Var<'t>,
    ops: &GraphOperators,
) -> Result<Var<'t>> {
    let neighbor_sum = tape.constant(ops.binary.clone()).matmul(h_tilde)?;
    let projected = neighbor_sum.matmul(tape.param(params, w_aux))?;
    Ok(h_tilde.sub(projected)?.l1_rows())
}

/// `sigmoid(prototype + lambda * aux)`.
pub fn total_score<'t>(prototype: Var<'t>, aux: Var<'t>, lambda: f64) -> Result<Var<'t>> {
    Ok(prototype.add(aux.scale(lambda))?.sigmoid())
}

/// Indices of the `keep_count(n, ratio)` highest scores in ascending index
/// order. Equal scores prefer the lower index.
pub fn top_k_indices(scores: &[f64], ratio: f64) -> Vec<usize> {
    let k = keep_count(scores.len(), ratio);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take(k).collect();
    keep.sort_unstable();
    keep
}

/// Keeps the top nodes of `state` by `scores` (`n x 1`), scales their hidden
/// rows by their score, and restricts adjacency and prototypes.
pub fn pool_topk<'t>(state: &LayerState<'t>, scores: Var<'t>, ratio: f64) -> Result<LayerState<'t>> {
    let keys = scores.value().column(0).to_vec();
    pool_topk_ranked(state, scores, &keys, ratio)
}

/// [`pool_topk`] with the ranking taken from `keys` instead of the scores.
/// `keys` must order nodes the same way the scores would in exact
/// arithmetic; the pre-sigmoid total keeps saturated scores apart.
pub fn pool_topk_ranked<'t>(
    state: &LayerState<'t>,
    scores: Var<'t>,
    keys: &[f64],
    ratio: f64,
) -> Result<LayerState<'t>> {
    let n = state.num_nodes();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot pool an empty graph".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("pooling ratio {ratio} outside (0, 1]")));
    }
    if scores.shape() != (n, 1) || keys.len() != n {
        return Err(Error::dim(
            "pool_topk",
            format!("scores {:?} and {} keys for {n} nodes", scores.shape(), keys.len()),
        ));
    }
    let idx = top_k_indices(keys, ratio);

    let h = state.h.gather_rows(&idx)?.row_scale(scores.gather_rows(&idx)?)?;
    let adjacency = state.adjacency.select(ndarray::Axis(0), &idx).select(ndarray::Axis(1), &idx);
    let mut old_to_new = vec![None; n];
    for (new, &old) in idx.iter().enumerate() {
        old_to_new[old] = Some(new);
    }
    let prototypes = state
        .prototypes
        .iter()
        .map(|ps| restrict_prototypes(ps, &old_to_new))
        .collect();
    let orig_ids = idx.iter().map(|&i| state.orig_ids[i]).collect();
    Ok(LayerState {
        h,
        adjacency,
        prototypes,
        orig_ids,
    })
}

/// Everything one pooling step computed, for inspection and tests.
#[derive(Debug, Clone)]
pub struct PoolOutput<'t> {
    pub state: LayerState<'t>,
    pub breakdown: ScoreBreakdown,
    pub h_tilde: Var<'t>,
    pub scores: Var<'t>,
}

/// Options that alter the pooling step for diagnostics.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoolOptions {
    /// Scale kept rows by a gradient-free copy of the scores.
    pub detach_scores: bool,
}

pub fn spgp_forward<'t>(
    tape: &'t Tape,
    params: &Params,
    layer: &SpgpLayer,
    state: &LayerState<'t>,
) -> Result<(LayerState<'t>, ScoreBreakdown)> {
    let out = spgp_forward_with(tape, params, layer, state, PoolOptions::default())?;
    Ok((out.state, out.breakdown))
}

pub fn spgp_forward_with<'t>(
    tape: &'t Tape,
    params: &Params,
    layer: &SpgpLayer,
    state: &LayerState<'t>,
    options: PoolOptions,
) -> Result<PoolOutput<'t>> {
    let ops = GraphOperators::from_adjacency(&state.adjacency);
    let h_tilde = layer.contextual.forward(tape, params, state.h, &ops)?;
    let proto = prototype_score(tape, params, layer, h_tilde, &state.prototypes)?;
    let aux = aux_score(tape, params, layer.w_aux, h_tilde, &ops)?;
    let scores = total_score(proto, aux, layer.lambda)?;
    let scale = if options.detach_scores {
        scores.detach()
    } else {
        scores
    };
    let contextual = LayerState {
        h: h_tilde,
        ..state.clone()
    };
    let breakdown = ScoreBreakdown {
        orig_ids: state.orig_ids.clone(),
        prototype_score: proto.value().column(0).to_vec(),
        aux_score: aux.value().column(0).to_vec(),
        total: scores.value().column(0).to_vec(),
    };
    // the aux term is an L1 norm over d columns and easily pushes the
    // sigmoid to exactly 1.0, so rank by its argument
    let keys: Vec<f64> = breakdown
        .prototype_score
        .iter()
        .zip(&breakdown.aux_score)
        .map(|(p, a)| p + a * layer.lambda)
        .collect();
    let next = pool_topk_ranked(&contextual, scale, &keys, layer.ratio)?;
    Ok(PoolOutput {
        state: next,
        breakdown,
        h_tilde,
        scores,
    })
}

/// Which scoring path [`complexity_report`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComplexityMethod {
    Spgp,
    StructureLearning,
}

/// Dominant-term operation and memory counts of one scoring pass.
///
/// Prototype scoring touches each node once per kind and feature
/// (`s d n` operations over `d n` stored values); dense structure learning
/// refines an `n x n` adjacency from `d`-dimensional features (`d n^2`
/// operations, `n^2` values).
pub fn complexity_report(n: u64, d: u64, s: u64, method: ComplexityMethod) -> Result<(u64, u64)> {
    if n == 0 || d == 0 || s == 0 {
        return Err(Error::InvalidArgument("complexity arguments must be positive".into()));
    }
    Ok(match method {
        ComplexityMethod::Spgp => (s * d * n, d * n),
        ComplexityMethod::StructureLearning => (d * n * n, n * n),
    })
}
