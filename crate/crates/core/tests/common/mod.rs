//! Helpers shared by the integration test targets: brute-force structure
//! oracles and finite-difference gradient suites.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spgp::autodiff::gradcheck::{check_gradients, check_param_gradients};
use spgp::autodiff::{concat, Matrix, Params, Tape, Var};
use spgp::graph::{Graph, Label};
use spgp::model::{prepare_graph, SpgpModel, TrainConfig};
use spgp::nn::{glorot, readout, ContextualBlock, GcnLayer, GraphOperators, LayerNorm, MlpHead};
use spgp::pooling::{spgp_forward, LayerState, SpgpLayer};
use spgp::structure::{extract_all, PrototypeKind};
use spgp::synth::gen_er;
use spgp::Result;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Random simple graph with 1..=8 nodes.
pub fn small_random_graph(rng: &mut ChaCha8Rng) -> Graph {
    let n = rng.gen_range(1..=8);
    let p: f64 = rng.gen_range(0.15..0.85);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::unlabeled(n, &edges).unwrap()
}

fn members(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|&v| mask & (1 << v) != 0).collect()
}

fn connected_within(g: &Graph, nodes: &[usize]) -> bool {
    let Some(&start) = nodes.first() else {
        return true;
    };
    let mut seen = vec![start];
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for u in g.neighbor_ids(v) {
            if nodes.contains(&u) && !seen.contains(&u) {
                seen.push(u);
                stack.push(u);
            }
        }
    }
    seen.len() == nodes.len()
}

/// Maximal vertex sets of size >= 3 whose induced subgraph stays connected
/// after deleting any single vertex.
pub fn bcc_oracle(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let mut found: Vec<Vec<usize>> = Vec::new();
    for mask in 0u32..(1 << n) {
        let s = members(mask, n);
        if s.len() < 3 || !connected_within(g, &s) {
            continue;
        }
        let two_connected = s.iter().all(|&cut| {
            let rest: Vec<usize> = s.iter().copied().filter(|&v| v != cut).collect();
            connected_within(g, &rest)
        });
        if two_connected {
            found.push(s);
        }
    }
    let mut maximal: Vec<Vec<usize>> = found
        .iter()
        .filter(|s| {
            !found
                .iter()
                .any(|t| t.len() > s.len() && s.iter().all(|v| t.contains(v)))
        })
        .cloned()
        .collect();
    maximal.sort();
    maximal
}

/// Maximal cliques of size >= 3 by subset enumeration, sorted.
pub fn clique_oracle(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let is_clique = |s: &[usize]| {
        s.iter()
            .enumerate()
            .all(|(i, &u)| s[i + 1..].iter().all(|&v| g.has_edge(u, v)))
    };
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        let s = members(mask, n);
        if s.len() < 3 || !is_clique(&s) {
            continue;
        }
        let extendable = (0..n).any(|w| !s.contains(&w) && s.iter().all(|&v| g.has_edge(v, w)));
        if !extendable {
            out.push(s);
        }
    }
    out.sort();
    out
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

/// Entries bounded away from zero, so relu-type kinks stay out of reach.
pub fn off_kink(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Array2::from_shape_fn((r, c), |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(out * weights)` with fixed random weights, so every output entry
/// gets a distinct upstream gradient.
pub fn probe<'t>(out: Var<'t>, weights: &Matrix) -> Result<Var<'t>> {
    Ok(out.mul(out.tape().constant(weights.clone()))?.sum())
}

/// Max relative error of one operation, named, at one seed.
pub type GradError = (&'static str, f64);

fn input_error<F>(name: &'static str, inputs: &[Matrix], out_shape: (usize, usize), seed: u64, f: F) -> GradError
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = uniform(&mut rng, out_shape.0, out_shape.1);
    let report = check_gradients(inputs, FD_STEP, |t, v| probe(f(t, v)?, &w)).unwrap();
    (name, report.max_rel_err)
}

pub fn elementwise_errors(seed: u64) -> Vec<GradError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, m) = (rng.gen_range(2..6), rng.gen_range(2..5), rng.gen_range(1..4));
    let a = uniform(&mut rng, n, d);
    let b = uniform(&mut rng, d, m);
    let c = uniform(&mut rng, n, d);
    let row = uniform(&mut rng, 1, d);
    vec![
        input_error("matmul", &[a.clone(), b], (n, m), seed, |_, v| v[0].matmul(v[1])),
        input_error("add", &[a.clone(), c.clone()], (n, d), seed, |_, v| v[0].add(v[1])),
        input_error("add_broadcast", &[a.clone(), row.clone()], (n, d), seed, |_, v| v[0].add(v[1])),
        input_error("sub", &[a.clone(), c.clone()], (n, d), seed, |_, v| v[0].sub(v[1])),
        input_error("mul", &[a.clone(), c.clone()], (n, d), seed, |_, v| v[0].mul(v[1])),
        input_error("mul_broadcast", &[a.clone(), row], (n, d), seed, |_, v| v[0].mul(v[1])),
        input_error("scale", &[a.clone()], (n, d), seed, |_, v| Ok(v[0].scale(-1.7))),
        input_error("sigmoid", &[a.clone()], (n, d), seed, |_, v| Ok(v[0].sigmoid())),
        input_error("sum", &[a.clone()], (1, 1), seed, |_, v| Ok(v[0].sum())),
        input_error("concat_cols", &[a.clone(), c.clone()], (n, 2 * d), seed, |_, v| {
            concat(1, &[v[0], v[1]])
        }),
        input_error("concat_rows", &[a.clone(), c], (2 * n, d), seed, |_, v| concat(0, &[v[0], v[1]])),
        input_error("mean_rows", &[a.clone()], (1, d), seed, |_, v| v[0].mean_rows()),
        input_error("max_rows", &[a.clone()], (1, d), seed, |_, v| v[0].max_rows()),
        input_error("layer_norm", &[a], (n, d), seed, |_, v| Ok(v[0].layer_norm(1e-5))),
    ]
}

pub fn piecewise_errors(seed: u64) -> Vec<GradError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (rng.gen_range(2..6), rng.gen_range(2..5));
    let a = off_kink(&mut rng, n, d);
    vec![
        input_error("relu", &[a.clone()], (n, d), seed, |_, v| Ok(v[0].relu())),
        input_error("leaky_relu", &[a.clone()], (n, d), seed, |_, v| Ok(v[0].leaky_relu(0.01))),
        input_error("l1_rows", &[a.clone()], (n, 1), seed, |_, v| Ok(v[0].l1_rows())),
        input_error("dropout", &[a], (n, d), seed, move |_, v| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            v[0].dropout(0.3, true, &mut r)
        }),
    ]
}

pub fn indexing_errors(seed: u64) -> Vec<GradError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (rng.gen_range(3..7), rng.gen_range(2..5));
    let a = uniform(&mut rng, n, d);
    let s = uniform(&mut rng, n, 1);
    let idx: Vec<usize> = (0..n - 1).filter(|_| rng.gen_bool(0.6)).chain([n - 1]).collect();
    let k = idx.len();
    let groups = vec![vec![0, 1], (1..n).collect::<Vec<_>>(), vec![n - 1]];
    let i2 = idx.clone();
    let part = uniform(&mut rng, k, d);
    vec![
        input_error("row_scale", &[a.clone(), s], (n, d), seed, |_, v| v[0].row_scale(v[1])),
        input_error("gather_rows", &[a.clone()], (k, d), seed, move |_, v| v[0].gather_rows(&i2)),
        input_error("scatter_rows", &[part], (n + 2, d), seed, move |_, v| {
            v[0].scatter_rows(&idx, n + 2)
        }),
        input_error("segment_max", &[a], (3, d), seed, move |_, v| v[0].segment_max(&groups)),
    ]
}

pub fn loss_errors(seed: u64) -> Vec<GradError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c) = (rng.gen_range(1..5), rng.gen_range(2..5));
    let logits = uniform(&mut rng, b, c).mapv(|x| 3.0 * x);
    let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
    let targets: Vec<Vec<Option<bool>>> = (0..b)
        .map(|_| (0..c).map(|_| [None, Some(true), Some(false)][rng.gen_range(0..3)]).collect())
        .collect();
    let r1 = check_gradients(&[logits.clone()], FD_STEP, |_, v| v[0].softmax_cross_entropy(&labels)).unwrap();
    let r2 = check_gradients(&[logits], FD_STEP, |_, v| v[0].bce_with_logits(&targets)).unwrap();
    vec![("softmax_cross_entropy", r1.max_rel_err), ("bce_with_logits", r2.max_rel_err)]
}

pub struct Fixture {
    pub graph: Graph,
    pub ops: GraphOperators,
    pub features: Matrix,
}

pub fn fixture(seed: u64, d: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(6..12);
    let graph = gen_er(n, 3.5, seed).unwrap();
    let ops = GraphOperators::from_adjacency(&graph.dense_adjacency());
    let features = uniform(&mut rng, n, d);
    Fixture { graph, ops, features }
}

pub fn layer_errors(seed: u64) -> Vec<GradError> {
    let d = 3;
    let fx = fixture(seed, d);
    let n = fx.graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let w = uniform(&mut rng, n, d);
    let mut params = Params::new();
    let input = params.add("input", fx.features.clone());
    let gcn = GcnLayer::new(&mut params, "gcn", d, d, &mut rng);
    let ctx = ContextualBlock::new(&mut params, "ctx", d, &mut rng);
    let norm = LayerNorm::new(&mut params, "norm", d);
    *params.value_mut(norm.gamma) = uniform(&mut rng, 1, d);
    *params.value_mut(norm.beta) = uniform(&mut rng, 1, d);
    let head = MlpHead::new(&mut params, "mlp", 2 * d, 4, 3, &mut rng);
    *params.value_mut(head.b1) = uniform(&mut rng, 1, 4);
    *params.value_mut(gcn.bias) = uniform(&mut rng, 1, d);
    *params.value_mut(ctx.bias) = uniform(&mut rng, 1, d);

    let gcn_err = check_param_gradients(&params, FD_STEP, |t, p| {
        probe(gcn.forward(t, p, t.param(p, input), &fx.ops)?, &w)
    })
    .unwrap();
    let ctx_err = check_param_gradients(&params, FD_STEP, |t, p| {
        probe(ctx.forward(t, p, t.param(p, input), &fx.ops)?, &w)
    })
    .unwrap();
    let norm_err =
        check_param_gradients(&params, FD_STEP, |t, p| probe(norm.forward(t, p, t.param(p, input))?, &w)).unwrap();
    let label = vec![seed as usize % 3];
    let head_err = check_param_gradients(&params, FD_STEP, |t, p| {
        let hs = readout(t.param(p, input))?;
        let mut r = ChaCha8Rng::seed_from_u64(0);
        head.forward(t, p, hs, 0.0, false, &mut r)?.softmax_cross_entropy(&label)
    })
    .unwrap();
    vec![
        ("gcn_forward", gcn_err.max_rel_err),
        ("contextual_embed", ctx_err.max_rel_err),
        ("layer_norm_affine", norm_err.max_rel_err),
        ("readout_mlp_head", head_err.max_rel_err),
    ]
}

/// Gradient error of one pooling step with respect to every parameter
/// (including the input features). Panics if two scores tie at the Top-K
/// boundary, where the pass is not differentiable.
pub fn spgp_forward_error(seed: u64) -> GradError {
    let d = 3;
    let fx = fixture(seed, d);
    let protos = extract_all(&fx.graph, &PrototypeKind::ALL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
    let mut params = Params::new();
    let input = params.add("input", fx.features.clone());
    let layer = SpgpLayer::new(&mut params, "pool", d, &PrototypeKind::ALL, 0.8, 0.6, &mut rng).unwrap();
    for m in &layer.relations {
        *params.value_mut(m.bias) = uniform(&mut rng, 1, 1);
    }
    *params.value_mut(layer.b_node) = uniform(&mut rng, 1, 1);
    // aux scores sum over neighbors; a smaller W_aux keeps sigmoid slopes
    // far from zero so relative errors stay meaningful
    *params.value_mut(layer.w_aux) = glorot(&mut rng, d, d) * 0.3;
    let adjacency = fx.graph.dense_adjacency();
    let kept = {
        let t = Tape::new();
        let st = LayerState::new(t.param(&params, input), adjacency.clone(), protos.clone()).unwrap();
        let (next, br) = spgp_forward(&t, &params, &layer, &st).unwrap();
        let mut s = br.total.clone();
        s.sort_by(|a, b| b.total_cmp(a));
        let k = next.num_nodes();
        if k < s.len() {
            assert!(s[k - 1] - s[k] > 1e-6, "seed {seed}: rank tie at the Top-K boundary");
        }
        k
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 300);
    let w = uniform(&mut rng, kept, d);
    let r = check_param_gradients(&params, FD_STEP, |t, p| {
        let st = LayerState::new(t.param(p, input), adjacency.clone(), protos.clone())?;
        let (next, _) = spgp_forward(t, p, &layer, &st)?;
        probe(next.h, &w)
    })
    .unwrap();
    ("spgp_forward", r.max_rel_err)
}

/// Gradient error of the cross-entropy loss of a full two-layer model.
pub fn full_model_error(seed: u64) -> GradError {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 400);
    let n = rng.gen_range(8..12);
    let graph = gen_er(n, 4.0, seed).unwrap();
    let graph = Graph::new(n, graph.edges(), uniform(&mut rng, n, 2), Label::Class((seed % 2) as usize)).unwrap();
    let cfg = TrainConfig {
        hidden_dim: 3,
        pooling_ratio: 0.7,
        ..TrainConfig::default()
    };
    let pg = prepare_graph(&graph, &extract_all(&graph, &PrototypeKind::ALL), &cfg.prototype_kinds).unwrap();
    let (model, mut params) = SpgpModel::new(&cfg, 5, 2, seed).unwrap();
    for l in &model.pools {
        let w = params.value(l.w_aux) * 0.3;
        *params.value_mut(l.w_aux) = w;
    }
    let label = [(seed % 2) as usize];
    let r = check_param_gradients(&params, FD_STEP, |t, p| {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        model.forward(t, p, &pg, false, &mut r)?.softmax_cross_entropy(&label)
    })
    .unwrap();
    ("model_forward", r.max_rel_err)
}

/// Every gradient suite at one seed.
pub fn all_gradient_errors(seed: u64) -> Vec<GradError> {
    let mut out = elementwise_errors(seed);
    out.extend(piecewise_errors(seed));
    out.extend(indexing_errors(seed));
    out.extend(loss_errors(seed));
    out.extend(layer_errors(seed));
    out.push(spgp_forward_error(seed));
    out.push(full_model_error(seed));
    out
}
