//! Random graph generators and the synthetic experiments built on them.

use std::collections::HashSet;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Matrix, Params, Tape};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, Label};
use crate::nn::{GcnLayer, GraphOperators};
use crate::pooling::{aux_score, prototype_score, total_score, LayerState, SpgpLayer};
use crate::structure::{extract_all, PrototypeKind, PrototypeSet};

/// Random graph family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GraphModel {
    /// `param` is the mean degree.
    ErdosRenyi,
    /// `param` is the number of edges per new node.
    BarabasiAlbert,
    /// `param` is the degree.
    Regular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenSpec {
    pub model: GraphModel,
    pub n: usize,
    pub param: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn generate(&self) -> Result<Graph> {
        match self.model {
            GraphModel::ErdosRenyi => gen_er(self.n, self.param, self.seed),
            GraphModel::BarabasiAlbert => gen_ba(self.n, whole(self.param, "attachment count")?, self.seed),
            GraphModel::Regular => gen_regular(self.n, whole(self.param, "degree")?, self.seed),
        }
    }
}

fn whole(x: f64, what: &str) -> Result<usize> {
    if x < 0.0 || x.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!("{what} must be a whole number, got {x}")));
    }
    Ok(x as usize)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pair_key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

/// Erdős–Rényi graph with edge probability `mean_degree / n`.
///
/// Pairs are visited with geometric skips, so the cost is proportional to
/// the number of edges rather than `n^2`.
pub fn gen_er(n: usize, mean_degree: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {n}")));
    }
    if mean_degree.is_nan() || mean_degree < 0.0 {
        return Err(Error::InvalidArgument(format!("mean degree {mean_degree} must be non-negative")));
    }
    let p = mean_degree / n as f64;
    if p > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "edge probability {mean_degree}/{n} exceeds 1"
        )));
    }
    let mut rng = rng_for(seed);
    let mut edges = Vec::new();
    if p >= 1.0 {
        for v in 1..n {
            edges.extend((0..v).map(|u| (u, v)));
        }
    } else if p > 0.0 {
        let log_q = (1.0 - p).ln();
        let (mut v, mut w) = (1usize, -1i64);
        while v < n {
            let r: f64 = 1.0 - rng.gen::<f64>();
            w += 1 + (r.ln() / log_q).floor() as i64;
            while v < n && w >= v as i64 {
                w -= v as i64;
                v += 1;
            }
            if v < n {
                edges.push((w as usize, v));
            }
        }
    }
    Graph::unlabeled(n, &edges)
}

/// Preferential attachment grown from a complete graph on `m + 1` nodes.
pub fn gen_ba(n: usize, m: usize, seed: u64) -> Result<Graph> {
    if m == 0 || n <= m {
        return Err(Error::InvalidArgument(format!("need n > m >= 1, got n={n}, m={m}")));
    }
    let mut rng = rng_for(seed);
    let mut edges = Vec::new();
    // every endpoint once per incident edge, so uniform picks follow degree
    let mut endpoints = Vec::new();
    for v in 0..=m {
        for u in 0..v {
            edges.push((u, v));
            endpoints.extend([u, v]);
        }
    }
    for v in m + 1..n {
        let mut targets: Vec<usize> = Vec::with_capacity(m);
        while targets.len() < m {
            let t = *endpoints.choose(&mut rng).expect("seed graph has edges");
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            edges.push((t, v));
            endpoints.extend([t, v]);
        }
    }
    Graph::unlabeled(n, &edges)
}

const REGULAR_RESTARTS: usize = 1000;

/// Random `k`-regular simple graph.
///
/// Points are paired one random pair at a time; a pair that would form a
/// loop or a repeated edge is redrawn, and the whole pairing restarts when
/// only such pairs remain.
pub fn gen_regular(n: usize, k: usize, seed: u64) -> Result<Graph> {
    if k >= n || (n * k) % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "no {k}-regular simple graph on {n} nodes"
        )));
    }
    if k == n - 1 {
        let edges: Vec<_> = (0..n).flat_map(|v| (0..v).map(move |u| (u, v))).collect();
        return Graph::unlabeled(n, &edges);
    }
    let mut rng = rng_for(seed);
    'restart: for _ in 0..REGULAR_RESTARTS {
        let mut points: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat(v).take(k)).collect();
        let mut seen = HashSet::new();
        let mut edges = Vec::with_capacity(n * k / 2);
        while !points.is_empty() {
            let mut ok = false;
            for _ in 0..100 {
                let i = rng.gen_range(0..points.len());
                let j = rng.gen_range(0..points.len());
                let (u, v) = (points[i], points[j]);
                if i != j && u != v && !seen.contains(&pair_key(u, v)) {
                    seen.insert(pair_key(u, v));
                    edges.push(pair_key(u, v));
                    let (hi, lo) = (i.max(j), i.min(j));
                    points.swap_remove(hi);
                    points.swap_remove(lo);
                    ok = true;
                    break;
                }
            }
            if !ok {
                let stuck = (0..points.len()).all(|i| {
                    (i + 1..points.len()).all(|j| {
                        points[i] == points[j] || seen.contains(&pair_key(points[i], points[j]))
                    })
                });
                if stuck {
                    continue 'restart;
                }
            }
        }
        return Graph::unlabeled(n, &edges);
    }
    Err(Error::InvalidArgument(format!(
        "failed to sample a {k}-regular graph on {n} nodes"
    )))
}

/// Moves `floor(fraction * |E|)` edges: each time a random existing edge is
/// removed and a random absent pair is added.
pub fn rewire_edges(graph: &Graph, fraction: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("rewire fraction {fraction} outside [0, 1]")));
    }
    let n = graph.num_nodes();
    let mut edges: Vec<(usize, usize)> = graph.edges().to_vec();
    let steps = (fraction * edges.len() as f64).floor() as usize;
    if steps == 0 {
        return Ok(graph.clone());
    }
    if edges.len() >= n * (n - 1) / 2 {
        return Err(Error::InvalidArgument("cannot rewire a complete graph".into()));
    }
    let mut present: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let mut rng = rng_for(seed);
    for _ in 0..steps {
        let i = rng.gen_range(0..edges.len());
        present.remove(&edges[i]);
        edges.swap_remove(i);
        loop {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u != v && !present.contains(&pair_key(u, v)) {
                present.insert(pair_key(u, v));
                edges.push(pair_key(u, v));
                break;
            }
        }
    }
    Graph::new(n, &edges, graph.features().clone(), graph.label().clone())
}

/// Population standard deviation.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Fixed random scorers shared by every graph of a diversity run.
///
/// Node features pass through one GCN embedding layer; the baseline then
/// scores with a second GCN layer of width one and the SPGP scorer with an
/// untrained pooling layer. Both scores go through a sigmoid.
#[derive(Debug, Clone)]
pub struct ScorerBank {
    pub params: Params,
    pub embed: GcnLayer,
    pub baseline: GcnLayer,
    pub spgp: SpgpLayer,
    pub kinds: Vec<PrototypeKind>,
}

/// Width and auxiliary weight of the untrained diversity scorers.
///
/// The auxiliary score sums over all neighbors, so with random `W_aux` a
/// large weight drives every sigmoid into saturation on dense regular
/// graphs; a small weight keeps scores in the responsive range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScorerConfig {
    pub hidden: usize,
    pub lambda: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            lambda: 0.1,
        }
    }
}

impl ScorerBank {
    pub fn new(
        in_dim: usize,
        hidden: usize,
        kinds: &[PrototypeKind],
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng_for(seed);
        let mut params = Params::new();
        let embed = GcnLayer::new(&mut params, "embed", in_dim, hidden, &mut rng);
        let baseline = GcnLayer::new(&mut params, "baseline", hidden, 1, &mut rng);
        let spgp = SpgpLayer::new(&mut params, "spgp", hidden, kinds, lambda, 1.0, &mut rng)?;
        Ok(Self {
            params,
            embed,
            baseline,
            spgp,
            kinds: kinds.to_vec(),
        })
    }

    fn embedded<'t>(&self, tape: &'t Tape, graph: &Graph, ops: &GraphOperators) -> Result<crate::autodiff::Var<'t>> {
        self.embed.forward(tape, &self.params, tape.constant(graph.features().clone()), ops)
    }

    /// Sigmoid of a one-dimensional GCN score over the embedded features.
    pub fn baseline_scores(&self, graph: &Graph) -> Result<Vec<f64>> {
        let ops = GraphOperators::from_adjacency(&graph.dense_adjacency());
        let tape = Tape::new();
        let h = self.embedded(&tape, graph, &ops)?;
        let s = baseline_khop_score(&tape, &self.params, &self.baseline, h, &ops)?.sigmoid();
        let v = s.value().column(0).to_vec();
        Ok(v)
    }

    /// SPGP total scores of every node.
    pub fn spgp_scores(&self, graph: &Graph, prototypes: &[PrototypeSet]) -> Result<Vec<f64>> {
        let adjacency = graph.dense_adjacency();
        let ops = GraphOperators::from_adjacency(&adjacency);
        let tape = Tape::new();
        let h = self.embedded(&tape, graph, &ops)?;
        let state = LayerState::new(h, adjacency, prototypes.to_vec())?;
        let layer = &self.spgp;
        let h_tilde = layer.contextual.forward(&tape, &self.params, state.h, &ops)?;
        let proto = prototype_score(&tape, &self.params, layer, h_tilde, &state.prototypes)?;
        let aux = aux_score(&tape, &self.params, layer.w_aux, h_tilde, &ops)?;
        let s = total_score(proto, aux, layer.lambda)?;
        let v = s.value().column(0).to_vec();
        Ok(v)
    }
}

/// One-dimensional GCN score, the scorer of standard k-hop pooling.
pub fn baseline_khop_score<'t>(
    tape: &'t Tape,
    params: &Params,
    layer: &GcnLayer,
    h: crate::autodiff::Var<'t>,
    ops: &GraphOperators,
) -> Result<crate::autodiff::Var<'t>> {
    if params.value(layer.weight).ncols() != 1 {
        return Err(Error::dim("baseline_khop_score", "scorer must have one output column"));
    }
    layer.forward(tape, params, h, ops)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ScoreMethod {
    Spgp,
    Baseline,
}

impl ScoreMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::Spgp => "spgp",
            ScoreMethod::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityResult {
    pub rewire_fraction: f64,
    pub method: ScoreMethod,
    pub mean_score_std: f64,
    pub num_graphs: usize,
}

/// Per-graph score spreads of one regular graph after rewiring.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDiversity {
    pub spgp_std: f64,
    pub baseline_std: f64,
    pub num_prototype_sets: usize,
    pub planted: bool,
}

/// Triangle on three connected nodes, used as a prototype when a graph has
/// none so that members and non-members can be told apart.
fn planted_clique(graph: &Graph) -> Option<Vec<usize>> {
    (0..graph.num_nodes()).find_map(|v| {
        let nb: Vec<usize> = graph.neighbor_ids(v).collect();
        (nb.len() >= 2).then(|| {
            let mut s = vec![v, nb[0], nb[1]];
            s.sort_unstable();
            s
        })
    })
}

/// Scores one graph with both methods. When no prototype set exists, one
/// clique prototype is planted on a connected triple (the graph is left
/// unchanged).
pub fn graph_diversity(bank: &ScorerBank, graph: &Graph) -> Result<GraphDiversity> {
    let mut protos = extract_all(graph, &bank.kinds);
    let mut planted = false;
    if protos.iter().all(PrototypeSet::is_empty) {
        if let Some(set) = planted_clique(graph) {
            let kind = if bank.kinds.contains(&PrototypeKind::Clique) {
                PrototypeKind::Clique
            } else {
                bank.kinds[0]
            };
            for ps in protos.iter_mut().filter(|p| p.kind == kind) {
                *ps = PrototypeSet::new(kind, vec![set.clone()]);
            }
            planted = true;
        }
    }
    Ok(GraphDiversity {
        spgp_std: population_std(&bank.spgp_scores(graph, &protos)?),
        baseline_std: population_std(&bank.baseline_scores(graph)?),
        num_prototype_sets: protos.iter().map(PrototypeSet::len).sum(),
        planted,
    })
}

/// Mean per-graph score spread of both methods at each rewiring fraction.
pub fn diversity_experiment(
    spec: GenSpec,
    fractions: &[f64],
    num_graphs: usize,
    seed: u64,
) -> Result<Vec<DiversityResult>> {
    diversity_experiment_with(spec, fractions, num_graphs, seed, ScorerConfig::default())
}

pub fn diversity_experiment_with(
    spec: GenSpec,
    fractions: &[f64],
    num_graphs: usize,
    seed: u64,
    scorer: ScorerConfig,
) -> Result<Vec<DiversityResult>> {
    if spec.model != GraphModel::Regular {
        return Err(Error::InvalidArgument("diversity runs on regular graphs".into()));
    }
    if num_graphs == 0 {
        return Err(Error::InvalidArgument("need at least one graph".into()));
    }
    let bank = ScorerBank::new(1, scorer.hidden, &PrototypeKind::ALL, scorer.lambda, seed)?;
    let mut out = Vec::new();
    for (fi, &fraction) in fractions.iter().enumerate() {
        let (mut spgp, mut base) = (0.0, 0.0);
        for g in 0..num_graphs {
            let graph_seed = spec.seed.wrapping_add(g as u64);
            let regular = GenSpec { seed: graph_seed, ..spec }.generate()?;
            let rewire_seed = seed ^ ((fi as u64) << 32 | g as u64);
            let graph = rewire_edges(&regular, fraction, rewire_seed)?;
            let d = graph_diversity(&bank, &graph)?;
            spgp += d.spgp_std;
            base += d.baseline_std;
        }
        let k = num_graphs as f64;
        out.push(DiversityResult {
            rewire_fraction: fraction,
            method: ScoreMethod::Spgp,
            mean_score_std: spgp / k,
            num_graphs,
        });
        out.push(DiversityResult {
            rewire_fraction: fraction,
            method: ScoreMethod::Baseline,
            mean_score_std: base / k,
            num_graphs,
        });
    }
    Ok(out)
}

pub fn diversity_csv(results: &[DiversityResult]) -> String {
    let mut s = String::from("fraction,method,mean_score_std,num_graphs\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.rewire_fraction,
            r.method.as_str(),
            r.mean_score_std,
            r.num_graphs
        );
    }
    s
}

pub const MOTIF_SIZE: usize = 5;
pub const MOTIF_BACKGROUND_DEGREE: f64 = 2.16;

/// Balanced two-class dataset: class 1 graphs carry a planted 5-clique on
/// an ER background, class 0 graphs get the same number of extra edges
/// placed at random. Graph `i` has class `i % 2`; all features are 1.
pub fn planted_motif_task(num_graphs: usize, n: usize, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!("motif graphs need n >= 10, got {n}")));
    }
    let mut rng = rng_for(seed);
    let mut graphs = Vec::with_capacity(num_graphs);
    for i in 0..num_graphs {
        let base = gen_er(n, MOTIF_BACKGROUND_DEGREE, rng.gen())?;
        let mut present: HashSet<(usize, usize)> = base.edges().iter().copied().collect();
        let mut members: Vec<usize> = (0..n).collect();
        members.shuffle(&mut rng);
        members.truncate(MOTIF_SIZE);
        let missing: Vec<(usize, usize)> = members
            .iter()
            .enumerate()
            .flat_map(|(a, &u)| members[a + 1..].iter().map(move |&v| pair_key(u, v)))
            .filter(|e| !present.contains(e))
            .collect();
        let class = i % 2;
        if class == 1 {
            present.extend(missing);
        } else {
            let mut added = 0;
            while added < missing.len() {
                let u = rng.gen_range(0..n);
                let v = rng.gen_range(0..n);
                if u != v && present.insert(pair_key(u, v)) {
                    added += 1;
                }
            }
        }
        let mut edges: Vec<_> = present.into_iter().collect();
        edges.sort_unstable();
        graphs.push(Graph::new(n, &edges, Array2::ones((n, 1)), Label::Class(class))?);
    }
    Dataset::new("planted-motif", 2, graphs)
}

/// Uniform unit features for `n` nodes.
pub fn unit_features(n: usize) -> Matrix {
    Array2::ones((n, 1))
}
