//! Structure prototypes: biconnected components and merged cliques.

mod bcc;
mod cache;
mod clique;

pub use bcc::biconnected_components;
pub use cache::{read_cache, write_cache};
pub use clique::{maximal_cliques, merge_overlapping};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};

/// Smallest structure kept at extraction time.
pub const MIN_PROTOTYPE_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrototypeKind {
    Bcc,
    Clique,
}

impl PrototypeKind {
    pub const ALL: [PrototypeKind; 2] = [PrototypeKind::Bcc, PrototypeKind::Clique];

    pub fn as_str(self) -> &'static str {
        match self {
            PrototypeKind::Bcc => "bcc",
            PrototypeKind::Clique => "clique",
        }
    }
}

impl fmt::Display for PrototypeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrototypeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bcc" => Ok(PrototypeKind::Bcc),
            "clique" | "cq" => Ok(PrototypeKind::Clique),
            other => Err(Error::InvalidArgument(format!(
                "unknown prototype kind `{other}` (expected bcc or clique)"
            ))),
        }
    }
}

/// One family of structure prototypes of a graph.
///
/// Every set is sorted and strictly increasing; sets are deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrototypeSet {
    pub kind: PrototypeKind,
    sets: Vec<Vec<usize>>,
}

impl PrototypeSet {
    /// Normalizes `sets`: sorts members, drops empty sets and duplicates.
    pub fn new(kind: PrototypeKind, sets: Vec<Vec<usize>>) -> Self {
        let mut sets: Vec<Vec<usize>> = sets
            .into_iter()
            .map(|mut s| {
                s.sort_unstable();
                s.dedup();
                s
            })
            .filter(|s| !s.is_empty())
            .collect();
        sets.sort();
        sets.dedup();
        Self { kind, sets }
    }

    pub fn empty(kind: PrototypeKind) -> Self {
        Self {
            kind,
            sets: Vec::new(),
        }
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// For every node in `0..num_nodes`, the indices of the sets containing it.
    pub fn memberships(&self, num_nodes: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); num_nodes];
        for (t, s) in self.sets.iter().enumerate() {
            for &v in s {
                out[v].push(t);
            }
        }
        out
    }

    pub fn max_index(&self) -> Option<usize> {
        self.sets.iter().filter_map(|s| s.last().copied()).max()
    }

    /// Relabels members with `perm` (old node `v` becomes `perm[v]`).
    pub fn permute(&self, perm: &[usize]) -> Self {
        Self::new(
            self.kind,
            self.sets
                .iter()
                .map(|s| s.iter().map(|&v| perm[v]).collect())
                .collect(),
        )
    }
}

/// Biconnected components with at least three nodes.
pub fn extract_bcc(graph: &Graph) -> PrototypeSet {
    let sets = biconnected_components(graph)
        .into_iter()
        .filter(|s| s.len() >= MIN_PROTOTYPE_SIZE)
        .collect();
    PrototypeSet::new(PrototypeKind::Bcc, sets)
}

/// Maximal cliques of size at least three, before merging.
///
/// Cliques are searched inside each biconnected component when any exist:
/// a clique with three or more nodes never spans a cut vertex, so the
/// result equals a whole-graph search.
pub fn raw_cliques(graph: &Graph) -> Vec<Vec<usize>> {
    let bccs = extract_bcc(graph);
    let mut found: Vec<Vec<usize>> = if bccs.is_empty() {
        maximal_cliques(graph, None)
    } else {
        bccs.sets()
            .iter()
            .flat_map(|s| maximal_cliques(graph, Some(s)))
            .collect()
    };
    found.retain(|c| c.len() >= MIN_PROTOTYPE_SIZE);
    found.sort();
    found.dedup();
    found
}

/// Maximal cliques (size >= 3) merged while two sets share more than half
/// of the smaller one.
pub fn extract_cliques(graph: &Graph) -> PrototypeSet {
    PrototypeSet::new(PrototypeKind::Clique, merge_overlapping(raw_cliques(graph)))
}

pub fn extract(graph: &Graph, kind: PrototypeKind) -> PrototypeSet {
    match kind {
        PrototypeKind::Bcc => extract_bcc(graph),
        PrototypeKind::Clique => extract_cliques(graph),
    }
}

/// Extracts every kind in `kinds` (in that order) for one graph.
pub fn extract_all(graph: &Graph, kinds: &[PrototypeKind]) -> Vec<PrototypeSet> {
    kinds.iter().map(|&k| extract(graph, k)).collect()
}

/// Intersects every set with the surviving nodes and reindexes it.
///
/// `old_to_new[v]` is the new index of old node `v`, or `None` if it was
/// pooled away. Sets that become empty are dropped; smaller sets are kept.
pub fn restrict_prototypes(ps: &PrototypeSet, old_to_new: &[Option<usize>]) -> PrototypeSet {
    PrototypeSet::new(
        ps.kind,
        ps.sets
            .iter()
            .map(|s| s.iter().filter_map(|&v| old_to_new[v]).collect())
            .collect(),
    )
}

/// Appends the three prototype features to every node:
/// relative size of the largest BCC containing it, relative size of the
/// largest merged clique containing it, and the fraction of all merged
/// cliques containing it.
pub fn augment_features(graph: &Graph, bcc: &PrototypeSet, cq: &PrototypeSet) -> Result<Graph> {
    let n = graph.num_nodes();
    let mut extra = Array2::<f64>::zeros((n, 3));

    let size_column = |ps: &PrototypeSet, col: usize, extra: &mut Array2<f64>| {
        let largest = ps.sets().iter().map(Vec::len).max().unwrap_or(0);
        if largest == 0 {
            return;
        }
        for s in ps.sets() {
            let rel = s.len() as f64 / largest as f64;
            for &v in s {
                if rel > extra[[v, col]] {
                    extra[[v, col]] = rel;
                }
            }
        }
    };
    size_column(bcc, 0, &mut extra);
    size_column(cq, 1, &mut extra);
    if !cq.is_empty() {
        let total = cq.len() as f64;
        for (v, m) in cq.memberships(n).iter().enumerate() {
            extra[[v, 2]] = m.len() as f64 / total;
        }
    }
    let x = concatenate(Axis(1), &[graph.features().view(), extra.view()])
        .map_err(|e| Error::dim("augment_features", e.to_string()))?;
    graph.with_features(x)
}

/// Coverage and timing of prototype extraction over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureStats {
    pub fraction_graphs_with_any: f64,
    pub mean_sets_per_graph: f64,
    pub mean_set_size: f64,
    pub extraction_time_total: f64,
    pub extraction_time_per_graph: f64,
}

/// Runs extraction of `kinds` over all graphs and reports coverage and
/// wall-clock time. Also returns the extracted prototypes.
pub fn structure_stats_with_prototypes(
    dataset: &Dataset,
    kinds: &[PrototypeKind],
) -> Result<(StructureStats, Vec<Vec<PrototypeSet>>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let start = Instant::now();
    let protos: Vec<Vec<PrototypeSet>> = dataset
        .graphs()
        .iter()
        .map(|g| extract_all(g, kinds))
        .collect();
    let elapsed = start.elapsed().as_secs_f64();

    let n = dataset.len() as f64;
    let with_any = protos
        .iter()
        .filter(|p| p.iter().any(|ps| !ps.is_empty()))
        .count();
    let (num_sets, total_size) = protos
        .iter()
        .flatten()
        .flat_map(|ps| ps.sets())
        .fold((0usize, 0usize), |(c, t), s| (c + 1, t + s.len()));
    let stats = StructureStats {
        fraction_graphs_with_any: with_any as f64 / n,
        mean_sets_per_graph: num_sets as f64 / n,
        mean_set_size: if num_sets == 0 {
            0.0
        } else {
            total_size as f64 / num_sets as f64
        },
        extraction_time_total: elapsed,
        extraction_time_per_graph: elapsed / n,
    };
    Ok((stats, protos))
}

pub fn structure_stats(dataset: &Dataset, kinds: &[PrototypeKind]) -> Result<StructureStats> {
    structure_stats_with_prototypes(dataset, kinds).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize, e: &[(usize, usize)]) -> Graph {
        Graph::unlabeled(n, e).unwrap()
    }

    fn triangle() -> Graph {
        g(3, &[(0, 1), (1, 2), (0, 2)])
    }

    fn diamond() -> Graph {
        g(4, &[(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)])
    }

    #[test]
    fn bcc_examples() {
        assert_eq!(extract_bcc(&triangle()).sets(), &[vec![0, 1, 2]]);
        assert!(extract_bcc(&g(4, &[(0, 1), (1, 2), (2, 3)])).is_empty());
        let bowtie = g(5, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (2, 4)]);
        assert_eq!(extract_bcc(&bowtie).sets(), &[vec![0, 1, 2], vec![2, 3, 4]]);
    }

    #[test]
    fn clique_examples() {
        let k4 = g(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert_eq!(extract_cliques(&k4).sets(), &[vec![0, 1, 2, 3]]);
        let c5 = g(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]);
        assert!(extract_cliques(&c5).is_empty());
        assert_eq!(raw_cliques(&diamond()), vec![vec![0, 1, 2], vec![1, 2, 3]]);
        assert_eq!(extract_cliques(&diamond()).sets(), &[vec![0, 1, 2, 3]]);
    }

    #[test]
    fn restrict_examples() {
        let ps = PrototypeSet::new(PrototypeKind::Bcc, vec![vec![0, 1, 2]]);
        let r = restrict_prototypes(&ps, &[Some(0), None, Some(1)]);
        assert_eq!(r.sets(), &[vec![0, 1]]);
        assert!(restrict_prototypes(&ps, &[None, None, None]).is_empty());
        let id: Vec<_> = (0..3).map(Some).collect();
        assert_eq!(restrict_prototypes(&ps, &id), ps);
    }

    #[test]
    fn augment_single_bcc() {
        // 4-cycle plus a pendant node: one BCC of size 4
        let graph = g(5, &[(0, 1), (1, 2), (2, 3), (0, 3), (3, 4)]);
        let bcc = extract_bcc(&graph);
        let cq = extract_cliques(&graph);
        let aug = augment_features(&graph, &bcc, &cq).unwrap();
        assert_eq!(aug.feature_dim(), 4);
        assert_eq!(aug.features()[[0, 1]], 1.0);
        assert_eq!(aug.features()[[4, 1]], 0.0);
        // no cliques at all: delta2 = delta3 = 0
        assert!(aug.features().column(2).iter().all(|&x| x == 0.0));
        assert!(aug.features().column(3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn augment_diamond_clique_count() {
        let graph = diamond();
        let aug = augment_features(&graph, &extract_bcc(&graph), &extract_cliques(&graph)).unwrap();
        for v in 0..4 {
            assert_eq!(aug.features()[[v, 3]], 1.0);
            assert_eq!(aug.features()[[v, 2]], 1.0);
        }
    }

    #[test]
    fn augment_relative_sizes() {
        // K4 on 0..4 and a separate triangle on 4..7
        let graph = g(
            7,
            &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3), (4, 5), (5, 6), (4, 6)],
        );
        let cq = extract_cliques(&graph);
        let aug = augment_features(&graph, &extract_bcc(&graph), &cq).unwrap();
        assert_eq!(aug.features()[[5, 2]], 0.75);
        assert_eq!(aug.features()[[5, 3]], 0.5);
        assert_eq!(aug.features()[[5, 1]], 0.75);
    }

    #[test]
    fn stats_coverage() {
        let tris = Dataset::new("t", 1, vec![triangle(); 10]).unwrap();
        let s = structure_stats(&tris, &PrototypeKind::ALL).unwrap();
        assert_eq!(s.fraction_graphs_with_any, 1.0);
        assert_eq!(s.mean_set_size, 3.0);
        assert_eq!(s.mean_sets_per_graph, 2.0);
        let paths = Dataset::new("p", 1, vec![g(4, &[(0, 1), (1, 2), (2, 3)]); 10]).unwrap();
        let s = structure_stats(&paths, &PrototypeKind::ALL).unwrap();
        assert_eq!(s.fraction_graphs_with_any, 0.0);
        assert!(s.extraction_time_total >= 0.0);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("BCC".parse::<PrototypeKind>().unwrap(), PrototypeKind::Bcc);
        assert!("motif".parse::<PrototypeKind>().is_err());
    }
}
