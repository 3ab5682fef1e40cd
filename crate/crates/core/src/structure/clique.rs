//! Maximal clique enumeration (Bron-Kerbosch with Tomita pivoting) and the
//! overlap-merge rule for clique prototypes.

use crate::graph::Graph;

/// Maximal cliques of the subgraph induced by `nodes` (all nodes when
/// `None`). Each clique is sorted; the list is sorted lexicographically.
pub fn maximal_cliques(graph: &Graph, nodes: Option<&[usize]>) -> Vec<Vec<usize>> {
    let candidates: Vec<usize> = match nodes {
        Some(ns) => {
            let mut v = ns.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        }
        None => (0..graph.num_nodes()).collect(),
    };
    let mut inside = vec![false; graph.num_nodes()];
    for &v in &candidates {
        inside[v] = true;
    }
    let nbrs: Vec<Vec<usize>> = (0..graph.num_nodes())
        .map(|v| {
            if inside[v] {
                graph.neighbor_ids(v).filter(|&u| inside[u]).collect()
            } else {
                Vec::new()
            }
        })
        .collect();

    let mut out = Vec::new();
    let mut r = Vec::new();
    expand(&nbrs, &mut r, candidates, Vec::new(), &mut out);
    for c in &mut out {
        c.sort_unstable();
    }
    out.sort();
    out
}

fn intersect(sorted: &[usize], nbrs: &[usize]) -> Vec<usize> {
    sorted
        .iter()
        .copied()
        .filter(|x| nbrs.binary_search(x).is_ok())
        .collect()
}

fn expand(
    nbrs: &[Vec<usize>],
    r: &mut Vec<usize>,
    mut p: Vec<usize>,
    mut x: Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if p.is_empty() {
        if x.is_empty() && !r.is_empty() {
            out.push(r.clone());
        }
        return;
    }
    // pivot maximizing |P ∩ N(u)| over P ∪ X
    let pivot = p
        .iter()
        .chain(x.iter())
        .copied()
        .max_by_key(|&u| (intersect(&p, &nbrs[u]).len(), std::cmp::Reverse(u)))
        .expect("P is non-empty");
    let branch: Vec<usize> = p
        .iter()
        .copied()
        .filter(|v| nbrs[pivot].binary_search(v).is_err())
        .collect();
    for v in branch {
        r.push(v);
        expand(nbrs, r, intersect(&p, &nbrs[v]), intersect(&x, &nbrs[v]), out);
        r.pop();
        p.retain(|&u| u != v);
        let at = x.partition_point(|&u| u < v);
        x.insert(at, v);
    }
}

fn overlap(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

fn should_merge(a: &[usize], b: &[usize]) -> bool {
    2 * overlap(a, b) > a.len().min(b.len())
}

/// Unions sets sharing more than half of the smaller one until no pair
/// does. Each round merges whole connected components of the overlap
/// relation at once, so the result does not depend on node labels.
pub fn merge_overlapping(sets: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let mut sets = normalize(sets);
    loop {
        let k = sets.len();
        let mut component = vec![usize::MAX; k];
        let mut merged_any = false;
        for root in 0..k {
            if component[root] != usize::MAX {
                continue;
            }
            component[root] = root;
            let mut stack = vec![root];
            while let Some(i) = stack.pop() {
                for j in 0..k {
                    if component[j] == usize::MAX && should_merge(&sets[i], &sets[j]) {
                        component[j] = root;
                        merged_any = true;
                        stack.push(j);
                    }
                }
            }
        }
        if !merged_any {
            return sets;
        }
        let mut unions: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, s) in sets.iter().enumerate() {
            unions[component[i]].extend_from_slice(s);
        }
        sets = normalize(unions.into_iter().filter(|u| !u.is_empty()).collect());
    }
}

fn normalize(sets: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let mut sets: Vec<Vec<usize>> = sets
        .into_iter()
        .map(|mut s| {
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    sets.sort();
    sets.dedup();
    sets
}
