use std::collections::VecDeque;

use super::Graph;

/// Unweighted BFS distances from `source`; `None` for unreachable nodes.
pub fn bfs_distances(graph: &Graph, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; graph.num_nodes()];
    let mut queue = VecDeque::from([source]);
    dist[source] = Some(0);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].unwrap_or(0);
        for u in graph.neighbor_ids(v) {
            if dist[u].is_none() {
                dist[u] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Per-node closeness centrality, normalized within each connected
/// component: `c(v) = (n_c - 1) / sum_u dist(v, u)`. Isolated nodes score 0.
pub fn closeness(graph: &Graph) -> Vec<f64> {
    (0..graph.num_nodes())
        .map(|v| {
            let (reach, sum) = bfs_distances(graph, v)
                .into_iter()
                .flatten()
                .fold((0usize, 0usize), |(c, s), d| (c + 1, s + d));
            if sum == 0 {
                0.0
            } else {
                (reach - 1) as f64 / sum as f64
            }
        })
        .collect()
}

/// Mean of [`closeness`] over all nodes; 0 for an empty graph.
pub fn avg_closeness(graph: &Graph) -> f64 {
    let mut c = closeness(graph);
    if c.is_empty() {
        return 0.0;
    }
    // summing in sorted order makes the result independent of node labels
    c.sort_by(f64::total_cmp);
    c.iter().sum::<f64>() / c.len() as f64
}

/// Nodes at shortest-path distance exactly `k` from `v`, sorted.
pub fn khop_neighbors(graph: &Graph, v: usize, k: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; graph.num_nodes()];
    dist[v] = 0;
    let mut frontier = vec![v];
    for depth in 1..=k {
        let mut next = Vec::new();
        for &x in &frontier {
            for u in graph.neighbor_ids(x) {
                if dist[u] == usize::MAX {
                    dist[u] = depth;
                    next.push(u);
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    let mut out: Vec<usize> = (0..graph.num_nodes()).filter(|&u| dist[u] == k && k > 0).collect();
    out.sort_unstable();
    out
}
