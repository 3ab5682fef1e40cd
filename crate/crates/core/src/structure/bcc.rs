//! Biconnected components by the Hopcroft-Tarjan edge-stack DFS.

use crate::graph::Graph;

/// Node sets of all biconnected components, in discovery order. Single
/// edges count as two-node components; isolated nodes belong to none.
pub fn biconnected_components(graph: &Graph) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let n = graph.num_nodes();
    let mut disc = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut time = 0usize;
    let mut edge_stack: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();
    // (node, parent, next neighbor position)
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();

    for root in 0..n {
        if disc[root] != UNSEEN {
            continue;
        }
        disc[root] = time;
        low[root] = time;
        time += 1;
        stack.push((root, UNSEEN, 0));

        while let Some(frame) = stack.last_mut() {
            let (v, parent, pos) = *frame;
            let nbrs = graph.neighbors(v);
            if pos < nbrs.len() {
                frame.2 += 1;
                let u = nbrs[pos].0;
                if disc[u] == UNSEEN {
                    edge_stack.push((v, u));
                    disc[u] = time;
                    low[u] = time;
                    time += 1;
                    stack.push((u, v, 0));
                } else if u != parent && disc[u] < disc[v] {
                    edge_stack.push((v, u));
                    low[v] = low[v].min(disc[u]);
                }
                continue;
            }
            stack.pop();
            if parent == UNSEEN {
                continue;
            }
            low[parent] = low[parent].min(low[v]);
            if low[v] >= disc[parent] {
                // parent separates the component hanging below v
                let mut nodes = Vec::new();
                while let Some((a, b)) = edge_stack.pop() {
                    nodes.push(a);
                    nodes.push(b);
                    if (a, b) == (parent, v) {
                        break;
                    }
                }
                nodes.sort_unstable();
                nodes.dedup();
                out.push(nodes);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_has_edge_components() {
        let g = Graph::unlabeled(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let mut c = biconnected_components(&g);
        c.sort();
        assert_eq!(c, vec![vec![0, 1], vec![1, 2], vec![2, 3]]);
    }

    #[test]
    fn bowtie_splits_at_cut_vertex() {
        let g = Graph::unlabeled(5, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (2, 4)]).unwrap();
        let mut c = biconnected_components(&g);
        c.sort();
        assert_eq!(c, vec![vec![0, 1, 2], vec![2, 3, 4]]);
    }

    #[test]
    fn isolated_nodes_ignored() {
        let g = Graph::unlabeled(3, &[]).unwrap();
        assert!(biconnected_components(&g).is_empty());
    }
}
