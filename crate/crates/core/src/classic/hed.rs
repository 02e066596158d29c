//! Hausdorff edit distance: every node (and, inside substitutions, every
//! incident edge) independently takes its cheapest match in the other graph
//! or epsilon. Substitutions are halved since both directions pay for them.

use super::CostModel;
use crate::graph::Graph;

/// `sum_a min_b d(a,b) + sum_b min_a d(a,b)`. An empty set contributes 0 to
/// its own sum; each element facing an empty set contributes `+inf`.
pub fn hausdorff_sum<T, F>(a: &[T], b: &[T], metric: F) -> f64
where
    F: Fn(&T, &T) -> f64,
{
    let directed = |xs: &[T], ys: &[T], flip: bool| -> f64 {
        xs.iter()
            .map(|x| {
                ys.iter()
                    .map(|y| if flip { metric(y, x) } else { metric(x, y) })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    };
    directed(a, b, false) + directed(b, a, true)
}

/// Edge-level Hausdorff cost between the incident edge sets `e1` and `e2`.
fn edge_hed(g1: &Graph, e1: &[usize], g2: &Graph, e2: &[usize], c: &CostModel) -> f64 {
    let indel = c.edge_indel();
    let mut total = 0.0;
    for &p in e1 {
        let best = e2
            .iter()
            .map(|&q| c.edge_sub(g1.edge_attr(p), g2.edge_attr(q)) / 2.0)
            .fold(indel, f64::min);
        total += best;
    }
    for &q in e2 {
        let best = e1
            .iter()
            .map(|&p| c.edge_sub(g1.edge_attr(p), g2.edge_attr(q)) / 2.0)
            .fold(indel, f64::min);
        total += best;
    }
    total
}

/// Lower bound on GED in `O(n1 * n2)` node comparisons.
pub fn hed(g1: &Graph, g2: &Graph, c: &CostModel) -> f64 {
    let (inc1, inc2) = (g1.incident_edges(), g2.incident_edges());
    let node_indel = c.node_indel();
    let edge_indel = c.edge_indel();
    let (n1, n2) = (g1.num_nodes(), g2.num_nodes());

    // Substitution costs are symmetric, so compute them once.
    let mut sub = vec![0.0; n1 * n2];
    for u in 0..n1 {
        for v in 0..n2 {
            let edges = edge_hed(g1, &inc1[u], g2, &inc2[v], c);
            sub[u * n2 + v] = (c.node_sub(&g1.nodes[u], &g2.nodes[v]) + edges / 2.0) / 2.0;
        }
    }
    let mut total = 0.0;
    for u in 0..n1 {
        let del = node_indel + inc1[u].len() as f64 * edge_indel / 2.0;
        total += (0..n2).map(|v| sub[u * n2 + v]).fold(del, f64::min);
    }
    for v in 0..n2 {
        let ins = node_indel + inc2[v].len() as f64 * edge_indel / 2.0;
        total += (0..n1).map(|u| sub[u * n2 + v]).fold(ins, f64::min);
    }
    total
}
