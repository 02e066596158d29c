//! Assignment edit distance: one linear assignment over an augmented node
//! cost matrix, then the cost of the induced edit path.

use super::{edit_path_cost, solve_assignment, CostModel, LocalStructure};
use crate::graph::Graph;

/// Optimal edit cost between the incident edge sets of two nodes.
fn incident_edge_cost(g1: &Graph, e1: &[usize], g2: &Graph, e2: &[usize], c: &CostModel) -> f64 {
    let (m1, m2) = (e1.len(), e2.len());
    if m1 == 0 || m2 == 0 {
        return (m1 + m2) as f64 * c.edge_indel();
    }
    let n = m1 + m2;
    let mut m = vec![vec![0.0; n]; n];
    for (i, &p) in e1.iter().enumerate() {
        for (j, &q) in e2.iter().enumerate() {
            m[i][j] = c.edge_sub(g1.edge_attr(p), g2.edge_attr(q));
        }
        for j in 0..m1 {
            m[i][m2 + j] = if i == j { c.edge_indel() } else { f64::INFINITY };
        }
    }
    for i in 0..m2 {
        for j in 0..m2 {
            m[m1 + i][j] = if i == j { c.edge_indel() } else { f64::INFINITY };
        }
    }
    solve_assignment(&m)
        .expect("edge cost matrix has a finite diagonal assignment")
        .total_cost
}

/// `(n1+n2) x (n1+n2)` matrix: substitutions top-left, deletions on the
/// top-right diagonal, insertions on the bottom-left diagonal, `+inf` off
/// those diagonals and zeros bottom-right.
pub fn build_aed_cost_matrix(g1: &Graph, g2: &Graph, c: &CostModel) -> Vec<Vec<f64>> {
    let (n1, n2) = (g1.num_nodes(), g2.num_nodes());
    let n = n1 + n2;
    let with_edges = c.local_structure == LocalStructure::IncidentEdges;
    let (inc1, inc2) = (g1.incident_edges(), g2.incident_edges());
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n1 {
        for j in 0..n2 {
            let mut x = c.node_sub(&g1.nodes[i], &g2.nodes[j]);
            if with_edges {
                x += incident_edge_cost(g1, &inc1[i], g2, &inc2[j], c);
            }
            m[i][j] = x;
        }
        for j in 0..n1 {
            m[i][n2 + j] = if i == j {
                c.node_indel() + if with_edges { inc1[i].len() as f64 * c.edge_indel() } else { 0.0 }
            } else {
                f64::INFINITY
            };
        }
    }
    for i in 0..n2 {
        for j in 0..n2 {
            m[n1 + i][j] = if i == j {
                c.node_indel() + if with_edges { inc2[i].len() as f64 * c.edge_indel() } else { 0.0 }
            } else {
                f64::INFINITY
            };
        }
    }
    m
}

/// AED value and the node map induced by the optimal assignment.
pub fn aed_with_mapping(g1: &Graph, g2: &Graph, c: &CostModel) -> (f64, Vec<Option<usize>>) {
    let m = build_aed_cost_matrix(g1, g2, c);
    let a = solve_assignment(&m).expect("deletion/insertion diagonals are always feasible");
    let n2 = g2.num_nodes();
    let mapping: Vec<Option<usize>> = (0..g1.num_nodes())
        .map(|i| Some(a.row_to_col[i]).filter(|&j| j < n2))
        .collect();
    (edit_path_cost(g1, g2, c, &mapping), mapping)
}

pub fn aed(g1: &Graph, g2: &Graph, c: &CostModel) -> f64 {
    aed_with_mapping(g1, g2, c).0
}
