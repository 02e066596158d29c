//! Classical graph edit distance: cost model, exact search for small graphs,
//! the assignment-based upper bound (AED) and the Hausdorff lower bound (HED).

mod aed;
mod assignment;
mod exact;
mod hed;

pub use aed::{aed, aed_with_mapping, build_aed_cost_matrix};
pub use assignment::{solve_assignment, Assignment};
pub use exact::{exact_ged, exact_ged_with_mapping, DEFAULT_NODE_LIMIT};
pub use hed::{hausdorff_sum, hed};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;

#[derive(Debug, Error, PartialEq)]
pub enum ClassicError {
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("exact GED supports at most {limit} nodes per graph, got {n1} and {n2}")]
    SizeLimit { limit: usize, n1: usize, n2: usize },
    #[error("cost matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("cost matrix contains NaN or -inf")]
    InvalidEntry,
    #[error("no finite assignment exists")]
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttrMetric {
    #[default]
    Euclidean,
    Manhattan,
}

impl AttrMetric {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        // Missing attributes on either side compare as identical.
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        match self {
            AttrMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            AttrMetric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// Which local structure the AED substitution entries account for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LocalStructure {
    NodeOnly,
    #[default]
    IncidentEdges,
}

/// Edit costs parameterised by a node/edge trade-off `alpha` and the fixed
/// insertion/deletion costs `tau_node`, `tau_edge`. Every cost is multiplied by
/// `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub alpha: f64,
    pub tau_node: f64,
    pub tau_edge: f64,
    #[serde(default)]
    pub node_metric: AttrMetric,
    #[serde(default)]
    pub edge_metric: AttrMetric,
    #[serde(default)]
    pub local_structure: LocalStructure,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl CostModel {
    pub fn new(alpha: f64, tau_node: f64, tau_edge: f64) -> Result<Self, ClassicError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ClassicError::Alpha(alpha));
        }
        for (name, value) in [("tau_node", tau_node), ("tau_edge", tau_edge)] {
            if !(value > 0.0) {
                return Err(ClassicError::NonPositive { name, value });
            }
        }
        Ok(Self {
            alpha,
            tau_node,
            tau_edge,
            node_metric: AttrMetric::Euclidean,
            edge_metric: AttrMetric::Euclidean,
            local_structure: LocalStructure::IncidentEdges,
            scale: 1.0,
        })
    }

    /// Euclidean costs; panics on invalid parameters.
    pub fn uniform(alpha: f64, tau_node: f64, tau_edge: f64) -> Self {
        Self::new(alpha, tau_node, tau_edge).expect("valid cost parameters")
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale *= factor;
        self
    }

    pub fn with_local_structure(mut self, ls: LocalStructure) -> Self {
        self.local_structure = ls;
        self
    }

    pub fn node_sub(&self, a: &[f64], b: &[f64]) -> f64 {
        self.scale * self.alpha * self.node_metric.eval(a, b)
    }

    pub fn node_indel(&self) -> f64 {
        self.scale * self.alpha * self.tau_node
    }

    pub fn edge_sub(&self, p: Option<&[f64]>, q: Option<&[f64]>) -> f64 {
        self.scale * (1.0 - self.alpha) * self.edge_metric.eval(p.unwrap_or(&[]), q.unwrap_or(&[]))
    }

    pub fn edge_indel(&self) -> f64 {
        self.scale * (1.0 - self.alpha) * self.tau_edge
    }
}

/// Cost of the edit path induced by a node map: `mapping[u]` is the image of
/// node `u` of `g1` (`None` = deletion); unmapped nodes of `g2` are inserted.
/// Edges follow their endpoints.
pub fn edit_path_cost(g1: &Graph, g2: &Graph, c: &CostModel, mapping: &[Option<usize>]) -> f64 {
    debug_assert_eq!(mapping.len(), g1.num_nodes());
    let mut covered = vec![false; g2.num_nodes()];
    let mut cost = 0.0;
    for (u, m) in mapping.iter().enumerate() {
        match *m {
            Some(v) => {
                covered[v] = true;
                cost += c.node_sub(&g1.nodes[u], &g2.nodes[v]);
            }
            None => cost += c.node_indel(),
        }
    }
    cost += covered.iter().filter(|&&x| !x).count() as f64 * c.node_indel();

    let mut matched_edges = vec![false; g2.num_edges()];
    for (k, &(a, b)) in g1.edges.iter().enumerate() {
        let image = match (mapping[a], mapping[b]) {
            (Some(x), Some(y)) => g2.find_edge(x, y),
            _ => None,
        };
        match image {
            Some(q) => {
                matched_edges[q] = true;
                cost += c.edge_sub(g1.edge_attr(k), g2.edge_attr(q));
            }
            None => cost += c.edge_indel(),
        }
    }
    cost += matched_edges.iter().filter(|&&x| !x).count() as f64 * c.edge_indel();
    cost
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_model_validation() {
        assert_eq!(CostModel::new(1.5, 1.0, 1.0), Err(ClassicError::Alpha(1.5)));
        assert!(matches!(CostModel::new(0.5, 0.0, 1.0), Err(ClassicError::NonPositive { .. })));
        assert!(CostModel::new(0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn edit_path_of_node_deletion() {
        let p2 = Graph::new("p", vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![(0, 1)], None).unwrap();
        let one = Graph::new("o", vec![vec![0.0, 0.0]], vec![], None).unwrap();
        let c = CostModel::uniform(0.5, 1.0, 1.0);
        assert_eq!(edit_path_cost(&p2, &one, &c, &[Some(0), None]), 1.0);
        // delete both, insert one
        assert_eq!(edit_path_cost(&p2, &one, &c, &[None, None]), 2.0);
    }
}
