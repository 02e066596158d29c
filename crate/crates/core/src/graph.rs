//! Attributed undirected graphs and structural helpers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node {index} has attribute dimension {found}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    DanglingEdge(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge attribute count {found} does not match edge count {expected}")]
    EdgeAttrCount { expected: usize, found: usize },
    #[error("node index {0} out of range for graph with {1} nodes")]
    NodeOutOfRange(usize, usize),
    #[error("permutation of size {found} applied to graph with {expected} nodes")]
    PermutationSize { expected: usize, found: usize },
    #[error("mapping is not a permutation")]
    NotAPermutation,
    #[error("expected 2-d node positions, found dimension {0}")]
    NotPositions(usize),
}

/// Undirected simple graph with real-valued node attributes and optional edge
/// attributes aligned with `edges`.
///
/// Edges are stored once with `(min, max)` endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    #[serde(default)]
    pub id: String,
    pub nodes: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_attrs: Option<Vec<Vec<f64>>>,
}

impl Graph {
    /// Builds a graph, canonicalising edge endpoints and dropping duplicate
    /// undirected edges (the first occurrence keeps its attribute).
    pub fn new(
        id: impl Into<String>,
        nodes: Vec<Vec<f64>>,
        edges: Vec<(usize, usize)>,
        edge_attrs: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        if let Some(first) = nodes.first() {
            let dim = first.len();
            if let Some((index, v)) = nodes.iter().enumerate().find(|(_, v)| v.len() != dim) {
                return Err(GraphError::Dimension {
                    index,
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        if let Some(attrs) = &edge_attrs {
            if attrs.len() != edges.len() {
                return Err(GraphError::EdgeAttrCount {
                    expected: edges.len(),
                    found: attrs.len(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        let mut out_edges = Vec::with_capacity(edges.len());
        let mut out_attrs = edge_attrs.as_ref().map(|_| Vec::with_capacity(edges.len()));
        for (k, &(a, b)) in edges.iter().enumerate() {
            if a >= n || b >= n {
                return Err(GraphError::DanglingEdge(a, b, n));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let e = (a.min(b), a.max(b));
            if seen.insert(e) {
                out_edges.push(e);
                if let (Some(out), Some(attrs)) = (out_attrs.as_mut(), edge_attrs.as_ref()) {
                    out.push(attrs[k].clone());
                }
            }
        }
        Ok(Self {
            id: id.into(),
            nodes,
            edges: out_edges,
            edge_attrs: out_attrs,
        })
    }

    pub fn empty(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            nodes: Vec::new(),
            edges: Vec::new(),
            edge_attrs: None,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Attribute dimension, or `None` for the empty graph.
    pub fn node_dim(&self) -> Option<usize> {
        self.nodes.first().map(Vec::len)
    }

    pub fn edge_attr(&self, k: usize) -> Option<&[f64]> {
        self.edge_attrs.as_ref().map(|a| a[k].as_slice())
    }

    /// Sorted indices of nodes adjacent to `v`.
    pub fn neighborhood(&self, v: usize) -> Result<Vec<usize>, GraphError> {
        if v >= self.num_nodes() {
            return Err(GraphError::NodeOutOfRange(v, self.num_nodes()));
        }
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == v {
                    Some(b)
                } else if b == v {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Incident edge indices for every node.
    pub fn incident_edges(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_nodes()];
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            inc[a].push(k);
            inc[b].push(k);
        }
        inc
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Both directions of every edge as `(src, dst)` pairs, in edge order.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect()
    }

    /// Index of the undirected edge between `a` and `b`, if present.
    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        self.edges.iter().position(|&e| e == key)
    }

    /// Relabels nodes so that old node `i` becomes new node `p[i]`.
    pub fn permute(&self, p: &NodePermutation) -> Result<Graph, GraphError> {
        let n = self.num_nodes();
        if p.len() != n {
            return Err(GraphError::PermutationSize {
                expected: n,
                found: p.len(),
            });
        }
        let mut nodes = vec![Vec::new(); n];
        for (old, attr) in self.nodes.iter().enumerate() {
            nodes[p.apply(old)] = attr.clone();
        }
        let edges = self
            .edges
            .iter()
            .map(|&(a, b)| (p.apply(a), p.apply(b)))
            .collect();
        Graph::new(self.id.clone(), nodes, edges, self.edge_attrs.clone())
    }

    /// Affinely maps each coordinate of 2-d node positions onto [0, 1]. An
    /// axis with zero extent maps to 0.5.
    pub fn normalize_positions(&self) -> Result<Graph, GraphError> {
        match self.node_dim() {
            None => return Ok(self.clone()),
            Some(2) => {}
            Some(d) => return Err(GraphError::NotPositions(d)),
        }
        let mut out = self.clone();
        for axis in 0..2 {
            let (lo, hi) = self
                .nodes
                .iter()
                .map(|v| v[axis])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            let span = hi - lo;
            for v in &mut out.nodes {
                v[axis] = if span > 0.0 { (v[axis] - lo) / span } else { 0.5 };
            }
        }
        Ok(out)
    }

    /// Nodes as a flat row-major `[n, dim]` buffer.
    pub fn node_matrix(&self) -> (Vec<f64>, usize) {
        let dim = self.node_dim().unwrap_or(0);
        (self.nodes.iter().flatten().copied().collect(), dim)
    }
}

/// Bijection on node indices; `apply(i)` is the new index of old node `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePermutation {
    mapping: Vec<usize>,
}

impl NodePermutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self, GraphError> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(GraphError::NotAPermutation);
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn random<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Self { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self { mapping: inv }
    }
}

/// `n` nodes uniform in the unit square, each edge present with
/// probability `p`.
pub fn random_graph<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, p: f64) -> Graph {
    let nodes = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    Graph::new(format!("random{n}"), nodes, edges, None).expect("valid random graph")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn p2() -> Graph {
        Graph::new("p2", vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![(0, 1)], None).unwrap()
    }

    fn triangle() -> Graph {
        Graph::new(
            "tri",
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![(0, 1), (1, 2), (2, 0)],
            None,
        )
        .unwrap()
    }

    #[test]
    fn duplicate_and_reversed_edges_fold() {
        let g = Graph::new("g", vec![vec![0.0]; 3], vec![(0, 1), (1, 0), (2, 1)], None).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn invalid_graphs_rejected() {
        assert_eq!(
            Graph::new("g", vec![vec![0.0]; 2], vec![(0, 2)], None),
            Err(GraphError::DanglingEdge(0, 2, 2))
        );
        assert_eq!(
            Graph::new("g", vec![vec![0.0]; 2], vec![(1, 1)], None),
            Err(GraphError::SelfLoop(1))
        );
        assert!(matches!(
            Graph::new("g", vec![vec![0.0], vec![0.0, 1.0]], vec![], None),
            Err(GraphError::Dimension { index: 1, .. })
        ));
    }

    #[test]
    fn neighborhoods() {
        assert_eq!(p2().neighborhood(0).unwrap(), vec![1]);
        let iso = Graph::new("i", vec![vec![0.0]], vec![], None).unwrap();
        assert!(iso.neighborhood(0).unwrap().is_empty());
        let t = triangle();
        assert_eq!(t.neighborhood(0).unwrap(), vec![1, 2]);
        assert_eq!(t.neighborhood(1).unwrap(), vec![0, 2]);
        assert_eq!(t.neighborhood(2).unwrap(), vec![0, 1]);
        assert_eq!(t.neighborhood(3), Err(GraphError::NodeOutOfRange(3, 3)));
    }

    #[test]
    fn normalize_examples() {
        let g = Graph::new("g", vec![vec![0.0, 0.0], vec![2.0, 4.0]], vec![], None).unwrap();
        assert_eq!(g.normalize_positions().unwrap().nodes, vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        let g = Graph::new("g", vec![vec![7.0, 3.0]], vec![], None).unwrap();
        assert_eq!(g.normalize_positions().unwrap().nodes, vec![vec![0.5, 0.5]]);
        let g = Graph::new("g", vec![vec![1.0, 1.0], vec![1.0, 3.0]], vec![], None).unwrap();
        assert_eq!(g.normalize_positions().unwrap().nodes, vec![vec![0.5, 0.0], vec![0.5, 1.0]]);
        let g3 = Graph::new("g", vec![vec![1.0, 1.0, 1.0]], vec![], None).unwrap();
        assert_eq!(g3.normalize_positions(), Err(GraphError::NotPositions(3)));
    }

    #[test]
    fn permute_examples() {
        let g = p2();
        assert_eq!(g.permute(&NodePermutation::identity(2)).unwrap(), g);
        let swapped = g.permute(&NodePermutation::new(vec![1, 0]).unwrap()).unwrap();
        assert_eq!(swapped.nodes, vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(swapped.edges, vec![(0, 1)]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t = triangle();
        let p = NodePermutation::random(3, &mut rng);
        assert_eq!(t.permute(&p).unwrap().permute(&p.inverse()).unwrap(), t);
        assert!(matches!(
            g.permute(&NodePermutation::identity(3)),
            Err(GraphError::PermutationSize { .. })
        ));
        assert_eq!(NodePermutation::new(vec![0, 0]), Err(GraphError::NotAPermutation));
    }
}
