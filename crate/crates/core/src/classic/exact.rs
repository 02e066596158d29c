//! Exact GED by depth-first branch and bound over node maps. Exponential;
//! meant as an oracle for graphs of a handful of nodes.

use super::{edit_path_cost, ClassicError, CostModel};
use crate::graph::Graph;

pub const DEFAULT_NODE_LIMIT: usize = 7;

struct Search<'a> {
    g1: &'a Graph,
    g2: &'a Graph,
    c: &'a CostModel,
    adj1: Vec<Vec<Option<usize>>>,
    adj2: Vec<Vec<Option<usize>>>,
    mapping: Vec<Option<usize>>,
    used: Vec<bool>,
    best: f64,
    best_mapping: Vec<Option<usize>>,
}

fn adjacency(g: &Graph) -> Vec<Vec<Option<usize>>> {
    let n = g.num_nodes();
    let mut adj = vec![vec![None; n]; n];
    for (k, &(a, b)) in g.edges.iter().enumerate() {
        adj[a][b] = Some(k);
        adj[b][a] = Some(k);
    }
    adj
}

impl Search<'_> {
    /// Cost added by deciding node `u` (edges to earlier nodes included).
    fn step_cost(&self, u: usize, target: Option<usize>) -> f64 {
        let c = self.c;
        let mut cost = match target {
            Some(v) => c.node_sub(&self.g1.nodes[u], &self.g2.nodes[v]),
            None => c.node_indel(),
        };
        for w in 0..u {
            let e1 = self.adj1[u][w];
            let e2 = match (target, self.mapping[w]) {
                (Some(v), Some(x)) => self.adj2[v][x],
                _ => None,
            };
            cost += match (e1, e2) {
                (Some(p), Some(q)) => c.edge_sub(self.g1.edge_attr(p), self.g2.edge_attr(q)),
                (Some(_), None) | (None, Some(_)) => c.edge_indel(),
                (None, None) => 0.0,
            };
        }
        cost
    }

    /// Admissible bound on the node cost of the undecided part.
    fn remaining_bound(&self, from: usize) -> f64 {
        let c = self.c;
        let free: Vec<usize> = (0..self.g2.num_nodes()).filter(|&v| !self.used[v]).collect();
        let mut bound = 0.0;
        for u in from..self.g1.num_nodes() {
            let best_sub = free
                .iter()
                .map(|&v| c.node_sub(&self.g1.nodes[u], &self.g2.nodes[v]))
                .fold(f64::INFINITY, f64::min);
            bound += best_sub.min(c.node_indel());
        }
        let rem1 = self.g1.num_nodes() - from;
        bound + free.len().saturating_sub(rem1) as f64 * c.node_indel()
    }

    fn completion_cost(&self) -> f64 {
        let c = self.c;
        let mut cost = 0.0;
        for v in 0..self.g2.num_nodes() {
            if !self.used[v] {
                cost += c.node_indel();
            }
        }
        for &(a, b) in &self.g2.edges {
            if !self.used[a] || !self.used[b] {
                cost += c.edge_indel();
            }
        }
        cost
    }

    fn dfs(&mut self, u: usize, acc: f64) {
        if u == self.g1.num_nodes() {
            let total = acc + self.completion_cost();
            if total < self.best {
                self.best = total;
                self.best_mapping = self.mapping.clone();
            }
            return;
        }
        if acc + self.remaining_bound(u) >= self.best {
            return;
        }
        let candidates: Vec<Option<usize>> = (0..self.g2.num_nodes())
            .filter(|&v| !self.used[v])
            .map(Some)
            .chain(std::iter::once(None))
            .collect();
        for t in candidates {
            let step = self.step_cost(u, t);
            self.mapping[u] = t;
            if let Some(v) = t {
                self.used[v] = true;
            }
            self.dfs(u + 1, acc + step);
            if let Some(v) = t {
                self.used[v] = false;
            }
            self.mapping[u] = None;
        }
    }
}

/// Minimum edit path cost and one optimal node map.
pub fn exact_ged_with_mapping(
    g1: &Graph,
    g2: &Graph,
    c: &CostModel,
    node_limit: usize,
) -> Result<(f64, Vec<Option<usize>>), ClassicError> {
    let (n1, n2) = (g1.num_nodes(), g2.num_nodes());
    if n1 > node_limit || n2 > node_limit {
        return Err(ClassicError::SizeLimit {
            limit: node_limit,
            n1,
            n2,
        });
    }
    let trivial = vec![None; n1];
    let mut s = Search {
        g1,
        g2,
        c,
        adj1: adjacency(g1),
        adj2: adjacency(g2),
        mapping: vec![None; n1],
        used: vec![false; n2],
        best: edit_path_cost(g1, g2, c, &trivial),
        best_mapping: trivial,
    };
    s.dfs(0, 0.0);
    // Re-evaluate along the canonical path so the value is independent of the
    // order in which the search accumulated it.
    let value = edit_path_cost(g1, g2, c, &s.best_mapping);
    Ok((value, s.best_mapping))
}

pub fn exact_ged(g1: &Graph, g2: &Graph, c: &CostModel, node_limit: usize) -> Result<f64, ClassicError> {
    exact_ged_with_mapping(g1, g2, c, node_limit).map(|(v, _)| v)
}
