use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relation class reserved for "no relation".
pub const EMPTY_RELATION: usize = 0;

/// Labeled directed graph: `edge(i, j)` is the relation with subject `i` and
/// object `j`, `EMPTY_RELATION` when absent.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneGraph {
    node_labels: Vec<usize>,
    edge_labels: Vec<Vec<usize>>,
}

impl SceneGraph {
    pub fn new(node_labels: Vec<usize>, edge_labels: Vec<Vec<usize>>) -> Result<Self> {
        let m = node_labels.len();
        if edge_labels.len() != m || edge_labels.iter().any(|r| r.len() != m) {
            return Err(Error::data(format!("edge matrix is not {m}x{m}")));
        }
        for (i, row) in edge_labels.iter().enumerate() {
            if row[i] != EMPTY_RELATION {
                return Err(Error::data(format!("self-relation on node {i}")));
            }
        }
        Ok(Self {
            node_labels,
            edge_labels,
        })
    }

    pub fn with_nodes(node_labels: Vec<usize>) -> Self {
        let m = node_labels.len();
        Self {
            node_labels,
            edge_labels: vec![vec![EMPTY_RELATION; m]; m],
        }
    }

    pub fn from_edges(node_labels: Vec<usize>, edges: &[(usize, usize, usize)]) -> Result<Self> {
        let mut g = Self::with_nodes(node_labels);
        for &(i, j, r) in edges {
            g.set_edge(i, j, r)?;
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.node_labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.node_labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.node_labels[i]
    }

    pub fn edge(&self, i: usize, j: usize) -> usize {
        self.edge_labels[i][j]
    }

    pub fn edge_matrix(&self) -> &[Vec<usize>] {
        &self.edge_labels
    }

    /// The adjacency mask `R[i][j] = edge(i, j) != empty`.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        self.edge_labels
            .iter()
            .map(|row| row.iter().map(|&r| r != EMPTY_RELATION).collect())
            .collect()
    }

    pub fn set_edge(&mut self, i: usize, j: usize, relation: usize) -> Result<()> {
        let m = self.node_count();
        if i >= m || j >= m {
            return Err(Error::data(format!("edge ({i}, {j}) references a node outside [0, {m})")));
        }
        if i == j && relation != EMPTY_RELATION {
            return Err(Error::data(format!("self-relation on node {i}")));
        }
        self.edge_labels[i][j] = relation;
        Ok(())
    }

    /// Appends an isolated node and returns its index.
    pub fn push_node(&mut self, label: usize) -> usize {
        for row in &mut self.edge_labels {
            row.push(EMPTY_RELATION);
        }
        self.node_labels.push(label);
        let m = self.node_labels.len();
        self.edge_labels.push(vec![EMPTY_RELATION; m]);
        m - 1
    }

    /// Removes the most recently added node together with its edges.
    pub fn pop_node(&mut self) -> Option<usize> {
        let label = self.node_labels.pop()?;
        self.edge_labels.pop();
        for row in &mut self.edge_labels {
            row.pop();
        }
        Some(label)
    }

    /// Non-empty edges as `(subject, object, relation)` in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.edge_labels.iter().enumerate() {
            for (j, &r) in row.iter().enumerate() {
                if r != EMPTY_RELATION {
                    out.push((i, j, r));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edge_labels
            .iter()
            .map(|row| row.iter().filter(|&&r| r != EMPTY_RELATION).count())
            .sum()
    }

    /// Distinct neighbors of `i` over non-empty edges in either direction.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&j| j != i && (self.edge_labels[i][j] != EMPTY_RELATION || self.edge_labels[j][i] != EMPTY_RELATION))
            .collect()
    }

    pub fn connected(&self, i: usize, j: usize) -> bool {
        self.edge_labels[i][j] != EMPTY_RELATION || self.edge_labels[j][i] != EMPTY_RELATION
    }

    /// The subgraph induced by the nodes in `keep`, renumbered in that order.
    pub fn induced(&self, keep: &[usize]) -> SceneGraph {
        let labels = keep.iter().map(|&i| self.node_labels[i]).collect();
        let edges = keep
            .iter()
            .map(|&i| keep.iter().map(|&j| self.edge_labels[i][j]).collect())
            .collect();
        SceneGraph {
            node_labels: labels,
            edge_labels: edges,
        }
    }

    pub fn prefix(&self, count: usize) -> SceneGraph {
        let keep: Vec<usize> = (0..count.min(self.node_count())).collect();
        self.induced(&keep)
    }

    /// Checks label ranges against class counts.
    pub fn check_labels(&self, node_classes: usize, edge_classes: usize) -> Result<()> {
        if let Some((i, l)) = self.node_labels.iter().enumerate().find(|(_, &l)| l >= node_classes) {
            return Err(Error::data(format!("node {i} has class {l} outside [0, {node_classes})")));
        }
        for (i, j, r) in self.edges() {
            if r >= edge_classes {
                return Err(Error::data(format!("edge ({i}, {j}) has class {r} outside [0, {edge_classes})")));
            }
        }
        Ok(())
    }
}
