//! Gaussian parameters for the next graph element, computed from a GCN
//! embedding of the current subgraph.

use crate::error::{Error, Result};
use crate::flow::Gaussian;
use crate::model::{gcn_weight_name, Forward, ModelParams, Plan};
use crate::numeric::{Tensor, Var};
use crate::scene::SceneGraph;

/// `D^-1/2 (A + I) D^-1/2` over the undirected non-empty adjacency.
pub fn normalized_adjacency(graph: &SceneGraph) -> Tensor {
    let m = graph.node_count();
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        a[i * m + i] = 1.0;
        for j in 0..m {
            if i != j && graph.connected(i, j) {
                a[i * m + j] = 1.0;
            }
        }
    }
    let inv_sqrt: Vec<f64> = (0..m)
        .map(|i| 1.0 / a[i * m..(i + 1) * m].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..m {
        for j in 0..m {
            a[i * m + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Tensor::matrix(m, m, a).expect("m x m")
}

pub fn one_hot_labels(graph: &SceneGraph, classes: usize) -> Result<Tensor> {
    let m = graph.node_count();
    let mut x = vec![0.0; m * classes];
    for (i, &l) in graph.labels().iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!("node {i} has class {l} outside [0, {classes})")));
        }
        x[i * classes + l] = 1.0;
    }
    Tensor::matrix(m, classes, x)
}

/// Node embeddings `H` (`m x w`) and their column sum (`1 x w`).
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub nodes: Var,
    pub pooled: Var,
}

/// Runs the GCN, `H <- relu(A_hat H W)` per layer, from one-hot labels.
pub fn gcn_embed(f: &mut Forward, graph: &SceneGraph) -> Result<Embedding> {
    if graph.node_count() == 0 {
        return Err(Error::invalid("cannot embed an empty subgraph"));
    }
    let x = one_hot_labels(graph, f.model.arch.node_classes)?;
    let h = propagate(f, normalized_adjacency(graph), x)?;
    let pooled = f.tape.sum_rows(h)?;
    Ok(Embedding { nodes: h, pooled })
}

fn propagate(f: &mut Forward, a_hat: Tensor, x: Tensor) -> Result<Var> {
    let a = f.tape.constant(a_hat);
    let mut h = f.tape.constant(x);
    for layer in 0..f.model.arch.gcn_layers {
        let w = f.param(&gcn_weight_name(layer))?;
        let hw = f.tape.matmul(h, w)?;
        let prop = f.tape.matmul(a, hw)?;
        h = f.tape.relu(prop)?;
    }
    Ok(h)
}

/// Embeddings of several subgraphs in one pass. Node rows are stacked in
/// graph order, graph `g` starting at `offsets[g]`; `pooled` has one row per
/// graph.
#[derive(Clone, Debug)]
pub struct StackedEmbedding {
    pub nodes: Var,
    pub pooled: Var,
    pub offsets: Vec<usize>,
}

/// [`gcn_embed`] over many graphs at once through a block-diagonal
/// adjacency.
pub fn gcn_embed_stacked(f: &mut Forward, graphs: &[SceneGraph]) -> Result<StackedEmbedding> {
    if graphs.is_empty() || graphs.iter().any(|g| g.node_count() == 0) {
        return Err(Error::invalid("cannot embed an empty subgraph"));
    }
    let classes = f.model.arch.node_classes;
    let mut offsets = Vec::with_capacity(graphs.len());
    let mut total = 0;
    for g in graphs {
        offsets.push(total);
        total += g.node_count();
    }
    let mut a = vec![0.0; total * total];
    let mut x = vec![0.0; total * classes];
    let mut pool = vec![0.0; graphs.len() * total];
    for (k, g) in graphs.iter().enumerate() {
        let (o, m) = (offsets[k], g.node_count());
        let block = normalized_adjacency(g);
        let labels = one_hot_labels(g, classes)?;
        for i in 0..m {
            a[(o + i) * total + o..(o + i) * total + o + m].copy_from_slice(block.row_slice(i));
            x[(o + i) * classes..(o + i + 1) * classes].copy_from_slice(labels.row_slice(i));
            pool[k * total + o + i] = 1.0;
        }
    }
    let h = propagate(f, Tensor::matrix(total, total, a)?, Tensor::matrix(total, classes, x)?)?;
    let p = f.tape.constant(Tensor::matrix(graphs.len(), total, pool)?);
    let pooled = f.tape.matmul(p, h)?;
    Ok(StackedEmbedding { nodes: h, pooled, offsets })
}

/// Node head over stacked subgraph embeddings (`T x w` -> `T x 2 c_n`).
pub fn node_condition_rows(f: &mut Forward, plan: &Plan, pooled: Var) -> Result<Var> {
    f.mlp("cond.node", plan.stack("cond.node"), pooled)
}

/// Edge head over stacked `[pooled, H_i, H_j]` rows (`T x 3w` -> `T x 2 c_e`).
pub fn edge_condition_rows(f: &mut Forward, plan: &Plan, input: Var) -> Result<Var> {
    f.mlp("cond.edge", plan.stack("cond.edge"), input)
}

/// Subgraph embedding evaluated without recording.
#[derive(Clone, Debug)]
pub struct SubgraphState {
    pub nodes: Tensor,
    pub pooled: Tensor,
}

/// Inference-time access to the conditional Gaussians.
pub struct Conditioner<'m> {
    model: &'m ModelParams,
    plan: Plan,
}

impl<'m> Conditioner<'m> {
    pub fn new(model: &'m ModelParams) -> Self {
        Self {
            model,
            plan: Plan::new(&model.arch),
        }
    }

    pub fn embed(&self, graph: &SceneGraph) -> Result<SubgraphState> {
        let mut f = Forward::inference(self.model);
        let e = gcn_embed(&mut f, graph)?;
        Ok(SubgraphState {
            nodes: f.tape.value(e.nodes).clone(),
            pooled: f.tape.value(e.pooled).clone(),
        })
    }

    pub fn node(&self, state: &SubgraphState) -> Result<Gaussian> {
        let mut f = Forward::inference(self.model);
        let x = f.tape.constant(state.pooled.clone());
        let out = node_condition_rows(&mut f, &self.plan, x)?;
        Ok(Gaussian::from_head_row(f.tape.value(out).data(), self.model.arch.log_sigma_bound))
    }

    /// Gaussian of the relation with subject `i` and object `j`.
    pub fn edge(&self, state: &SubgraphState, i: usize, j: usize) -> Result<Gaussian> {
        let m = state.nodes.rows();
        if i == j {
            return Err(Error::invalid(format!("edge condition requested for self-pair ({i}, {i})")));
        }
        if i >= m || j >= m {
            return Err(Error::invalid(format!("edge ({i}, {j}) outside a {m}-node subgraph")));
        }
        let mut row = state.pooled.data().to_vec();
        row.extend_from_slice(state.nodes.row_slice(i));
        row.extend_from_slice(state.nodes.row_slice(j));
        let mut f = Forward::inference(self.model);
        let x = f.tape.constant(Tensor::row(row));
        let out = edge_condition_rows(&mut f, &self.plan, x)?;
        Ok(Gaussian::from_head_row(f.tape.value(out).data(), self.model.arch.log_sigma_bound))
    }
}
