//! Decomposition of an observed scene graph into the ordered node and edge
//! decisions that would build it from its architectural seed.

use std::collections::VecDeque;

use log::{info, warn};

use crate::error::{Error, Result};
use crate::scene::{RuleSet, SceneGraph, EMPTY_RELATION};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Node { class: usize },
    /// Relation from `subject` to `object`, in trajectory numbering.
    Edge { subject: usize, object: usize, relation: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub target: Target,
    /// Index into [`Trajectory::states`] of the subgraph this step is
    /// conditioned on.
    pub state: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Original node ids in trajectory order; the seed comes first.
    pub order: Vec<usize>,
    pub seed_count: usize,
    pub steps: Vec<Step>,
    /// Distinct subgraph snapshots; a new one starts whenever a node or a
    /// non-empty edge is added.
    pub states: Vec<SceneGraph>,
}

impl Trajectory {
    pub fn seed(&self) -> &SceneGraph {
        &self.states[0]
    }

    pub fn node_steps(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s.target, Target::Node { .. })).count()
    }

    pub fn edge_steps(&self) -> usize {
        self.steps.len() - self.node_steps()
    }

    /// Applies every target to the seed, giving the graph in trajectory numbering.
    pub fn replay(&self) -> SceneGraph {
        let mut g = self.seed().clone();
        for s in &self.steps {
            match s.target {
                Target::Node { class } => {
                    g.push_node(class);
                }
                Target::Edge {
                    subject,
                    object,
                    relation,
                } => {
                    if relation != EMPTY_RELATION {
                        g.set_edge(subject, object, relation).expect("targets reference committed nodes");
                    }
                }
            }
        }
        g
    }

    /// [`Trajectory::replay`] renumbered back to the original node ids.
    pub fn reconstruct(&self) -> SceneGraph {
        let replayed = self.replay();
        let m = self.order.len();
        let mut position = vec![0; m];
        for (k, &orig) in self.order.iter().enumerate() {
            position[orig] = k;
        }
        replayed.induced(&position)
    }
}

/// Seed = architectural nodes with their mutual edges; the remaining nodes
/// follow in breadth-first order over non-empty edges (either direction)
/// from the seed, ties by node id. Nodes the search cannot reach are
/// appended in id order.
///
/// Each node step is followed by one edge step per earlier node, in
/// trajectory order. The step's endpoints are (new, earlier) unless only the
/// reverse relation is non-empty, in which case they are swapped.
pub fn build_trajectory(graph: &SceneGraph, rules: &RuleSet) -> Result<Trajectory> {
    let m = graph.node_count();
    let seed: Vec<usize> = (0..m).filter(|&i| rules.is_architectural(graph.label(i))).collect();
    if seed.is_empty() {
        return Err(Error::data("scene has no architectural node to seed generation"));
    }
    let mut placed = vec![false; m];
    seed.iter().for_each(|&i| placed[i] = true);
    let mut order = seed.clone();
    let mut queue: VecDeque<usize> = seed.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        for v in 0..m {
            if !placed[v] && graph.connected(u, v) {
                placed[v] = true;
                order.push(v);
                queue.push_back(v);
            }
        }
    }
    let unreachable: Vec<usize> = (0..m).filter(|&i| !placed[i]).collect();
    if !unreachable.is_empty() {
        info!("nodes {unreachable:?} are not reachable from the seed; appended in id order");
        order.extend(unreachable);
    }

    let seed_graph = graph.induced(&seed);
    let mut current = seed_graph.clone();
    let mut states = vec![seed_graph];
    let mut steps = Vec::new();
    for k in seed.len()..m {
        let new = order[k];
        steps.push(Step {
            target: Target::Node { class: graph.label(new) },
            state: states.len() - 1,
        });
        current.push_node(graph.label(new));
        states.push(current.clone());
        for (p, &prior) in order[..k].iter().enumerate() {
            let forward = graph.edge(new, prior);
            let backward = graph.edge(prior, new);
            let (subject, object, relation) = if forward == EMPTY_RELATION && backward != EMPTY_RELATION {
                (p, k, backward)
            } else {
                if forward != EMPTY_RELATION && backward != EMPTY_RELATION {
                    warn!("relations in both directions between nodes {new} and {prior}; keeping {new} -> {prior}");
                }
                (k, p, forward)
            };
            steps.push(Step {
                target: Target::Edge {
                    subject,
                    object,
                    relation,
                },
                state: states.len() - 1,
            });
            if relation != EMPTY_RELATION {
                current.set_edge(subject, object, relation)?;
                states.push(current.clone());
            }
        }
    }
    Ok(Trajectory {
        order,
        seed_count: seed.len(),
        steps,
        states,
    })
}
