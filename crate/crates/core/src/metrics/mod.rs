//! Validity, topology and novelty scores of generated graphs.

pub mod matching;
pub mod stats;

use serde::{Deserialize, Serialize};

pub use matching::{diversity, embeds, isomorphic, scene_diversity, strictly_embeds, uniqueness};
pub use stats::{clustering_coefficients, clustering_histogram, degree_histogram, degrees, median_bandwidth, mmd};

use crate::error::{Error, Result};
use crate::generator::build_trajectory;
use crate::scene::{GeneratedGraph, RuleSet, SceneGraph};

/// Counts of valid and total generated elements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityCounts {
    pub valid_nodes: usize,
    pub nodes: usize,
    pub valid_edges: usize,
    pub edges: usize,
}

impl ValidityCounts {
    pub fn add(&mut self, other: ValidityCounts) {
        self.valid_nodes += other.valid_nodes;
        self.nodes += other.nodes;
        self.valid_edges += other.valid_edges;
        self.edges += other.edges;
    }

    pub fn node_percent(&self) -> f64 {
        percent(self.valid_nodes, self.nodes)
    }

    /// 100 when no edge was generated.
    pub fn edge_percent(&self) -> f64 {
        percent(self.valid_edges, self.edges)
    }
}

fn percent(k: usize, n: usize) -> f64 {
    if n == 0 {
        100.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

pub fn node_is_valid(class: usize, room_function: &str, rules: &RuleSet) -> bool {
    !rules.is_architectural(class) && rules.allowed_in_room(room_function, class) != Some(false)
}

pub fn count_validity(g: &GeneratedGraph, rules: &RuleSet) -> ValidityCounts {
    let nodes = g.generated_nodes();
    let edges = g.generated_edges();
    ValidityCounts {
        valid_nodes: nodes
            .clone()
            .filter(|&k| node_is_valid(g.graph.label(k), &g.room_function, rules))
            .count(),
        nodes: nodes.len(),
        valid_edges: edges
            .iter()
            .filter(|&&(i, j, r)| rules.is_valid_triple(g.graph.label(i), r, g.graph.label(j)))
            .count(),
        edges: edges.len(),
    }
}

/// `(node %, edge %)` over the generated elements of a batch.
pub fn validity(graphs: &[GeneratedGraph], rules: &RuleSet) -> Result<(f64, f64)> {
    let mut c = ValidityCounts::default();
    for g in graphs {
        c.add(count_validity(g, rules));
    }
    if c.nodes == 0 {
        return Err(Error::invalid("no generated nodes to score"));
    }
    Ok((c.node_percent(), c.edge_percent()))
}

/// An observed scene viewed as if its furniture had been generated from its
/// architecture: nodes renumbered into trajectory order.
pub fn as_generated(graph: &SceneGraph, room_function: &str, rules: &RuleSet) -> Result<GeneratedGraph> {
    let t = build_trajectory(graph, rules)?;
    Ok(GeneratedGraph {
        graph: graph.induced(&t.order),
        existing_count: t.seed_count,
        room_function: room_function.to_string(),
        room_volume: None,
        generated_from: None,
        boxes: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene: String,
    pub graphs: usize,
    pub node_validity: f64,
    pub edge_validity: f64,
    pub generated_nodes: usize,
    pub generated_edges: usize,
    pub diversity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub node_validity: f64,
    pub edge_validity: f64,
    /// Absent without a reference set.
    pub mmd_degree: Option<f64>,
    pub mmd_cluster: Option<f64>,
    pub uniqueness: f64,
    pub diversity: f64,
    pub per_scene: Vec<SceneReport>,
    pub config: serde_json::Value,
}

/// Scores graphs grouped by source scene. MMD compares the full generated
/// graphs against `reference`.
pub fn evaluate(
    scenes: &[(String, Vec<GeneratedGraph>)],
    reference: &[SceneGraph],
    rules: &RuleSet,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let mut total = ValidityCounts::default();
    let mut per_scene = Vec::with_capacity(scenes.len());
    let mut all = Vec::new();
    let mut grouped = Vec::new();
    for (name, graphs) in scenes {
        if graphs.is_empty() {
            continue;
        }
        let mut c = ValidityCounts::default();
        for g in graphs {
            c.add(count_validity(g, rules));
        }
        total.add(c);
        let plain: Vec<SceneGraph> = graphs.iter().map(|g| g.graph.clone()).collect();
        per_scene.push(SceneReport {
            scene: name.clone(),
            graphs: graphs.len(),
            node_validity: c.node_percent(),
            edge_validity: c.edge_percent(),
            generated_nodes: c.nodes,
            generated_edges: c.edges,
            diversity: scene_diversity(&plain)?,
        });
        all.extend(plain.iter().cloned());
        grouped.push(plain);
    }
    if total.nodes == 0 {
        return Err(Error::invalid("no generated nodes to score"));
    }
    let (mmd_degree, mmd_cluster) = if reference.is_empty() {
        (None, None)
    } else {
        let stat = |f: fn(&SceneGraph) -> Vec<f64>, gs: &[SceneGraph]| gs.iter().map(f).collect::<Vec<_>>();
        (
            Some(mmd(&stat(degree_histogram, &all), &stat(degree_histogram, reference))?),
            Some(mmd(&stat(clustering_histogram, &all), &stat(clustering_histogram, reference))?),
        )
    };
    Ok(EvalReport {
        node_validity: total.node_percent(),
        edge_validity: total.edge_percent(),
        mmd_degree,
        mmd_cluster,
        uniqueness: uniqueness(&all)?,
        diversity: per_scene.iter().map(|s| s.diversity).sum::<f64>() / per_scene.len() as f64,
        per_scene,
        config,
    })
}

impl EvalReport {
    /// Plain-text table in the column order validity, MMD, novelty.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let header = ["Node Validity (%)", "Edge Validity (%)", "MMD Degree", "MMD Cluster", "Uniqueness (%)", "Diversity (%)"];
        let row = [
            format!("{:.1}", self.node_validity),
            format!("{:.1}", self.edge_validity),
            opt(self.mmd_degree),
            opt(self.mmd_cluster),
            format!("{:.1}", self.uniqueness),
            format!("{:.1}", self.diversity),
        ];
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let mut out = line(header.to_vec());
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
        out.push('\n');
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
        out
    }
}
