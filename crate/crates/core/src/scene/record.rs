use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::Aabb;
use super::graph::SceneGraph;
use super::rules::RuleSet;
use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Annotated point-cloud scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    /// `n x c` with XYZ in the first three columns.
    pub points: Tensor,
    /// Instance id of every point, in `[0, m)`.
    pub indicator: Vec<usize>,
    pub graph: SceneGraph,
    pub room_function: String,
    pub room_volume: f64,
}

/// Input to generation: a room whose node labels may be unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct Room {
    pub points: Tensor,
    pub indicator: Vec<usize>,
    pub instance_count: usize,
    pub room_function: String,
    pub room_volume: f64,
    pub graph: Option<SceneGraph>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedBox {
    pub node: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl PlacedBox {
    pub fn aabb(&self) -> Aabb {
        Aabb {
            min: self.min,
            max: self.max,
        }
    }
}

/// A seed graph extended by generation. Nodes `0..existing_count` were given.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedGraph {
    pub graph: SceneGraph,
    pub existing_count: usize,
    pub room_function: String,
    pub room_volume: Option<f64>,
    pub generated_from: Option<String>,
    pub boxes: Vec<PlacedBox>,
}

impl GeneratedGraph {
    pub fn generated_nodes(&self) -> std::ops::Range<usize> {
        self.existing_count..self.graph.node_count()
    }

    /// Edges with at least one generated endpoint.
    pub fn generated_edges(&self) -> Vec<(usize, usize, usize)> {
        self.graph
            .edges()
            .into_iter()
            .filter(|&(i, j, _)| i >= self.existing_count || j >= self.existing_count)
            .collect()
    }
}

/// JSON schema shared by scene, room and generated-graph files.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SceneDocument {
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub indicator: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<String>>,
    #[serde(default)]
    pub edges: Vec<(usize, usize, String)>,
    pub room_function: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_volume: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existing_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<PlacedBox>,
}

impl SceneRecord {
    /// Validates the record invariants; computes the room volume from the
    /// point cloud's bounding box when `room_volume` is `None`.
    pub fn new(
        points: Tensor,
        indicator: Vec<usize>,
        graph: SceneGraph,
        room_function: String,
        room_volume: Option<f64>,
    ) -> Result<Self> {
        let m = graph.node_count();
        check_points(&points, &indicator, m)?;
        let room_volume = resolve_volume(&points, room_volume)?;
        Ok(Self {
            points,
            indicator,
            graph,
            room_function,
            room_volume,
        })
    }

    pub fn instance_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn room_box(&self) -> Aabb {
        room_box(&self.points)
    }

    pub fn instance_boxes(&self) -> Vec<Aabb> {
        instance_boxes(&self.points, &self.indicator, self.instance_count())
    }

    /// Keeps only architectural instances and their points; the room volume
    /// of the full scene is retained.
    pub fn strip_to_architecture(&self, rules: &RuleSet) -> SceneRecord {
        let keep: Vec<usize> = (0..self.instance_count())
            .filter(|&i| rules.is_architectural(self.graph.label(i)))
            .collect();
        let mut remap = vec![usize::MAX; self.instance_count()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let c = self.points.cols();
        let mut data = Vec::new();
        let mut indicator = Vec::new();
        for (p, &k) in self.indicator.iter().enumerate() {
            if remap[k] != usize::MAX {
                data.extend_from_slice(self.points.row_slice(p));
                indicator.push(remap[k]);
            }
        }
        let n = indicator.len();
        SceneRecord {
            points: Tensor::matrix(n, c, data).expect("row-major copy of whole rows"),
            indicator,
            graph: self.graph.induced(&keep),
            room_function: self.room_function.clone(),
            room_volume: self.room_volume,
        }
    }

    pub fn to_room(&self) -> Room {
        Room {
            points: self.points.clone(),
            indicator: self.indicator.clone(),
            instance_count: self.instance_count(),
            room_function: self.room_function.clone(),
            room_volume: self.room_volume,
            graph: Some(self.graph.clone()),
        }
    }

    pub fn to_document(&self, rules: &RuleSet) -> SceneDocument {
        SceneDocument {
            points: (0..self.points.rows()).map(|i| self.points.row_slice(i).to_vec()).collect(),
            indicator: self.indicator.clone(),
            nodes: Some(node_names(&self.graph, rules)),
            edges: edge_names(&self.graph, rules),
            room_function: self.room_function.clone(),
            room_volume: Some(self.room_volume),
            ..SceneDocument::default()
        }
    }

    pub fn from_document(doc: SceneDocument, rules: &RuleSet) -> Result<Self> {
        let nodes = doc.nodes.as_ref().ok_or_else(|| Error::data("missing field \"nodes\""))?;
        let graph = resolve_graph(nodes, &doc.edges, rules)?;
        let points = points_tensor(&doc.points)?;
        Self::new(points, doc.indicator, graph, doc.room_function, doc.room_volume)
    }
}

impl Room {
    pub fn from_document(doc: SceneDocument, rules: &RuleSet) -> Result<Self> {
        let points = points_tensor(&doc.points)?;
        let graph = match &doc.nodes {
            Some(nodes) => Some(resolve_graph(nodes, &doc.edges, rules)?),
            None => None,
        };
        let instance_count = match &graph {
            Some(g) => g.node_count(),
            None => doc.indicator.iter().max().map_or(0, |m| m + 1),
        };
        check_points(&points, &doc.indicator, instance_count)?;
        let room_volume = resolve_volume(&points, doc.room_volume)?;
        Ok(Self {
            points,
            indicator: doc.indicator,
            instance_count,
            room_function: doc.room_function,
            room_volume,
            graph,
        })
    }

    pub fn room_box(&self) -> Aabb {
        room_box(&self.points)
    }

    pub fn instance_boxes(&self) -> Vec<Aabb> {
        instance_boxes(&self.points, &self.indicator, self.instance_count)
    }
}

impl GeneratedGraph {
    pub fn to_document(&self, rules: &RuleSet) -> SceneDocument {
        SceneDocument {
            nodes: Some(node_names(&self.graph, rules)),
            edges: edge_names(&self.graph, rules),
            room_function: self.room_function.clone(),
            room_volume: self.room_volume,
            generated_from: self.generated_from.clone(),
            existing_count: Some(self.existing_count),
            boxes: self.boxes.clone(),
            ..SceneDocument::default()
        }
    }

    pub fn from_document(doc: SceneDocument, rules: &RuleSet) -> Result<Self> {
        let nodes = doc.nodes.as_ref().ok_or_else(|| Error::data("missing field \"nodes\""))?;
        let graph = resolve_graph(nodes, &doc.edges, rules)?;
        let existing_count = doc.existing_count.unwrap_or(graph.node_count());
        if existing_count > graph.node_count() {
            return Err(Error::data(format!(
                "existing_count {existing_count} exceeds node count {}",
                graph.node_count()
            )));
        }
        Ok(Self {
            graph,
            existing_count,
            room_function: doc.room_function,
            room_volume: doc.room_volume,
            generated_from: doc.generated_from,
            boxes: doc.boxes,
        })
    }
}

pub fn parse_document(text: &str, context: &str) -> Result<SceneDocument> {
    serde_json::from_str(text).map_err(|source| Error::Json {
        context: context.to_string(),
        source,
    })
}

fn read_document(path: &Path) -> Result<SceneDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_document(&text, &path.display().to_string())
}

fn write_document(doc: &SceneDocument, path: &Path) -> Result<()> {
    let text = serde_json::to_string(doc).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn load_scene(path: impl AsRef<Path>, rules: &RuleSet) -> Result<SceneRecord> {
    let path = path.as_ref();
    with_path(path, SceneRecord::from_document(read_document(path)?, rules))
}

pub fn save_scene(record: &SceneRecord, rules: &RuleSet, path: impl AsRef<Path>) -> Result<()> {
    write_document(&record.to_document(rules), path.as_ref())
}

pub fn load_room(path: impl AsRef<Path>, rules: &RuleSet) -> Result<Room> {
    let path = path.as_ref();
    with_path(path, Room::from_document(read_document(path)?, rules))
}

pub fn load_generated(path: impl AsRef<Path>, rules: &RuleSet) -> Result<GeneratedGraph> {
    let path = path.as_ref();
    with_path(path, GeneratedGraph::from_document(read_document(path)?, rules))
}

pub fn save_generated(graph: &GeneratedGraph, rules: &RuleSet, path: impl AsRef<Path>) -> Result<()> {
    write_document(&graph.to_document(rules), path.as_ref())
}

fn node_names(graph: &SceneGraph, rules: &RuleSet) -> Vec<String> {
    graph.labels().iter().map(|&l| rules.object_name(l).to_string()).collect()
}

fn edge_names(graph: &SceneGraph, rules: &RuleSet) -> Vec<(usize, usize, String)> {
    graph
        .edges()
        .into_iter()
        .map(|(i, j, r)| (i, j, rules.relation_name(r).to_string()))
        .collect()
}

fn resolve_graph(nodes: &[String], edges: &[(usize, usize, String)], rules: &RuleSet) -> Result<SceneGraph> {
    let labels = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            rules
                .object_id(n)
                .ok_or_else(|| Error::data(format!("nodes[{i}]: undeclared object class {n:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut graph = SceneGraph::with_nodes(labels);
    for (k, (i, j, r)) in edges.iter().enumerate() {
        let rel = rules
            .relation_id(r)
            .ok_or_else(|| Error::data(format!("edges[{k}]: undeclared relation class {r:?}")))?;
        if i == j {
            return Err(Error::data(format!("edges[{k}]: self-relation on node {i}")));
        }
        graph
            .set_edge(*i, *j, rel)
            .map_err(|e| Error::data(format!("edges[{k}]: {e}")))?;
    }
    Ok(graph)
}

fn points_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() < 3) {
        return Err(Error::data(format!("points[{i}]: expected at least 3 channels, got {}", r.len())));
    }
    let width = rows.first().map_or(3, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::data(format!("points[{i}]: expected {width} channels, got {}", r.len())));
    }
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, 3]));
    }
    Tensor::from_rows(rows)
}

fn check_points(points: &Tensor, indicator: &[usize], m: usize) -> Result<()> {
    if indicator.len() != points.rows() {
        return Err(Error::data(format!(
            "indicator has {} entries for {} points",
            indicator.len(),
            points.rows()
        )));
    }
    let mut seen = vec![false; m];
    for (p, &k) in indicator.iter().enumerate() {
        if k >= m {
            return Err(Error::data(format!("indicator[{p}]: instance id {k} outside [0, {m})")));
        }
        seen[k] = true;
    }
    let missing: Vec<usize> = (0..m).filter(|&k| !seen[k]).collect();
    if !missing.is_empty() {
        return Err(Error::data(format!("indicator: instances without points: {missing:?}")));
    }
    if !points.is_finite() {
        return Err(Error::data("points: non-finite coordinate"));
    }
    Ok(())
}

fn resolve_volume(points: &Tensor, given: Option<f64>) -> Result<f64> {
    let v = match given {
        Some(v) => v,
        None => room_box(points).volume(),
    };
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::data(format!("room_volume: must be positive, got {v}")));
    }
    Ok(v)
}

fn room_box(points: &Tensor) -> Aabb {
    Aabb::of_points((0..points.rows()).map(|i| points.row_slice(i))).unwrap_or(Aabb {
        min: [0.0; 3],
        max: [0.0; 3],
    })
}

fn instance_boxes(points: &Tensor, indicator: &[usize], m: usize) -> Vec<Aabb> {
    (0..m)
        .map(|k| {
            let rows = indicator
                .iter()
                .enumerate()
                .filter(|(_, &id)| id == k)
                .map(|(p, _)| points.row_slice(p));
            Aabb::of_points(rows).unwrap_or(Aabb {
                min: [0.0; 3],
                max: [0.0; 3],
            })
        })
        .collect()
}
