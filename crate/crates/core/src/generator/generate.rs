//! The sampling loop: a node, then its relations to every existing node,
//! until a new node ends up with no relation at all.

use std::io::Write;
use std::path::Path;

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::placement::{place_box, support_for};
use super::space::{check_space, extents_for, sample_volume, SpaceVerdict};
use crate::condition::Conditioner;
use crate::error::{Error, Result};
use crate::flow::Gaussian;
use crate::model::ModelParams;
use crate::repr::represent;
use crate::scene::{Aabb, GeneratedGraph, PlacedBox, Room, RuleSet, SceneGraph, EMPTY_RELATION};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticMode {
    #[default]
    None,
    /// Generated nodes must not be architectural; relations must be valid triples.
    FurnitureOnly,
    /// As `FurnitureOnly`, and nodes must also be allowed in the room's function.
    RoomFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
    pub semantic_mode: SemanticMode,
    pub space_constraint: bool,
    pub anti_overlap: bool,
    pub max_nodes: usize,
    pub max_retries: usize,
    pub graphs_per_scene: usize,
    pub seed: u64,
    /// Scale of the sampled `eps`.
    pub temperature: f64,
    /// Accepts `alpha >= 1`, where dequantization noise can move the argmax.
    pub allow_lossy_alpha: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            lambda: 0.8,
            beta: 1.2,
            semantic_mode: SemanticMode::None,
            space_constraint: false,
            anti_overlap: false,
            max_nodes: 50,
            max_retries: 25,
            graphs_per_scene: 5,
            seed: 0,
            temperature: 1.0,
            allow_lossy_alpha: false,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= self.beta) {
            return Err(Error::invalid(format!(
                "volume weights must satisfy 0 < lambda <= beta, got lambda={} beta={}",
                self.lambda, self.beta
            )));
        }
        if !(self.alpha >= 0.0) || (self.alpha >= 1.0 && !self.allow_lossy_alpha) {
            return Err(Error::invalid(format!(
                "alpha={} must lie in [0, 1) unless lossy dequantization is explicitly allowed",
                self.alpha
            )));
        }
        if self.max_nodes == 0 || self.max_retries == 0 || self.graphs_per_scene == 0 {
            return Err(Error::invalid("max_nodes, max_retries and graphs_per_scene must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Node,
    Edge,
    Placement,
    Space,
    Stop,
}

/// One line of the provenance log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: usize,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<usize>,
    #[serde(default)]
    pub sampled_eps: Vec<f64>,
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub sigma: Vec<f64>,
    pub argmax: Option<usize>,
    pub accepted: bool,
    pub reason: String,
}

impl Event {
    fn note(step: usize, kind: EventKind, accepted: bool, reason: impl Into<String>) -> Self {
        Self {
            step,
            kind,
            subject: None,
            object: None,
            sampled_eps: Vec::new(),
            mu: Vec::new(),
            sigma: Vec::new(),
            argmax: None,
            accepted,
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The last sampled node had only empty relations and was removed.
    AllEdgesEmpty,
    MaxNodes,
    SpaceBudget,
    RetriesExhausted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub graph: GeneratedGraph,
    pub events: Vec<Event>,
    pub stop: StopReason,
}

impl Generation {
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for e in &self.events {
            let line = serde_json::to_string(e).map_err(|source| Error::Json {
                context: path.display().to_string(),
                source,
            })?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Ground-truth labels when the room carries them, otherwise the argmax of
/// the predicted representation.
pub fn seed_graph(room: &Room, model: &ModelParams) -> Result<SceneGraph> {
    match &room.graph {
        Some(g) => Ok(g.clone()),
        None => Ok(represent(model, &room.points, &room.indicator, room.instance_count)?.to_graph()),
    }
}

fn sample_eps<R: Rng + ?Sized>(d: usize, temperature: f64, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| temperature * rng.sample::<f64, _>(StandardNormal)).collect()
}

struct Sampled {
    eps: Vec<f64>,
    gaussian: Gaussian,
    class: usize,
}

fn draw<R: Rng + ?Sized>(gaussian: Gaussian, temperature: f64, rng: &mut R) -> Result<Sampled> {
    let eps = sample_eps(gaussian.dim(), temperature, rng);
    let (_, class) = gaussian.sample_class(&eps)?;
    Ok(Sampled { eps, gaussian, class })
}

fn sample_event(step: usize, kind: EventKind, s: &Sampled, accepted: bool, reason: impl Into<String>) -> Event {
    Event {
        sampled_eps: s.eps.clone(),
        mu: s.gaussian.mu.clone(),
        sigma: s.gaussian.sigma.clone(),
        argmax: Some(s.class),
        ..Event::note(step, kind, accepted, reason)
    }
}

fn node_rejection(class: usize, room_function: &str, rules: &RuleSet, mode: SemanticMode) -> Option<String> {
    if mode == SemanticMode::None {
        return None;
    }
    if rules.is_architectural(class) {
        return Some(format!("{} is architectural", rules.object_name(class)));
    }
    if mode == SemanticMode::RoomFunction && rules.allowed_in_room(room_function, class) == Some(false) {
        return Some(format!("{} is not allowed in a {room_function}", rules.object_name(class)));
    }
    None
}

/// Extends `seed` node by node. The seed's nodes are matched to the room's
/// instances by index; their point boxes count as occupied space when
/// anti-overlap is on.
pub fn generate<R: Rng + ?Sized>(
    room: &Room,
    seed: &SceneGraph,
    model: &ModelParams,
    rules: &RuleSet,
    config: &GenerationConfig,
    rng: &mut R,
) -> Result<Generation> {
    config.validate()?;
    seed.check_labels(rules.node_classes(), rules.edge_classes())?;
    if model.arch.node_classes != rules.node_classes() || model.arch.edge_classes != rules.edge_classes() {
        return Err(Error::data(format!(
            "model label space ({} objects, {} relations) does not match the rules ({}, {})",
            model.arch.node_classes,
            model.arch.edge_classes,
            rules.node_classes(),
            rules.edge_classes()
        )));
    }
    let existing = seed.node_count();
    if existing == 0 {
        return Err(Error::data("seed graph has no nodes"));
    }
    let (room_box, mut boxes) = if config.anti_overlap {
        if room.points.rows() == 0 {
            return Err(Error::data("anti-overlap needs the room's points to bound the room"));
        }
        let b: Vec<Option<Aabb>> = room.instance_boxes().into_iter().map(Some).collect();
        if b.len() != existing {
            return Err(Error::data(format!("seed has {existing} nodes but the room has {} instances", b.len())));
        }
        (Some(room.room_box()), b)
    } else {
        (None, vec![None; existing])
    };

    let conditioner = Conditioner::new(model);
    let mut graph = seed.clone();
    let mut state = conditioner.embed(&graph)?;
    let mut events = Vec::new();
    let mut volumes: Vec<f64> = Vec::new();
    let mut placed: Vec<PlacedBox> = Vec::new();
    let mut committed = 0;
    let mut retries = 0;
    let mut step = 0;

    let stop = loop {
        if committed == config.max_nodes {
            break StopReason::MaxNodes;
        }
        if retries == config.max_retries {
            if committed == 0 {
                return Err(Error::Unsatisfiable(format!(
                    "no acceptable first node after {} attempts",
                    config.max_retries
                )));
            }
            break StopReason::RetriesExhausted;
        }
        let node = draw(conditioner.node(&state)?, config.temperature, rng)?;
        if let Some(reason) = node_rejection(node.class, &room.room_function, rules, config.semantic_mode) {
            events.push(sample_event(step, EventKind::Node, &node, false, reason));
            step += 1;
            retries += 1;
            continue;
        }
        events.push(sample_event(step, EventKind::Node, &node, true, "sampled"));
        step += 1;
        let k = graph.push_node(node.class);
        state = conditioner.embed(&graph)?;

        let mut any = false;
        for i in 0..k {
            let edge = draw(conditioner.edge(&state, k, i)?, config.temperature, rng)?;
            let mut relation = edge.class;
            let mut reason = String::from("sampled");
            if relation != EMPTY_RELATION
                && config.semantic_mode != SemanticMode::None
                && !rules.is_valid_triple(node.class, relation, graph.label(i))
            {
                reason = format!(
                    "({}, {}, {}) is not a valid triple; set to empty",
                    rules.object_name(node.class),
                    rules.relation_name(relation),
                    rules.object_name(graph.label(i))
                );
                relation = EMPTY_RELATION;
            }
            events.push(Event {
                subject: Some(k),
                object: Some(i),
                ..sample_event(step, EventKind::Edge, &edge, relation != EMPTY_RELATION, reason)
            });
            step += 1;
            if relation != EMPTY_RELATION {
                graph.set_edge(k, i, relation)?;
                state = conditioner.embed(&graph)?;
                any = true;
            }
        }
        if !any {
            graph.pop_node();
            events.push(Event::note(step, EventKind::Stop, false, "every relation of the new node is empty"));
            break StopReason::AllEdgesEmpty;
        }

        let mut volume = None;
        if let Some(room_box) = &room_box {
            let v = sample_volume(node.class, rules, rng);
            let extents = extents_for(v, node.class, rules);
            let support = support_for(&graph, k, &boxes, rules, room_box);
            let occupied: Vec<Aabb> = boxes.iter().flatten().copied().collect();
            match place_box(extents, &support, room_box, &occupied, config.max_retries, rng) {
                Some(b) => {
                    events.push(Event::note(step, EventKind::Placement, true, format!("{support:?}")));
                    boxes.push(Some(b));
                    volume = Some(b.volume());
                }
                None => {
                    events.push(Event::note(step, EventKind::Placement, false, "no free pose; node abandoned"));
                    step += 1;
                    graph.pop_node();
                    state = conditioner.embed(&graph)?;
                    retries += 1;
                    continue;
                }
            }
            step += 1;
        }
        if config.space_constraint {
            let v = volume.unwrap_or_else(|| sample_volume(node.class, rules, rng));
            volumes.push(v);
            if check_space(&volumes, room.room_volume, rules, config.lambda, config.beta)? == SpaceVerdict::Over {
                volumes.pop();
                if room_box.is_some() {
                    boxes.pop();
                }
                graph.pop_node();
                events.push(Event::note(step, EventKind::Space, false, "volume budget exceeded; node rolled back"));
                break StopReason::SpaceBudget;
            }
        }
        if let Some(Some(b)) = boxes.get(k) {
            placed.push(PlacedBox {
                node: k,
                min: b.min,
                max: b.max,
            });
        }
        committed += 1;
        retries = 0;
    };

    if config.space_constraint
        && stop == StopReason::AllEdgesEmpty
        && check_space(&volumes, room.room_volume, rules, config.lambda, config.beta)? == SpaceVerdict::Under
    {
        warn!("generation stopped below the lower volume bound");
        events.push(Event::note(step, EventKind::Space, true, "stopped below the lower volume bound"));
    }
    events.push(Event::note(step, EventKind::Stop, true, format!("{stop:?}")));
    Ok(Generation {
        graph: GeneratedGraph {
            graph,
            existing_count: existing,
            room_function: room.room_function.clone(),
            room_volume: Some(room.room_volume),
            generated_from: None,
            boxes: placed,
        },
        events,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::Architecture;
    use crate::scene::{synth_corpus, GrammarConfig, SceneRecord};

    fn setup() -> (RuleSet, ModelParams, Vec<SceneRecord>) {
        let cfg = GrammarConfig::default();
        let rules = cfg.rules().unwrap();
        let model = ModelParams::init(
            Architecture::new(6, rules.node_classes(), rules.edge_classes()),
            rules.label_checksum(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let scenes = synth_corpus(&cfg, 4, 9).unwrap();
        (rules, model, scenes)
    }

    fn empty_room(s: &SceneRecord, rules: &RuleSet) -> Room {
        s.strip_to_architecture(rules).to_room()
    }

    #[test]
    fn config_validation() {
        assert!(GenerationConfig::default().validate().is_ok());
        let bad = [
            GenerationConfig { lambda: 1.3, ..Default::default() },
            GenerationConfig { lambda: 0.0, ..Default::default() },
            GenerationConfig { alpha: 1.2, ..Default::default() },
            GenerationConfig { max_nodes: 0, ..Default::default() },
            GenerationConfig { max_retries: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert!(GenerationConfig { alpha: 1.2, allow_lossy_alpha: true, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn seeded_runs_replay_and_respect_contract() {
        let (rules, model, scenes) = setup();
        for (n, s) in scenes.iter().enumerate() {
            let room = empty_room(s, &rules);
            let seed = seed_graph(&room, &model).unwrap();
            for mode in [SemanticMode::None, SemanticMode::RoomFunction] {
                let cfg = GenerationConfig {
                    semantic_mode: mode,
                    anti_overlap: mode != SemanticMode::None,
                    space_constraint: mode != SemanticMode::None,
                    max_nodes: 8,
                    ..Default::default()
                };
                let run = |x| generate(&room, &seed, &model, &rules, &cfg, &mut ChaCha8Rng::seed_from_u64(x));
                let (a, b) = (run(n as u64), run(n as u64));
                let a = match a {
                    Ok(a) => a,
                    Err(Error::Unsatisfiable(_)) => continue,
                    Err(e) => panic!("{e}"),
                };
                assert_eq!(a, b.unwrap());
                let g = &a.graph;
                assert_eq!(g.graph.prefix(g.existing_count), seed);
                assert!(g.generated_nodes().len() <= cfg.max_nodes);
                for k in g.generated_nodes() {
                    assert!(!g.graph.neighbors(k).is_empty());
                    if mode != SemanticMode::None {
                        assert!(!rules.is_architectural(g.graph.label(k)));
                        assert_eq!(rules.allowed_in_room(&g.room_function, g.graph.label(k)), Some(true));
                    }
                }
                if mode != SemanticMode::None {
                    for (i, j, r) in g.generated_edges() {
                        assert!(rules.is_valid_triple(g.graph.label(i), r, g.graph.label(j)));
                    }
                    let mut all: Vec<Aabb> = room.instance_boxes();
                    all.extend(g.boxes.iter().map(|b| b.aabb()));
                    for (x, bx) in g.boxes.iter().enumerate() {
                        for (y, by) in all.iter().enumerate() {
                            assert!(y == x + g.existing_count || !bx.aabb().intersects(by));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn forbidden_room_is_unsatisfiable() {
        let cfg = GrammarConfig::default();
        let mut doc = cfg.rules().unwrap().document().clone();
        for allowed in doc.room_allowed.values_mut() {
            allowed.clear();
        }
        let rules = RuleSet::from_document(doc).unwrap();
        let (_, model, scenes) = setup();
        let room = empty_room(&scenes[0], &rules);
        let seed = seed_graph(&room, &model).unwrap();
        let gc = GenerationConfig {
            semantic_mode: SemanticMode::RoomFunction,
            ..Default::default()
        };
        let err = generate(&room, &seed, &model, &rules, &gc, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Unsatisfiable(_)));
    }
}
