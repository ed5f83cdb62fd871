//! Grammar-based sampler of furnished rooms.
//!
//! A room is a box shell (four walls, floor, ceiling) furnished with a handful
//! of objects. Each object is anchored to the floor, a wall, the ceiling or an
//! earlier object by one relation from its support rules; floor-standing
//! objects placed near each other are additionally linked by the proximity
//! relation. The relation always points from the newer object to the older
//! one, and every emitted triple is listed by [`GrammarConfig::rules`].

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::Aabb;
use super::graph::SceneGraph;
use super::record::SceneRecord;
use super::rules::{RuleSet, RuleSetDocument, VolumeStat};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "targets")]
pub enum Anchor {
    Floor,
    Wall,
    Ceiling,
    On(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportRule {
    pub relation: String,
    pub anchor: Anchor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FurnitureSpec {
    /// Nominal width, depth, height in meters; depth faces the wall for
    /// wall-mounted objects.
    pub extents: [f64; 3],
    pub supports: Vec<SupportRule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub object_classes: Vec<String>,
    pub relation_classes: Vec<String>,
    pub architectural: Vec<String>,
    pub wall_class: String,
    pub floor_class: String,
    pub ceiling_class: String,
    pub shell_relation: String,
    pub proximity_relation: String,
    /// Floor objects closer than this (meters) are linked by the proximity relation.
    pub proximity_distance: f64,
    pub room_width: [f64; 2],
    pub room_depth: [f64; 2],
    pub room_height: [f64; 2],
    pub wall_thickness: f64,
    /// Inclusive range of furniture objects per room.
    pub furniture_count: [usize; 2],
    /// Optional cap on all instances (shell included).
    #[serde(default)]
    pub max_instances: Option<usize>,
    pub points_per_instance: usize,
    /// Per-axis size factors are drawn from `[1 - jitter, 1 + jitter]`.
    pub size_jitter: f64,
    pub color_noise: f64,
    /// Room function -> furniture class -> sampling weight.
    pub rooms: BTreeMap<String, BTreeMap<String, f64>>,
    pub furniture: BTreeMap<String, FurnitureSpec>,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn rule(relation: &str, anchor: Anchor) -> SupportRule {
    SupportRule {
        relation: relation.to_string(),
        anchor,
    }
}

fn on(targets: &[&str]) -> Anchor {
    Anchor::On(names(targets))
}

impl Default for GrammarConfig {
    fn default() -> Self {
        let object_classes = names(&[
            "wall", "floor", "ceiling", "door", "window", "chair", "table", "sofa", "bed", "cabinet", "shelf", "desk",
            "lamp", "tv", "plant", "pillow", "box", "sink", "toilet", "bathtub", "towel", "mirror", "picture",
            "curtain", "stool", "counter", "clothes",
        ]);
        let relation_classes = names(&[
            "empty",
            "supported by",
            "attached to",
            "standing on",
            "lying on",
            "hanging on",
            "connected to",
            "leaning against",
            "part of",
            "belonging to",
            "build in",
            "standing in",
            "cover",
            "lying in",
            "hanging in",
            "close by",
            "same as",
        ]);
        let floor = || rule("standing on", Anchor::Floor);
        let wall = |rel: &str| rule(rel, Anchor::Wall);
        let f = |extents: [f64; 3], supports: Vec<SupportRule>| FurnitureSpec { extents, supports };
        let furniture = BTreeMap::from([
            ("chair".to_string(), f([0.5, 0.5, 0.9], vec![floor()])),
            ("table".to_string(), f([1.2, 0.8, 0.75], vec![floor()])),
            ("sofa".to_string(), f([2.0, 0.9, 0.85], vec![floor()])),
            ("bed".to_string(), f([2.0, 1.6, 0.55], vec![floor()])),
            ("cabinet".to_string(), f([0.8, 0.5, 1.2], vec![floor()])),
            ("shelf".to_string(), f([0.9, 0.35, 1.8], vec![floor()])),
            ("desk".to_string(), f([1.4, 0.7, 0.75], vec![floor()])),
            (
                "lamp".to_string(),
                f(
                    [0.3, 0.3, 0.5],
                    vec![rule("standing on", on(&["table", "desk", "cabinet"])), rule("attached to", Anchor::Ceiling)],
                ),
            ),
            (
                "tv".to_string(),
                f([1.0, 0.1, 0.6], vec![wall("hanging on"), rule("standing on", on(&["cabinet"]))]),
            ),
            (
                "plant".to_string(),
                f([0.4, 0.4, 0.8], vec![floor(), rule("standing on", on(&["table"]))]),
            ),
            (
                "pillow".to_string(),
                f([0.5, 0.35, 0.15], vec![rule("lying on", on(&["bed", "sofa"]))]),
            ),
            (
                "box".to_string(),
                f([0.4, 0.3, 0.3], vec![floor(), rule("standing on", on(&["shelf", "table"]))]),
            ),
            (
                "sink".to_string(),
                f([0.6, 0.45, 0.3], vec![wall("attached to"), rule("build in", on(&["counter"]))]),
            ),
            ("toilet".to_string(), f([0.4, 0.65, 0.8], vec![floor()])),
            ("bathtub".to_string(), f([1.7, 0.75, 0.6], vec![floor()])),
            ("towel".to_string(), f([0.5, 0.05, 0.8], vec![wall("hanging on")])),
            ("mirror".to_string(), f([0.6, 0.05, 0.8], vec![wall("hanging on")])),
            ("picture".to_string(), f([0.8, 0.05, 0.6], vec![wall("hanging on")])),
            ("curtain".to_string(), f([1.5, 0.1, 1.9], vec![wall("hanging on")])),
            ("stool".to_string(), f([0.4, 0.4, 0.6], vec![floor()])),
            ("counter".to_string(), f([1.8, 0.6, 0.9], vec![floor()])),
            (
                "clothes".to_string(),
                f([0.5, 0.4, 0.1], vec![rule("lying on", on(&["bed", "chair", "sofa"]))]),
            ),
        ]);
        let menu = |items: &[(&str, f64)]| -> BTreeMap<String, f64> {
            items.iter().map(|(c, w)| (c.to_string(), *w)).collect()
        };
        let rooms = BTreeMap::from([
            (
                "living room".to_string(),
                menu(&[
                    ("sofa", 4.0),
                    ("table", 3.0),
                    ("chair", 3.0),
                    ("tv", 2.0),
                    ("lamp", 2.0),
                    ("plant", 2.0),
                    ("pillow", 2.0),
                    ("picture", 2.0),
                    ("shelf", 1.5),
                    ("curtain", 1.5),
                    ("cabinet", 1.0),
                    ("box", 1.0),
                    ("desk", 0.5),
                    ("stool", 0.5),
                    ("mirror", 0.5),
                    ("clothes", 0.3),
                ]),
            ),
            (
                "bedroom".to_string(),
                menu(&[
                    ("bed", 4.0),
                    ("pillow", 3.0),
                    ("cabinet", 2.0),
                    ("lamp", 2.0),
                    ("clothes", 2.0),
                    ("chair", 1.5),
                    ("curtain", 1.5),
                    ("picture", 1.0),
                    ("shelf", 1.0),
                    ("plant", 1.0),
                    ("mirror", 1.0),
                    ("desk", 1.0),
                    ("table", 1.0),
                    ("box", 1.0),
                    ("tv", 0.5),
                    ("sofa", 0.5),
                ]),
            ),
            (
                "office".to_string(),
                menu(&[
                    ("desk", 4.0),
                    ("chair", 3.0),
                    ("shelf", 2.0),
                    ("lamp", 2.0),
                    ("cabinet", 2.0),
                    ("box", 2.0),
                    ("plant", 1.5),
                    ("table", 1.5),
                    ("picture", 1.0),
                    ("curtain", 1.0),
                    ("sofa", 0.5),
                    ("tv", 0.5),
                    ("stool", 0.3),
                    ("mirror", 0.3),
                ]),
            ),
            (
                "kitchen".to_string(),
                menu(&[
                    ("counter", 4.0),
                    ("sink", 3.0),
                    ("table", 2.5),
                    ("chair", 2.5),
                    ("stool", 2.0),
                    ("cabinet", 2.0),
                    ("lamp", 1.0),
                    ("plant", 1.0),
                    ("box", 1.0),
                    ("shelf", 1.0),
                    ("picture", 0.5),
                    ("curtain", 0.5),
                    ("towel", 0.5),
                    ("tv", 0.3),
                ]),
            ),
            (
                "bathroom".to_string(),
                menu(&[
                    ("toilet", 3.0),
                    ("sink", 3.0),
                    ("bathtub", 2.0),
                    ("towel", 2.5),
                    ("mirror", 2.5),
                    ("cabinet", 1.5),
                    ("shelf", 1.0),
                    ("lamp", 1.0),
                    ("box", 1.0),
                    ("plant", 0.5),
                    ("stool", 0.5),
                    ("counter", 0.5),
                    ("clothes", 0.5),
                    ("curtain", 0.5),
                    ("picture", 0.3),
                ]),
            ),
        ]);
        Self {
            object_classes,
            relation_classes,
            architectural: names(&["wall", "floor", "ceiling", "door", "window"]),
            wall_class: "wall".into(),
            floor_class: "floor".into(),
            ceiling_class: "ceiling".into(),
            shell_relation: "attached to".into(),
            proximity_relation: "close by".into(),
            proximity_distance: 0.4,
            room_width: [3.0, 6.0],
            room_depth: [3.0, 6.0],
            room_height: [2.4, 3.0],
            wall_thickness: 0.1,
            furniture_count: [2, 8],
            max_instances: None,
            points_per_instance: 64,
            size_jitter: 0.2,
            color_noise: 0.03,
            rooms,
            furniture,
        }
    }
}

/// Object layout of one sampled room, before point sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub room_function: String,
    /// Interior width, depth, height; the interior spans `[0, dims]`.
    pub dims: [f64; 3],
    pub labels: Vec<usize>,
    pub boxes: Vec<Aabb>,
    pub edges: Vec<(usize, usize, usize)>,
    pub furniture_volume: f64,
}

impl Layout {
    pub fn shell_box(&self, t: f64) -> Aabb {
        Aabb {
            min: [-t, -t, -t],
            max: [self.dims[0] + t, self.dims[1] + t, self.dims[2] + t],
        }
    }
}

const SHELL_NODES: usize = 6;
const FLOOR: usize = 0;
const CEILING: usize = 1;
const WALLS: std::ops::Range<usize> = 2..6;
const PLACEMENT_TRIES: usize = 30;
const SLOT_TRIES: usize = 30;

struct Resolved<'a> {
    cfg: &'a GrammarConfig,
    class: BTreeMap<&'a str, usize>,
    relation: BTreeMap<&'a str, usize>,
}

impl<'a> Resolved<'a> {
    fn new(cfg: &'a GrammarConfig) -> Result<Self> {
        let class: BTreeMap<&str, usize> = cfg.object_classes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let relation: BTreeMap<&str, usize> =
            cfg.relation_classes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let r = Self { cfg, class, relation };
        r.validate()?;
        Ok(r)
    }

    fn class_id(&self, name: &str) -> Result<usize> {
        self.class
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("grammar: undeclared object class {name:?}")))
    }

    fn relation_id(&self, name: &str) -> Result<usize> {
        match self.relation.get(name) {
            Some(0) => Err(Error::invalid(format!("grammar: relation {name:?} is the empty class"))),
            Some(&r) => Ok(r),
            None => Err(Error::invalid(format!("grammar: undeclared relation class {name:?}"))),
        }
    }

    fn validate(&self) -> Result<()> {
        let cfg = self.cfg;
        if cfg.rooms.is_empty() {
            return Err(Error::invalid("grammar: no room functions declared"));
        }
        for (room, menu) in &cfg.rooms {
            if !menu.values().any(|w| *w > 0.0) {
                return Err(Error::invalid(format!("grammar: empty furniture menu for {room:?}")));
            }
            for class in menu.keys() {
                self.class_id(class)?;
                if !cfg.furniture.contains_key(class) {
                    return Err(Error::invalid(format!("grammar: no furniture spec for {class:?}")));
                }
            }
        }
        for (class, spec) in &cfg.furniture {
            self.class_id(class)?;
            if spec.supports.is_empty() {
                return Err(Error::invalid(format!("grammar: {class:?} has no support rules")));
            }
            for s in &spec.supports {
                self.relation_id(&s.relation)?;
                if let Anchor::On(targets) = &s.anchor {
                    for t in targets {
                        self.class_id(t)?;
                    }
                }
            }
        }
        for n in [&cfg.wall_class, &cfg.floor_class, &cfg.ceiling_class] {
            self.class_id(n)?;
        }
        for n in &cfg.architectural {
            self.class_id(n)?;
        }
        self.relation_id(&cfg.shell_relation)?;
        self.relation_id(&cfg.proximity_relation)?;
        if cfg.relation_classes.first().map(String::as_str) != Some("empty") {
            return Err(Error::invalid("grammar: relation_classes[0] must be \"empty\""));
        }
        if cfg.furniture_count[0] > cfg.furniture_count[1] {
            return Err(Error::invalid("grammar: furniture_count range is reversed"));
        }
        if let Some(cap) = cfg.max_instances {
            if cap < SHELL_NODES + cfg.furniture_count[0] {
                return Err(Error::invalid(format!(
                    "grammar: max_instances {cap} leaves no room for {} furniture objects",
                    cfg.furniture_count[0]
                )));
            }
        }
        if cfg.points_per_instance < 64 {
            return Err(Error::invalid("grammar: points_per_instance must be at least 64"));
        }
        for (name, r) in [("room_width", cfg.room_width), ("room_depth", cfg.room_depth), ("room_height", cfg.room_height)] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return Err(Error::invalid(format!("grammar: invalid {name} range")));
            }
        }
        if !(0.0..1.0).contains(&cfg.size_jitter) {
            return Err(Error::invalid("grammar: size_jitter must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn is_floor_standing(spec: &FurnitureSpec) -> bool {
    spec.supports.iter().any(|s| s.anchor == Anchor::Floor)
}

impl GrammarConfig {
    /// Rule set consistent with everything this grammar can emit.
    pub fn rules(&self) -> Result<RuleSet> {
        let res = Resolved::new(self)?;
        let mut triples = Vec::new();
        let mut push = |s: &str, r: &str, o: &str| {
            let t = (s.to_string(), r.to_string(), o.to_string());
            if !triples.contains(&t) {
                triples.push(t);
            }
        };
        push(&self.wall_class, &self.shell_relation, &self.floor_class);
        push(&self.wall_class, &self.shell_relation, &self.ceiling_class);
        for (class, spec) in &self.furniture {
            for s in &spec.supports {
                match &s.anchor {
                    Anchor::Floor => push(class, &s.relation, &self.floor_class),
                    Anchor::Wall => push(class, &s.relation, &self.wall_class),
                    Anchor::Ceiling => push(class, &s.relation, &self.ceiling_class),
                    Anchor::On(targets) => targets.iter().for_each(|t| push(class, &s.relation, t)),
                }
            }
        }
        let standing: Vec<&String> = self.furniture.iter().filter(|(_, s)| is_floor_standing(s)).map(|(c, _)| c).collect();
        for a in &standing {
            for b in &standing {
                push(a, &self.proximity_relation, b);
            }
        }

        let room_allowed = self
            .rooms
            .iter()
            .map(|(room, menu)| {
                let classes = menu.iter().filter(|(_, w)| **w > 0.0).map(|(c, _)| c.clone()).collect();
                (room.clone(), classes)
            })
            .collect();
        let j = self.size_jitter;
        let second_moment = 1.0 + j * j / 3.0;
        let rel_std = (second_moment.powi(3) - 1.0).sqrt().max(1e-3);
        let mut volume_stats = BTreeMap::new();
        let mut aspect_ratios = BTreeMap::new();
        for (class, spec) in &self.furniture {
            let v: f64 = spec.extents.iter().product();
            volume_stats.insert(class.clone(), VolumeStat { mean: v, std: v * rel_std });
            let side = v.cbrt();
            aspect_ratios.insert(class.clone(), spec.extents.map(|e| e / side));
        }

        // Mean furniture-to-room volume ratio of this grammar, estimated from
        // a fixed sample of layouts.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
        let samples = 400;
        let mut total = 0.0;
        for _ in 0..samples {
            let layout = sample_layout_resolved(&res, &mut rng)?;
            total += layout.furniture_volume / layout.shell_box(self.wall_thickness).volume();
        }

        RuleSet::from_document(RuleSetDocument {
            object_classes: self.object_classes.clone(),
            relation_classes: self.relation_classes.clone(),
            valid_triples: triples,
            room_allowed,
            volume_stats,
            architectural: self.architectural.clone(),
            volume_ratio_mean: total / samples as f64,
            aspect_ratios,
        })
    }
}

pub fn sample_layout<R: Rng + ?Sized>(cfg: &GrammarConfig, rng: &mut R) -> Result<Layout> {
    sample_layout_resolved(&Resolved::new(cfg)?, rng)
}

fn sample_layout_resolved<R: Rng + ?Sized>(res: &Resolved, rng: &mut R) -> Result<Layout> {
    const LAYOUT_TRIES: usize = 100;
    for _ in 0..LAYOUT_TRIES {
        let layout = try_layout(res, rng)?;
        if layout.labels.len() - SHELL_NODES >= res.cfg.furniture_count[0] {
            return Ok(layout);
        }
    }
    Err(Error::invalid(format!(
        "grammar: could not place {} furniture objects in {LAYOUT_TRIES} rooms",
        res.cfg.furniture_count[0]
    )))
}

fn try_layout<R: Rng + ?Sized>(res: &Resolved, rng: &mut R) -> Result<Layout> {
    let cfg = res.cfg;
    let rooms: Vec<&String> = cfg.rooms.keys().collect();
    let room_function = (*rooms.choose(rng).expect("validated non-empty")).clone();
    let dims = [
        rng.gen_range(cfg.room_width[0]..=cfg.room_width[1]),
        rng.gen_range(cfg.room_depth[0]..=cfg.room_depth[1]),
        rng.gen_range(cfg.room_height[0]..=cfg.room_height[1]),
    ];
    let [w, d, h] = dims;
    let t = cfg.wall_thickness;
    let wall = res.class_id(&cfg.wall_class)?;
    let floor = res.class_id(&cfg.floor_class)?;
    let ceiling = res.class_id(&cfg.ceiling_class)?;
    let shell_rel = res.relation_id(&cfg.shell_relation)?;
    let proximity = res.relation_id(&cfg.proximity_relation)?;

    let mut labels = vec![floor, ceiling, wall, wall, wall, wall];
    let mut boxes = vec![
        Aabb { min: [-t, -t, -t], max: [w + t, d + t, 0.0] },
        Aabb { min: [-t, -t, h], max: [w + t, d + t, h + t] },
        Aabb { min: [-t, -t, 0.0], max: [w + t, 0.0, h] },
        Aabb { min: [-t, d, 0.0], max: [w + t, d + t, h] },
        Aabb { min: [-t, 0.0, 0.0], max: [0.0, d, h] },
        Aabb { min: [w, 0.0, 0.0], max: [w + t, d, h] },
    ];
    let mut edges = Vec::new();
    for k in WALLS {
        edges.push((k, FLOOR, shell_rel));
        edges.push((k, CEILING, shell_rel));
    }
    let interior = Aabb { min: [0.0; 3], max: dims };

    let menu: Vec<(&String, f64)> = cfg.rooms[&room_function].iter().filter(|(_, w)| **w > 0.0).map(|(c, w)| (c, *w)).collect();
    let count = rng.gen_range(cfg.furniture_count[0]..=cfg.furniture_count[1]);
    let count = cfg.max_instances.map_or(count, |cap| count.min(cap.saturating_sub(SHELL_NODES)));
    let mut floor_standing: Vec<usize> = Vec::new();
    let mut furniture_volume = 0.0;

    for _ in 0..count {
        for _ in 0..SLOT_TRIES {
            let (class_name, _) = *menu.choose_weighted(rng, |(_, w)| *w).expect("positive weights");
            let class = res.class_id(class_name)?;
            let spec = &cfg.furniture[class_name.as_str()];

            // (rule index, target node) pairs available in this room so far
            let mut options: Vec<(usize, usize)> = Vec::new();
            for (ri, s) in spec.supports.iter().enumerate() {
                match &s.anchor {
                    Anchor::Floor => options.push((ri, FLOOR)),
                    Anchor::Ceiling => options.push((ri, CEILING)),
                    Anchor::Wall => WALLS.for_each(|k| options.push((ri, k))),
                    Anchor::On(targets) => {
                        for (node, &l) in labels.iter().enumerate().skip(SHELL_NODES) {
                            if targets.iter().any(|t| res.class.get(t.as_str()) == Some(&l)) {
                                options.push((ri, node));
                            }
                        }
                    }
                }
            }
            // pick a rule uniformly, then a target uniformly
            let mut rule_ids: Vec<usize> = options.iter().map(|o| o.0).collect();
            rule_ids.dedup();
            let Some(&ri) = rule_ids.choose(rng) else { continue };
            let targets: Vec<usize> = options.iter().filter(|o| o.0 == ri).map(|o| o.1).collect();
            let &target = targets.choose(rng).expect("non-empty by construction");
            let support = &spec.supports[ri];

            let mut ext = spec.extents.map(|e| e * rng.gen_range(1.0 - cfg.size_jitter..=1.0 + cfg.size_jitter));
            let placed = (0..PLACEMENT_TRIES).find_map(|_| {
                let b = match &support.anchor {
                    Anchor::Floor => {
                        if rng.gen_bool(0.5) {
                            ext.swap(0, 1);
                        }
                        place_on_face(rng, ext, [0.0, 0.0], [w, d], 0.0)
                    }
                    Anchor::Ceiling => place_on_face(rng, ext, [0.0, 0.0], [w, d], h - ext[2]),
                    Anchor::On(_) => {
                        let s = boxes[target];
                        place_on_face(rng, ext, [s.min[0], s.min[1]], [s.max[0], s.max[1]], s.max[2])
                    }
                    Anchor::Wall => place_on_wall(rng, ext, &boxes[target], dims),
                }?;
                let clear = interior.contains(&b) && boxes[SHELL_NODES..].iter().all(|o| !o.intersects(&b));
                clear.then_some(b)
            });
            let Some(b) = placed else { continue };

            let node = labels.len();
            labels.push(class);
            boxes.push(b);
            edges.push((node, target, res.relation_id(&support.relation)?));
            furniture_volume += b.volume();
            if support.anchor == Anchor::Floor {
                for &other in &floor_standing {
                    if boxes[other].gap(&b) < cfg.proximity_distance {
                        edges.push((node, other, proximity));
                    }
                }
                floor_standing.push(node);
            }
            break;
        }
    }
    Ok(Layout {
        room_function,
        dims,
        labels,
        boxes,
        edges,
        furniture_volume,
    })
}

/// Box resting on a horizontal face spanning `lo..hi` in x/y at height `z`;
/// the footprint center lies on the face.
fn place_on_face<R: Rng + ?Sized>(rng: &mut R, ext: [f64; 3], lo: [f64; 2], hi: [f64; 2], z: f64) -> Option<Aabb> {
    let mut center = [0.0; 3];
    for a in 0..2 {
        let (a_lo, a_hi) = (lo[a] + ext[a] / 2.0, hi[a] - ext[a] / 2.0);
        center[a] = if a_lo < a_hi {
            rng.gen_range(a_lo..a_hi)
        } else {
            (lo[a] + hi[a]) / 2.0
        };
    }
    center[2] = z + ext[2] / 2.0;
    Some(Aabb::from_center(center, ext))
}

/// Box flush against the interior face of a wall slab, with its depth
/// (second extent) along the wall normal.
fn place_on_wall<R: Rng + ?Sized>(rng: &mut R, ext: [f64; 3], wall: &Aabb, dims: [f64; 3]) -> Option<Aabb> {
    let we = wall.extents();
    let normal = if we[0] < we[1] { 0 } else { 1 };
    let along = 1 - normal;
    let mut size = [0.0; 3];
    size[normal] = ext[1];
    size[along] = ext[0];
    size[2] = ext[2];
    let mut center = [0.0; 3];
    center[normal] = if wall.max[normal] <= 0.0 {
        wall.max[normal] + size[normal] / 2.0
    } else {
        wall.min[normal] - size[normal] / 2.0
    };
    let (lo, hi) = (size[along] / 2.0, dims[along] - size[along] / 2.0);
    if lo >= hi {
        return None;
    }
    center[along] = rng.gen_range(lo..hi);
    let (zlo, zhi) = (0.3, dims[2] - size[2] - 0.1);
    if zlo >= zhi {
        return None;
    }
    center[2] = rng.gen_range(zlo..zhi) + size[2] / 2.0;
    Some(Aabb::from_center(center, size))
}

/// Evenly spread hue per class.
fn class_color(class: usize, classes: usize) -> [f64; 3] {
    let hue = class as f64 / classes.max(1) as f64 * 6.0;
    let x = 1.0 - ((hue % 2.0) - 1.0).abs();
    let (r, g, b) = match hue as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.15 + 0.7 * r, 0.15 + 0.7 * g, 0.15 + 0.7 * b]
}

fn sample_surface<R: Rng + ?Sized>(rng: &mut R, b: &Aabb) -> [f64; 3] {
    let e = b.extents();
    let areas = [e[1] * e[2], e[1] * e[2], e[0] * e[2], e[0] * e[2], e[0] * e[1], e[0] * e[1]];
    let total: f64 = areas.iter().sum();
    let mut u = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
    let mut face = 0;
    while face < 5 && u >= areas[face] {
        u -= areas[face];
        face += 1;
    }
    let axis = face / 2;
    let mut p = [0.0; 3];
    for (a, coord) in p.iter_mut().enumerate() {
        *coord = if a == axis {
            if face % 2 == 0 {
                b.min[a]
            } else {
                b.max[a]
            }
        } else {
            b.min[a] + rng.gen::<f64>() * e[a]
        };
    }
    p
}

/// Samples one furnished room with its point cloud.
pub fn synth_sample<R: Rng + ?Sized>(cfg: &GrammarConfig, rng: &mut R) -> Result<SceneRecord> {
    let res = Resolved::new(cfg)?;
    let layout = sample_layout_resolved(&res, rng)?;
    let classes = cfg.object_classes.len();
    let noise = Normal::new(0.0, cfg.color_noise.max(1e-12)).map_err(|e| Error::invalid(e.to_string()))?;
    let per = cfg.points_per_instance;
    let mut data = Vec::with_capacity(layout.boxes.len() * per * 6);
    let mut indicator = Vec::with_capacity(layout.boxes.len() * per);
    for (k, (b, &label)) in layout.boxes.iter().zip(&layout.labels).enumerate() {
        let color = class_color(label, classes);
        for _ in 0..per {
            let p = sample_surface(rng, b);
            data.extend_from_slice(&p);
            for c in color {
                data.push((c + noise.sample(rng)).clamp(0.0, 1.0));
            }
            indicator.push(k);
        }
    }
    let n = indicator.len();
    let points = Tensor::matrix(n, 6, data)?;
    let graph = SceneGraph::from_edges(layout.labels.clone(), &layout.edges)?;
    SceneRecord::new(points, indicator, graph, layout.room_function, None)
}

/// `count` independent rooms; room `i` depends only on `(seed, i)`.
pub fn synth_corpus(cfg: &GrammarConfig, count: usize, seed: u64) -> Result<Vec<SceneRecord>> {
    (0..count)
        .map(|i| {
            let mut rng = scene_rng(seed, i as u64);
            synth_sample(cfg, &mut rng)
        })
        .collect()
}

pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
