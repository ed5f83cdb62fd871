//! Scene records, rule sets, the synthetic room grammar and DOT export.

pub mod dot;
pub mod geometry;
pub mod graph;
pub mod record;
pub mod rules;
pub mod synth;

pub use dot::graph_to_dot;
pub use geometry::Aabb;
pub use graph::{SceneGraph, EMPTY_RELATION};
pub use record::{
    load_generated, load_room, load_scene, parse_document, save_generated, save_scene, GeneratedGraph, PlacedBox,
    Room, SceneDocument, SceneRecord,
};
pub use rules::{label_checksum, RuleSet, RuleSetDocument, VolumeStat};
pub use synth::{sample_layout, scene_rng, synth_corpus, synth_sample, Anchor, FurnitureSpec, GrammarConfig, Layout, SupportRule};
