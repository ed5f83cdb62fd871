//! Instance-incremental generation and the training trajectories it mirrors.

pub mod generate;
pub mod placement;
pub mod space;
pub mod trajectory;

pub use generate::{generate, seed_graph, Event, EventKind, Generation, GenerationConfig, SemanticMode, StopReason};
pub use placement::{place_box, support_for, Support, SUPPORT_RELATIONS};
pub use space::{check_space, extents_for, sample_volume, SpaceVerdict, FALLBACK_VOLUME, MIN_VOLUME};
pub use trajectory::{build_trajectory, Step, Target, Trajectory};
