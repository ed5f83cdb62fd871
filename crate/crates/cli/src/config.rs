use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use sceneflow::generator::{GenerationConfig, SemanticMode};
use sceneflow::train::TrainConfig;

use crate::CliError;

/// Everything a command may need. Loaded from `--config` first, then
/// overridden by whichever flags were given.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    /// Scenes for `synth`.
    pub count: Option<usize>,
    pub max_instances: Option<usize>,
    pub jobs: Option<usize>,
    pub json: bool,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SemanticFlag {
    None,
    Furniture,
    Room,
}

impl From<SemanticFlag> for SemanticMode {
    fn from(f: SemanticFlag) -> Self {
        match f {
            SemanticFlag::None => SemanticMode::None,
            SemanticFlag::Furniture => SemanticMode::FurnitureOnly,
            SemanticFlag::Room => SemanticMode::RoomFunction,
        }
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rules: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Scene directory used as the MMD reference set.
    #[arg(long, global = true)]
    pub reference: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Scenes to synthesize, or graphs to generate per room.
    #[arg(long, global = true)]
    pub num: Option<usize>,
    #[arg(long, global = true)]
    pub max_instances: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub allow_lossy_alpha: bool,
    #[arg(long, global = true)]
    pub gcn_layers: Option<usize>,
    #[arg(long, global = true)]
    pub no_cross_entropy: bool,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub semantic_constraint: Option<SemanticFlag>,
    #[arg(long, global = true)]
    pub space_constraint: bool,
    #[arg(long, global = true)]
    pub anti_overlap: bool,
    #[arg(long, global = true)]
    pub max_nodes: Option<usize>,
    #[arg(long, global = true)]
    pub max_retries: Option<usize>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Worker threads for per-scene generation and evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Machine-readable output instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
}

impl Flags {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($dst:expr),+) => {
                if let Some(v) = self.$flag.clone() {
                    $($dst = v.clone().into();)+
                }
            };
        }
        set!(data => c.data);
        set!(rules => c.rules);
        set!(model => c.model);
        set!(out => c.out);
        set!(reference => c.reference);
        set!(jobs => c.jobs);
        set!(max_instances => c.max_instances);
        set!(seed => c.train.seed, c.generation.seed);
        set!(num => c.count, c.generation.graphs_per_scene);
        set!(epochs => c.train.epochs);
        set!(batch => c.train.batch);
        set!(lr => c.train.lr);
        set!(alpha => c.train.alpha, c.generation.alpha);
        set!(gcn_layers => c.train.gcn_layers);
        set!(lambda => c.generation.lambda);
        set!(beta => c.generation.beta);
        set!(semantic_constraint => c.generation.semantic_mode);
        set!(max_nodes => c.generation.max_nodes);
        set!(max_retries => c.generation.max_retries);
        set!(temperature => c.generation.temperature);
        if self.allow_lossy_alpha {
            c.train.allow_lossy_alpha = true;
            c.generation.allow_lossy_alpha = true;
        }
        if self.no_cross_entropy {
            c.train.cross_entropy = false;
        }
        c.generation.space_constraint |= self.space_constraint;
        c.generation.anti_overlap |= self.anti_overlap;
        c.json |= self.json;
        if c.jobs == Some(0) {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        Ok(c)
    }
}

fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn required<'a>(field: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    field.as_deref().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}
