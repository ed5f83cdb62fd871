//! Joint training of the representation networks and the conditional flow.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condition::{edge_condition_rows, gcn_embed_stacked, node_condition_rows};
use crate::error::{Error, Result};
use crate::flow::{affine_inverse, dequantize, dequantize_unchecked, joint_loss, nll_rows, one_hot, Gaussian};
use crate::generator::{build_trajectory, Target, Trajectory};
use crate::model::{Architecture, BnUpdate, Forward, ModelParams, Plan};
use crate::numeric::{AdamConfig, AdamState, BnMode, Tape, Tensor, Var};
use crate::repr::{forward as repr_forward, repr_loss};
use crate::scene::{RuleSet, SceneRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub alpha: f64,
    pub gcn_layers: usize,
    /// Adds `L_n + L_e` to the objective.
    pub cross_entropy: bool,
    pub seed: u64,
    /// Accepts `alpha >= 1`, where dequantization noise can move the argmax.
    pub allow_lossy_alpha: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 32,
            lr: 1e-3,
            alpha: 0.9,
            gcn_layers: 4,
            cross_entropy: true,
            seed: 0,
            allow_lossy_alpha: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.gcn_layers == 0 {
            return Err(Error::invalid("batch and gcn_layers must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.alpha >= 0.0) || (self.alpha >= 1.0 && !self.allow_lossy_alpha) {
            return Err(Error::invalid(format!(
                "alpha={} must lie in [0, 1) unless lossy dequantization is explicitly allowed",
                self.alpha
            )));
        }
        Ok(())
    }

    fn dequantize<R: Rng + ?Sized>(&self, z: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if self.allow_lossy_alpha {
            Ok(dequantize_unchecked(z, self.alpha, rng))
        } else {
            dequantize(z, self.alpha, rng)
        }
    }
}

/// Losses averaged over an epoch. `l_m` is the flow NLL per trajectory
/// element; `l_n` and `l_e` are per-scene means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_n: f64,
    pub l_e: f64,
    pub l_m: f64,
    pub l: f64,
}

pub fn write_csv(logs: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,l_n,l_e,l_m,l\n");
    for e in logs {
        out.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.l_n, e.l_e, e.l_m, e.l));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// A training scene with its trajectory precomputed.
pub struct Prepared<'a> {
    pub scene: &'a SceneRecord,
    pub trajectory: Trajectory,
}

pub fn prepare<'a>(corpus: &'a [SceneRecord], rules: &RuleSet) -> Result<Vec<Prepared<'a>>> {
    if corpus.is_empty() {
        return Err(Error::data("training corpus is empty"));
    }
    let channels = corpus[0].points.cols();
    corpus
        .iter()
        .enumerate()
        .map(|(k, scene)| {
            let context = |e: Error| match e {
                Error::Data(msg) => Error::data(format!("scene {k}: {msg}")),
                other => other,
            };
            scene
                .graph
                .check_labels(rules.node_classes(), rules.edge_classes())
                .map_err(|e| Error::data(format!("scene {k}: {e}")))?;
            if scene.points.cols() != channels {
                return Err(Error::data(format!(
                    "scene {k} has {} point channels, scene 0 has {channels}",
                    scene.points.cols()
                )));
            }
            let trajectory = build_trajectory(&scene.graph, rules).map_err(context)?;
            Ok(Prepared { scene, trajectory })
        })
        .collect()
}

/// Dequantized targets of a trajectory, split by kind.
pub struct FlowTargets {
    pub node_states: Vec<usize>,
    pub node_z: Vec<Vec<f64>>,
    /// `(state, subject, object)` per edge step.
    pub edge_steps: Vec<(usize, usize, usize)>,
    pub edge_z: Vec<Vec<f64>>,
}

impl FlowTargets {
    pub fn draw<R: Rng + ?Sized>(t: &Trajectory, cn: usize, ce: usize, config: &TrainConfig, rng: &mut R) -> Result<Self> {
        let mut out = FlowTargets {
            node_states: vec![],
            node_z: vec![],
            edge_steps: vec![],
            edge_z: vec![],
        };
        for step in &t.steps {
            match step.target {
                Target::Node { class } => {
                    out.node_states.push(step.state);
                    out.node_z.push(config.dequantize(&one_hot(class, cn), rng)?);
                }
                Target::Edge {
                    subject,
                    object,
                    relation,
                } => {
                    out.edge_steps.push((step.state, subject, object));
                    out.edge_z.push(config.dequantize(&one_hot(relation, ce), rng)?);
                }
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.node_z.len() + self.edge_z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn rows(z: &[Vec<f64>]) -> Result<Tensor> {
    Tensor::from_rows(z)
}

/// Head outputs for every step of a trajectory: `(node heads, edge heads)`,
/// each `None` when the trajectory has no step of that kind.
pub fn flow_heads(f: &mut Forward, plan: &Plan, t: &Trajectory, targets: &FlowTargets) -> Result<(Option<Var>, Option<Var>)> {
    if targets.is_empty() {
        return Ok((None, None));
    }
    let emb = gcn_embed_stacked(f, &t.states)?;
    let node = if targets.node_states.is_empty() {
        None
    } else {
        let pooled = f.tape.gather_rows(emb.pooled, &targets.node_states)?;
        Some(node_condition_rows(f, plan, pooled)?)
    };
    let edge = if targets.edge_steps.is_empty() {
        None
    } else {
        let states: Vec<usize> = targets.edge_steps.iter().map(|e| e.0).collect();
        let subj: Vec<usize> = targets.edge_steps.iter().map(|&(s, i, _)| emb.offsets[s] + i).collect();
        let obj: Vec<usize> = targets.edge_steps.iter().map(|&(s, _, j)| emb.offsets[s] + j).collect();
        let p = f.tape.gather_rows(emb.pooled, &states)?;
        let hi = f.tape.gather_rows(emb.nodes, &subj)?;
        let hj = f.tape.gather_rows(emb.nodes, &obj)?;
        let input = f.tape.concat_cols(&[p, hi, hj])?;
        Some(edge_condition_rows(f, plan, input)?)
    };
    Ok((node, edge))
}

/// Summed flow NLL of a trajectory's targets.
pub fn trajectory_nll(f: &mut Forward, plan: &Plan, t: &Trajectory, targets: &FlowTargets) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::invalid("flow NLL of an empty trajectory"));
    }
    let bound = f.model.arch.log_sigma_bound;
    let (node, edge) = flow_heads(f, plan, t, targets)?;
    let mut parts = Vec::new();
    if let Some(h) = node {
        let z = f.tape.constant(rows(&targets.node_z)?);
        parts.push(nll_rows(&mut f.tape, z, h, bound)?);
    }
    if let Some(h) = edge {
        let z = f.tape.constant(rows(&targets.edge_z)?);
        parts.push(nll_rows(&mut f.tape, z, h, bound)?);
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = f.tape.add(total, p)?;
    }
    Ok(total)
}

/// Values of one scene's loss terms; `nll` is summed over `elements`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SceneLosses {
    pub l_n: f64,
    pub l_e: f64,
    pub nll: f64,
    pub elements: usize,
}

struct SceneStep {
    losses: SceneLosses,
    grads: BTreeMap<String, Tensor>,
    bn: Vec<BnUpdate>,
}

/// Forward and backward for one scene. The objective is scaled so that the
/// batch sum equals the mean cross-entropy per scene plus the mean NLL per
/// element.
fn scene_step(
    model: &ModelParams,
    plan: &Plan,
    p: &Prepared,
    targets: &FlowTargets,
    config: &TrainConfig,
    batch_scenes: usize,
    batch_elements: usize,
) -> Result<SceneStep> {
    let mut f = Forward::training(model);
    let scene = p.scene;
    let pass = repr_forward(&mut f, plan, &scene.points, &scene.indicator, scene.instance_count())?;
    let (l_n, l_e) = repr_loss(&mut f, &pass, &scene.graph)?;
    let zero = f.tape.constant(Tensor::scalar(0.0));
    let nll = if targets.is_empty() {
        zero
    } else {
        trajectory_nll(&mut f, plan, &p.trajectory, targets)?
    };
    let losses = SceneLosses {
        l_n: f.tape.value(l_n).item(),
        l_e: f.tape.value(l_e).item(),
        nll: f.tape.value(nll).item(),
        elements: targets.len(),
    };
    let l_m = f.tape.scale(nll, 1.0 / batch_elements.max(1) as f64)?;
    let objective = if config.cross_entropy {
        let n = f.tape.scale(l_n, 1.0 / batch_scenes as f64)?;
        let e = f.tape.scale(l_e, 1.0 / batch_scenes as f64)?;
        joint_loss(&mut f.tape, n, e, l_m)?
    } else {
        l_m
    };
    let mut g = f.tape.backward(objective)?;
    let grads = f.param_grads(&mut g);
    Ok(SceneStep {
        losses,
        grads,
        bn: f.bn_updates().to_vec(),
    })
}

/// Model with freshly initialized weights for the corpus and configuration.
pub fn init_model<R: Rng + ?Sized>(corpus: &[SceneRecord], rules: &RuleSet, config: &TrainConfig, rng: &mut R) -> Result<ModelParams> {
    let channels = corpus.first().ok_or_else(|| Error::data("training corpus is empty"))?.points.cols();
    let mut arch = Architecture::new(channels, rules.node_classes(), rules.edge_classes());
    arch.gcn_layers = config.gcn_layers;
    let mut model = ModelParams::init(arch, rules.label_checksum(), rng)?;
    model.config = serde_json::to_value(config).map_err(|source| Error::Json {
        context: "training configuration".into(),
        source,
    })?;
    Ok(model)
}

/// Trains from scratch; `on_epoch` sees each epoch's log as it completes.
pub fn train(
    corpus: &[SceneRecord],
    rules: &RuleSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams, Vec<EpochLog>)> {
    config.validate()?;
    let prepared = prepare(corpus, rules)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_model(corpus, rules, config, &mut rng)?;
    let plan = Plan::new(&model.arch);
    let (cn, ce) = (rules.node_classes(), rules.edge_classes());
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = SceneLosses::default();
        for batch in order.chunks(config.batch) {
            let targets = batch
                .iter()
                .map(|&k| FlowTargets::draw(&prepared[k].trajectory, cn, ce, config, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let elements: usize = targets.iter().map(FlowTargets::len).sum();
            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            for (&k, t) in batch.iter().zip(&targets) {
                let step = scene_step(&model, &plan, &prepared[k], t, config, batch.len(), elements)?;
                model.apply_bn_updates(&step.bn);
                for (name, g) in step.grads {
                    match grads.get_mut(&name) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            grads.insert(name, g);
                        }
                    }
                }
                sums.l_n += step.losses.l_n;
                sums.l_e += step.losses.l_e;
                sums.nll += step.losses.nll;
                sums.elements += step.losses.elements;
            }
            adam.step(&mut model.params, &grads)?;
        }
        let n = prepared.len() as f64;
        let l_m = sums.nll / sums.elements.max(1) as f64;
        let log = EpochLog {
            epoch,
            l_n: sums.l_n / n,
            l_e: sums.l_e / n,
            l_m,
            l: (sums.l_n + sums.l_e) / n + l_m,
        };
        info!(
            "epoch {epoch}: L_n {:.4} L_e {:.4} L_m {:.4} L {:.4}",
            log.l_n, log.l_e, log.l_m, log.l
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok((model, logs))
}

/// Losses of a trained model without updating it: batch norm on running
/// statistics, dequantization noise drawn from `seed`.
pub fn evaluate_losses(model: &ModelParams, corpus: &[SceneRecord], rules: &RuleSet, config: &TrainConfig, seed: u64) -> Result<EpochLog> {
    let prepared = prepare(corpus, rules)?;
    let plan = Plan::new(&model.arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = SceneLosses::default();
    for p in &prepared {
        let targets = FlowTargets::draw(&p.trajectory, rules.node_classes(), rules.edge_classes(), config, &mut rng)?;
        let mut f = Forward::with_tape(model, Tape::inference(), BnMode::Eval);
        let pass = repr_forward(&mut f, &plan, &p.scene.points, &p.scene.indicator, p.scene.instance_count())?;
        let (l_n, l_e) = repr_loss(&mut f, &pass, &p.scene.graph)?;
        sums.l_n += f.tape.value(l_n).item();
        sums.l_e += f.tape.value(l_e).item();
        if !targets.is_empty() {
            let nll = trajectory_nll(&mut f, &plan, &p.trajectory, &targets)?;
            sums.nll += f.tape.value(nll).item();
            sums.elements += targets.len();
        }
    }
    let n = prepared.len() as f64;
    let l_m = sums.nll / sums.elements.max(1) as f64;
    Ok(EpochLog {
        epoch: 0,
        l_n: sums.l_n / n,
        l_e: sums.l_e / n,
        l_m,
        l: (sums.l_n + sums.l_e) / n + l_m,
    })
}

/// Per-dimension moments of the mapped `eps` for one element kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsMoments {
    pub count: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl EpsMoments {
    fn from_rows(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|k| (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Self {
            count: rows.len(),
            mean,
            std,
        }
    }

    /// Mean over dimensions of the per-dimension means.
    pub fn aggregate_mean(&self) -> f64 {
        self.mean.iter().sum::<f64>() / self.mean.len().max(1) as f64
    }

    /// Mean over dimensions of the per-dimension standard deviations.
    pub fn aggregate_std(&self) -> f64 {
        self.std.iter().sum::<f64>() / self.std.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsStats {
    pub node: EpsMoments,
    pub edge: EpsMoments,
}

/// Maps every dequantized training element through the inverse flow,
/// `eps = (z - mu) / sigma`, and summarizes the result.
pub fn epsilon_stats(model: &ModelParams, corpus: &[SceneRecord], rules: &RuleSet, config: &TrainConfig, seed: u64) -> Result<EpsStats> {
    let prepared = prepare(corpus, rules)?;
    let plan = Plan::new(&model.arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut node_eps, mut edge_eps) = (Vec::new(), Vec::new());
    for p in &prepared {
        let targets = FlowTargets::draw(&p.trajectory, rules.node_classes(), rules.edge_classes(), config, &mut rng)?;
        if targets.is_empty() {
            continue;
        }
        let mut f = Forward::inference(model);
        let (node, edge) = flow_heads(&mut f, &plan, &p.trajectory, &targets)?;
        let bound = model.arch.log_sigma_bound;
        for (head, z, out) in [(node, &targets.node_z, &mut node_eps), (edge, &targets.edge_z, &mut edge_eps)] {
            let Some(head) = head else { continue };
            let h = f.tape.value(head);
            for (r, z) in z.iter().enumerate() {
                let g = Gaussian::from_head_row(h.row_slice(r), bound);
                out.push(affine_inverse(z, &g.mu, &g.sigma)?);
            }
        }
    }
    Ok(EpsStats {
        node: EpsMoments::from_rows(&node_eps),
        edge: EpsMoments::from_rows(&edge_eps),
    })
}
