//! Named, versioned container of every trainable weight, and the forward
//! context that binds those weights into a tape.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{BnMode, Gradients, Tape, Tensor, Var};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Channels per point (XYZ plus optional extras).
    pub input_channels: usize,
    pub node_classes: usize,
    pub edge_classes: usize,
    /// Widths of the pointwise MLP; the last is the instance feature width.
    pub point_widths: Vec<usize>,
    pub head_hidden: usize,
    pub gcn_layers: usize,
    pub gcn_width: usize,
    pub condition_hidden: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub log_sigma_bound: f64,
}

impl Architecture {
    pub fn new(input_channels: usize, node_classes: usize, edge_classes: usize) -> Self {
        Self {
            input_channels,
            node_classes,
            edge_classes,
            point_widths: vec![64, 128, 256],
            head_hidden: 128,
            gcn_layers: 4,
            gcn_width: 128,
            condition_hidden: 128,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            log_sigma_bound: 7.0,
        }
    }

    pub fn instance_width(&self) -> usize {
        *self.point_widths.last().expect("validated non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels < 3 {
            return Err(Error::invalid("architecture: points need at least 3 channels"));
        }
        if self.node_classes == 0 || self.edge_classes < 2 {
            return Err(Error::invalid("architecture: need at least one node class and two edge classes"));
        }
        if self.point_widths.is_empty() || self.point_widths.contains(&0) {
            return Err(Error::invalid("architecture: point widths must be non-empty and positive"));
        }
        if self.gcn_layers == 0 {
            return Err(Error::invalid("architecture: at least one GCN layer is required"));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) || !(self.log_sigma_bound > 0.0) {
            return Err(Error::invalid("architecture: invalid normalization or clamp settings"));
        }
        Ok(())
    }
}

/// One linear layer, optionally followed by batch normalization and ReLU.
#[derive(Clone, Copy, Debug)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub batch_norm: bool,
    pub relu: bool,
}

/// Layer stacks of every network, in a fixed naming scheme.
pub fn layer_plan(arch: &Architecture) -> Vec<(String, Vec<LayerSpec>)> {
    let hidden = |fan_in, fan_out, bn| LayerSpec {
        fan_in,
        fan_out,
        batch_norm: bn,
        relu: true,
    };
    let out = |fan_in, fan_out| LayerSpec {
        fan_in,
        fan_out,
        batch_norm: false,
        relu: false,
    };
    let mut point = Vec::new();
    let mut width = arch.input_channels;
    let last = arch.point_widths.len() - 1;
    for (k, &w) in arch.point_widths.iter().enumerate() {
        point.push(if k < last { hidden(width, w, true) } else { out(width, w) });
        width = w;
    }
    let inst = arch.instance_width();
    let g = arch.gcn_width;
    let c = arch.condition_hidden;
    vec![
        ("repr.point".into(), point),
        (
            "repr.node".into(),
            vec![hidden(inst, arch.head_hidden, true), out(arch.head_hidden, arch.node_classes)],
        ),
        (
            "repr.edge".into(),
            vec![hidden(inst, arch.head_hidden, true), out(arch.head_hidden, arch.edge_classes)],
        ),
        ("cond.node".into(), vec![hidden(g, c, false), out(c, 2 * arch.node_classes)]),
        ("cond.edge".into(), vec![hidden(3 * g, c, false), out(c, 2 * arch.edge_classes)]),
    ]
}

pub fn gcn_weight_name(layer: usize) -> String {
    format!("cond.gcn.{layer}.w")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub label_checksum: String,
    pub params: BTreeMap<String, Arc<Tensor>>,
    /// Running batch-norm statistics, `<prefix>.mean` and `<prefix>.var`.
    pub buffers: BTreeMap<String, Vec<f64>>,
    /// Free-form echo of the configuration that produced the weights.
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    label_checksum: String,
    architecture: Architecture,
    #[serde(default)]
    config: serde_json::Value,
    params: BTreeMap<String, StoredTensor>,
    buffers: BTreeMap<String, Vec<f64>>,
}

impl ModelParams {
    /// Weights uniform in `±sqrt(1/fan_in)`, batch-norm scale 1 and shift 0.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, label_checksum: String, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for (prefix, layers) in layer_plan(&arch) {
            for (k, l) in layers.iter().enumerate() {
                let bound = (1.0 / l.fan_in as f64).sqrt();
                params.insert(format!("{prefix}.{k}.w"), Arc::new(Tensor::uniform(&[l.fan_in, l.fan_out], bound, rng)));
                params.insert(format!("{prefix}.{k}.b"), Arc::new(Tensor::uniform(&[1, l.fan_out], bound, rng)));
                if l.batch_norm {
                    params.insert(format!("{prefix}.{k}.bn.gamma"), Arc::new(Tensor::full(&[1, l.fan_out], 1.0)));
                    params.insert(format!("{prefix}.{k}.bn.beta"), Arc::new(Tensor::zeros(&[1, l.fan_out])));
                    buffers.insert(format!("{prefix}.{k}.bn.mean"), vec![0.0; l.fan_out]);
                    buffers.insert(format!("{prefix}.{k}.bn.var"), vec![1.0; l.fan_out]);
                }
            }
        }
        let mut width = arch.node_classes;
        for layer in 0..arch.gcn_layers {
            let bound = (1.0 / width as f64).sqrt();
            params.insert(gcn_weight_name(layer), Arc::new(Tensor::uniform(&[width, arch.gcn_width], bound, rng)));
            width = arch.gcn_width;
        }
        Ok(Self {
            arch,
            label_checksum,
            params,
            buffers,
            config: serde_json::Value::Null,
        })
    }

    pub fn param(&self, name: &str) -> Result<&Arc<Tensor>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("model has no parameter {name:?}")))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Sets every parameter matching `filter` to zero.
    pub fn zero_where(&mut self, filter: impl Fn(&str) -> bool) {
        for (name, p) in self.params.iter_mut() {
            if filter(name) {
                Arc::make_mut(p).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Folds batch statistics into the running buffers:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        let m = self.arch.bn_momentum;
        for u in updates {
            for (suffix, batch) in [("mean", &u.mean), ("var", &u.var)] {
                if let Some(buf) = self.buffers.get_mut(&format!("{}.{suffix}", u.prefix)) {
                    for (r, b) in buf.iter_mut().zip(batch) {
                        *r = m * *r + (1.0 - m) * b;
                    }
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format_version: FORMAT_VERSION,
            label_checksum: self.label_checksum.clone(),
            architecture: self.arch.clone(),
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: t.shape().to_vec(),
                            data: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
            buffers: self.buffers.clone(),
        };
        serde_json::to_string(&doc).map_err(|source| Error::Json {
            context: "model".into(),
            source,
        })
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|source| Error::Json {
            context: context.to_string(),
            source,
        })?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "{context}: unsupported model format version {} (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        doc.architecture.validate().map_err(|e| Error::data(format!("{context}: {e}")))?;
        let reference = Self::init(
            doc.architecture.clone(),
            doc.label_checksum.clone(),
            &mut rand::rngs::mock::StepRng::new(0, 0),
        )?;
        let mut params = BTreeMap::new();
        for (name, t) in doc.params {
            let expected = reference
                .params
                .get(&name)
                .ok_or_else(|| Error::data(format!("{context}: unexpected parameter {name:?}")))?;
            if expected.shape() != t.shape.as_slice() {
                return Err(Error::data(format!(
                    "{context}: parameter {name:?} has shape {:?}, expected {:?}",
                    t.shape,
                    expected.shape()
                )));
            }
            let tensor = Tensor::new(t.shape, t.data).map_err(|e| Error::data(format!("{context}: {name}: {e}")))?;
            params.insert(name, Arc::new(tensor));
        }
        if let Some(missing) = reference.params.keys().find(|k| !params.contains_key(*k)) {
            return Err(Error::data(format!("{context}: missing parameter {missing:?}")));
        }
        for (name, expected) in &reference.buffers {
            match doc.buffers.get(name) {
                Some(b) if b.len() == expected.len() => {}
                _ => return Err(Error::data(format!("{context}: missing or malformed buffer {name:?}"))),
            }
        }
        Ok(Self {
            arch: doc.architecture,
            label_checksum: doc.label_checksum,
            params,
            buffers: doc.buffers,
            config: doc.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

/// Batch statistics observed by one batch-norm layer in training mode.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// A tape together with the model weights bound into it on first use.
pub struct Forward<'m> {
    pub tape: Tape,
    pub model: &'m ModelParams,
    pub bn_mode: BnMode,
    bound: BTreeMap<String, Var>,
    bn_updates: Vec<BnUpdate>,
}

impl<'m> Forward<'m> {
    /// Recording context; batch norm uses batch statistics.
    pub fn training(model: &'m ModelParams) -> Self {
        Self::with_tape(model, Tape::new(), BnMode::Train)
    }

    /// Non-recording context; batch norm uses running statistics.
    pub fn inference(model: &'m ModelParams) -> Self {
        Self::with_tape(model, Tape::inference(), BnMode::Eval)
    }

    pub fn with_tape(model: &'m ModelParams, tape: Tape, bn_mode: BnMode) -> Self {
        Self {
            tape,
            model,
            bn_mode,
            bound: BTreeMap::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self.model.param(name)?.clone();
        let v = self.tape.leaf_shared(value);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Uses `var` for the parameter `name` instead of the model's value.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.bound.insert(name.to_string(), var);
    }

    pub fn linear(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let y = self.tape.matmul(x, w)?;
        self.tape.add_row(y, b)
    }

    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let buffers = &self.model.buffers;
        let missing = || Error::invalid(format!("model has no running statistics for {prefix:?}"));
        let mean = buffers.get(&format!("{prefix}.mean")).ok_or_else(missing)?;
        let var = buffers.get(&format!("{prefix}.var")).ok_or_else(missing)?;
        let eps = self.model.arch.bn_eps;
        let (y, stats) = self.tape.batch_norm(x, gamma, beta, self.bn_mode, (mean, var), eps)?;
        if let Some((mean, var)) = stats {
            self.bn_updates.push(BnUpdate {
                prefix: prefix.to_string(),
                mean,
                var,
            });
        }
        Ok(y)
    }

    /// Runs the layer stack registered under `prefix` in [`layer_plan`].
    pub fn mlp(&mut self, prefix: &str, layers: &[LayerSpec], mut x: Var) -> Result<Var> {
        for (k, l) in layers.iter().enumerate() {
            x = self.linear(&format!("{prefix}.{k}"), x)?;
            if l.batch_norm {
                x = self.batch_norm(&format!("{prefix}.{k}.bn"), x)?;
            }
            if l.relu {
                x = self.tape.relu(x)?;
            }
        }
        Ok(x)
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    /// Gradients of every bound parameter, keyed by name.
    pub fn param_grads(&self, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.bound.iter().map(|(name, &v)| (name.clone(), grads.take(v))).collect()
    }
}

/// Layer stacks by prefix, built once per model.
#[derive(Clone, Debug)]
pub struct Plan {
    stacks: BTreeMap<String, Vec<LayerSpec>>,
}

impl Plan {
    pub fn new(arch: &Architecture) -> Self {
        Self {
            stacks: layer_plan(arch).into_iter().collect(),
        }
    }

    pub fn stack(&self, prefix: &str) -> &[LayerSpec] {
        &self.stacks[prefix]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> ModelParams {
        let arch = Architecture::new(6, 27, 17);
        ModelParams::init(arch, "abc".into(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = model();
        let back = ModelParams::from_json(&m.to_json().unwrap(), "test").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_shape_mismatch_and_version() {
        let m = model();
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["params"]["cond.gcn.0.w"]["shape"] = serde_json::json!([1, 1]);
        v["params"]["cond.gcn.0.w"]["data"] = serde_json::json!([0.0]);
        let err = ModelParams::from_json(&v.to_string(), "m").unwrap_err();
        assert!(err.to_string().contains("cond.gcn.0.w"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["format_version"] = serde_json::json!(99);
        assert!(ModelParams::from_json(&v.to_string(), "m").is_err());
    }

    #[test]
    fn init_bounds_follow_fan_in() {
        let m = model();
        let w = m.param("repr.point.1.w").unwrap();
        assert_eq!(w.shape(), &[64, 128]);
        let bound = (1.0f64 / 64.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(m.param("cond.gcn.0.w").unwrap().shape(), &[27, 128]);
        assert_eq!(m.param("cond.edge.0.w").unwrap().shape(), &[384, 128]);
        assert_eq!(m.param("cond.node.1.w").unwrap().shape(), &[128, 54]);
    }

    #[test]
    fn running_statistics_use_momentum() {
        let mut m = model();
        let upd = BnUpdate {
            prefix: "repr.point.0.bn".into(),
            mean: vec![1.0; 64],
            var: vec![3.0; 64],
        };
        m.apply_bn_updates(&[upd]);
        assert!((m.buffers["repr.point.0.bn.mean"][0] - 0.1).abs() < 1e-15);
        assert!((m.buffers["repr.point.0.bn.var"][0] - 1.2).abs() < 1e-15);
    }
}
