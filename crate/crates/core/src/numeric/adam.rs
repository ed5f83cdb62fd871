use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over named parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter. A parameter without an entry in
    /// `grads` is updated with a zero gradient. Shapes are validated before
    /// anything is modified.
    pub fn step(&mut self, params: &mut BTreeMap<String, Arc<Tensor>>, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::invalid(format!("adam: gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        for (name, p) in params.iter() {
            if let Some(m) = self.first.get(name) {
                if m.shape() != p.shape() {
                    return Err(Error::Shape {
                        op: "adam_step",
                        lhs: p.shape().to_vec(),
                        rhs: m.shape().to_vec(),
                    });
                }
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let g = grads.get(name);
            let p = Arc::make_mut(p);
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                let mi = beta1 * m.data()[i] + (1.0 - beta1) * gi;
                let vi = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / c1;
                let vhat = vi / c2;
                p.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> BTreeMap<String, Arc<Tensor>> {
        BTreeMap::from([("w".to_string(), Arc::new(Tensor::scalar(value)))])
    }

    fn grad(value: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(value))])
    }

    /// Scalar Adam written out directly from the recurrence.
    fn reference_trace(p0: f64, gs: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, p0);
        let mut out = Vec::new();
        for (t, g) in gs.iter().enumerate() {
            let t = (t + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            p -= lr * mh / (vh.sqrt() + eps);
            out.push(p);
        }
        out
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = single(0.5);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut params, &grad(1.0)).unwrap();
        let delta = 0.5 - params["w"].item();
        // m_hat / sqrt(v_hat) = 1 / (1 + 1e-8)
        assert!((delta - 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = single(0.5);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut params, &grad(0.0)).unwrap();
        assert_eq!(params["w"].item(), 0.5);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn matches_scalar_reference_trace() {
        let mut params = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let gs = [0.3, 0.3];
        let expected = reference_trace(1.0, &gs, 1e-3);
        for (g, e) in gs.iter().zip(expected) {
            adam.step(&mut params, &grad(*g)).unwrap();
            assert!((params["w"].item() - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut params = single(-2.25);
        let mut adam = AdamState::new(AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        });
        for g in [1.0, -3.0, 0.5] {
            adam.step(&mut params, &grad(g)).unwrap();
        }
        assert_eq!(params["w"].item(), -2.25);
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn shape_mismatch_rejected_without_update() {
        let mut params = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let bad = BTreeMap::from([("w".to_string(), Tensor::zeros(&[1, 2]))]);
        assert!(matches!(adam.step(&mut params, &bad), Err(Error::Shape { .. })));
        assert_eq!(adam.step_count(), 0);
        assert_eq!(params["w"].item(), 1.0);
    }
}
