//! Conditional affine flow over one-hot graph elements.
//!
//! A discrete label is dequantized into a continuous vector `z`, which the
//! flow maps to a standard Gaussian variable by `eps = (z - mu) / sigma`.
//! The density of `z` follows from the change of variables; generation runs
//! the map forward from a sampled `eps`.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{argmax, Tape, Tensor, Var};

/// Adds `alpha * U[0, 1)` noise to every entry of a one-hot vector.
/// `alpha` must lie in `[0, 1)` so the hot entry stays the argmax.
pub fn dequantize<R: Rng + ?Sized>(z: &[f64], alpha: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "dequantization weight {alpha} must lie in [0, 1); larger values can change the argmax"
        )));
    }
    Ok(dequantize_unchecked(z, alpha, rng))
}

/// As [`dequantize`] without the range check on `alpha`.
pub fn dequantize_unchecked<R: Rng + ?Sized>(z: &[f64], alpha: f64, rng: &mut R) -> Vec<f64> {
    z.iter().map(|&v| v + alpha * rng.gen::<f64>()).collect()
}

pub fn one_hot(class: usize, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[class] = 1.0;
    v
}

fn check_sigma(sigma: &[f64]) -> Result<()> {
    if let Some((i, s)) = sigma.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::invalid(format!("sigma[{i}] = {s} is not positive")));
    }
    Ok(())
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::Shape {
            op: "affine",
            lhs: vec![a],
            rhs: vec![b, c],
        });
    }
    Ok(())
}

/// `z = mu + sigma * eps`
pub fn affine_forward(eps: &[f64], mu: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    check_lengths(eps.len(), mu.len(), sigma.len())?;
    check_sigma(sigma)?;
    Ok(eps.iter().zip(mu).zip(sigma).map(|((e, m), s)| m + s * e).collect())
}

/// `eps = (z - mu) / sigma`
pub fn affine_inverse(z: &[f64], mu: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    check_lengths(z.len(), mu.len(), sigma.len())?;
    check_sigma(sigma)?;
    Ok(z.iter().zip(mu).zip(sigma).map(|((z, m), s)| (z - m) / s).collect())
}

/// `log N((z - mu) / sigma; 0, I) - sum(log sigma)`
pub fn log_density(z: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64> {
    let eps = affine_inverse(z, mu, sigma)?;
    let d = z.len() as f64;
    let quad: f64 = eps.iter().map(|e| e * e).sum();
    let log_det: f64 = sigma.iter().map(|s| s.ln()).sum();
    Ok(-0.5 * quad - 0.5 * d * (2.0 * PI).ln() - log_det)
}

/// `sigma = exp(clamp(log_sigma, -bound, bound))`
pub fn sigma_from_log(log_sigma: &[f64], bound: f64) -> Vec<f64> {
    log_sigma.iter().map(|l| l.clamp(-bound, bound).exp()).collect()
}

/// Gaussian parameters of one element, split from a `2d`-wide head row.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Gaussian {
    pub fn from_head_row(row: &[f64], bound: f64) -> Self {
        let d = row.len() / 2;
        Self {
            mu: row[..d].to_vec(),
            sigma: sigma_from_log(&row[d..], bound),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Maps `eps` forward and returns `(z, argmax z)`.
    pub fn sample_class(&self, eps: &[f64]) -> Result<(Vec<f64>, usize)> {
        let z = affine_forward(eps, &self.mu, &self.sigma)?;
        let class = argmax(&z);
        Ok((z, class))
    }
}

/// Summed negative log-density of the rows of `z` (`T x d`) under head
/// outputs `head` (`T x 2d`, means then log standard deviations, the latter
/// clamped to `[-bound, bound]`).
pub fn nll_rows(tape: &mut Tape, z: Var, head: Var, bound: f64) -> Result<Var> {
    let (t, d) = {
        let zv = tape.value(z);
        (zv.rows(), zv.cols())
    };
    let hv = tape.value(head).shape().to_vec();
    if hv != [t, 2 * d] {
        return Err(Error::Shape {
            op: "nll_rows",
            lhs: vec![t, d],
            rhs: hv,
        });
    }
    let mu = tape.slice_cols(head, 0, d)?;
    let raw = tape.slice_cols(head, d, 2 * d)?;
    let log_sigma = tape.clamp(raw, -bound, bound)?;
    let neg = tape.scale(log_sigma, -1.0)?;
    let inv_sigma = tape.exp(neg)?;
    let diff = tape.sub(z, mu)?;
    let eps = tape.mul(diff, inv_sigma)?;
    let sq = tape.mul(eps, eps)?;
    let quad = tape.sum(sq)?;
    let half = tape.scale(quad, 0.5)?;
    let log_det = tape.sum(log_sigma)?;
    let data = tape.add(half, log_det)?;
    let constant = tape.constant(Tensor::scalar(0.5 * (t * d) as f64 * (2.0 * PI).ln()));
    tape.add(data, constant)
}

/// `L = L_n + L_e + L_m`
pub fn joint_loss(tape: &mut Tape, l_n: Var, l_e: Var, l_m: Var) -> Result<Var> {
    let repr = tape.add(l_n, l_e)?;
    tape.add(repr, l_m)
}
