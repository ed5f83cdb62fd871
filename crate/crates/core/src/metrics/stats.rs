//! Topology statistics over the undirected non-empty edge view, and the
//! squared MMD between sets of them.

use crate::error::{Error, Result};
use crate::scene::SceneGraph;

pub const CLUSTER_BINS: usize = 10;

pub fn degrees(g: &SceneGraph) -> Vec<usize> {
    (0..g.node_count()).map(|i| g.neighbors(i).len()).collect()
}

/// `2 * links among neighbors / (k (k - 1))`, zero below two neighbors.
pub fn clustering_coefficients(g: &SceneGraph) -> Vec<f64> {
    (0..g.node_count())
        .map(|v| {
            let nb = g.neighbors(v);
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0;
            for a in 0..k {
                for b in a + 1..k {
                    if g.connected(nb[a], nb[b]) {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (k * (k - 1)) as f64
        })
        .collect()
}

/// Fraction of nodes per degree, indexed `0..=max degree`.
pub fn degree_histogram(g: &SceneGraph) -> Vec<f64> {
    let d = degrees(g);
    let mut h = vec![0.0; d.iter().max().map_or(1, |m| m + 1)];
    for &k in &d {
        h[k] += 1.0;
    }
    normalize(h)
}

/// Clustering coefficients binned into equal-width bins over `[0, 1]`; a
/// coefficient of exactly 1 falls in the last bin.
pub fn clustering_histogram(g: &SceneGraph) -> Vec<f64> {
    let mut h = vec![0.0; CLUSTER_BINS];
    for c in clustering_coefficients(g) {
        h[((c * CLUSTER_BINS as f64) as usize).min(CLUSTER_BINS - 1)] += 1.0;
    }
    normalize(h)
}

fn normalize(mut h: Vec<f64>) -> Vec<f64> {
    let total: f64 = h.iter().sum();
    if total > 0.0 {
        h.iter_mut().for_each(|v| *v /= total);
    }
    h
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let d = a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Median distance over distinct pairs of the pooled vectors; 1 when that
/// median is zero or there is only one vector.
pub fn median_bandwidth(vectors: &[&[f64]]) -> f64 {
    let mut d = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            d.push(distance(vectors[i], vectors[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) / 2.0 };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Biased squared MMD with kernel `exp(-|x - y|^2 / (2 s^2))`, vectors
/// zero-padded to a common length and `s` from [`median_bandwidth`].
/// Clamped at zero.
pub fn mmd(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("MMD needs two non-empty sets"));
    }
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(Vec::as_slice).collect();
    let s = median_bandwidth(&pooled);
    let k = |x: &[f64], y: &[f64]| (-distance(x, y).powi(2) / (2.0 * s * s)).exp();
    let mean = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        let mut total = 0.0;
        for p in x {
            for q in y {
                total += k(p, q);
            }
        }
        total / (x.len() * y.len()) as f64
    };
    Ok((mean(a, a) + mean(b, b) - 2.0 * mean(a, b)).max(0.0))
}
