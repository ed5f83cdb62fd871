//! Central-difference gradient checking.

use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Probe {
    pub input: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

/// `|analytic - numeric| / (|numeric| + 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Compares reverse-mode gradients of `f` with central differences of step
/// `h` at `probes` randomly chosen input entries.
///
/// `f` builds a scalar from leaves holding `inputs`; it is re-run on fresh
/// tapes for every perturbed evaluation.
pub fn check<R, F>(inputs: &[Tensor], probes: usize, h: f64, rng: &mut R, f: F) -> Result<GradCheckReport>
where
    R: Rng + ?Sized,
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::inference();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let out = f(&mut t, &vs)?;
        Ok(t.value(out).item())
    };

    let sizes: Vec<usize> = inputs.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let mut report = Vec::with_capacity(probes);
    let mut work = inputs.to_vec();
    for _ in 0..probes {
        let mut flat = rng.gen_range(0..total);
        let mut input = 0;
        while flat >= sizes[input] {
            flat -= sizes[input];
            input += 1;
        }
        let original = work[input].data()[flat];
        work[input].data_mut()[flat] = original + h;
        let plus = eval(&work)?;
        work[input].data_mut()[flat] = original - h;
        let minus = eval(&work)?;
        work[input].data_mut()[flat] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[input].data()[flat];
        report.push(Probe {
            input,
            entry: flat,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    Ok(GradCheckReport { probes: report })
}
