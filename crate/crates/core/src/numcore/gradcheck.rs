use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Tensors with more elements than this are checked on a seeded sample
    /// of this many elements.
    pub max_per_tensor: usize,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_per_tensor: 64,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences, element by element.
///
/// `f` receives a fresh graph and one `param` var per entry of `params`
/// (in order) and returns the scalar loss var.
pub fn grad_check<F>(params: &[Tensor<f64>], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (pi, var) in vars.iter().enumerate() {
        let n = params[pi].len();
        let analytic: Vec<f64> = match grads.get(*var) {
            Some(t) => t.data().to_vec(),
            None => alloc::vec![0.0; n],
        };
        let indices: Vec<usize> = if n <= opts.max_per_tensor {
            (0..n).collect()
        } else {
            // Half uniform, half drawn from entries with a nonzero gradient so
            // sparse tables (byte embeddings) are actually exercised.
            let mut idx: Vec<usize> = sample(&mut rng, n, opts.max_per_tensor / 2).into_vec();
            let nonzero: Vec<usize> = (0..n).filter(|&i| analytic[i] != 0.0).collect();
            if !nonzero.is_empty() {
                let k = (opts.max_per_tensor - idx.len()).min(nonzero.len());
                idx.extend(sample(&mut rng, nonzero.len(), k).into_iter().map(|j| nonzero[j]));
            }
            idx
        };
        for &i in &indices {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + opts.step;
            let plus = eval(&work)?;
            work[pi].data_mut()[i] = orig - opts.step;
            let minus = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i];
            let denom = libm::fabs(a).max(libm::fabs(numeric)).max(opts.floor);
            let err = libm::fabs(a - numeric) / denom;
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pi, i);
            }
        }
    }
    Ok(report)
}
