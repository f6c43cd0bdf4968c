//! Learning rates by model size, shifted power-law fits `L(C) = a·C^(-b) + c`
//! of loss against compute, and the compute advantage they imply.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Peak learning rate found best for each model size.
pub const LR_BY_SIZE: [(&str, f64); 14] = [
    ("44m", 0.005),
    ("74m", 0.004),
    ("90m", 0.003),
    ("106m", 0.003),
    ("117m", 0.003),
    ("140m", 0.0025),
    ("163m", 0.0025),
    ("196m", 0.002),
    ("251m", 0.002),
    ("306m", 0.0012),
    ("425m", 0.0012),
    ("489m", 0.0012),
    ("632m", 0.0007),
    ("816m", 0.0007),
];

pub fn lr_for_size(name: &str) -> Result<f64> {
    LR_BY_SIZE
        .iter()
        .find(|(n, _)| *n == name)
        .map(|&(_, lr)| lr)
        .ok_or_else(|| {
            let known: Vec<&str> = LR_BY_SIZE.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown model size `{}`; known sizes: {}", name, known.join(", ")))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub flops: f64,
    pub test_loss: f64,
    pub variant: String,
}

/// Space in which squared residuals are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitSpace {
    #[default]
    Raw,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// RMS residual in the fit space.
    pub residual: f64,
    /// Set when the losses carry no decay to fit (`a = b = 0`, `c` = mean).
    pub degenerate: bool,
    pub space: FitSpace,
}

impl ScalingFit {
    pub fn predict(&self, flops: f64) -> f64 {
        self.a * libm::pow(flops, -self.b) + self.c
    }

    /// Compute at which the fitted curve reaches `loss`.
    pub fn flops_for_loss(&self, loss: f64) -> Result<f64> {
        if self.degenerate {
            return Err(Error::Invalid(String::from("degenerate fit has no inverse")));
        }
        if !(loss > self.c) {
            return Err(Error::Invalid(format!(
                "loss {} is unreachable: the fitted floor is {}",
                loss, self.c
            )));
        }
        Ok(libm::pow(self.a / (loss - self.c), 1.0 / self.b))
    }
}

/// Fraction of compute saved by a run reaching `variant_loss` at
/// `variant_flops`, relative to the baseline curve: `1 − C / C'` where
/// `L_base(C') = variant_loss`.
pub fn compute_advantage(baseline: &ScalingFit, variant_loss: f64, variant_flops: f64) -> Result<f64> {
    Ok(1.0 - variant_flops / baseline.flops_for_loss(variant_loss)?)
}

/// `n` points of the fitted curve, log-spaced over `[lo, hi]`.
pub fn sample_curve(fit: &ScalingFit, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let (l0, l1) = (libm::log(lo), libm::log(hi));
    (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let c = libm::exp(l0 + (l1 - l0) * t);
            (c, fit.predict(c))
        })
        .collect()
}

const B_MAX: f64 = 3.0;
const GRID: usize = 600;
const REFINE_ITERS: usize = 100;
const GN_ITERS: usize = 30;

/// Least-squares fit of `a·C^(-b) + c` with `a > 0`, `b > 0`, `c ≥ 0`.
///
/// For each `b` the best `(a, c)` is found directly (in closed form for the
/// raw space, by Gauss–Newton for the log space), so only `b` is searched:
/// a uniform grid over `(0, 3]` and a golden-section refinement around the
/// best grid cell, with fixed iteration counts.
pub fn fit_shifted_power_law(points: &[ScalingPoint], space: FitSpace) -> Result<ScalingFit> {
    if points.len() < 4 {
        return Err(Error::Invalid(format!("need at least 4 points, got {}", points.len())));
    }
    for p in points {
        if !(p.flops > 0.0 && p.flops.is_finite() && p.test_loss.is_finite()) {
            return Err(Error::Invalid(format!("bad point {:?}", p)));
        }
        if space == FitSpace::Log && !(p.test_loss > 0.0) {
            return Err(Error::Invalid(String::from("log-space fit needs positive losses")));
        }
    }
    let mut sorted: Vec<f64> = points.iter().map(|p| p.flops).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Invalid(String::from("flops values must be distinct")));
    }
    let n = points.len() as f64;
    let ys: Vec<f64> = points.iter().map(|p| p.test_loss).collect();
    let mean = ys.iter().sum::<f64>() / n;
    let spread = ys.iter().fold(0.0f64, |m, &y| m.max(libm::fabs(y - mean)));
    if spread <= 1e-12 * libm::fabs(mean).max(1.0) {
        return Ok(ScalingFit { a: 0.0, b: 0.0, c: mean, residual: 0.0, degenerate: true, space });
    }

    // Work with C / C_ref (geometric mean) so C^(-b) stays well scaled.
    let log_ref = points.iter().map(|p| libm::log(p.flops)).sum::<f64>() / n;
    let logs: Vec<f64> = points.iter().map(|p| libm::log(p.flops) - log_ref).collect();
    let profile = |b: f64| -> (f64, f64, f64) {
        let xs: Vec<f64> = logs.iter().map(|&l| libm::exp(-b * l)).collect();
        let (a, c) = match space {
            FitSpace::Raw => linear_fit(&xs, &ys),
            FitSpace::Log => log_fit(&xs, &ys),
        };
        (sse(&xs, &ys, a, c, space), a, c)
    };

    let step = B_MAX / GRID as f64;
    let mut best = (f64::INFINITY, 0usize);
    for k in 1..=GRID {
        let r = profile(k as f64 * step).0;
        if r < best.0 {
            best = (r, k);
        }
    }
    let (mut lo, mut hi) = ((best.1 as f64 - 1.0) * step, ((best.1 + 1) as f64 * step).min(B_MAX));
    lo = lo.max(step * 1e-3);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (profile(x1).0, profile(x2).0);
    for _ in 0..REFINE_ITERS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = profile(x1).0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = profile(x2).0;
        }
    }
    let mut b = 0.5 * (lo + hi);
    let mut fit = profile(b);
    if best.0 < fit.0 {
        b = best.1 as f64 * step;
        fit = profile(b);
    }
    let (r, a_norm, c) = fit;
    Ok(ScalingFit {
        // a · (C/C_ref)^(-b) = a · C_ref^b · C^(-b)
        a: a_norm * libm::exp(b * log_ref),
        b,
        c,
        residual: libm::sqrt(r / n),
        degenerate: false,
        space,
    })
}

fn sse(xs: &[f64], ys: &[f64], a: f64, c: f64, space: FitSpace) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let p = a * x + c;
            let e = match space {
                FitSpace::Raw => p - y,
                FitSpace::Log => libm::log(p) - libm::log(y),
            };
            e * e
        })
        .sum()
}

/// `min Σ(a·x + c − y)²` subject to `a ≥ 0`, `c ≥ 0`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let (mut a, mut c) = if sxx > 0.0 { (sxy / sxx, 0.0) } else { (0.0, 0.0) };
    c += my - a * mx;
    if a < 0.0 {
        a = 0.0;
        c = my;
    }
    if c < 0.0 {
        c = 0.0;
        let xx: f64 = xs.iter().map(|&x| x * x).sum();
        let xy: f64 = xs.iter().zip(ys).map(|(&x, &y)| x * y).sum();
        a = if xx > 0.0 { (xy / xx).max(0.0) } else { 0.0 };
    }
    (a, c.max(0.0))
}

/// `min Σ(ln(a·x + c) − ln y)²`, Gauss–Newton from the raw-space solution.
fn log_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let (mut a, mut c) = linear_fit(xs, ys);
    let floor = 1e-300;
    if a * xs.iter().fold(f64::INFINITY, |m, &x| m.min(x)) + c <= floor {
        a = a.max(1e-12);
        c = c.max(1e-12);
    }
    let mut cur = sse(xs, ys, a, c, FitSpace::Log);
    for _ in 0..GN_ITERS {
        // Normal equations of the linearized residuals r = ln p − ln y.
        let (mut jaa, mut jac, mut jcc, mut ga, mut gc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            let p = a * x + c;
            let r = libm::log(p) - libm::log(y);
            let (da, dc) = (x / p, 1.0 / p);
            jaa += da * da;
            jac += da * dc;
            jcc += dc * dc;
            ga += da * r;
            gc += dc * r;
        }
        let det = jaa * jcc - jac * jac;
        if !(det.abs() > 0.0) {
            break;
        }
        let step_a = (jcc * ga - jac * gc) / det;
        let step_c = (jaa * gc - jac * ga) / det;
        // Backtrack until the step helps and stays feasible.
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let na = (a - t * step_a).max(0.0);
            let nc = (c - t * step_c).max(0.0);
            let ok = xs.iter().all(|&x| na * x + nc > floor);
            if ok {
                let s = sse(xs, ys, na, nc, FitSpace::Log);
                if s < cur {
                    a = na;
                    c = nc;
                    cur = s;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (a, c)
}
