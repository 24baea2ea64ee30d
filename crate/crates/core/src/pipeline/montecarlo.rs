//! Monte Carlo checks of Gaussian concentration in high dimension.
//!
//! * [`property2_mc`]: `P(|nᵀz| ≤ 2α sqrt(d/(d-2))) ≥ 1 - (2/α) e^{-α²/2}` for
//!   `z ~ N(0, I_d)`, with the `(1 - 3e^{-cd})` factor taken as 1.
//! * [`tail_mc`]: raw tail probability `P(|nᵀz| > t)`.
//! * [`sphere_slab_mc`]: `P(|z₁| ≤ α / sqrt(d-2)) ≥ 1 - (2/α) e^{-α²/2}` for
//!   `z` uniform on the unit sphere.
//! * [`annulus_mc`]: mass of the annulus `sqrt(d) ± β` and the decay of the
//!   mass outside it.
//!
//! Trials are split into chunks of [`TRIAL_CHUNK`]; chunk `c` uses RNG stream
//! `c`, and hit counts are summed in chunk order.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::rng;
use crate::stats;

pub const TRIAL_CHUNK: u64 = 1 << 14;
pub const MIN_TRIALS: u64 = 10_000;
/// β values used to estimate the annulus decay constant.
pub const ANNULUS_BETAS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
/// 95% two-sided normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Property2,
    Tail,
    SphereSlab,
    Annulus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusFit {
    pub betas: Vec<f64>,
    pub mass_outside: Vec<f64>,
    /// Slope of `ln(mass outside)` against `β²` over the β with nonzero mass.
    pub log_slope: f64,
    /// Largest `c` with `mass_outside(β) ≤ 3 e^{-c β²}` at every β.
    pub fitted_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub check: Check,
    pub d: usize,
    /// α for the slab checks, β for the annulus, the threshold for the tail.
    pub parameter: f64,
    pub trials: u64,
    pub seed: u64,
    pub hits: u64,
    pub empirical_probability: f64,
    pub bound_value: f64,
    pub std_error: f64,
    /// 95% normal-approximation half width of `empirical_probability`.
    pub half_width: f64,
    pub passed: bool,
    pub annulus: Option<AnnulusFit>,
}

/// `1 - (2/α) e^{-α²/2}`.
pub fn slab_bound(alpha: f64) -> f64 {
    1.0 - 2.0 / alpha * (-alpha * alpha / 2.0).exp()
}

/// Threshold `2α sqrt(d / (d - 2))`.
pub fn property2_threshold(d: usize, alpha: f64) -> f64 {
    2.0 * alpha * (d as f64 / (d as f64 - 2.0)).sqrt()
}

fn check_common(d: usize, trials: u64) -> Result<()> {
    if d < 4 {
        return Err(PipelineError::InvalidArgument(format!("d = {d} must be at least 4")));
    }
    if trials < MIN_TRIALS {
        return Err(PipelineError::InvalidArgument(format!("trials = {trials} must be at least {MIN_TRIALS}")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 1.0 && alpha.is_finite()) {
        return Err(PipelineError::InvalidArgument(format!("alpha = {alpha} must be at least 1")));
    }
    Ok(())
}

/// Runs `trial` over all chunks and sums the per-chunk results.
fn run_chunks<T, F>(trials: u64, seed: u64, init: T, per_chunk: F) -> Vec<T>
where
    T: Clone + Send + Sync,
    F: Fn(&mut rand_chacha::ChaCha8Rng, u64, &mut T) + Sync,
{
    (0..trials.div_ceil(TRIAL_CHUNK))
        .into_par_iter()
        .map(|c| {
            let n = TRIAL_CHUNK.min(trials - c * TRIAL_CHUNK);
            let mut r = rng::stream(seed, c);
            let mut acc = init.clone();
            per_chunk(&mut r, n, &mut acc);
            acc
        })
        .collect()
}

fn report(check: Check, d: usize, parameter: f64, trials: u64, seed: u64, hits: u64, bound_value: f64) -> MonteCarloReport {
    let p = hits as f64 / trials as f64;
    let se = stats::proportion_se(p, trials);
    MonteCarloReport {
        check,
        d,
        parameter,
        trials,
        seed,
        hits,
        empirical_probability: p,
        bound_value,
        std_error: se,
        half_width: Z95 * se,
        // Within two standard errors of the bound still counts.
        passed: p - bound_value >= -2.0 * se,
        annulus: None,
    }
}

/// Hyperplane slab check for a Gaussian code.
///
/// By rotation invariance `nᵀz` has the law of `z₁`, so only the first
/// coordinate is drawn.
pub fn property2_mc(d: usize, alpha: f64, trials: u64, seed: u64) -> Result<MonteCarloReport> {
    check_common(d, trials)?;
    check_alpha(alpha)?;
    let t = property2_threshold(d, alpha);
    let hits: u64 = run_chunks(trials, seed, 0u64, |r, n, acc| {
        for _ in 0..n {
            let z1: f64 = StandardNormal.sample(r);
            if z1.abs() <= t {
                *acc += 1;
            }
        }
    })
    .into_iter()
    .sum();
    Ok(report(Check::Property2, d, alpha, trials, seed, hits, slab_bound(alpha)))
}

/// `P(|nᵀz| > threshold)`, passed when below `limit`.
pub fn tail_mc(d: usize, threshold: f64, limit: f64, trials: u64, seed: u64) -> Result<MonteCarloReport> {
    check_common(d, trials)?;
    let hits: u64 = run_chunks(trials, seed, 0u64, |r, n, acc| {
        for _ in 0..n {
            let z1: f64 = StandardNormal.sample(r);
            if z1.abs() > threshold {
                *acc += 1;
            }
        }
    })
    .into_iter()
    .sum();
    let mut rep = report(Check::Tail, d, threshold, trials, seed, hits, limit);
    rep.passed = rep.empirical_probability < limit;
    Ok(rep)
}

/// Equatorial slab check on the unit sphere, sampled by normalizing
/// Gaussian draws.
pub fn sphere_slab_mc(d: usize, alpha: f64, trials: u64, seed: u64) -> Result<MonteCarloReport> {
    check_common(d, trials)?;
    check_alpha(alpha)?;
    let width = alpha / (d as f64 - 2.0).sqrt();
    if width > 1.0 {
        return Err(PipelineError::InvalidArgument(format!(
            "alpha / sqrt(d - 2) = {width} exceeds 1"
        )));
    }
    let hits: u64 = run_chunks(trials, seed, 0u64, |r, n, acc| {
        let mut z = vec![0.0f64; d];
        for _ in 0..n {
            z.iter_mut().for_each(|v| *v = StandardNormal.sample(r));
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (z[0] / norm).abs() <= width {
                *acc += 1;
            }
        }
    })
    .into_iter()
    .sum();
    Ok(report(Check::SphereSlab, d, alpha, trials, seed, hits, slab_bound(alpha)))
}

/// Gaussian annulus check.
///
/// The report's probability is the mass inside `sqrt(d) ± β`. Mass outside
/// is also measured at each β of [`ANNULUS_BETAS`]; the check passes when
/// that mass does not increase with β and decays log-linearly in `β²` with a
/// negative slope.
pub fn annulus_mc(d: usize, beta: f64, trials: u64, seed: u64) -> Result<MonteCarloReport> {
    check_common(d, trials)?;
    let root = (d as f64).sqrt();
    if !(beta > 0.0 && beta <= root) {
        return Err(PipelineError::InvalidArgument(format!("beta = {beta} outside (0, sqrt(d)]")));
    }
    let mut betas: Vec<f64> = ANNULUS_BETAS.iter().copied().filter(|b| *b <= root).collect();
    betas.push(beta);
    let nb = betas.len();
    let counts: Vec<Vec<u64>> = run_chunks(trials, seed, vec![0u64; nb], |r, n, acc| {
        let mut z = vec![0.0f64; d];
        for _ in 0..n {
            z.iter_mut().for_each(|v| *v = StandardNormal.sample(r));
            let dev = (z.iter().map(|v| v * v).sum::<f64>().sqrt() - root).abs();
            for (c, b) in acc.iter_mut().zip(&betas) {
                if dev > *b {
                    *c += 1;
                }
            }
        }
    });
    let mut outside = vec![0u64; nb];
    for c in counts {
        for (o, v) in outside.iter_mut().zip(c) {
            *o += v;
        }
    }
    let inside = trials - outside[nb - 1];

    let grid: Vec<(f64, f64)> = betas[..nb - 1]
        .iter()
        .zip(&outside[..nb - 1])
        .map(|(b, o)| (*b, *o as f64 / trials as f64))
        .collect();
    let monotone = grid.windows(2).all(|w| w[1].1 <= w[0].1);
    let positive: Vec<(f64, f64)> = grid.iter().copied().filter(|(_, m)| *m > 0.0).collect();
    let log_slope = if positive.len() >= 2 {
        let xs: Vec<f64> = positive.iter().map(|(b, _)| b * b).collect();
        let ys: Vec<f64> = positive.iter().map(|(_, m)| m.ln()).collect();
        stats::linear_fit(&xs, &ys).0
    } else {
        f64::NAN
    };
    let fitted_c = positive
        .iter()
        .map(|(b, m)| (3.0 / m).ln() / (b * b))
        .fold(f64::INFINITY, f64::min);

    let mut rep = report(Check::Annulus, d, beta, trials, seed, inside, 1.0 - 3.0 * (-fitted_c * beta * beta).exp());
    rep.passed = monotone && log_slope < 0.0 && fitted_c > 0.0;
    rep.annulus = Some(AnnulusFit {
        betas: grid.iter().map(|g| g.0).collect(),
        mass_outside: grid.iter().map(|g| g.1).collect(),
        log_slope,
        fitted_c,
    });
    Ok(rep)
}
