//! Post-processing of a released noisy count into a posterior over r.
//!
//! The released count S^R is modeled hierarchically:
//!
//! ```text
//! S^R | S  ~  Laplace(S, 1/ε)
//! S   | r  ~  Binomial(M, r)
//! r        ~  Beta(1, 1)
//! ```
//!
//! The production path marginalizes S by exact finite sum over {0..M} and
//! evaluates the resulting density on a uniform 4,097-point grid — fully
//! deterministic, no sampling. A Gibbs-within-Metropolis sampler targeting
//! the same joint is kept as an independent cross-check oracle.
//!
//! Everything here consumes only (S^R, M, ε): it is post-processing of an
//! already-released value and never touches data or the true count.

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::dp::laplace_logpdf;

/// Uniform grid resolution on [0, 1].
pub const GRID_POINTS: usize = 4097;

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("gamma1 must lie strictly inside (0,1), got {0}")]
    BadGamma1(f64),
    #[error("mcmc oracle needs at least 100000 draws, got {0}")]
    TooFewDraws(usize),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PosteriorInputs {
    pub s_noisy: f64,
    pub m: u32,
    pub epsilon: f64,
}

/// Normalized posterior of r on the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RPosterior {
    /// Weight at grid point i/(GRID_POINTS-1); sums to 1.
    pub density: Vec<f64>,
    pub mode: f64,
    pub mean: f64,
    pub ci95: (f64, f64),
    pub inputs: PosteriorInputs,
}

impl RPosterior {
    pub fn grid_value(i: usize) -> f64 {
        i as f64 / (GRID_POINTS - 1) as f64
    }

    /// Posterior mass on r >= r0 by grid summation.
    pub fn mass_at_or_above(&self, r0: f64) -> f64 {
        self.density
            .iter()
            .enumerate()
            .filter(|(i, _)| Self::grid_value(*i) >= r0)
            .map(|(_, w)| w)
            .sum()
    }
}

fn ln_choose(m: u32, s: u32) -> f64 {
    ln_gamma(m as f64 + 1.0) - ln_gamma(s as f64 + 1.0) - ln_gamma((m - s) as f64 + 1.0)
}

/// Exact-finite-sum posterior of r given the released noisy count.
///
/// `s_noisy` may lie outside [0, M]; that is a legitimate output of the
/// Laplace mechanism and needs no clamping.
pub fn posterior_r(s_noisy: f64, m: u32, epsilon: f64) -> RPosterior {
    let scale = 1.0 / epsilon;
    // Per-s constants: log Laplace weight + log binomial coefficient.
    let consts: Vec<f64> = (0..=m)
        .map(|s| laplace_logpdf(s_noisy, s as f64, scale) + ln_choose(m, s))
        .collect();

    let mut logd = vec![f64::NEG_INFINITY; GRID_POINTS];
    for (i, ld) in logd.iter_mut().enumerate() {
        let r = RPosterior::grid_value(i);
        let (lnr, ln1mr) = (r.ln(), (1.0 - r).ln());
        // log-sum-exp over s, skipping terms with zero mass at the edges
        let mut max = f64::NEG_INFINITY;
        let mut terms: Vec<f64> = Vec::with_capacity(consts.len());
        for (s, c) in consts.iter().enumerate() {
            let s = s as u32;
            if (r == 0.0 && s > 0) || (r == 1.0 && s < m) {
                continue;
            }
            let mut t = *c;
            if s > 0 {
                t += s as f64 * lnr;
            }
            if s < m {
                t += (m - s) as f64 * ln1mr;
            }
            terms.push(t);
            if t > max {
                max = t;
            }
        }
        if max.is_finite() {
            *ld = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        }
    }

    finish_from_logdensity(
        logd,
        PosteriorInputs {
            s_noisy,
            m,
            epsilon,
        },
    )
}

fn finish_from_logdensity(logd: Vec<f64>, inputs: PosteriorInputs) -> RPosterior {
    let max = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut density: Vec<f64> = logd.iter().map(|&ld| (ld - max).exp()).collect();
    let total: f64 = density.iter().sum();
    for w in density.iter_mut() {
        *w /= total;
    }
    let mode_ix = density
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mean = density
        .iter()
        .enumerate()
        .map(|(i, w)| w * RPosterior::grid_value(i))
        .sum();
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut cum = 0.0;
    let mut lo_set = false;
    for (i, w) in density.iter().enumerate() {
        cum += w;
        if !lo_set && cum >= 0.025 {
            lo = RPosterior::grid_value(i);
            lo_set = true;
        }
        if cum >= 0.975 {
            hi = RPosterior::grid_value(i);
            break;
        }
    }
    RPosterior {
        mode: RPosterior::grid_value(mode_ix),
        mean,
        ci95: (lo, hi),
        density,
        inputs,
    }
}

/// Decision helper for the pseudo-parameter: returns 1 iff the posterior
/// probability P(r >= gamma1 | S^R), computed by grid integration, is at
/// least 1/2. This mapping from posterior mass to a binary answer is a
/// client-side convention documented here, not a privacy-relevant choice.
pub fn theta_decision(post: &RPosterior, gamma1: f64) -> Result<u8, PosteriorError> {
    if !(gamma1 > 0.0 && gamma1 < 1.0) {
        return Err(PosteriorError::BadGamma1(gamma1));
    }
    Ok(if post.mass_at_or_above(gamma1) >= 0.5 {
        1
    } else {
        0
    })
}

/// Test-only oracle: Gibbs-within-Metropolis on the joint (S, r).
///
/// r | S is conjugate (exact Beta draw); S moves by a symmetric random-walk
/// proposal accepted against the joint. Returns the retained r draws after a
/// 10% burn-in.
pub fn mcmc_r_oracle<R: Rng + ?Sized>(
    s_noisy: f64,
    m: u32,
    epsilon: f64,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>, PosteriorError> {
    if draws < 100_000 {
        return Err(PosteriorError::TooFewDraws(draws));
    }
    let scale = 1.0 / epsilon;
    let ln_choose_all: Vec<f64> = (0..=m).map(|s| ln_choose(m, s)).collect();
    let joint_log = |s: u32, r: f64| -> f64 {
        laplace_logpdf(s_noisy, s as f64, scale)
            + ln_choose_all[s as usize]
            + s as f64 * r.ln()
            + (m - s) as f64 * (1.0 - r).ln()
    };
    let burn = draws / 10;
    let total = draws + burn;
    let mut s = (s_noisy.round().max(0.0) as u32).min(m);
    let mut out = Vec::with_capacity(draws);
    let step = (m / 10).max(1) as i64;
    for it in 0..total {
        // Gibbs: r | S ~ Beta(S+1, M-S+1)
        let beta =
            BetaDist::new(s as f64 + 1.0, (m - s) as f64 + 1.0).expect("valid Beta parameters");
        let r: f64 = beta.sample(rng).clamp(1e-300, 1.0 - 1e-16);
        // Metropolis: symmetric random-walk proposal on S
        let delta = rng.gen_range(1..=step);
        let proposal = if rng.gen::<bool>() {
            s as i64 + delta
        } else {
            s as i64 - delta
        };
        if (0..=m as i64).contains(&proposal) {
            let sp = proposal as u32;
            let log_accept = joint_log(sp, r) - joint_log(s, r);
            if log_accept >= 0.0 || rng.gen::<f64>().ln() < log_accept {
                s = sp;
            }
        }
        if it >= burn {
            out.push(r);
        }
    }
    Ok(out)
}

/// Total variation distance between an empirical sample and a grid posterior,
/// both aggregated onto `bins` equal-width bins over [0, 1].
pub fn tv_sample_vs_grid(samples: &[f64], post: &RPosterior, bins: usize) -> f64 {
    let mut hist = vec![0.0; bins];
    for &x in samples {
        let b = ((x * bins as f64) as usize).min(bins - 1);
        hist[b] += 1.0 / samples.len() as f64;
    }
    let mut grid = vec![0.0; bins];
    for (i, w) in post.density.iter().enumerate() {
        let r = RPosterior::grid_value(i);
        let b = ((r * bins as f64) as usize).min(bins - 1);
        grid[b] += w;
    }
    0.5 * hist
        .iter()
        .zip(&grid)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

/// Grid discretization of Beta(a, b), for noiseless-limit comparisons.
pub fn beta_on_grid(a: f64, b: f64) -> Vec<f64> {
    let logd: Vec<f64> = (0..GRID_POINTS)
        .map(|i| {
            let r = RPosterior::grid_value(i);
            if (r == 0.0 && a > 1.0) || (r == 1.0 && b > 1.0) {
                return f64::NEG_INFINITY;
            }
            let mut t = 0.0;
            if a != 1.0 {
                t += (a - 1.0) * r.ln();
            }
            if b != 1.0 {
                t += (b - 1.0) * (1.0 - r).ln();
            }
            t
        })
        .collect();
    let max = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logd.iter().map(|&ld| (ld - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
    w
}

/// Total variation between two grid densities.
pub fn tv_grids(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
