//! Split-chain, rank-normalized R-hat and bulk effective sample size.
//!
//! R-hat is the larger of the bulk value (rank-normalized draws) and the
//! folded value (rank-normalized absolute deviations from the median), so a
//! chain that differs only in scale is still caught.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::draws::DrawMatrix;
use super::InferenceError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    /// `NaN` when the draws have zero variance.
    pub rhat: f64,
    pub ess: f64,
}

/// R-hat and bulk ESS of one parameter.
pub fn rhat_ess(dm: &DrawMatrix, param: usize) -> Result<Convergence, InferenceError> {
    rhat_ess_traces(&dm.traces(param))
}

/// R-hat and bulk ESS from per-chain traces of equal length.
pub fn rhat_ess_traces(chains: &[Vec<f64>]) -> Result<Convergence, InferenceError> {
    let n = chains.first().map_or(0, Vec::len);
    if chains.len() < 2 || n < 4 || chains.iter().any(|c| c.len() != n) {
        return Err(InferenceError::TooFewDraws);
    }
    let split = split_chains(chains);
    let z = rank_normalize(&split);
    let bulk = split_rhat(&z);
    let ess = ess_of(&z);

    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let med = median(&pooled);
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = split_rhat(&rank_normalize(&folded));
    let rhat = if bulk.is_nan() || tail.is_nan() { f64::NAN } else { bulk.max(tail) };
    Ok(Convergence { rhat, ess })
}

/// Monte Carlo standard error of the mean: `sd / sqrt(ess)`.
pub fn mcse_mean(chains: &[Vec<f64>]) -> Result<f64, InferenceError> {
    let c = rhat_ess_traces(chains)?;
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let var = pooled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((var / c.ess).sqrt())
}

fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let half = chains[0].len() / 2;
    let n = chains[0].len();
    chains.iter().flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()]).collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Replaces each draw by the normal quantile of its fractional pooled rank,
/// `(r - 3/8) / (S + 1/4)`, with ties given their average rank.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut flat: Vec<(f64, usize, usize)> =
        chains.iter().enumerate().flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i))).collect();
    flat.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = flat.len() as f64;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < flat.len() {
        let mut j = i;
        while j + 1 < flat.len() && flat[j + 1].0 == flat[i].0 {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) as f64 + (j + 1) as f64);
        let q = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &flat[i..=j] {
            out[c][k] = q;
        }
        i = j + 1;
    }
    out
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}

fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = n / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if !(w > 1e-300) {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Autocovariance of `v` at `lag` around `mean`, normalized by `len`.
fn autocovariance(v: &[f64], mean: f64, lag: usize) -> f64 {
    let n = v.len();
    (0..n - lag).map(|i| (v[i] - mean) * (v[i + lag] - mean)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone positive sequence.
fn ess_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if !(w > 1e-300) {
        return f64::NAN;
    }
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b_over_n = stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let var_plus = (nf - 1.0) / nf * w + b_over_n;

    let rho = |t: usize| {
        let mean_acov = chains.iter().zip(&stats).map(|(c, s)| autocovariance(c, s.0, t)).sum::<f64>() / m;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut t = 1;
    if n > 1 {
        rho_hat[1] = rho(1);
    }
    // Geyer: accumulate pairs while their sum is positive
    while t + 2 < n {
        let a = rho(t + 1);
        let b = rho(t + 2);
        if a + b < 0.0 {
            break;
        }
        rho_hat[t + 1] = a;
        rho_hat[t + 2] = b;
        t += 2;
    }
    let max_t = t;
    // monotone pair sums
    let mut k = 1;
    while k + 2 <= max_t {
        let prev = rho_hat[k - 1] + rho_hat[k];
        let cur = rho_hat[k + 1] + rho_hat[k + 2];
        if cur > prev {
            rho_hat[k + 1] = prev / 2.0;
            rho_hat[k + 2] = prev / 2.0;
        }
        k += 2;
    }
    let tau = -1.0 + 2.0 * rho_hat[..=max_t].iter().sum::<f64>();
    let tau = tau.max(1.0 / (m * nf).log10());
    m * nf / tau
}

/// Per-parameter convergence summary of one fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub params: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub divergences: usize,
    pub step_size: Vec<f64>,
}

impl ConvergenceReport {
    pub fn from_draws(dm: &DrawMatrix) -> Result<Self, InferenceError> {
        let mut rhat = Vec::with_capacity(dm.n_params());
        let mut ess = Vec::with_capacity(dm.n_params());
        for p in 0..dm.n_params() {
            let c = rhat_ess(dm, p)?;
            rhat.push(c.rhat);
            ess.push(c.ess);
        }
        Ok(Self {
            params: dm.names().to_vec(),
            rhat,
            ess,
            divergences: dm.total_divergences(),
            step_size: dm.stats.iter().map(|s| s.step_size).collect(),
        })
    }

    /// Largest finite R-hat (`NaN` values come from constant draws and are
    /// skipped).
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().filter(|r| r.is_finite()).fold(1.0, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().filter(|e| e.is_finite()).fold(f64::INFINITY, f64::min)
    }

    /// Diagnostics sidecar: `{rhat, ess, divergences, step_size}` with
    /// per-parameter maps.
    pub fn to_json(&self) -> serde_json::Value {
        let map = |v: &[f64]| {
            self.params.iter().zip(v).map(|(k, x)| (k.clone(), serde_json::json!(x))).collect::<serde_json::Map<_, _>>()
        };
        serde_json::json!({
            "rhat": map(&self.rhat),
            "ess": map(&self.ess),
            "divergences": self.divergences,
            "step_size": self.step_size,
        })
    }
}
