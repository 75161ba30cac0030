//! Repeated-sampling experiment over a grid of stage-1 smoothing settings.
//!
//! One census is generated; each replicate draws a fresh informative sample,
//! and every (residual sd, area-effect) cell fits the simulation stage-1
//! model (intercept, optional area effect, fixed residual), aggregates it,
//! fits the simulation stage-2 model (intercept, slope on `k`, IID area
//! effect) and scores the area posteriors against the true proportions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::SamplerConfig;
use crate::metrics::{area_metrics, MetricReport, MetricsError};
use crate::stage1::{aggregate_stage1, fit_stage1, median, smoothing_metrics, Stage1Error, Stage1Spec};
use crate::stage2::{fit_stage2, Stage2Error, Stage2Spec};
use crate::survey::{hajek_all, rescale_weights, SurveyError};
use crate::synthetic::{draw_sample, generate_census, sub_seed, CensusConfig, SyntheticCensus, SyntheticError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// Chains and iterations of one sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub thin: usize,
    pub target_accept: f64,
}

impl SamplerSettings {
    pub fn new(chains: usize, warmup: usize, draws: usize) -> Self {
        Self { chains, warmup, draws, ..Self::default() }
    }

    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            thin: self.thin,
            target_accept: self.target_accept,
            ..SamplerConfig::sized(self.chains, self.warmup, self.draws, seed)
        }
    }
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { chains: 4, warmup: 1000, draws: 1000, thin: 1, target_accept: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub census: CensusConfig,
    pub residual_sds: Vec<f64>,
    pub area_effects: Vec<bool>,
    pub replicates: usize,
    pub stage1: SamplerSettings,
    pub stage2: SamplerSettings,
    pub t_tilde: usize,
    /// Concurrent cells; 0 uses every available core.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            census: CensusConfig::default(),
            residual_sds: vec![0.25, 1.0, 2.0, 3.5],
            area_effects: vec![true, false],
            replicates: 20,
            stage1: SamplerSettings::new(2, 500, 500),
            stage2: SamplerSettings::new(2, 500, 500),
            t_tilde: 500,
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.to_string()));
        if self.residual_sds.is_empty() || self.area_effects.is_empty() {
            return bad("grid is empty");
        }
        if self.residual_sds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("residual sds must be positive");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        let total = self.stage1.chains * self.stage1.draws / self.stage1.thin.max(1);
        if self.t_tilde == 0 || self.t_tilde > total {
            return bad("t_tilde must be in 1..=stage-1 draws");
        }
        self.census.validate()?;
        Ok(())
    }

    /// Every cell in output order: replicate, then residual sd, then flag.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for replicate in 0..self.replicates {
            for &residual_sd in &self.residual_sds {
                for &area_effect in &self.area_effects {
                    out.push(CellKey { replicate, residual_sd, area_effect });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellKey {
    pub replicate: usize,
    pub residual_sd: f64,
    pub area_effect: bool,
}

/// Scores of one successful fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    pub n: usize,
    pub stable_fraction: f64,
    pub sr: f64,
    pub alc: f64,
    pub stage1_max_rhat: f64,
    pub stage1_divergences: usize,
    pub stage2_max_mu_rhat: f64,
    pub stage2_divergences: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub key: CellKey,
    /// Failure message when any step of the cell failed.
    pub outcome: Result<CellMetrics, String>,
}

#[derive(Debug, Error)]
enum CellError {
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("stage 1: {0}")]
    Stage1(#[from] Stage1Error),
    #[error("stage 2: {0}")]
    Stage2(#[from] Stage2Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Seed of replicate `r`'s sample; the census uses stream 0.
pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    sub_seed(seed, 1 + replicate as u64)
}

fn run_cell(
    cfg: &ExperimentConfig,
    census: &SyntheticCensus,
    seed: u64,
    key: CellKey,
    cell_index: u64,
) -> Result<CellMetrics, CellError> {
    let sample_seed = replicate_seed(seed, key.replicate);
    let sample = draw_sample(census, sample_seed)?;
    let d = &sample.dataset;
    let ws = rescale_weights(d)?;
    let direct = hajek_all(d, &ws)?;
    let sampled: Vec<_> = direct.iter().flatten().collect();
    let stable_fraction = sampled.iter().filter(|e| e.stable).count() as f64 / sampled.len().max(1) as f64;

    let spec1 = Stage1Spec { area_effect: key.area_effect, residual_sd: key.residual_sd, ..Stage1Spec::default() };
    let fit1 = fit_stage1(d, &ws, &spec1, &cfg.stage1.sampler(sub_seed(sample_seed, 3 * cell_index + 1)))?;
    let smooth = smoothing_metrics(&fit1.pi, d, &ws, true)?;
    let s1 = aggregate_stage1(&fit1.pi, d, &ws, cfg.t_tilde, sub_seed(sample_seed, 3 * cell_index + 2))?;

    let frame = census.area_frame();
    let fit2 = fit_stage2(
        &s1,
        &frame,
        None,
        &Stage2Spec::simple(),
        &cfg.stage2.sampler(sub_seed(sample_seed, 3 * cell_index + 3)),
    )?;
    let areas = area_metrics(&fit2.mu, &census.mu, &frame.area_ids)?;
    Ok(CellMetrics {
        n: d.n_records(),
        stable_fraction,
        sr: smooth.sr,
        alc: smooth.alc,
        stage1_max_rhat: fit1.convergence.max_rhat(),
        stage1_divergences: fit1.convergence.divergences,
        stage2_max_mu_rhat: fit2.max_mu_rhat(),
        stage2_divergences: fit2.convergence.divergences,
        report: MetricReport::from_areas(areas),
    })
}

/// Runs every cell, calling `on_cell` as each finishes (in completion
/// order), and returns all results in grid order. Cell failures are
/// recorded, not propagated.
pub fn run_experiment<F>(cfg: &ExperimentConfig, seed: u64, on_cell: F) -> Result<Vec<CellResult>, ExperimentError>
where
    F: Fn(&CellResult) + Sync,
{
    cfg.validate()?;
    let census = generate_census(&cfg.census, seed)?;
    let cells = cfg.cells();
    let per_replicate = (cells.len() / cfg.replicates) as u64;
    let work = || {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, &key)| {
                let outcome = run_cell(cfg, &census, seed, key, i as u64 % per_replicate).map_err(|e| e.to_string());
                let result = CellResult { key, outcome };
                on_cell(&result);
                result
            })
            .collect::<Vec<_>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    Ok(pool.install(work))
}

/// Medians of the per-fit metrics within one (residual sd, flag) setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub residual_sd: f64,
    pub area_effect: bool,
    pub fits: usize,
    pub failures: usize,
    pub median_sr: f64,
    pub median_alc: f64,
    pub median_marb: f64,
    pub median_mrrmse: f64,
    pub coverage: f64,
    pub median_hpdi_width: f64,
}

/// Binned medians across replicates for every grid setting.
pub fn summarize_grid(cfg: &ExperimentConfig, results: &[CellResult]) -> Vec<GridSummary> {
    let mut out = Vec::new();
    for &residual_sd in &cfg.residual_sds {
        for &area_effect in &cfg.area_effects {
            let cell: Vec<&CellResult> = results
                .iter()
                .filter(|r| r.key.residual_sd == residual_sd && r.key.area_effect == area_effect)
                .collect();
            let ok: Vec<&CellMetrics> = cell.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let med = |f: fn(&CellMetrics) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    median(&ok.iter().map(|m| f(m)).collect::<Vec<_>>())
                }
            };
            out.push(GridSummary {
                residual_sd,
                area_effect,
                fits: ok.len(),
                failures: cell.len() - ok.len(),
                median_sr: med(|m| m.sr),
                median_alc: med(|m| m.alc),
                median_marb: med(|m| m.report.marb),
                median_mrrmse: med(|m| m.report.mrrmse),
                coverage: crate::metrics::pooled_coverage(ok.iter().map(|m| &m.report)),
                median_hpdi_width: med(|m| m.report.mean_hpdi_width),
            });
        }
    }
    out
}

/// Ordinary least-squares slope and R² of `y` on `x`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, sxy * sxy / (sxx * syy))
}
