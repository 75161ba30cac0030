//! File-to-file drivers behind the command-line subcommands.
//!
//! | step | reads | writes |
//! |------|-------|--------|
//! | [`simulate`] | config | `areas.csv` (with `mu_true`), `edges.csv`, `survey_NNN.csv`, `fit_config.json` |
//! | [`fit`] | survey, areas, edges | stage-1 and stage-2 draws and diagnostics, `mu_chain*.csv`, `fit.json`, metrics when `mu_true` is present |
//! | [`summarize`] | areas, survey, edges, `mu_chain*.csv` | `summaries.csv`, `rollup.json` |
//! | [`experiment`] | config | `experiment.csv`, `grid_summary.csv` |
//!
//! All randomness derives from one seed: stage-1 sampling, the stage-1
//! draw subset and stage-2 sampling use streams 1, 2 and 3.

use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::experiment::{replicate_seed, run_experiment, summarize_grid, CellResult, ExperimentError, GridSummary};
use crate::graph::AreaGraph;
use crate::inference::{rhat_ess, ConvergenceReport, InferenceError};
use crate::io::{self, IoError};
use crate::metrics::{area_metrics, group_metrics, MetricReport, MetricsError};
use crate::stage1::{aggregate_stage1, fit_stage1, smoothing_metrics, Stage1Error};
use crate::stage2::{benchmark, benchmark_targets, fit_stage2, AreaFrame, Stage2Error};
use crate::summaries::{summarize_draws, SummaryError, SummaryTable, RHAT_BAR};
use crate::survey::{overall_direct, rescale_weights, SurveyDataset, SurveyError};
use crate::synthetic::{draw_sample, generate_census, sub_seed, SyntheticError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error("stage 1")]
    Stage1(#[from] Stage1Error),
    #[error("stage 2")]
    Stage2(#[from] Stage2Error),
    #[error("summaries")]
    Summary(#[from] SummaryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("stage 2: largest mu R-hat {0:.4} is not below {RHAT_BAR}")]
    Rhat(f64),
}

impl PipelineError {
    /// The config file or an input it names is unusable.
    pub fn is_config(&self) -> bool {
        match self {
            Self::Config(_) | Self::Io(_) => true,
            Self::Stage1(e) => matches!(
                e,
                Stage1Error::UnknownColumn(_) | Stage1Error::UnknownLevel { .. } | Stage1Error::InvalidSpec(_)
            ),
            Self::Stage2(e) => matches!(
                e,
                Stage2Error::UnknownColumn(_)
                    | Stage2Error::InvalidSpec(_)
                    | Stage2Error::InvalidFrame(_)
                    | Stage2Error::MissingGraph
                    | Stage2Error::GraphMismatch
                    | Stage2Error::DisconnectedGraph(_)
            ),
            Self::Experiment(e) => matches!(e, ExperimentError::InvalidConfig(_)),
            _ => false,
        }
    }

    /// Sampler diagnostics failed their thresholds.
    pub fn is_diagnostic(&self) -> bool {
        matches!(
            self,
            Self::Rhat(_)
                | Self::Stage1(Stage1Error::DivergentChains { .. })
                | Self::Stage2(Stage2Error::DivergentChains { .. })
                | Self::Summary(SummaryError::DiagnosticsFailed { .. })
        )
    }
}

/// Writes the effective configuration next to the outputs.
pub fn dump_config(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out).map_err(|source| IoError::Io { path: out.into(), source })?;
    io::write_json(&out.join("config.json"), cfg)?;
    Ok(())
}

/// Areas frame, survey and (repaired) graph named by the config.
pub struct Inputs {
    pub frame: AreaFrame,
    pub survey: SurveyDataset,
    pub graph: Option<AreaGraph>,
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs, PipelineError> {
    let frame = io::read_areas(cfg.areas_path()?, &cfg.benchmark.systems)?;
    let survey = io::read_survey(cfg.survey_path()?, &frame, &cfg.factors)?;
    let graph = match &cfg.paths.edges {
        None => None,
        Some(p) => Some(
            io::read_edges(p, &frame.area_ids)?
                .repair(&cfg.graph.bridges, cfg.graph.augment_singletons)
                .map_err(IoError::from)?,
        ),
    };
    Ok(Inputs { frame, survey, graph })
}

/// Writes the synthetic census and `simulate.replicates` survey samples.
///
/// The census has no geography, so `edges.csv` is a ring over the areas
/// ordered by their covariate, which makes neighbors similar in `k`.
pub fn simulate(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<(), PipelineError> {
    dump_config(cfg, out)?;
    let census = generate_census(&cfg.simulate.census, seed)?;
    let frame = census.area_frame();
    io::write_areas(&out.join("areas.csv"), &frame, Some(&census.mu))?;

    let mut order: Vec<usize> = (0..census.areas()).collect();
    order.sort_by(|&a, &b| census.k[a].total_cmp(&census.k[b]));
    let ring = (0..order.len()).map(|i| (order[i], order[(i + 1) % order.len()])).collect();
    io::write_edges(&out.join("edges.csv"), &AreaGraph::from_index_edges(frame.area_ids.clone(), ring))?;

    for r in 0..cfg.simulate.replicates {
        let sample = draw_sample(&census, replicate_seed(seed, r))?;
        io::write_survey(&out.join(format!("survey_{:03}.csv", r + 1)), &sample.dataset)?;
    }

    let mut fit_cfg = cfg.clone();
    fit_cfg.paths.survey = Some("survey_001.csv".into());
    fit_cfg.paths.areas = Some("areas.csv".into());
    fit_cfg.paths.edges = Some("edges.csv".into());
    io::write_json(&out.join("fit_config.json"), &fit_cfg)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub records: usize,
    pub sampled_areas: usize,
    pub stable_areas: usize,
    pub sr: f64,
    pub alc: f64,
    pub stage1_max_rhat: f64,
    pub stage1_divergences: usize,
    pub stage2_max_rhat: f64,
    pub stage2_max_mu_rhat: f64,
    pub stage2_divergences: usize,
    pub benchmarks: Vec<String>,
    pub metrics: Option<MetricReport>,
}

/// Runs both stages and any benchmarking, writing draws and diagnostics.
/// Draws are written before the R-hat check, so a diagnostic failure still
/// leaves them for inspection.
pub fn fit(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<FitReport, PipelineError> {
    dump_config(cfg, out)?;
    let Inputs { frame, survey: d, graph } = load_inputs(cfg)?;
    let ws = rescale_weights(&d)?;

    let fit1 = fit_stage1(&d, &ws, &cfg.stage1, &cfg.mcmc.stage1.sampler(sub_seed(seed, 1)))?;
    io::write_draws(out, "stage1", &fit1.params, &fit1.convergence)?;
    let smooth = smoothing_metrics(&fit1.pi, &d, &ws, true)?;
    let s1 = aggregate_stage1(&fit1.pi, &d, &ws, cfg.mcmc.t_tilde, sub_seed(seed, 2))?;
    io::write_stage1(&out.join("stage1_theta.csv"), &out.join("stage1_areas.csv"), &s1, &frame.area_ids)?;

    let mut fit2 = fit_stage2(&s1, &frame, graph.as_ref(), &cfg.stage2, &cfg.mcmc.stage2.sampler(sub_seed(seed, 3)))?;
    let mut targets = Vec::new();
    for system in &cfg.benchmark.systems {
        let t = benchmark_targets(&d, &frame, system)?;
        fit2 = benchmark(&fit2, &t, cfg.benchmark.p, &frame)?;
        targets.push(t);
    }
    io::write_draws(out, "stage2", &fit2.params, &fit2.convergence)?;
    io::write_draws(out, "mu", &fit2.mu, &ConvergenceReport::from_draws(&fit2.mu)?)?;

    let metrics = match io::read_truth(cfg.areas_path()?) {
        Err(IoError::MissingColumn { .. }) => None,
        Err(e) => return Err(e.into()),
        Ok(truth) => {
            let mut report = MetricReport::from_areas(area_metrics(&fit2.mu, &truth, &frame.area_ids)?);
            if let Some(t) = targets.first() {
                report = report.with_groups(group_metrics(&fit2.mu, &frame.population, t)?);
            }
            io::write_area_metrics(&out.join("area_metrics.csv"), &report)?;
            Some(report)
        }
    };

    let report = FitReport {
        records: d.n_records(),
        sampled_areas: s1.areas.len(),
        stable_areas: s1.areas.iter().filter(|a| a.stable).count(),
        sr: smooth.sr,
        alc: smooth.alc,
        stage1_max_rhat: fit1.convergence.max_rhat(),
        stage1_divergences: fit1.convergence.divergences,
        stage2_max_rhat: fit2.convergence.max_rhat(),
        stage2_max_mu_rhat: fit2.max_mu_rhat(),
        stage2_divergences: fit2.convergence.divergences,
        benchmarks: cfg.benchmark.systems.clone(),
        metrics,
    };
    io::write_json(&out.join("fit.json"), &report)?;
    if report.stage2_max_mu_rhat >= RHAT_BAR {
        return Err(PipelineError::Rhat(report.stage2_max_mu_rhat));
    }
    Ok(report)
}

/// Posterior summaries from the `mu` draws a previous [`fit`] left in
/// `out`. The odds-ratio reference is the overall direct estimate.
pub fn summarize(cfg: &PipelineConfig, out: &Path) -> Result<SummaryTable, PipelineError> {
    let Inputs { frame, survey: d, graph } = load_inputs(cfg)?;
    let graph = graph.ok_or_else(|| ConfigError::Invalid("summaries need paths.edges".into()))?;
    let mu = io::read_draws(out, "mu")?;
    let mu_rhat = (0..mu.n_params()).map(|i| rhat_ess(&mu, i).map(|c| c.rhat)).collect::<Result<Vec<_>, _>>()?;
    let national = overall_direct(&d, &frame.population)?.mu;
    let table = summarize_draws(&mu, &mu_rhat, &frame.area_ids, &frame.population, &graph, national)?;
    io::write_summaries(&out.join("summaries.csv"), &table)?;
    io::write_json(&out.join("rollup.json"), &table.rollup)?;
    Ok(table)
}

/// Runs the simulation grid of `cfg.experiment`.
pub fn experiment(
    cfg: &PipelineConfig,
    seed: u64,
    out: &Path,
    on_cell: impl Fn(&CellResult) + Sync,
) -> Result<(Vec<CellResult>, Vec<GridSummary>), PipelineError> {
    dump_config(cfg, out)?;
    let path = out.join("experiment.csv");
    let sink = io::ExperimentSink::create(&path)?;
    let results = run_experiment(&cfg.experiment, seed, |r| {
        sink.append(r);
        on_cell(r);
    })?;
    sink.finish(&path, &results)?;
    let summary = summarize_grid(&cfg.experiment, &results);
    let grid = out.join("grid_summary.csv");
    let mut w = csv::Writer::from_path(&grid).map_err(|source| IoError::Csv { path: grid.clone(), source })?;
    for s in &summary {
        w.serialize(s).map_err(|source| IoError::Csv { path: grid.clone(), source })?;
    }
    w.flush().map_err(|source| IoError::Io { path: grid.clone(), source })?;
    Ok((results, summary))
}
