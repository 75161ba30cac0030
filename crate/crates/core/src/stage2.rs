//! Area-level spatial Fay-Herriot model over all areas, with generalized
//! variance function repair of unstable sampling variances and fully
//! Bayesian benchmarking.
//!
//! The linear predictor is
//!
//! ```text
//! theta_i = Z_i Lambda + alpha gamma_i + G_i Gamma_r[i] + zeta_i + eta_h[i]
//! ```
//!
//! Each sampled area contributes its retained stage-1 logit draws as
//! replicated Gaussian observations of `theta_i`, with the total
//! contribution scaled by `1 / T~`. Unsampled areas have no likelihood term.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AreaGraph, GraphError};
use crate::inference::{
    logistic, random_inits, rhat_ess, sample, Atom, ConvergenceReport, DensityTerm, DrawMatrix, GaussianObs,
    InferenceError, LinearPredictor, Location, Mixing, Model, Replicates, SamplerConfig, Spread,
};
use crate::stage1::{AreaStage1, Stage1Summary};
use crate::survey::{aggregate_direct, SurveyDataset, SurveyError};

#[derive(Debug, Error)]
pub enum Stage2Error {
    #[error("invalid area frame: {0}")]
    InvalidFrame(String),
    #[error("invalid stage-2 specification: {0}")]
    InvalidSpec(String),
    #[error("spatial prior needs a connected graph; found {0} components")]
    DisconnectedGraph(usize),
    #[error("spatial prior needs an adjacency graph")]
    MissingGraph,
    #[error("graph areas do not match the area frame")]
    GraphMismatch,
    #[error("stage-1 summary missing or empty for area {0}")]
    MissingSummary(usize),
    #[error("area {0}: stage-2 sampling variance is not positive")]
    DegenerateVariance(usize),
    #[error("generalized variance function needs {need} stable areas, found {have}")]
    TooFewStableAreas { have: usize, need: usize },
    #[error("{divergences} of {draws} post-warmup transitions diverged")]
    DivergentChains { divergences: usize, draws: usize },
    #[error("benchmark group {0} has no member areas")]
    EmptyGroup(usize),
    #[error("benchmark group {0} has no positive direct variance")]
    NonPositiveVariance(usize),
    #[error("unknown covariate or benchmark system `{0}`")]
    UnknownColumn(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// An external logit-scale estimate with its sampling variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct External {
    pub estimate: f64,
    pub variance: f64,
}

/// A partition of (some) areas into benchmark groups.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSystem {
    pub name: String,
    pub levels: Vec<String>,
    /// Group of each area; `None` leaves the area unbenchmarked.
    pub group: Vec<Option<usize>>,
}

/// Area-level covariates and structure for all `M` areas.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaFrame {
    pub area_ids: Vec<String>,
    pub population: Vec<f64>,
    pub remote_levels: Vec<String>,
    pub remote_class: Vec<usize>,
    pub ses_levels: Vec<String>,
    pub ses_decile: Vec<usize>,
    pub nest_levels: Vec<String>,
    pub nest: Vec<usize>,
    pub covariate_names: Vec<String>,
    /// Area-major, `covariate_names.len()` values per area.
    pub covariates: Vec<f64>,
    pub benchmarks: Vec<BenchmarkSystem>,
    pub external: Vec<Option<External>>,
}

impl AreaFrame {
    /// A frame with one remoteness class, one SES level, one nesting group,
    /// no covariates and no external estimates.
    pub fn minimal(area_ids: Vec<String>, population: Vec<f64>) -> Self {
        let m = area_ids.len();
        Self {
            area_ids,
            population,
            remote_levels: vec!["all".into()],
            remote_class: vec![0; m],
            ses_levels: vec!["all".into()],
            ses_decile: vec![0; m],
            nest_levels: vec!["all".into()],
            nest: vec![0; m],
            covariate_names: Vec::new(),
            covariates: Vec::new(),
            benchmarks: Vec::new(),
            external: vec![None; m],
        }
    }

    pub fn len(&self) -> usize {
        self.area_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.area_ids.is_empty()
    }

    /// Appends a continuous covariate column.
    pub fn with_covariate(mut self, name: impl Into<String>, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.len());
        let q = self.covariate_names.len();
        let mut next = Vec::with_capacity(self.len() * (q + 1));
        for (i, &v) in values.iter().enumerate() {
            next.extend_from_slice(&self.covariates[i * q..(i + 1) * q]);
            next.push(v);
        }
        self.covariates = next;
        self.covariate_names.push(name.into());
        self
    }

    pub fn covariate(&self, area: usize, col: usize) -> f64 {
        self.covariates[area * self.covariate_names.len() + col]
    }

    pub fn benchmark(&self, name: &str) -> Option<&BenchmarkSystem> {
        self.benchmarks.iter().find(|b| b.name == name)
    }

    pub fn validate(&self) -> Result<(), Stage2Error> {
        let m = self.len();
        let bad = |msg: String| Err(Stage2Error::InvalidFrame(msg));
        if self.population.len() != m
            || self.remote_class.len() != m
            || self.ses_decile.len() != m
            || self.nest.len() != m
            || self.external.len() != m
            || self.covariates.len() != m * self.covariate_names.len()
        {
            return bad("column lengths differ from the number of areas".into());
        }
        for i in 0..m {
            if !(self.population[i] > 0.0 && self.population[i].is_finite()) {
                return bad(format!("area {}: population must be positive", self.area_ids[i]));
            }
            if self.remote_class[i] >= self.remote_levels.len()
                || self.ses_decile[i] >= self.ses_levels.len()
                || self.nest[i] >= self.nest_levels.len()
            {
                return bad(format!("area {}: class index out of range", self.area_ids[i]));
            }
            if let Some(e) = self.external[i] {
                if !(e.variance > 0.0 && e.estimate.is_finite()) {
                    return bad(format!("area {}: external variance must be positive", self.area_ids[i]));
                }
            }
        }
        for b in &self.benchmarks {
            if b.group.len() != m || b.group.iter().flatten().any(|&g| g >= b.levels.len()) {
                return bad(format!("benchmark system `{}` is malformed", b.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousMode {
    Off,
    /// One coefficient per covariate.
    Fixed,
    /// Independent coefficients per remoteness class.
    Varying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialMode {
    Off,
    Iid,
    Bym2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GvfMode {
    Off,
    /// Variance model sampled jointly with the area model.
    Joint,
    /// Variance model fitted first; posterior-mean imputations plugged in.
    TwoStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Priors {
    pub fixed_sd: f64,
    pub intercept_df: f64,
    pub intercept_scale: f64,
    /// Half-normal scale for every standard deviation parameter.
    pub scale_sd: f64,
    pub external_sd: f64,
}

impl Default for Stage2Priors {
    fn default() -> Self {
        Self { fixed_sd: 2.0, intercept_df: 3.0, intercept_scale: 2.0, scale_sd: 2.0, external_sd: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Spec {
    pub ses_effect: bool,
    pub remote_effect: bool,
    pub continuous: ContinuousMode,
    /// Continuous covariates to use; empty means all frame covariates.
    pub covariates: Vec<String>,
    pub external: bool,
    pub spatial: SpatialMode,
    /// Fixes the BYM2 mixing weight instead of sampling it.
    pub fixed_rho: Option<f64>,
    pub nest_effect: bool,
    pub gvf: GvfMode,
    pub min_gvf_stable: usize,
    pub priors: Stage2Priors,
    /// The ICAR field mean has prior sd `icar_sd_scale * sqrt(M)`.
    pub icar_sd_scale: f64,
    /// Benchmark discrepancy multiplier.
    pub benchmark_p: f64,
    pub max_divergent_fraction: f64,
}

impl Default for Stage2Spec {
    fn default() -> Self {
        Self {
            ses_effect: true,
            remote_effect: true,
            continuous: ContinuousMode::Varying,
            covariates: Vec::new(),
            external: true,
            spatial: SpatialMode::Bym2,
            fixed_rho: None,
            nest_effect: true,
            gvf: GvfMode::Joint,
            min_gvf_stable: 10,
            priors: Stage2Priors::default(),
            icar_sd_scale: 0.001,
            benchmark_p: 0.5,
            max_divergent_fraction: 0.01,
        }
    }
}

impl Stage2Spec {
    /// Intercept, one fixed slope per covariate and an IID area effect.
    pub fn simple() -> Self {
        Self {
            ses_effect: false,
            remote_effect: false,
            continuous: ContinuousMode::Fixed,
            external: false,
            spatial: SpatialMode::Iid,
            nest_effect: false,
            gvf: GvfMode::Off,
            ..Self::default()
        }
    }

    /// Intercept only.
    pub fn intercept_only() -> Self {
        Self { continuous: ContinuousMode::Off, spatial: SpatialMode::Off, ..Self::simple() }
    }

    fn validate(&self) -> Result<(), Stage2Error> {
        if !(self.benchmark_p > 0.0) || !(self.icar_sd_scale > 0.0) {
            return Err(Stage2Error::InvalidSpec("benchmark_p and icar_sd_scale must be positive".into()));
        }
        if let Some(r) = self.fixed_rho {
            if !(0.0..=1.0).contains(&r) {
                return Err(Stage2Error::InvalidSpec(format!("fixed_rho {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Parameter vector under construction.
#[derive(Default)]
struct Params {
    names: Vec<String>,
}

impl Params {
    fn add(&mut self, name: String) -> usize {
        self.names.push(name);
        self.names.len() - 1
    }

    fn block(&mut self, prefix: &str, labels: impl IntoIterator<Item = String>) -> Vec<usize> {
        labels.into_iter().map(|l| self.add(format!("{prefix}[{l}]"))).collect()
    }
}

/// Standardized generalized-variance-function design rows for every sampled
/// area: intercept, `log n`, `log N`, the first continuous covariate and the
/// median stage-1 logit. Columns are centred and scaled over stable areas;
/// columns that are constant there are dropped.
struct GvfDesign {
    names: Vec<String>,
    rows: Vec<(usize, Vec<f64>)>,
}

fn gvf_design(s1: &Stage1Summary, frame: &AreaFrame, covariate: Option<usize>) -> GvfDesign {
    let raw = |a: &AreaStage1| {
        let mut v = vec![(a.n as f64).ln(), frame.population[a.area].ln()];
        if let Some(c) = covariate {
            v.push(frame.covariate(a.area, c));
        }
        v.push(a.theta_median);
        v
    };
    let mut names = vec!["log_n".to_string(), "log_population".to_string()];
    if let Some(c) = covariate {
        names.push(frame.covariate_names[c].clone());
    }
    names.push("theta_median".into());
    let stable: Vec<Vec<f64>> = s1.areas.iter().filter(|a| a.stable).map(raw).collect();
    let k = names.len();
    let ns = stable.len() as f64;
    let mut keep = Vec::new();
    let mut centre = Vec::new();
    let mut scale = Vec::new();
    for c in 0..k {
        let mean = stable.iter().map(|r| r[c]).sum::<f64>() / ns;
        let sd = (stable.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (ns - 1.0).max(1.0)).sqrt();
        if sd > 1e-12 {
            keep.push(c);
            centre.push(mean);
            scale.push(sd);
        }
    }
    let rows = s1
        .areas
        .iter()
        .map(|a| {
            let r = raw(a);
            let mut row = vec![1.0];
            row.extend(keep.iter().enumerate().map(|(j, &c)| (r[c] - centre[j]) / scale[j]));
            (a.area, row)
        })
        .collect();
    let mut out_names = vec!["intercept".to_string()];
    out_names.extend(keep.iter().map(|&c| names[c].clone()));
    GvfDesign { names: out_names, rows }
}

/// `[mu~ (1 - mu~)]^-2` with `mu~ = logistic(median theta)`.
fn logit_factor(a: &AreaStage1) -> f64 {
    let m = logistic(a.theta_median);
    let q = m * (1.0 - m);
    1.0 / (q * q)
}

fn first_covariate(frame: &AreaFrame, spec: &Stage2Spec) -> Result<Option<usize>, Stage2Error> {
    match spec.covariates.first() {
        Some(name) => covariate_index(frame, name).map(Some),
        None => Ok(if frame.covariate_names.is_empty() { None } else { Some(0) }),
    }
}

fn covariate_index(frame: &AreaFrame, name: &str) -> Result<usize, Stage2Error> {
    frame.covariate_names.iter().position(|c| c == name).ok_or_else(|| Stage2Error::UnknownColumn(name.to_string()))
}

/// Adds the variance regression on stable areas and returns, for every
/// sampled area, the design predictor `L_i omega`, plus the log-sd index.
fn add_gvf_terms(
    s1: &Stage1Summary,
    frame: &AreaFrame,
    spec: &Stage2Spec,
    params: &mut Params,
    terms: &mut Vec<DensityTerm>,
) -> Result<(Vec<(usize, LinearPredictor)>, usize), Stage2Error> {
    let stable = s1.areas.iter().filter(|a| a.stable && a.psi_mean > 0.0).count();
    if stable < spec.min_gvf_stable.max(2) {
        return Err(Stage2Error::TooFewStableAreas { have: stable, need: spec.min_gvf_stable.max(2) });
    }
    let design = gvf_design(s1, frame, first_covariate(frame, spec)?);
    let omega = params.block("omega", design.names.iter().cloned());
    let log_sd = params.add("log_sigma_gvf".into());
    terms.push(DensityTerm::normal_prior(omega.iter().copied(), 0.0, spec.priors.fixed_sd));
    terms.push(DensityTerm::HalfGaussian { log_params: vec![log_sd], sd: spec.priors.scale_sd });
    let preds: Vec<(usize, LinearPredictor)> = design
        .rows
        .iter()
        .map(|(area, row)| {
            let mut lp = LinearPredictor::constant(0.0);
            for (k, &v) in row.iter().enumerate() {
                lp.push(Atom::Param { idx: omega[k], coef: v });
            }
            (*area, lp)
        })
        .collect();
    let obs = s1
        .areas
        .iter()
        .zip(&preds)
        .filter(|(a, _)| a.stable && a.psi_mean > 0.0)
        .map(|(a, (_, lp))| GaussianObs {
            data: Replicates::single(0.5 * a.psi_mean.ln()),
            location: Location::Linear(lp.clone()),
            spread: Spread::LogSd(log_sd),
        })
        .collect();
    terms.push(DensityTerm::Gaussian { obs, scale: 1.0 });
    Ok((preds, log_sd))
}

/// Result of a stand-alone variance-function fit.
pub struct GvfFit {
    /// Draws of `omega[...]` and `log_sigma_gvf`.
    pub params: DrawMatrix,
    /// Posterior-mean imputed logit-scale variance `tau` for each unstable
    /// sampled area.
    pub imputed_tau: Vec<(usize, f64)>,
}

/// Fits `log sqrt(psi) ~ N(L omega, sigma^2)` on stable areas and imputes
/// `tau = [mu~ (1 - mu~)]^-2 exp(2 L omega + sigma^2)` for unstable ones.
pub fn fit_gvf(
    s1: &Stage1Summary,
    frame: &AreaFrame,
    spec: &Stage2Spec,
    sampler: &SamplerConfig,
) -> Result<GvfFit, Stage2Error> {
    let mut params = Params::default();
    let mut terms = Vec::new();
    let (preds, log_sd) = add_gvf_terms(s1, frame, spec, &mut params, &mut terms)?;
    let model = Model::new(params.names, terms)?;
    let inits = random_inits(model.dim(), sampler.chains, sampler.seed, 2.0);
    let draws = sample(&model, &inits, sampler)?;
    let total = draws.total_draws() as f64;
    let imputed_tau = s1
        .areas
        .iter()
        .zip(&preds)
        .filter(|(a, _)| !a.stable)
        .map(|(a, (_, lp))| {
            let f = logit_factor(a);
            let sum: f64 = draws.rows().map(|row| f * (2.0 * lp.value(row) + (2.0 * row[log_sd]).exp()).exp()).sum();
            (a.area, sum / total)
        })
        .collect();
    Ok(GvfFit { params: draws, imputed_tau })
}

/// A stage-2 posterior.
pub struct Stage2Fit {
    pub params: DrawMatrix,
    /// `theta[area]` for every area of the frame.
    pub theta: DrawMatrix,
    /// `mu[area] = logistic(theta[area])`.
    pub mu: DrawMatrix,
    pub convergence: ConvergenceReport,
    /// R-hat of each area's `mu`.
    pub mu_rhat: Vec<f64>,
    model: Model,
    predictors: Vec<LinearPredictor>,
    population: Vec<f64>,
    sampler: SamplerConfig,
    max_divergent_fraction: f64,
}

impl Stage2Fit {
    pub fn predictors(&self) -> &[LinearPredictor] {
        &self.predictors
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Largest finite R-hat over all `mu`.
    pub fn max_mu_rhat(&self) -> f64 {
        self.mu_rhat.iter().copied().filter(|r| r.is_finite()).fold(1.0, f64::max)
    }
}

/// Builds the stage-2 log density and one predictor per frame area.
pub fn build_stage2(
    s1: &Stage1Summary,
    frame: &AreaFrame,
    graph: Option<&AreaGraph>,
    spec: &Stage2Spec,
    sampler: &SamplerConfig,
) -> Result<(Model, Vec<LinearPredictor>), Stage2Error> {
    spec.validate()?;
    frame.validate()?;
    let m = frame.len();
    for a in &s1.areas {
        if a.area >= m || a.theta.is_empty() {
            return Err(Stage2Error::MissingSummary(a.area));
        }
    }
    let pr = &spec.priors;
    let mut p = Params::default();
    let mut terms = Vec::new();
    let mut preds: Vec<LinearPredictor> = Vec::with_capacity(m);

    let alpha0 = p.add("intercept".into());
    terms.push(DensityTerm::StudentT {
        targets: vec![LinearPredictor::param(alpha0)],
        df: pr.intercept_df,
        loc: 0.0,
        scale: pr.intercept_scale,
    });
    preds.extend((0..m).map(|_| LinearPredictor::param(alpha0)));

    let mut fixed = Vec::new();
    let mut dummies =
        |label: &str, levels: &[String], class: &[usize], p: &mut Params, preds: &mut [LinearPredictor]| {
            let idx = p.block(label, levels.iter().skip(1).cloned());
            for (i, pred) in preds.iter_mut().enumerate() {
                if class[i] > 0 {
                    pred.push(Atom::Param { idx: idx[class[i] - 1], coef: 1.0 });
                }
            }
            fixed.extend(idx);
        };
    if spec.ses_effect {
        dummies("ses", &frame.ses_levels, &frame.ses_decile, &mut p, &mut preds);
    }
    if spec.remote_effect {
        dummies("remote", &frame.remote_levels, &frame.remote_class, &mut p, &mut preds);
    }

    let cov_cols: Vec<usize> = if spec.covariates.is_empty() {
        (0..frame.covariate_names.len()).collect()
    } else {
        spec.covariates.iter().map(|c| covariate_index(frame, c)).collect::<Result<_, _>>()?
    };
    match spec.continuous {
        ContinuousMode::Off => {}
        ContinuousMode::Fixed => {
            let idx = p.block("slope", cov_cols.iter().map(|&c| frame.covariate_names[c].clone()));
            for (i, pred) in preds.iter_mut().enumerate() {
                for (k, &c) in cov_cols.iter().enumerate() {
                    pred.push(Atom::Param { idx: idx[k], coef: frame.covariate(i, c) });
                }
            }
            fixed.extend(idx);
        }
        ContinuousMode::Varying => {
            let blocks: Vec<Vec<usize>> = frame
                .remote_levels
                .iter()
                .map(|r| p.block("slope", cov_cols.iter().map(|&c| format!("{},{}", r, frame.covariate_names[c]))))
                .collect();
            for (i, pred) in preds.iter_mut().enumerate() {
                let b = &blocks[frame.remote_class[i]];
                for (k, &c) in cov_cols.iter().enumerate() {
                    pred.push(Atom::Param { idx: b[k], coef: frame.covariate(i, c) });
                }
            }
            fixed.extend(blocks.into_iter().flatten());
        }
    }
    if !fixed.is_empty() {
        terms.push(DensityTerm::normal_prior(fixed, 0.0, pr.fixed_sd));
    }

    let mut log_scales = Vec::new();
    let mut std_normals = Vec::new();

    if spec.external && frame.external.iter().any(Option::is_some) {
        let alpha = p.add("alpha_external".into());
        terms.push(DensityTerm::normal_prior([alpha], 0.0, pr.fixed_sd));
        let mut obs = Vec::new();
        let mut gammas = Vec::new();
        for (i, pred) in preds.iter_mut().enumerate() {
            if let Some(e) = frame.external[i] {
                let g = p.add(format!("gamma[{}]", frame.area_ids[i]));
                gammas.push(g);
                pred.push(Atom::Product { a: alpha, b: g, coef: 1.0 });
                obs.push(GaussianObs {
                    data: Replicates::single(e.estimate),
                    location: Location::Linear(LinearPredictor::param(g)),
                    spread: Spread::Sd(e.variance.sqrt()),
                });
            }
        }
        terms.push(DensityTerm::normal_prior(gammas, 0.0, pr.external_sd));
        terms.push(DensityTerm::Gaussian { obs, scale: 1.0 });
    }

    match spec.spatial {
        SpatialMode::Off => {}
        SpatialMode::Iid => {
            let ls = p.add("log_sigma_zeta".into());
            let v = p.block("v", frame.area_ids.iter().cloned());
            for (i, pred) in preds.iter_mut().enumerate() {
                pred.push(Atom::Scaled { log_scale: ls, idx: v[i], coef: 1.0 });
            }
            log_scales.push(ls);
            std_normals.extend(v);
        }
        SpatialMode::Bym2 => {
            let g = graph.ok_or(Stage2Error::MissingGraph)?;
            if g.area_ids() != frame.area_ids.as_slice() {
                return Err(Stage2Error::GraphMismatch);
            }
            let comps = g.components().len();
            if comps != 1 {
                return Err(Stage2Error::DisconnectedGraph(comps));
            }
            let inv_kappa = 1.0 / g.icar_scaling_factor()?;
            let ls = p.add("log_sigma_zeta".into());
            let rho = match spec.fixed_rho {
                Some(r) => Mixing::Fixed(r),
                None => {
                    let r = p.add("logit_rho".into());
                    terms.push(DensityTerm::UniformLogit { params: vec![r] });
                    Mixing::Logit(r)
                }
            };
            let s = p.block("s", frame.area_ids.iter().cloned());
            let v = p.block("v", frame.area_ids.iter().cloned());
            for (i, pred) in preds.iter_mut().enumerate() {
                pred.push(Atom::Bym2 { log_sigma: ls, rho, s: s[i], v: v[i], inv_kappa });
            }
            terms.push(DensityTerm::IcarPairwise { edges: g.edges().iter().map(|&(a, b)| (s[a], s[b])).collect() });
            terms.push(DensityTerm::SoftSumToZero { params: s, sd: spec.icar_sd_scale * (m as f64).sqrt() });
            log_scales.push(ls);
            std_normals.extend(v);
        }
    }

    if spec.nest_effect && frame.nest_levels.len() > 1 {
        let ls = p.add("log_sigma_eta".into());
        let u = p.block("u", frame.nest_levels.iter().cloned());
        for (i, pred) in preds.iter_mut().enumerate() {
            pred.push(Atom::Scaled { log_scale: ls, idx: u[frame.nest[i]], coef: 1.0 });
        }
        log_scales.push(ls);
        std_normals.extend(u);
    }
    if !log_scales.is_empty() {
        terms.push(DensityTerm::HalfGaussian { log_params: log_scales, sd: pr.scale_sd });
        terms.push(DensityTerm::std_normal(std_normals));
    }

    let gvf: Option<(Vec<(usize, LinearPredictor)>, usize)> = match spec.gvf {
        GvfMode::Joint => Some(add_gvf_terms(s1, frame, spec, &mut p, &mut terms)?),
        _ => None,
    };
    let two_step: Vec<(usize, f64)> = match spec.gvf {
        GvfMode::TwoStep => fit_gvf(s1, frame, spec, sampler)?.imputed_tau,
        _ => Vec::new(),
    };

    let mut likelihood = Vec::with_capacity(s1.areas.len());
    for (k, a) in s1.areas.iter().enumerate() {
        let spread = if a.stable || spec.gvf == GvfMode::Off {
            let var = a.tau_bar + a.var_theta;
            if !(var > 0.0 && var.is_finite()) {
                return Err(Stage2Error::DegenerateVariance(a.area));
            }
            Spread::Sd(var.sqrt())
        } else if let Some((gvf_preds, log_sd)) = &gvf {
            Spread::Gvf { design: gvf_preds[k].1.clone(), log_sd: *log_sd, factor: logit_factor(a), extra: a.var_theta }
        } else {
            let tau = two_step.iter().find(|t| t.0 == a.area).map(|t| t.1).unwrap_or(a.tau_bar);
            Spread::Sd((tau + a.var_theta).sqrt())
        };
        likelihood.push(GaussianObs {
            data: Replicates::from_values(&a.theta),
            location: Location::Linear(preds[a.area].clone()),
            spread,
        });
    }
    let t_tilde = s1.areas.first().map_or(1, |a| a.theta.len()) as f64;
    terms.push(DensityTerm::Gaussian { obs: likelihood, scale: 1.0 / t_tilde });

    let model = Model::new(p.names, terms)?;
    Ok((model, preds))
}

fn run(
    model: Model,
    predictors: Vec<LinearPredictor>,
    frame: &AreaFrame,
    sampler: &SamplerConfig,
    max_divergent_fraction: f64,
) -> Result<Stage2Fit, Stage2Error> {
    let inits = random_inits(model.dim(), sampler.chains, sampler.seed, 2.0);
    let params = sample(&model, &inits, sampler)?;
    let total = params.total_draws();
    let divergences = params.total_divergences();
    if divergences as f64 > max_divergent_fraction * total as f64 {
        return Err(Stage2Error::DivergentChains { divergences, draws: total });
    }
    let theta_names = frame.area_ids.iter().map(|a| format!("theta[{a}]")).collect();
    let theta = params.map_rows(theta_names, |row, out| {
        for (o, lp) in out.iter_mut().zip(&predictors) {
            *o = lp.value(row);
        }
    });
    let mu_names = frame.area_ids.iter().map(|a| format!("mu[{a}]")).collect();
    let mu = theta.map_rows(mu_names, |row, out| {
        for (o, &t) in out.iter_mut().zip(row) {
            *o = logistic(t);
        }
    });
    let mu_rhat = (0..mu.n_params()).map(|i| rhat_ess(&mu, i).map(|c| c.rhat)).collect::<Result<_, _>>()?;
    let convergence = ConvergenceReport::from_draws(&params)?;
    Ok(Stage2Fit {
        params,
        theta,
        mu,
        convergence,
        mu_rhat,
        model,
        predictors,
        population: frame.population.clone(),
        sampler: sampler.clone(),
        max_divergent_fraction,
    })
}

/// Fits the area-level model.
pub fn fit_stage2(
    s1: &Stage1Summary,
    frame: &AreaFrame,
    graph: Option<&AreaGraph>,
    spec: &Stage2Spec,
    sampler: &SamplerConfig,
) -> Result<Stage2Fit, Stage2Error> {
    let (model, preds) = build_stage2(s1, frame, graph, spec, sampler)?;
    run(model, preds, frame, sampler, spec.max_divergent_fraction)
}

/// A benchmark group with its direct estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkTarget {
    pub label: String,
    pub members: Vec<usize>,
    pub estimate: f64,
    pub variance: f64,
}

/// Direct estimates for every group of the named benchmark system.
/// `d` must index areas exactly like `frame`.
pub fn benchmark_targets(
    d: &SurveyDataset,
    frame: &AreaFrame,
    system: &str,
) -> Result<Vec<BenchmarkTarget>, Stage2Error> {
    let b = frame.benchmark(system).ok_or_else(|| Stage2Error::UnknownColumn(system.to_string()))?;
    if d.area_ids() != frame.area_ids.as_slice() {
        return Err(Stage2Error::InvalidFrame("survey and frame areas differ".into()));
    }
    let direct = aggregate_direct(d, &b.group, &frame.population, b.levels.len())?;
    Ok(b.levels
        .iter()
        .enumerate()
        .zip(direct)
        .map(|((g, label), est)| BenchmarkTarget {
            label: format!("{}:{}", b.name, label),
            members: (0..frame.len()).filter(|&i| b.group[i] == Some(g)).collect(),
            estimate: est.mu,
            variance: est.psi.unwrap_or(0.0),
        })
        .collect())
}

/// Refits with `C~_k = sum N_i mu_i / sum N_i ~ N(C_k, (p sqrt(v_k))^2)` for
/// every target.
pub fn benchmark(
    fit: &Stage2Fit,
    targets: &[BenchmarkTarget],
    p: f64,
    frame: &AreaFrame,
) -> Result<Stage2Fit, Stage2Error> {
    if !(p > 0.0) {
        return Err(Stage2Error::InvalidSpec(format!("benchmark p {p}")));
    }
    let mut obs = Vec::with_capacity(targets.len());
    for (k, t) in targets.iter().enumerate() {
        if t.members.is_empty() {
            return Err(Stage2Error::EmptyGroup(k));
        }
        if !(t.variance > 0.0 && t.variance.is_finite()) {
            return Err(Stage2Error::NonPositiveVariance(k));
        }
        let total: f64 = t.members.iter().map(|&i| fit.population[i]).sum();
        let parts = t.members.iter().map(|&i| (fit.population[i] / total, fit.predictors[i].clone())).collect();
        obs.push(GaussianObs {
            data: Replicates::single(t.estimate),
            location: Location::WeightedInvLogit(parts),
            spread: Spread::Sd(p * t.variance.sqrt()),
        });
    }
    let mut terms = fit.model.terms().to_vec();
    terms.push(DensityTerm::Gaussian { obs, scale: 1.0 });
    let model = Model::new(fit.model.names().to_vec(), terms)?;
    run(model, fit.predictors.clone(), frame, &fit.sampler, fit.max_divergent_fraction)
}

/// Posterior draws of `C~_k` for one group, draw by draw.
pub fn group_draws(mu: &DrawMatrix, members: &[usize], population: &[f64]) -> Vec<f64> {
    let total: f64 = members.iter().map(|&i| population[i]).sum();
    mu.rows().map(|row| members.iter().map(|&i| population[i] * row[i]).sum::<f64>() / total).collect()
}
