//! Individual-level pseudo-likelihood logistic mixed model and its
//! aggregation into area-level logit-scale inputs.
//!
//! The linear predictor for respondent `j` in area `i` is
//!
//! ```text
//! logit(pi_ij) = alpha + X_ij beta + e_i + sum_g u_g[level_g(ij)] + eps_ij
//! ```
//!
//! where every random effect is non-centred (`sigma * z`, `z ~ N(0, 1)`) and
//! the individual residual `eps_ij = residual_sd * z_ij` has a fixed scale.
//! Each record's Bernoulli contribution is raised to its global weight `w~`.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{
    logistic, logit, random_inits, sample, Atom, BernoulliObs, ConvergenceReport, DensityTerm, DrawMatrix, GaussianObs,
    InferenceError, LinearPredictor, Location, Model, Replicates, SamplerConfig, Spread,
};
use crate::survey::{hajek, sampling_variance, SurveyDataset, SurveyError, WeightSet};

/// Clamp applied to aggregated proportions before the logit transform.
pub const PROPORTION_CLAMP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum Stage1Error {
    #[error("unknown covariate or factor `{0}`")]
    UnknownColumn(String),
    #[error("factor `{factor}` has no level `{level}`")]
    UnknownLevel { factor: String, level: String },
    #[error("fixed-effect design has rank {rank} but {columns} columns")]
    RankDeficientDesign { rank: usize, columns: usize },
    #[error("{divergences} of {draws} post-warmup transitions diverged")]
    DivergentChains { divergences: usize, draws: usize },
    #[error("area {area}: proportion clamped on {rate:.3} of draws")]
    DegenerateProportion { area: usize, rate: f64 },
    #[error("need at least {need} draws, have {have}")]
    TooFewDraws { have: usize, need: usize },
    #[error("fewer than two stable areas")]
    NoStableAreas,
    #[error("overall direct estimate is degenerate")]
    DegenerateOverall,
    #[error("invalid stage-1 specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// A dummy-coded categorical fixed effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Categorical {
    pub factor: String,
    /// Level left out of the dummy block.
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Priors {
    pub fixed_sd: f64,
    pub intercept_df: f64,
    pub intercept_scale: f64,
    /// Half-normal scale for random-effect standard deviations.
    pub re_scale_sd: f64,
}

impl Default for Stage1Priors {
    fn default() -> Self {
        Self { fixed_sd: 2.0, intercept_df: 3.0, intercept_scale: 2.0, re_scale_sd: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Spec {
    /// Continuous covariate columns entering as fixed effects.
    pub continuous: Vec<String>,
    pub categorical: Vec<Categorical>,
    /// Factors receiving exchangeable Gaussian random effects.
    pub grouping: Vec<String>,
    pub area_effect: bool,
    /// Fixed standard deviation of the individual residual.
    pub residual_sd: f64,
    pub priors: Stage1Priors,
    /// Sample the fixed effects in a QR-whitened basis.
    pub qr: bool,
    pub max_divergent_fraction: f64,
}

impl Default for Stage1Spec {
    fn default() -> Self {
        Self {
            continuous: Vec::new(),
            categorical: Vec::new(),
            grouping: Vec::new(),
            area_effect: true,
            residual_sd: 2.0,
            priors: Stage1Priors::default(),
            qr: false,
            max_divergent_fraction: 0.01,
        }
    }
}

/// Posterior draws of every respondent's probability, draw-major:
/// `values[t * n_records + j]`, draws ordered chain by chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PiDraws {
    n_records: usize,
    values: Vec<f64>,
}

impl PiDraws {
    pub fn new(n_records: usize, values: Vec<f64>) -> Self {
        assert!(n_records > 0 && values.len() % n_records == 0);
        Self { n_records, values }
    }

    pub fn n_draws(&self) -> usize {
        self.values.len() / self.n_records
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    pub fn draw(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_records..(t + 1) * self.n_records]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_records)
    }
}

pub struct Stage1Fit {
    pub params: DrawMatrix,
    pub pi: PiDraws,
    pub convergence: ConvergenceReport,
}

struct Design {
    names: Vec<String>,
    /// Record-major, `names.len()` columns, no intercept.
    x: Vec<f64>,
}

fn build_design(d: &SurveyDataset, spec: &Stage1Spec) -> Result<Design, Stage1Error> {
    let n = d.n_records();
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    for name in &spec.continuous {
        let c = d
            .covariate_names()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Stage1Error::UnknownColumn(name.clone()))?;
        cols.push((name.clone(), (0..n).map(|j| d.covariate(j, c)).collect()));
    }
    for cat in &spec.categorical {
        let f = factor_index(d, &cat.factor)?;
        let factor = &d.factors()[f];
        let reference = factor
            .levels
            .iter()
            .position(|l| *l == cat.reference)
            .ok_or_else(|| Stage1Error::UnknownLevel { factor: cat.factor.clone(), level: cat.reference.clone() })?;
        for (lv, label) in factor.levels.iter().enumerate() {
            if lv == reference {
                continue;
            }
            let col = (0..n).map(|j| f64::from(u8::from(d.level(j, f) as usize == lv))).collect();
            cols.push((format!("{}[{}]", cat.factor, label), col));
        }
    }
    let p = cols.len();
    let mut x = vec![0.0; n * p];
    for (k, (_, col)) in cols.iter().enumerate() {
        for j in 0..n {
            x[j * p + k] = col[j];
        }
    }
    let design = Design { names: cols.into_iter().map(|c| c.0).collect(), x };
    check_rank(&design, n)?;
    Ok(design)
}

fn factor_index(d: &SurveyDataset, name: &str) -> Result<usize, Stage1Error> {
    d.factors().iter().position(|f| f.name == name).ok_or_else(|| Stage1Error::UnknownColumn(name.to_string()))
}

/// Rank of `[1 | X]` must equal its column count.
fn check_rank(design: &Design, n: usize) -> Result<(), Stage1Error> {
    let p = design.names.len();
    let full = DMatrix::from_fn(n, p + 1, |j, k| if k == 0 { 1.0 } else { design.x[j * p + k - 1] });
    let svd = full.svd(false, false);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * (n.max(p + 1) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p + 1 {
        return Err(Stage1Error::RankDeficientDesign { rank, columns: p + 1 });
    }
    Ok(())
}

/// The assembled log density plus one linear predictor per record.
pub struct Stage1Model {
    pub model: Model,
    pub predictors: Vec<LinearPredictor>,
}

/// Builds the stage-1 model without sampling it.
pub fn build_stage1(d: &SurveyDataset, ws: &WeightSet, spec: &Stage1Spec) -> Result<Stage1Model, Stage1Error> {
    if !(spec.residual_sd > 0.0 && spec.residual_sd.is_finite()) {
        return Err(Stage1Error::InvalidSpec(format!("residual_sd {}", spec.residual_sd)));
    }
    let n = d.n_records();
    if n == 0 {
        return Err(Stage1Error::InvalidSpec("no survey records".into()));
    }
    let design = build_design(d, spec)?;
    let p = design.names.len();
    let pr = &spec.priors;

    let mut names: Vec<String> = vec!["alpha".into()];
    let mut terms = Vec::new();
    let mut preds: Vec<LinearPredictor> = (0..n).map(|_| LinearPredictor::param(0)).collect();
    terms.push(DensityTerm::StudentT {
        targets: vec![LinearPredictor::param(0)],
        df: pr.intercept_df,
        loc: 0.0,
        scale: pr.intercept_scale,
    });

    if p > 0 {
        let first = names.len();
        if spec.qr {
            let (q, r_inv) = qr_whiten(&design.x, n, p);
            names.extend((0..p).map(|k| format!("beta_tilde[{k}]")));
            for (j, pred) in preds.iter_mut().enumerate() {
                for k in 0..p {
                    pred.push(Atom::Param { idx: first + k, coef: q[(j, k)] });
                }
            }
            // beta = R^-1 beta_tilde carries the N(0, fixed_sd^2) prior
            let obs = (0..p)
                .map(|k| {
                    let mut lp = LinearPredictor::constant(0.0);
                    for l in k..p {
                        lp.push(Atom::Param { idx: first + l, coef: r_inv[(k, l)] });
                    }
                    GaussianObs {
                        data: Replicates::single(0.0),
                        location: Location::Linear(lp),
                        spread: Spread::Sd(pr.fixed_sd),
                    }
                })
                .collect();
            terms.push(DensityTerm::Gaussian { obs, scale: 1.0 });
        } else {
            names.extend(design.names.iter().map(|c| format!("beta[{c}]")));
            for (j, pred) in preds.iter_mut().enumerate() {
                for k in 0..p {
                    let v = design.x[j * p + k];
                    if v != 0.0 {
                        pred.push(Atom::Param { idx: first + k, coef: v });
                    }
                }
            }
            terms.push(DensityTerm::normal_prior(first..first + p, 0.0, pr.fixed_sd));
        }
    }

    let mut log_scales = Vec::new();
    let mut raw_effects = Vec::new();
    let mut add_effect = |label: &str,
                          n_levels: usize,
                          level_of: &dyn Fn(usize) -> Option<usize>,
                          names: &mut Vec<String>,
                          preds: &mut [LinearPredictor]| {
        let ls = names.len();
        names.push(format!("log_sigma_{label}"));
        let z0 = names.len();
        names.extend((0..n_levels).map(|l| format!("z_{label}[{l}]")));
        log_scales.push(ls);
        raw_effects.extend(z0..z0 + n_levels);
        for (j, pred) in preds.iter_mut().enumerate() {
            if let Some(l) = level_of(j) {
                pred.push(Atom::Scaled { log_scale: ls, idx: z0 + l, coef: 1.0 });
            }
        }
    };

    if spec.area_effect {
        let sampled = d.sampled_areas();
        let mut slot = vec![None; d.n_areas()];
        for (k, &a) in sampled.iter().enumerate() {
            slot[a] = Some(k);
        }
        add_effect("area", sampled.len(), &|j| slot[d.area_of(j)], &mut names, &mut preds);
    }
    for g in &spec.grouping {
        let f = factor_index(d, g)?;
        let card = d.factors()[f].cardinality();
        add_effect(g, card, &|j| Some(d.level(j, f) as usize), &mut names, &mut preds);
    }
    if !log_scales.is_empty() {
        terms.push(DensityTerm::HalfGaussian { log_params: log_scales, sd: pr.re_scale_sd });
        terms.push(DensityTerm::std_normal(raw_effects));
    }

    let eps0 = names.len();
    names.extend((0..n).map(|j| format!("z_eps[{j}]")));
    for (j, pred) in preds.iter_mut().enumerate() {
        pred.push(Atom::Param { idx: eps0 + j, coef: spec.residual_sd });
    }
    terms.push(DensityTerm::std_normal(eps0..eps0 + n));

    let obs = (0..n).map(|j| BernoulliObs { y: d.y()[j], weight: ws.w_tilde[j], eta: preds[j].clone() }).collect();
    terms.push(DensityTerm::BernoulliLogitWeighted { obs });

    let model = Model::new(names, terms)?;
    Ok(Stage1Model { model, predictors: preds })
}

/// Thin QR of the `n x p` design: returns `Q* = Q sqrt(n - 1)` and
/// `R*^-1 = (R / sqrt(n - 1))^-1`, so that `X beta = Q* beta~` with
/// `beta = R*^-1 beta~`.
fn qr_whiten(x: &[f64], n: usize, p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let xm = DMatrix::from_fn(n, p, |j, k| x[j * p + k]);
    let qr = xm.qr();
    let scale = ((n.max(2) - 1) as f64).sqrt();
    let q = qr.q() * scale;
    let r = qr.r() / scale;
    let r_inv = r.try_inverse().expect("full-rank design has invertible R");
    (q, r_inv)
}

/// Fits the stage-1 model and returns posterior draws of every `pi_ij`.
pub fn fit_stage1(
    d: &SurveyDataset,
    ws: &WeightSet,
    spec: &Stage1Spec,
    sampler: &SamplerConfig,
) -> Result<Stage1Fit, Stage1Error> {
    let built = build_stage1(d, ws, spec)?;
    let inits = random_inits(built.model.dim(), sampler.chains, sampler.seed, 2.0);
    let params = sample(&built.model, &inits, sampler)?;
    let total = params.total_draws();
    let divergences = params.total_divergences();
    if divergences as f64 > spec.max_divergent_fraction * total as f64 {
        return Err(Stage1Error::DivergentChains { divergences, draws: total });
    }
    let n = d.n_records();
    let mut values = Vec::with_capacity(total * n);
    for row in params.rows() {
        values.extend(built.predictors.iter().map(|lp| logistic(lp.value(row))));
    }
    let convergence = ConvergenceReport::from_draws(&params)?;
    Ok(Stage1Fit { params, pi: PiDraws::new(n, values), convergence })
}

/// Aggregated stage-1 output for one sampled area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaStage1 {
    pub area: usize,
    pub n: usize,
    pub population: f64,
    /// Logit-scale draws on the retained subset.
    pub theta: Vec<f64>,
    /// Mean of `tau` over all draws.
    pub tau_bar: f64,
    /// Sample variance (denominator `T - 1`) of `theta` over all draws.
    pub var_theta: f64,
    pub theta_median: f64,
    /// Mean of `psi = psi_d + v(B)` over all draws.
    pub psi_mean: f64,
    pub psi_d: f64,
    pub psi_b_mean: f64,
    pub mu_d: f64,
    pub stable: bool,
    pub clamp_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Summary {
    pub areas: Vec<AreaStage1>,
    /// Indices into the full draw sequence that make up each `theta`.
    pub subset: Vec<usize>,
}

impl Stage1Summary {
    pub fn get(&self, area: usize) -> Option<&AreaStage1> {
        self.areas.iter().find(|a| a.area == area)
    }
}

/// Per-draw stage-1 quantities for one area.
struct AreaDraws {
    mu: Vec<f64>,
    theta: Vec<f64>,
    tau: Vec<f64>,
    psi_b: Vec<f64>,
    clamped: usize,
}

fn area_draws(pi: &PiDraws, d: &SurveyDataset, ws: &WeightSet, area: usize, psi_d: f64) -> AreaDraws {
    let rows = d.rows(area);
    let n = rows.len() as f64;
    let population = d.population(area).unwrap_or(f64::INFINITY);
    let w: Vec<f64> = rows.iter().map(|&j| ws.w[j]).collect();
    let y: Vec<f64> = rows.iter().map(|&j| f64::from(u8::from(d.y()[j]))).collect();
    let t = pi.n_draws();
    let mut out = AreaDraws {
        mu: Vec::with_capacity(t),
        theta: Vec::with_capacity(t),
        tau: Vec::with_capacity(t),
        psi_b: Vec::with_capacity(t),
        clamped: 0,
    };
    let mut resid = vec![0.0; rows.len()];
    for draw in pi.iter() {
        let mut mu = 0.0;
        let mut bias = 0.0;
        for (k, &j) in rows.iter().enumerate() {
            mu += w[k] * draw[j];
            resid[k] = draw[j] - y[k];
            bias += w[k] * resid[k];
        }
        mu /= n;
        bias /= n;
        let psi_b = sampling_variance(&w, &resid, bias, population).unwrap_or(0.0);
        let psi = psi_d + psi_b;
        let mc = mu.clamp(PROPORTION_CLAMP, 1.0 - PROPORTION_CLAMP);
        if mc != mu {
            out.clamped += 1;
        }
        let q = mc * (1.0 - mc);
        out.mu.push(mu);
        out.theta.push(logit(mc));
        out.tau.push(psi / (q * q));
        out.psi_b.push(psi_b);
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Aggregates respondent-level draws into per-area logit-scale inputs.
///
/// The retained subset of `t_tilde` draw indices is chosen uniformly without
/// replacement from `seed` and shared by all areas.
pub fn aggregate_stage1(
    pi: &PiDraws,
    d: &SurveyDataset,
    ws: &WeightSet,
    t_tilde: usize,
    seed: u64,
) -> Result<Stage1Summary, Stage1Error> {
    let t = pi.n_draws();
    if t < t_tilde.max(2) || t_tilde == 0 {
        return Err(Stage1Error::TooFewDraws { have: t, need: t_tilde.max(2) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subset = index::sample(&mut rng, t, t_tilde).into_vec();
    subset.sort_unstable();

    let mut areas = Vec::new();
    for area in d.sampled_areas() {
        let direct = hajek(d, ws, area)?;
        let psi_d = direct.psi.unwrap_or(0.0);
        let ad = area_draws(pi, d, ws, area, psi_d);
        let clamp_rate = ad.clamped as f64 / t as f64;
        if clamp_rate > 0.05 {
            return Err(Stage1Error::DegenerateProportion { area, rate: clamp_rate });
        }
        let psi_b_mean = mean(&ad.psi_b);
        areas.push(AreaStage1 {
            area,
            n: direct.n,
            population: direct.population,
            theta: subset.iter().map(|&s| ad.theta[s]).collect(),
            tau_bar: mean(&ad.tau),
            var_theta: sample_variance(&ad.theta),
            theta_median: median(&ad.theta),
            psi_mean: psi_d + psi_b_mean,
            psi_d,
            psi_b_mean,
            mu_d: direct.mu,
            stable: direct.stable,
            clamp_rate,
        });
    }
    Ok(Stage1Summary { areas, subset })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothingMetrics {
    pub sr_draws: Vec<f64>,
    /// Posterior median of the smoothing ratio.
    pub sr: f64,
    /// Area linear comparison.
    pub alc: f64,
}

/// Smoothing ratio per draw and the area linear comparison slope.
///
/// The slope regresses each stable area's posterior median stage-1
/// proportion on its direct estimate with weights `1 / psi_d`; `intercept`
/// selects whether the regression has an intercept.
pub fn smoothing_metrics(
    pi: &PiDraws,
    d: &SurveyDataset,
    ws: &WeightSet,
    intercept: bool,
) -> Result<SmoothingMetrics, Stage1Error> {
    let total_raw: f64 = d.w_raw().iter().sum();
    let overall = d.w_raw().iter().zip(d.y()).map(|(w, &y)| if y { *w } else { 0.0 }).sum::<f64>() / total_raw;
    if !(overall > 0.0 && overall < 1.0) {
        return Err(Stage1Error::DegenerateOverall);
    }
    let sampled = d.sampled_areas();
    let y: Vec<f64> = d.y().iter().map(|&v| f64::from(u8::from(v))).collect();
    let denom: f64 = sampled
        .iter()
        .map(|&a| {
            let rows = d.rows(a);
            (rows.iter().map(|&j| ws.w[j] * (y[j] - overall)).sum::<f64>() / rows.len() as f64).abs()
        })
        .sum();
    if denom <= 0.0 {
        return Err(Stage1Error::DegenerateOverall);
    }
    let sr_draws: Vec<f64> = pi
        .iter()
        .map(|draw| {
            let num: f64 = sampled
                .iter()
                .map(|&a| {
                    let rows = d.rows(a);
                    (rows.iter().map(|&j| ws.w[j] * (y[j] - draw[j])).sum::<f64>() / rows.len() as f64).abs()
                })
                .sum();
            1.0 - num / denom
        })
        .collect();
    let sr = median(&sr_draws);

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut wts = Vec::new();
    for &a in &sampled {
        let direct = hajek(d, ws, a)?;
        let Some(psi) = direct.psi.filter(|&p| direct.stable && p > 0.0) else {
            continue;
        };
        let rows = d.rows(a);
        let n = rows.len() as f64;
        let mus: Vec<f64> = pi.iter().map(|draw| rows.iter().map(|&j| ws.w[j] * draw[j]).sum::<f64>() / n).collect();
        xs.push(direct.mu);
        ys.push(median(&mus));
        wts.push(1.0 / psi);
    }
    if xs.len() < 2 {
        return Err(Stage1Error::NoStableAreas);
    }
    let alc = wls_slope(&xs, &ys, &wts, intercept);
    Ok(SmoothingMetrics { sr_draws, sr, alc })
}

/// Weighted least-squares slope of `y` on `x`.
pub fn wls_slope(x: &[f64], y: &[f64], w: &[f64], intercept: bool) -> f64 {
    let sw: f64 = w.iter().sum();
    let (mx, my) = if intercept {
        (x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw, y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw)
    } else {
        (0.0, 0.0)
    };
    let sxy: f64 = (0..x.len()).map(|i| w[i] * (x[i] - mx) * (y[i] - my)).sum();
    let sxx: f64 = (0..x.len()).map(|i| w[i] * (x[i] - mx) * (x[i] - mx)).sum();
    sxy / sxx
}
