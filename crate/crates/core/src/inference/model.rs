//! The closed library of density terms and the log-density they sum to.

use super::expr::{logistic, softplus, LinearPredictor, Location};
use super::InferenceError;

/// Standard deviation of a Gaussian term.
#[derive(Debug, Clone, PartialEq)]
pub enum Spread {
    Sd(f64),
    /// `sd = exp(x[idx])`
    LogSd(usize),
    /// Variance `factor * exp(2 * design + sigma^2) + extra`, with
    /// `sigma = exp(x[log_sd])`: a generalized-variance-function imputation
    /// on the probability scale, mapped to the logit scale by `factor`.
    Gvf {
        design: LinearPredictor,
        log_sd: usize,
        factor: f64,
        extra: f64,
    },
}

impl Spread {
    fn max_index(&self) -> Option<usize> {
        match self {
            Spread::Sd(_) => None,
            Spread::LogSd(i) => Some(*i),
            Spread::Gvf { design, log_sd, .. } => Some(design.max_index().map_or(*log_sd, |d| d.max(*log_sd))),
        }
    }

    /// Variance at `x`.
    pub fn variance(&self, x: &[f64]) -> f64 {
        match self {
            Spread::Sd(s) => s * s,
            Spread::LogSd(i) => (2.0 * x[*i]).exp(),
            Spread::Gvf { design, log_sd, factor, extra } => {
                let s2 = (2.0 * x[*log_sd]).exp();
                factor * (2.0 * design.value(x) + s2).exp() + extra
            }
        }
    }

    /// Pushes `upstream * d var / d x` into `grad`.
    fn backprop_variance(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        match self {
            Spread::Sd(_) => {}
            Spread::LogSd(i) => grad[*i] += upstream * 2.0 * (2.0 * x[*i]).exp(),
            Spread::Gvf { design, log_sd, factor, .. } => {
                let s2 = (2.0 * x[*log_sd]).exp();
                let imputed = factor * (2.0 * design.value(x) + s2).exp();
                design.backprop(x, upstream * imputed * 2.0, grad);
                grad[*log_sd] += upstream * imputed * 2.0 * s2;
            }
        }
    }
}

/// Sufficient statistics of `count` replicated observations of one datum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replicates {
    pub count: f64,
    pub mean: f64,
    /// `sum (x_t - mean)^2`
    pub centered_ss: f64,
}

impl Replicates {
    pub fn single(x: f64) -> Self {
        Self { count: 1.0, mean: x, centered_ss: 0.0 }
    }

    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len() as f64;
        let mean = values.iter().sum::<f64>() / count;
        let centered_ss = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        Self { count, mean, centered_ss }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliObs {
    pub y: bool,
    /// Pseudo-likelihood power.
    pub weight: f64,
    pub eta: LinearPredictor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianObs {
    pub data: Replicates,
    pub location: Location,
    pub spread: Spread,
}

/// One block of the log density. Every kind returns its value and exact
/// gradient; priors on log-scale or logit-scale parameters include the
/// Jacobian of that transform.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityTerm {
    /// `sum_j w_j [y_j eta_j - log(1 + e^eta_j)]`
    BernoulliLogitWeighted { obs: Vec<BernoulliObs> },
    /// `scale * sum_obs sum_t [-(x_t - mu)^2 / (2 var) - log(var) / 2]`
    Gaussian { obs: Vec<GaussianObs>, scale: f64 },
    /// Half-normal prior on `sigma = exp(x[i])`, plus the log Jacobian `x[i]`.
    HalfGaussian { log_params: Vec<usize>, sd: f64 },
    /// Student-t prior on each target.
    StudentT { targets: Vec<LinearPredictor>, df: f64, loc: f64, scale: f64 },
    /// Uniform(0, 1) prior on `logistic(x[i])`, i.e. its log Jacobian.
    UniformLogit { params: Vec<usize> },
    /// Pairwise-difference ICAR kernel `-0.5 sum_edges (x_a - x_b)^2`.
    IcarPairwise { edges: Vec<(usize, usize)> },
    /// Gaussian penalty `N(0, sd^2)` on the mean of `params`.
    SoftSumToZero { params: Vec<usize>, sd: f64 },
}

impl DensityTerm {
    /// Standard-normal prior on a set of parameters.
    pub fn std_normal(params: impl IntoIterator<Item = usize>) -> Self {
        Self::normal_prior(params, 0.0, 1.0)
    }

    /// Independent `N(mean, sd^2)` priors on parameters.
    pub fn normal_prior(params: impl IntoIterator<Item = usize>, mean: f64, sd: f64) -> Self {
        DensityTerm::Gaussian {
            obs: params
                .into_iter()
                .map(|i| GaussianObs {
                    data: Replicates::single(mean),
                    location: Location::Linear(LinearPredictor::param(i)),
                    spread: Spread::Sd(sd),
                })
                .collect(),
            scale: 1.0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DensityTerm::BernoulliLogitWeighted { .. } => "bernoulli_logit_weighted",
            DensityTerm::Gaussian { .. } => "gaussian",
            DensityTerm::HalfGaussian { .. } => "half_gaussian",
            DensityTerm::StudentT { .. } => "student_t",
            DensityTerm::UniformLogit { .. } => "uniform_logit_transformed",
            DensityTerm::IcarPairwise { .. } => "icar_pairwise",
            DensityTerm::SoftSumToZero { .. } => "soft_sum_to_zero",
        }
    }

    fn max_index(&self) -> Option<usize> {
        match self {
            DensityTerm::BernoulliLogitWeighted { obs } => obs.iter().filter_map(|o| o.eta.max_index()).max(),
            DensityTerm::Gaussian { obs, .. } => obs
                .iter()
                .filter_map(|o| match (o.location.max_index(), o.spread.max_index()) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                })
                .max(),
            DensityTerm::HalfGaussian { log_params, .. } => log_params.iter().copied().max(),
            DensityTerm::StudentT { targets, .. } => targets.iter().filter_map(LinearPredictor::max_index).max(),
            DensityTerm::UniformLogit { params } => params.iter().copied().max(),
            DensityTerm::IcarPairwise { edges } => edges.iter().map(|&(a, b)| a.max(b)).max(),
            DensityTerm::SoftSumToZero { params, .. } => params.iter().copied().max(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let bad = |v: f64| !(v.is_finite() && v > 0.0);
        match self {
            DensityTerm::BernoulliLogitWeighted { obs } => {
                if obs.iter().any(|o| bad(o.weight)) {
                    return Err("pseudo-likelihood weights must be positive".into());
                }
            }
            DensityTerm::Gaussian { obs, scale } => {
                if bad(*scale) {
                    return Err("likelihood scale must be positive".into());
                }
                for o in obs {
                    if let Spread::Sd(s) = o.spread {
                        if bad(s) {
                            return Err("gaussian sd must be positive".into());
                        }
                    }
                    if o.data.count < 1.0 {
                        return Err("gaussian observation without data".into());
                    }
                }
            }
            DensityTerm::HalfGaussian { sd, .. } if bad(*sd) => return Err("half-gaussian sd must be positive".into()),
            DensityTerm::StudentT { df, scale, .. } if bad(*df) || bad(*scale) => {
                return Err("student-t df and scale must be positive".into())
            }
            DensityTerm::SoftSumToZero { params, sd } if bad(*sd) || params.is_empty() => {
                return Err("sum-to-zero penalty needs parameters and a positive sd".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// Adds this term's gradient into `grad` and returns its log density.
    pub fn accumulate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            DensityTerm::BernoulliLogitWeighted { obs } => {
                let mut total = 0.0;
                for o in obs {
                    let eta = o.eta.value(x);
                    let ll = if o.y { -softplus(-eta) } else { -softplus(eta) };
                    total += o.weight * ll;
                    let resid = f64::from(u8::from(o.y)) - logistic(eta);
                    o.eta.backprop(x, o.weight * resid, grad);
                }
                total
            }
            DensityTerm::Gaussian { obs, scale } => {
                let mut total = 0.0;
                for o in obs {
                    let mu = o.location.value(x);
                    let var = o.spread.variance(x);
                    let diff = o.data.mean - mu;
                    let q = o.data.centered_ss + o.data.count * diff * diff;
                    total += -0.5 * q / var - 0.5 * o.data.count * var.ln();
                    o.location.backprop(x, scale * o.data.count * diff / var, grad);
                    let dvar = 0.5 * q / (var * var) - 0.5 * o.data.count / var;
                    o.spread.backprop_variance(x, scale * dvar, grad);
                }
                scale * total
            }
            DensityTerm::HalfGaussian { log_params, sd } => {
                let inv = 1.0 / (sd * sd);
                log_params
                    .iter()
                    .map(|&i| {
                        let s2 = (2.0 * x[i]).exp();
                        grad[i] += 1.0 - s2 * inv;
                        -0.5 * s2 * inv + x[i]
                    })
                    .sum()
            }
            DensityTerm::StudentT { targets, df, loc, scale } => {
                let mut total = 0.0;
                for t in targets {
                    let z = (t.value(x) - loc) / scale;
                    let u = 1.0 + z * z / df;
                    total += -0.5 * (df + 1.0) * u.ln();
                    t.backprop(x, -(df + 1.0) * z / (df * u * scale), grad);
                }
                total
            }
            DensityTerm::UniformLogit { params } => params
                .iter()
                .map(|&i| {
                    grad[i] += 1.0 - 2.0 * logistic(x[i]);
                    -softplus(-x[i]) - softplus(x[i])
                })
                .sum(),
            DensityTerm::IcarPairwise { edges } => {
                let mut total = 0.0;
                for &(a, b) in edges {
                    let d = x[a] - x[b];
                    total += -0.5 * d * d;
                    grad[a] -= d;
                    grad[b] += d;
                }
                total
            }
            DensityTerm::SoftSumToZero { params, sd } => {
                let m = params.len() as f64;
                let mean = params.iter().map(|&i| x[i]).sum::<f64>() / m;
                let g = -mean / (sd * sd * m);
                for &i in params {
                    grad[i] += g;
                }
                -0.5 * mean * mean / (sd * sd)
            }
        }
    }
}

/// A log density over an unconstrained parameter vector: the sum of its
/// terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    names: Vec<String>,
    terms: Vec<DensityTerm>,
}

impl Model {
    pub fn new(names: Vec<String>, terms: Vec<DensityTerm>) -> Result<Self, InferenceError> {
        let dim = names.len();
        for t in &terms {
            if let Some(i) = t.max_index() {
                if i >= dim {
                    return Err(InferenceError::DimensionMismatch { expected: dim, got: i + 1 });
                }
            }
            t.validate().map_err(InferenceError::InvalidTerm)?;
        }
        Ok(Self { names, terms })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn terms(&self) -> &[DensityTerm] {
        &self.terms
    }

    /// Log density (up to a constant) and its gradient.
    pub fn log_density_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), InferenceError> {
        let mut grad = vec![0.0; self.dim()];
        let lp = self.log_density_into(x, &mut grad)?;
        Ok((lp, grad))
    }

    /// Like [`Model::log_density_and_grad`] but writes into `grad`.
    pub fn log_density_into(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, InferenceError> {
        if x.len() != self.dim() || grad.len() != self.dim() {
            return Err(InferenceError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::NonFiniteDensity);
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let lp: f64 = self.terms.iter().map(|t| t.accumulate(x, grad)).sum();
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(InferenceError::NonFiniteDensity);
        }
        Ok(lp)
    }
}
