//! Hamiltonian Monte Carlo with a jittered, fixed integration time.
//!
//! Warmup follows the usual three-phase scheme: a fast window that tunes only
//! the step size, a sequence of doubling slow windows that estimate a
//! diagonal inverse metric from the draws, and a final fast window. Step size
//! is tuned by dual averaging towards `target_accept`.
//!
//! Each chain owns a ChaCha stream selected by its chain index, so results do
//! not depend on how chains are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::draws::{ChainStats, DrawMatrix};
use super::model::Model;
use super::InferenceError;

/// Energy error above which a transition is flagged divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Mean integration time in metric-whitened units.
    pub trajectory_length: f64,
    pub max_leapfrog: usize,
    /// Keep every `thin`-th post-warmup draw.
    pub thin: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            seed: 1,
            target_accept: 0.8,
            trajectory_length: 2.0,
            max_leapfrog: 512,
            thin: 1,
        }
    }
}

impl SamplerConfig {
    pub fn sized(chains: usize, warmup: usize, draws: usize, seed: u64) -> Self {
        Self { chains, warmup, draws, seed, ..Self::default() }
    }

    fn validate(&self) -> Result<(), InferenceError> {
        let ok = self.chains >= 1
            && self.draws >= 1
            && self.thin >= 1
            && self.target_accept > 0.0
            && self.target_accept < 1.0
            && self.trajectory_length > 0.0
            && self.max_leapfrog >= 1;
        if ok {
            Ok(())
        } else {
            Err(InferenceError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Uniform(-radius, radius) initial points, one stream per chain.
pub fn random_inits(dim: usize, chains: usize, seed: u64, radius: f64) -> Vec<Vec<f64>> {
    (0..chains)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            rng.set_stream(c as u64);
            (0..dim).map(|_| rng.random_range(-radius..radius)).collect()
        })
        .collect()
}

/// Runs `cfg.chains` independent chains from `init` (one vector per chain).
pub fn sample(model: &Model, init: &[Vec<f64>], cfg: &SamplerConfig) -> Result<DrawMatrix, InferenceError> {
    cfg.validate()?;
    if init.len() != cfg.chains {
        return Err(InferenceError::InvalidConfig(format!("{} initial points for {} chains", init.len(), cfg.chains)));
    }
    let results: Vec<Result<(Vec<f64>, ChainStats), InferenceError>> =
        init.par_iter().enumerate().map(|(c, x0)| run_chain(model, x0, cfg, c)).collect();
    let kept = cfg.draws.div_ceil(cfg.thin);
    let mut values = Vec::with_capacity(cfg.chains * kept * model.dim());
    let mut stats = Vec::with_capacity(cfg.chains);
    for r in results {
        let (v, s) = r?;
        values.extend(v);
        stats.push(s);
    }
    let mut dm = DrawMatrix::new(cfg.chains, kept, model.names().to_vec(), values);
    dm.stats = stats;
    Ok(dm)
}

struct Point {
    x: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), target, h_bar: 0.0, log_eps: eps.ln(), log_eps_bar: 0.0, t: 0.0 }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Welford accumulator for the diagonal metric.
struct VarianceEstimator {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceEstimator {
    fn new(dim: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((&xi, mean), m2) in x.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let d = xi - *mean;
            *mean += d / self.n;
            *m2 += d * (xi - *mean);
        }
    }

    /// Regularized variances, shrunk towards `1e-3`.
    fn finish(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|m2| {
                let var = m2 / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Start of the first slow adaptation window and the iterations at which
/// each slow window closes.
fn slow_windows(warmup: usize) -> (usize, Vec<usize>) {
    if warmup < 20 {
        return (warmup, Vec::new());
    }
    let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
    if init + term + base > warmup {
        init = (0.15 * warmup as f64) as usize;
        term = (0.1 * warmup as f64) as usize;
        base = warmup - init - term;
    }
    let slow_end = warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < slow_end {
        let mut end = start + size;
        // absorb a trailing window that would be shorter than the next one
        if end + 2 * size > slow_end {
            end = slow_end;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    (init, ends)
}

fn evaluate(model: &Model, x: Vec<f64>) -> Result<Point, InferenceError> {
    let mut grad = vec![0.0; x.len()];
    let logp = model.log_density_into(&x, &mut grad)?;
    Ok(Point { x, grad, logp })
}

struct Transition {
    accept: f64,
    divergent: bool,
    steps: usize,
}

fn leapfrog_transition(
    model: &Model,
    current: &mut Point,
    inv_metric: &[f64],
    eps: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Transition {
    let dim = current.x.len();
    let p0: Vec<f64> = inv_metric.iter().map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt()).collect();
    let kinetic = |p: &[f64]| 0.5 * p.iter().zip(inv_metric).map(|(a, m)| a * a * m).sum::<f64>();
    let h0 = -current.logp + kinetic(&p0);

    let mut x = current.x.clone();
    let mut p = p0;
    let mut grad = current.grad.clone();
    let mut logp = current.logp;
    let mut ok = true;
    for _ in 0..steps {
        for i in 0..dim {
            p[i] += 0.5 * eps * grad[i];
            x[i] += eps * inv_metric[i] * p[i];
        }
        match model.log_density_into(&x, &mut grad) {
            Ok(lp) => logp = lp,
            Err(_) => {
                ok = false;
                break;
            }
        }
        for i in 0..dim {
            p[i] += 0.5 * eps * grad[i];
        }
    }
    let delta = if ok { -logp + kinetic(&p) - h0 } else { f64::INFINITY };
    let divergent = !delta.is_finite() || delta > DIVERGENCE_THRESHOLD;
    let accept = if divergent { 0.0 } else { (-delta).exp().min(1.0) };
    if !divergent && rng.random::<f64>() < accept {
        current.x = x;
        current.grad = grad;
        current.logp = logp;
    }
    Transition { accept, divergent, steps }
}

fn initial_step_size(model: &Model, start: &Point, inv_metric: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let mut eps = 0.1_f64;
    let probe = |eps: f64, rng: &mut ChaCha8Rng| {
        let mut pt = Point { x: start.x.clone(), grad: start.grad.clone(), logp: start.logp };
        leapfrog_transition(model, &mut pt, inv_metric, eps, 1, rng).accept
    };
    let first = probe(eps, rng);
    let dir = if first > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..50 {
        let a = probe(eps, rng);
        if (dir > 0.0 && a <= 0.5) || (dir < 0.0 && a > 0.5) {
            break;
        }
        eps *= 2f64.powf(dir);
        if !(1e-10..=1e4).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e4)
}

fn run_chain(
    model: &Model,
    x0: &[f64],
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<(Vec<f64>, ChainStats), InferenceError> {
    let dim = model.dim();
    if x0.len() != dim {
        return Err(InferenceError::DimensionMismatch { expected: dim, got: x0.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);

    let mut current = evaluate(model, x0.to_vec()).map_err(|_| InferenceError::NonFiniteAtInit)?;
    let mut inv_metric = vec![1.0; dim];
    let mut eps = initial_step_size(model, &current, &inv_metric, &mut rng);
    let mut da = DualAveraging::new(eps, cfg.target_accept);

    let (init_buffer, ends) = slow_windows(cfg.warmup);
    let mut window = VarianceEstimator::new(dim);
    let mut next_end = ends.iter().copied().peekable();

    let n_steps = |eps: f64, rng: &mut ChaCha8Rng| {
        let mean = cfg.trajectory_length / eps;
        let jittered = (2.0 * rng.random::<f64>() * mean).ceil();
        (jittered as usize).clamp(1, cfg.max_leapfrog)
    };

    for it in 0..cfg.warmup {
        let steps = n_steps(eps, &mut rng);
        let tr = leapfrog_transition(model, &mut current, &inv_metric, eps, steps, &mut rng);
        eps = da.update(tr.accept);
        if it >= init_buffer && next_end.peek().is_some() {
            window.add(&current.x);
            if Some(&(it + 1)) == next_end.peek() {
                next_end.next();
                inv_metric = window.finish();
                window = VarianceEstimator::new(dim);
                eps = initial_step_size(model, &current, &inv_metric, &mut rng);
                da = DualAveraging::new(eps, cfg.target_accept);
            }
        }
    }
    if cfg.warmup > 0 {
        eps = da.final_step();
    }

    let mut out = Vec::with_capacity(cfg.draws.div_ceil(cfg.thin) * dim);
    let mut divergences = 0;
    let mut accept_sum = 0.0;
    let mut steps_sum = 0usize;
    for it in 0..cfg.draws {
        let steps = n_steps(eps, &mut rng);
        let tr = leapfrog_transition(model, &mut current, &inv_metric, eps, steps, &mut rng);
        divergences += usize::from(tr.divergent);
        accept_sum += tr.accept;
        steps_sum += tr.steps;
        if it % cfg.thin == 0 {
            out.extend_from_slice(&current.x);
        }
    }
    if divergences == cfg.draws {
        return Err(InferenceError::AllDivergent { chain });
    }
    Ok((
        out,
        ChainStats {
            step_size: eps,
            divergences,
            mean_accept: accept_sum / cfg.draws as f64,
            mean_leapfrog: steps_sum as f64 / cfg.draws as f64,
            inv_metric,
        },
    ))
}
