//! Synthetic census with an informative within-area design, and repeated
//! samples drawn from it.

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::logit;
use crate::stage2::AreaFrame;
use crate::survey::{Record, SurveyDataset, SurveyError};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid census configuration: {0}")]
    InvalidConfig(String),
    #[error("area {area}: sample size {n} exceeds population {population}")]
    SampleExceedsPopulation { area: usize, n: usize, population: usize },
    #[error("area {0} has a true proportion of exactly 0 or 1")]
    DegenerateArea(usize),
    #[error(transparent)]
    Survey(#[from] SurveyError),
}

/// How area population sizes are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSizes {
    /// Uniform over the integers `min..=max`.
    Range { min: usize, max: usize },
    /// Uniform over a finite set.
    Choice(Vec<usize>),
}

impl PopulationSizes {
    pub fn two_point() -> Self {
        PopulationSizes::Choice(vec![500, 3000])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensusConfig {
    pub areas: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub sizes: PopulationSizes,
    pub g_sd: f64,
    pub sampling_fraction: f64,
    pub sampled_areas: usize,
    /// Multiplier on the exponential term of the selection score.
    pub informativeness: f64,
}

impl Default for CensusConfig {
    fn default() -> Self {
        Self {
            areas: 100,
            u_min: 0.1,
            u_max: 0.4,
            sizes: PopulationSizes::Range { min: 500, max: 3000 },
            g_sd: 0.01,
            sampling_fraction: 0.004,
            sampled_areas: 60,
            informativeness: 0.8,
        }
    }
}

impl CensusConfig {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::InvalidConfig(m.to_string()));
        if self.areas == 0 || self.sampled_areas == 0 || self.sampled_areas > self.areas {
            return bad("need 0 < sampled_areas <= areas");
        }
        if !(0.0 < self.u_min && self.u_min <= self.u_max && self.u_max < 1.0) {
            return bad("need 0 < u_min <= u_max < 1");
        }
        if !(self.sampling_fraction > 0.0 && self.sampling_fraction < 1.0) {
            return bad("sampling_fraction must lie in (0, 1)");
        }
        if !(self.g_sd >= 0.0 && self.informativeness >= 0.0) {
            return bad("g_sd and informativeness must be non-negative");
        }
        match &self.sizes {
            PopulationSizes::Range { min, max } if *min == 0 || min > max => {
                bad("population range must satisfy 0 < min <= max")
            }
            PopulationSizes::Choice(v) if v.is_empty() || v.contains(&0) => {
                bad("population choices must be non-empty and positive")
            }
            _ => Ok(()),
        }
    }
}

/// Full unit-level population.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCensus {
    pub population: Vec<usize>,
    /// True area proportions.
    pub mu: Vec<f64>,
    /// Standardized area covariate.
    pub k: Vec<f64>,
    /// Fixed per-area sample sizes.
    pub sample_size: Vec<usize>,
    pub y: Vec<Vec<bool>>,
    /// Within-area inclusion probabilities; each area sums to one.
    pub pi: Vec<Vec<f64>>,
    pub sampled_areas: usize,
}

impl SyntheticCensus {
    pub fn areas(&self) -> usize {
        self.population.len()
    }

    pub fn total(&self) -> usize {
        self.population.iter().sum()
    }

    pub fn area_ids(&self) -> Vec<String> {
        (0..self.areas()).map(|i| format!("A{:03}", i + 1)).collect()
    }

    /// Area frame with the known populations and the covariate `k`.
    pub fn area_frame(&self) -> AreaFrame {
        let population = self.population.iter().map(|&n| n as f64).collect();
        AreaFrame::minimal(self.area_ids(), population).with_covariate("k", &self.k)
    }
}

/// RNG for one named sub-stream of a run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A `u64` seed drawn from sub-stream `stream` of `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    stream_rng(seed, stream).next_u64()
}

/// `round((areas / sampled) * fraction * N)`.
pub fn area_sample_size(cfg: &CensusConfig, population: usize) -> usize {
    let ratio = cfg.areas as f64 / cfg.sampled_areas as f64;
    (ratio * cfg.sampling_fraction * population as f64).round() as usize
}

/// Builds the census. Selection scores are `1{y = 0} + informativeness * h`
/// with `h ~ Exp(1)`.
pub fn generate_census(cfg: &CensusConfig, seed: u64) -> Result<SyntheticCensus, SyntheticError> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, 0);
    let m = cfg.areas;
    let u: Vec<f64> = (0..m)
        .map(|i| if m == 1 { cfg.u_min } else { cfg.u_min + (cfg.u_max - cfg.u_min) * i as f64 / (m - 1) as f64 })
        .collect();
    let population: Vec<usize> = (0..m)
        .map(|_| match &cfg.sizes {
            PopulationSizes::Range { min, max } => rng.random_range(*min..=*max),
            PopulationSizes::Choice(v) => v[rng.random_range(0..v.len())],
        })
        .collect();

    let mut y = Vec::with_capacity(m);
    let mut mu = Vec::with_capacity(m);
    for i in 0..m {
        let binom =
            Binomial::new(population[i] as u64, u[i]).map_err(|e| SyntheticError::InvalidConfig(e.to_string()))?;
        let ones = binom.sample(&mut rng) as usize;
        let mut yi = vec![true; ones];
        yi.resize(population[i], false);
        mu.push(ones as f64 / population[i] as f64);
        y.push(yi);
    }

    let g = Normal::new(0.0, cfg.g_sd).map_err(|e| SyntheticError::InvalidConfig(e.to_string()))?;
    let mut k_star = Vec::with_capacity(m);
    for (i, &p) in mu.iter().enumerate() {
        if p <= 0.0 || p >= 1.0 {
            return Err(SyntheticError::DegenerateArea(i));
        }
        k_star.push(logit(p) + g.sample(&mut rng));
    }
    let k = standardize(&k_star);

    let pi = y
        .iter()
        .map(|yi| {
            let z: Vec<f64> = yi
                .iter()
                .map(|&v| {
                    let h: f64 = Exp1.sample(&mut rng);
                    f64::from(u8::from(!v)) + cfg.informativeness * h
                })
                .collect();
            let total: f64 = z.iter().sum();
            z.into_iter().map(|v| v / total).collect()
        })
        .collect();

    let sample_size = population.iter().map(|&n| area_sample_size(cfg, n)).collect();
    Ok(SyntheticCensus { population, mu, k, sample_size, y, pi, sampled_areas: cfg.sampled_areas })
}

/// Mean 0 and sample standard deviation 1 (unchanged when constant).
fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    v.iter().map(|x| if sd > 0.0 { (x - mean) / sd } else { x - mean }).collect()
}

/// One repeated sample from a census.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusSample {
    pub dataset: SurveyDataset,
    /// Selected areas in selection order.
    pub selected: Vec<usize>,
    /// Census unit index of each record.
    pub units: Vec<usize>,
}

/// Selects areas with probability proportional to size without replacement,
/// then draws each area's fixed sample without replacement with
/// probabilities `pi`. Both steps use successive sampling (draw, remove,
/// renormalize). Weights `1 / (n_i pi_ij)` are rescaled to sum to `N_i`.
///
/// The dataset spans every census area, records carry the covariate `k`,
/// and every area's population is known.
pub fn draw_sample(c: &SyntheticCensus, seed: u64) -> Result<CensusSample, SyntheticError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = c.areas();
    let selected = index::sample_weighted(&mut rng, m, |i| c.population[i] as f64, c.sampled_areas)
        .map_err(|e| SyntheticError::InvalidConfig(e.to_string()))?
        .into_vec();

    let mut records = Vec::new();
    let mut units = Vec::new();
    for &area in &selected {
        let n = c.sample_size[area];
        let pop = c.population[area];
        if n > pop {
            return Err(SyntheticError::SampleExceedsPopulation { area, n, population: pop });
        }
        if n == 0 {
            continue;
        }
        let pi = &c.pi[area];
        let chosen = weighted_without_replacement(&mut rng, pi, n)?;
        let raw: Vec<f64> = chosen.iter().map(|&j| 1.0 / (n as f64 * pi[j])).collect();
        let total: f64 = raw.iter().sum();
        for (&j, w) in chosen.iter().zip(raw) {
            records.push(Record {
                area,
                y: c.y[area][j],
                w_raw: w * pop as f64 / total,
                covariates: vec![c.k[area]],
                levels: vec![],
            });
            units.push(j);
        }
    }
    let dataset = SurveyDataset::new(
        c.area_ids(),
        c.population.iter().map(|&n| Some(n as f64)).collect(),
        vec!["k".into()],
        vec![],
        records,
    )?;
    Ok(CensusSample { dataset, selected, units })
}

/// Successive sampling of `n` indices with probabilities proportional to
/// `p`. Units with zero probability are never drawn.
fn weighted_without_replacement(rng: &mut ChaCha8Rng, p: &[f64], n: usize) -> Result<Vec<usize>, SyntheticError> {
    index::sample_weighted(rng, p.len(), |j| p[j], n)
        .map(|v| v.into_vec())
        .map_err(|e| SyntheticError::InvalidConfig(e.to_string()))
}
