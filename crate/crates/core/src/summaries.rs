//! Decision-ready area summaries: posterior medians, HPDIs, CVs, odds
//! ratios against the national direct estimate, exceedance probabilities
//! and the five-way LISA evidence classification.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AreaGraph, GraphError, RowWeights};
use crate::inference::hpdi::hpdi_sorted;
use crate::inference::DrawMatrix;
use crate::stage2::Stage2Fit;

/// Largest R-hat of any `mu` for which summaries are produced.
pub const RHAT_BAR: f64 = 1.03;
/// Minimum draws for an exceedance probability.
pub const MIN_EXCEEDANCE_DRAWS: usize = 100;
const HPDI_MASS: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum SummaryError {
    #[error("national reference {0} is not inside (0, 1)")]
    DegenerateNational(f64),
    #[error("proportion draw {0} is not inside (0, 1)")]
    DegenerateDraw(f64),
    #[error("need at least {need} draws, have {have}")]
    TooFewDraws { have: usize, need: usize },
    #[error("expected draws for {expected} areas, got {got}")]
    DrawCountMismatch { expected: usize, got: usize },
    #[error("area {area}: R-hat {rhat:.3} is not below the bar")]
    DiagnosticsFailed { area: String, rhat: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// LISA evidence class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Evidence {
    /// High cluster.
    HC,
    /// High, with neighbours not reliably high.
    H,
    /// No evidence.
    N,
    /// Low, with neighbours not reliably low.
    L,
    /// Low cluster.
    LC,
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Evidence::HC => "HC",
            Evidence::H => "H",
            Evidence::N => "N",
            Evidence::L => "L",
            Evidence::LC => "LC",
        })
    }
}

impl FromStr for Evidence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HC" => Ok(Evidence::HC),
            "H" => Ok(Evidence::H),
            "N" => Ok(Evidence::N),
            "L" => Ok(Evidence::L),
            "LC" => Ok(Evidence::LC),
            other => Err(format!("unknown evidence class `{other}`")),
        }
    }
}

/// The four threshold rules; note `<=` in H and `>=` in L.
pub fn classify(pz: f64, pl: f64) -> Evidence {
    if pz > 0.8 {
        if pl > 0.8 {
            Evidence::HC
        } else {
            Evidence::H
        }
    } else if pz < 0.2 {
        if pl < 0.2 {
            Evidence::LC
        } else {
            Evidence::L
        }
    } else {
        Evidence::N
    }
}

fn check_national(national: f64) -> Result<(), SummaryError> {
    if national > 0.0 && national < 1.0 {
        Ok(())
    } else {
        Err(SummaryError::DegenerateNational(national))
    }
}

/// `[mu / (1 - mu)] / [national / (1 - national)]` per draw.
pub fn odds_ratio_draws(mu: &[f64], national: f64) -> Result<Vec<f64>, SummaryError> {
    check_national(national)?;
    let base = national / (1.0 - national);
    mu.iter()
        .map(|&m| if m > 0.0 && m < 1.0 { Ok(m / (1.0 - m) / base) } else { Err(SummaryError::DegenerateDraw(m)) })
        .collect()
}

/// Fraction of odds-ratio draws above one.
pub fn exceedance(or: &[f64]) -> Result<f64, SummaryError> {
    if or.len() < MIN_EXCEEDANCE_DRAWS {
        return Err(SummaryError::TooFewDraws { have: or.len(), need: MIN_EXCEEDANCE_DRAWS });
    }
    Ok(or.iter().filter(|&&v| v > 1.0).count() as f64 / or.len() as f64)
}

/// Per area `(P(z > 0), P(lag z > 0))` with `z = mu - national`.
pub fn lisa_probabilities(
    mu: &DrawMatrix,
    national: f64,
    weights: &RowWeights,
) -> Result<Vec<(f64, f64)>, SummaryError> {
    let m = weights.len();
    if mu.n_params() != m {
        return Err(SummaryError::DrawCountMismatch { expected: m, got: mu.n_params() });
    }
    let mut z = vec![0.0; m];
    let mut lag = vec![0.0; m];
    let mut pz = vec![0usize; m];
    let mut pl = vec![0usize; m];
    for row in mu.rows() {
        for (zi, &v) in z.iter_mut().zip(row) {
            *zi = v - national;
        }
        weights.lag(&z, &mut lag);
        for i in 0..m {
            pz[i] += usize::from(z[i] > 0.0);
            pl[i] += usize::from(lag[i] > 0.0);
        }
    }
    let t = mu.total_draws() as f64;
    Ok(pz.into_iter().zip(pl).map(|(a, b)| (a as f64 / t, b as f64 / t)).collect())
}

/// Evidence class of every area.
pub fn lisa_classify(mu: &DrawMatrix, national: f64, weights: &RowWeights) -> Result<Vec<Evidence>, SummaryError> {
    Ok(lisa_probabilities(mu, national, weights)?.into_iter().map(|(pz, pl)| classify(pz, pl)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaSummary {
    pub area_id: String,
    pub median: f64,
    pub hpdi_lo: f64,
    pub hpdi_hi: f64,
    /// Posterior sd over posterior median, in percent.
    pub cv_pct: f64,
    pub or_median: f64,
    pub or_lo: f64,
    pub or_hi: f64,
    pub ep: f64,
    pub evidence: Evidence,
}

/// Population-weighted national roll-up.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RollUp {
    /// `sum N_i median_i / sum N_i`.
    pub weighted_median: f64,
    /// Median and HPDI of `sum N_i mu_i / sum N_i` draws.
    pub median: f64,
    pub hpdi_lo: f64,
    pub hpdi_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub areas: Vec<AreaSummary>,
    pub rollup: RollUp,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn median_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Summarizes `mu` draws for every area. Fails if any finite R-hat reaches
/// [`RHAT_BAR`]; `NaN` R-hat (constant draws) passes.
pub fn summarize_draws(
    mu: &DrawMatrix,
    mu_rhat: &[f64],
    area_ids: &[String],
    population: &[f64],
    graph: &AreaGraph,
    national: f64,
) -> Result<SummaryTable, SummaryError> {
    let m = area_ids.len();
    for got in [mu.n_params(), mu_rhat.len(), population.len(), graph.len()] {
        if got != m {
            return Err(SummaryError::DrawCountMismatch { expected: m, got });
        }
    }
    check_national(national)?;
    if let Some((i, &r)) = mu_rhat.iter().enumerate().find(|(_, r)| **r >= RHAT_BAR) {
        return Err(SummaryError::DiagnosticsFailed { area: area_ids[i].clone(), rhat: r });
    }
    let t = mu.total_draws();
    if t < MIN_EXCEEDANCE_DRAWS {
        return Err(SummaryError::TooFewDraws { have: t, need: MIN_EXCEEDANCE_DRAWS });
    }
    let evidence = lisa_classify(mu, national, &graph.row_standardize()?)?;

    let mut areas = Vec::with_capacity(m);
    for i in 0..m {
        let draws = mu.column(i);
        let s = sorted(&draws);
        let median = median_sorted(&s);
        let (lo, hi) = hpdi_sorted(&s, HPDI_MASS);
        let mean = draws.iter().sum::<f64>() / t as f64;
        let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64).sqrt();
        let or = sorted(&odds_ratio_draws(&draws, national)?);
        let (or_lo, or_hi) = hpdi_sorted(&or, HPDI_MASS);
        areas.push(AreaSummary {
            area_id: area_ids[i].clone(),
            median,
            hpdi_lo: lo,
            hpdi_hi: hi,
            cv_pct: if s[0] == s[t - 1] { 0.0 } else { 100.0 * sd / median },
            or_median: median_sorted(&or),
            or_lo,
            or_hi,
            ep: exceedance(&or)?,
            evidence: evidence[i],
        });
    }

    let total: f64 = population.iter().sum();
    let weighted_median = areas.iter().zip(population).map(|(a, n)| a.median * n).sum::<f64>() / total;
    let national_draws: Vec<f64> =
        mu.rows().map(|row| row.iter().zip(population).map(|(v, n)| v * n).sum::<f64>() / total).collect();
    let s = sorted(&national_draws);
    let (hpdi_lo, hpdi_hi) = hpdi_sorted(&s, HPDI_MASS);
    Ok(SummaryTable { areas, rollup: RollUp { weighted_median, median: median_sorted(&s), hpdi_lo, hpdi_hi } })
}

/// [`summarize_draws`] on a stage-2 posterior.
pub fn summarize(
    fit: &Stage2Fit,
    area_ids: &[String],
    population: &[f64],
    graph: &AreaGraph,
    national: f64,
) -> Result<SummaryTable, SummaryError> {
    summarize_draws(&fit.mu, &fit.mu_rhat, area_ids, population, graph, national)
}
