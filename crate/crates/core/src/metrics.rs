//! Simulation and model-assessment metrics: relative bias and RMSE, HPDI
//! coverage and width, and interval overlap against group direct estimates.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::inference::{hpdi, DrawMatrix, InferenceError};
use crate::stage2::{group_draws, BenchmarkTarget};

const HPDI_MASS: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("reference value for `{0}` is zero")]
    ZeroTruth(String),
    #[error("group `{0}` has no member areas")]
    EmptyGroup(String),
    #[error("group `{0}` has no positive direct variance")]
    NonPositiveVariance(String),
    #[error("expected {expected} values, got {got}")]
    DrawCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Bias, RMSE and interval of one posterior against a reference value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaMetric {
    pub area_id: String,
    pub truth: f64,
    pub mean: f64,
    /// `|mean(draw - truth) / truth|`.
    pub arb: f64,
    /// `sqrt(mean((draw - truth)^2)) / truth`.
    pub rrmse: f64,
    pub hpdi_lo: f64,
    pub hpdi_hi: f64,
    /// `hpdi_lo < truth < hpdi_hi`, strictly.
    pub covered: bool,
}

impl AreaMetric {
    pub fn width(&self) -> f64 {
        self.hpdi_hi - self.hpdi_lo
    }
}

/// Metrics of one set of draws against `truth`.
pub fn area_metric(area_id: &str, draws: &[f64], truth: f64) -> Result<AreaMetric, MetricsError> {
    if truth == 0.0 {
        return Err(MetricsError::ZeroTruth(area_id.to_string()));
    }
    let t = draws.len() as f64;
    let bias = draws.iter().map(|d| d - truth).sum::<f64>() / t;
    let mse = draws.iter().map(|d| (d - truth).powi(2)).sum::<f64>() / t;
    let (lo, hi) = hpdi(draws, HPDI_MASS)?;
    Ok(AreaMetric {
        area_id: area_id.to_string(),
        truth,
        mean: draws.iter().sum::<f64>() / t,
        arb: (bias / truth).abs(),
        rrmse: mse.sqrt() / truth,
        hpdi_lo: lo,
        hpdi_hi: hi,
        covered: lo < truth && truth < hi,
    })
}

/// Per-area metrics for every column of `mu`.
pub fn area_metrics(mu: &DrawMatrix, truth: &[f64], area_ids: &[String]) -> Result<Vec<AreaMetric>, MetricsError> {
    if truth.len() != mu.n_params() || area_ids.len() != mu.n_params() {
        return Err(MetricsError::DrawCountMismatch { expected: mu.n_params(), got: truth.len() });
    }
    (0..mu.n_params()).map(|i| area_metric(&area_ids[i], &mu.column(i), truth[i])).collect()
}

/// `|[lo, hi] ∩ ci| / |[lo, hi]|`, clipped to `[0, 1]`. A zero-width
/// interval scores 1 when inside `ci`.
pub fn iop(hpdi: (f64, f64), ci: (f64, f64)) -> f64 {
    let width = hpdi.1 - hpdi.0;
    if width <= 0.0 {
        return f64::from(u8::from(hpdi.0 >= ci.0 && hpdi.0 <= ci.1));
    }
    let overlap = (hpdi.1.min(ci.1) - hpdi.0.max(ci.0)).max(0.0);
    (overlap / width).clamp(0.0, 1.0)
}

/// Group direct-estimate interval `estimate ± z_{0.975} sqrt(variance)`.
pub fn normal_ci(estimate: f64, variance: f64) -> (f64, f64) {
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.975);
    let half = z * variance.sqrt();
    (estimate - half, estimate + half)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMetric {
    pub label: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean: f64,
    pub hpdi_lo: f64,
    pub hpdi_hi: f64,
    pub arb: f64,
    pub rrmse: f64,
    pub iop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub groups: Vec<GroupMetric>,
    pub marb: f64,
    pub mrrmse: f64,
    pub miop: f64,
}

/// Population-weighted group posteriors compared with group direct
/// estimates.
pub fn group_metrics(
    mu: &DrawMatrix,
    population: &[f64],
    targets: &[BenchmarkTarget],
) -> Result<GroupReport, MetricsError> {
    if population.len() != mu.n_params() {
        return Err(MetricsError::DrawCountMismatch { expected: mu.n_params(), got: population.len() });
    }
    let mut groups = Vec::with_capacity(targets.len());
    for t in targets {
        if t.members.is_empty() {
            return Err(MetricsError::EmptyGroup(t.label.clone()));
        }
        if !(t.variance > 0.0) {
            return Err(MetricsError::NonPositiveVariance(t.label.clone()));
        }
        let draws = group_draws(mu, &t.members, population);
        let m = area_metric(&t.label, &draws, t.estimate)?;
        let (ci_lo, ci_hi) = normal_ci(t.estimate, t.variance);
        groups.push(GroupMetric {
            label: t.label.clone(),
            estimate: t.estimate,
            ci_lo,
            ci_hi,
            mean: m.mean,
            hpdi_lo: m.hpdi_lo,
            hpdi_hi: m.hpdi_hi,
            arb: m.arb,
            rrmse: m.rrmse,
            iop: iop((m.hpdi_lo, m.hpdi_hi), (ci_lo, ci_hi)),
        });
    }
    let k = groups.len().max(1) as f64;
    Ok(GroupReport {
        marb: groups.iter().map(|g| g.arb).sum::<f64>() / k,
        mrrmse: groups.iter().map(|g| g.rrmse).sum::<f64>() / k,
        miop: groups.iter().map(|g| g.iop).sum::<f64>() / k,
        groups,
    })
}

/// Area-level summary of one fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub marb: f64,
    pub mrrmse: f64,
    pub coverage: f64,
    pub mean_hpdi_width: f64,
    pub areas: Vec<AreaMetric>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<GroupReport>,
}

impl MetricReport {
    pub fn from_areas(areas: Vec<AreaMetric>) -> Self {
        let m = areas.len().max(1) as f64;
        Self {
            marb: areas.iter().map(|a| a.arb).sum::<f64>() / m,
            mrrmse: areas.iter().map(|a| a.rrmse).sum::<f64>() / m,
            coverage: areas.iter().filter(|a| a.covered).count() as f64 / m,
            mean_hpdi_width: areas.iter().map(AreaMetric::width).sum::<f64>() / m,
            areas,
            groups: None,
        }
    }

    pub fn with_groups(mut self, groups: GroupReport) -> Self {
        self.groups = Some(groups);
        self
    }
}

/// Coverage pooled over every area of every report.
pub fn pooled_coverage<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> f64 {
    let (hit, total) = reports
        .into_iter()
        .flat_map(|r| &r.areas)
        .fold((0usize, 0usize), |(h, t), a| (h + usize::from(a.covered), t + 1));
    if total == 0 {
        f64::NAN
    } else {
        hit as f64 / total as f64
    }
}

/// Coverage of each area position across reports.
pub fn per_area_coverage(reports: &[&MetricReport]) -> Vec<f64> {
    let m = reports.first().map_or(0, |r| r.areas.len());
    (0..m)
        .map(|i| {
            let hits = reports.iter().filter(|r| r.areas[i].covered).count();
            hits as f64 / reports.len() as f64
        })
        .collect()
}
