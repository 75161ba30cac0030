//! Criteria evaluated on the desk-scale simulation grid, which runs once
//! and is shared.

use std::sync::OnceLock;

use tsln::experiment::{ols, run_experiment, summarize_grid, CellMetrics, ExperimentConfig};
use tsln::metrics::pooled_coverage;

use crate::common::median;
use crate::Outcome;

const SEED: u64 = 2024;

struct Grid {
    fits: Vec<CellMetrics>,
    failures: usize,
    /// `(residual sd, median ALC, flag, pooled coverage)` per setting.
    settings: Vec<(f64, f64, bool, f64)>,
}

fn grid() -> &'static Grid {
    static GRID: OnceLock<Grid> = OnceLock::new();
    GRID.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let results = run_experiment(&cfg, SEED, |_| {}).unwrap();
        let settings = summarize_grid(&cfg, &results)
            .into_iter()
            .map(|s| (s.residual_sd, s.median_alc, s.area_effect, s.coverage))
            .collect();
        let failures = results.iter().filter(|r| r.outcome.is_err()).count();
        let fits = results.into_iter().filter_map(|r| r.outcome.ok()).collect();
        Grid { fits, failures, settings }
    })
}

pub fn coverage() -> Outcome {
    let g = grid();
    let band: Vec<_> = g.fits.iter().filter(|f| (0.50..=0.60).contains(&f.alc)).collect();
    let cov = pooled_coverage(band.iter().map(|f| &f.report));
    let by_setting: Vec<String> = g
        .settings
        .iter()
        .filter(|s| (0.50..=0.60).contains(&s.1))
        .map(|s| format!("sigma {} RE {} ALC {:.2} coverage {:.3}", s.0, s.2, s.1, s.3))
        .collect();
    Outcome::new(
        !band.is_empty() && (0.90..=0.98).contains(&cov),
        format!(
            "{} of {} fits ({} failed) with ALC in [0.50, 0.60], pooled coverage {cov:.3} (target [0.90, 0.98]); \
             settings in band: {}",
            band.len(),
            g.fits.len(),
            g.failures,
            if by_setting.is_empty() { "none".to_string() } else { by_setting.join("; ") }
        ),
    )
}

pub fn mrrmse() -> Outcome {
    let g = grid();
    let pick = |lo: f64, hi: f64| -> Vec<f64> {
        g.fits.iter().filter(|f| f.alc >= lo && f.alc <= hi).map(|f| f.report.mrrmse).collect()
    };
    let (mid, low) = (pick(0.5, 0.7), pick(f64::NEG_INFINITY, 0.1 - f64::EPSILON));
    if mid.is_empty() || low.is_empty() {
        return Outcome::new(false, format!("empty comparison groups ({} mid, {} low)", mid.len(), low.len()));
    }
    let (m, l) = (median(&mid), median(&low));
    let reduction = 1.0 - m / l;
    Outcome::new(
        reduction >= 0.15,
        format!(
            "median MRRMSE {m:.3} at ALC [0.5, 0.7] ({} fits) vs {l:.3} at ALC < 0.1 ({} fits): \
             reduction {:.1}% (target >= 15%)",
            mid.len(),
            low.len(),
            100.0 * reduction
        ),
    )
}

pub fn alc_sr() -> Outcome {
    let g = grid();
    let sr: Vec<f64> = g.fits.iter().map(|f| f.sr).collect();
    let alc: Vec<f64> = g.fits.iter().map(|f| f.alc).collect();
    let (slope, r2) = ols(&sr, &alc);
    Outcome::new(
        (1.05..=1.45).contains(&slope) && r2 > 0.90,
        format!("{} fits: slope {slope:.3} (target [1.05, 1.45]), R^2 {r2:.3} (target > 0.90)", sr.len()),
    )
}
