//! End-to-end run through the file-based drivers at desk scale.

use tsln::config::PipelineConfig;
use tsln::experiment::SamplerSettings;
use tsln::pipeline;

use crate::Outcome;

const SEED: u64 = 2024;

pub fn run() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    pipeline::simulate(&PipelineConfig::default(), SEED, &sim).unwrap();

    let mut cfg = PipelineConfig::load(&sim.join("fit_config.json")).unwrap();
    cfg.stage2.covariates = vec!["k".into()];
    cfg.mcmc.stage1 = SamplerSettings::new(2, 500, 500);
    cfg.mcmc.stage2 = SamplerSettings::new(4, 1000, 1000);
    let fit = match pipeline::fit(&cfg, SEED, &dir.path().join("fit")) {
        Ok(report) => report,
        Err(e) => return Outcome::new(false, format!("fit failed: {e}")),
    };
    Outcome::new(
        fit.stage2_max_mu_rhat < 1.03,
        format!(
            "{} areas, max mu R-hat {:.4} (< 1.03); stage 1 max R-hat {:.3}, {} + {} divergences",
            fit.metrics.as_ref().map_or(0, |m| m.areas.len()),
            fit.stage2_max_mu_rhat,
            fit.stage1_max_rhat,
            fit.stage1_divergences,
            fit.stage2_divergences
        ),
    )
}
