//! Benchmarked 50-area fit with two overlapping grouping systems.

use rand::seq::SliceRandom;
use tsln::experiment::SamplerSettings;
use tsln::metrics::group_metrics;
use tsln::stage1::{aggregate_stage1, fit_stage1, Stage1Spec};
use tsln::stage2::{benchmark, benchmark_targets, fit_stage2, group_draws, BenchmarkSystem, Stage2Spec};
use tsln::survey::rescale_weights;
use tsln::synthetic::{draw_sample, generate_census, CensusConfig};

use crate::common::{rng, worse};
use crate::Outcome;

const AREAS: usize = 50;
const P: f64 = 0.5;

/// `k` groups of near-equal size over a seeded shuffle of the areas. The
/// census orders areas by prevalence, so contiguous index blocks would
/// group like with like.
fn shuffled_system(name: &str, k: usize, seed: u64) -> BenchmarkSystem {
    let mut order: Vec<usize> = (0..AREAS).collect();
    order.shuffle(&mut rng(seed));
    let mut group = vec![None; AREAS];
    for (pos, &area) in order.iter().enumerate() {
        group[area] = Some(pos * k / AREAS);
    }
    BenchmarkSystem { name: name.into(), levels: (0..k).map(|g| g.to_string()).collect(), group }
}

pub fn run() -> Outcome {
    let census =
        generate_census(&CensusConfig { areas: AREAS, sampled_areas: 30, ..CensusConfig::default() }, 77).unwrap();
    let d = draw_sample(&census, 78).unwrap().dataset;
    let ws = rescale_weights(&d).unwrap();

    let mut frame = census.area_frame();
    frame.benchmarks.push(shuffled_system("coarse", 5, 1));
    frame.benchmarks.push(shuffled_system("fine", 4, 2));

    let settings = SamplerSettings::new(4, 1000, 1000);
    let fit1 = fit_stage1(&d, &ws, &Stage1Spec::default(), &settings.sampler(1)).unwrap();
    let s1 = aggregate_stage1(&fit1.pi, &d, &ws, 500, 2).unwrap();
    let fit2 = fit_stage2(&s1, &frame, None, &Stage2Spec::simple(), &settings.sampler(3)).unwrap();

    let mut targets = benchmark_targets(&d, &frame, "coarse").unwrap();
    targets.extend(benchmark_targets(&d, &frame, "fine").unwrap());
    let bench = benchmark(&fit2, &targets, P, &frame).unwrap();

    let mut worst: f64 = 0.0;
    for t in &targets {
        let draws = group_draws(&bench.mu, &t.members, &frame.population);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        worst = worse(worst, (mean - t.estimate).abs() / (2.0 * P * t.variance.sqrt()));
    }
    let report = group_metrics(&bench.mu, &frame.population, &targets).unwrap();
    let min_iop = report.groups.iter().map(|g| g.iop).fold(1.0, f64::min);
    Outcome::new(
        worst <= 1.0 && (report.miop - 1.0).abs() <= 0.02,
        format!(
            "{} groups: max |C~ - C^D| / (2 p sqrt(v)) {worst:.3} (<= 1), MIOP {:.3} (1.00 +- 0.02, min {min_iop:.3}), \
             max mu R-hat {:.3}",
            targets.len(),
            report.miop,
            bench.max_mu_rhat()
        ),
    )
}
