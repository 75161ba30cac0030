//! Stage-2 posterior spread does not depend on the number of stage-1
//! draws carried forward.

use tsln::experiment::SamplerSettings;
use tsln::stage1::{aggregate_stage1, fit_stage1, Stage1Spec};
use tsln::stage2::{fit_stage2, Stage2Spec};
use tsln::survey::rescale_weights;
use tsln::synthetic::{draw_sample, generate_census, CensusConfig};

use crate::common::worse;
use crate::Outcome;

fn sds(theta: &tsln::inference::DrawMatrix) -> Vec<f64> {
    (0..theta.n_params())
        .map(|i| {
            let v = theta.column(i);
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        })
        .collect()
}

pub fn run() -> Outcome {
    let census = generate_census(&CensusConfig::default(), 88).unwrap();
    let d = draw_sample(&census, 89).unwrap().dataset;
    let ws = rescale_weights(&d).unwrap();
    let fit1 = fit_stage1(&d, &ws, &Stage1Spec::default(), &SamplerSettings::new(4, 1000, 1000).sampler(1)).unwrap();
    let frame = census.area_frame();
    // Long chains hold the Monte Carlo error of each sd near 1%.
    let stage2 = SamplerSettings::new(4, 3000, 12_000).sampler(5);
    let fit = |t_tilde: usize| {
        let s1 = aggregate_stage1(&fit1.pi, &d, &ws, t_tilde, 2).unwrap();
        sds(&fit_stage2(&s1, &frame, None, &Stage2Spec::simple(), &stage2).unwrap().theta)
    };
    let (a, b) = (fit(250), fit(500));
    let (mut worst, mut area) = (0.0, 0);
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        let w = worse(worst, (x / y - 1.0).abs());
        if w > worst {
            (worst, area) = (w, i);
        }
    }
    Outcome::new(
        worst < 0.05,
        format!("{} areas: largest relative change in theta sd {:.2}% (area {area}, < 5%)", a.len(), 100.0 * worst),
    )
}
