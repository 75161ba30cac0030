//! Sample-size and stability statistics over 100 replicate samples.

use tsln::survey::{hajek_all, rescale_weights};
use tsln::synthetic::{draw_sample, generate_census, CensusConfig};

use crate::common::median;
use crate::Outcome;

const REPLICATES: u64 = 100;

/// Medians over replicates of (median n_i, total n, stable fraction).
fn statistics(cfg: &CensusConfig, seed: u64) -> (f64, f64, f64) {
    let census = generate_census(cfg, seed).unwrap();
    let (mut med_ni, mut total, mut stable) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..REPLICATES {
        let d = draw_sample(&census, 10_000 + r).unwrap().dataset;
        let sizes: Vec<f64> = d.sampled_areas().iter().map(|&i| d.sample_size(i) as f64).collect();
        med_ni.push(median(&sizes));
        total.push(d.n_records() as f64);
        let direct = hajek_all(&d, &rescale_weights(&d).unwrap()).unwrap();
        let sampled: Vec<_> = direct.iter().flatten().collect();
        stable.push(sampled.iter().filter(|e| e.stable).count() as f64 / sampled.len() as f64);
    }
    (median(&med_ni), median(&total), median(&stable))
}

pub fn run() -> Outcome {
    let cfg = CensusConfig::default();
    let (ni, n, stable) = statistics(&cfg, 31);
    let ni_ok = ni == 7.0;
    let n_ok = (n - 755.0).abs() <= 0.05 * 755.0;
    let stable_ok = (0.55..=0.70).contains(&stable);
    let narrow = CensusConfig { u_min: 0.05, u_max: 0.3, ..cfg };
    let (_, _, stable_narrow) = statistics(&narrow, 31);
    let mark = |ok: bool| if ok { "ok" } else { "miss" };
    Outcome::new(
        ni_ok && n_ok && stable_ok,
        format!(
            "median n_i {ni} (= 7: {}), median n {n} (755 +- 5%: {}), stable fraction {stable:.3} \
             ([0.55, 0.70]: {}); with U 0.05-0.3 the stable fraction is {stable_narrow:.3}",
            mark(ni_ok),
            mark(n_ok),
            mark(stable_ok)
        ),
    )
}
