//! 10-d correlated Gaussian with known mean and covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use tsln::inference::Atom;
use tsln::inference::{
    mcse_mean, random_inits, rhat_ess, sample, DensityTerm, GaussianObs, LinearPredictor, Location, Model, Replicates,
    SamplerConfig, Spread,
};

use crate::common::{rng, worse};
use crate::Outcome;

const D: usize = 10;

/// Covariance `S R S` with an AR(1)-style correlation `R` and scales from
/// 0.1 to 10.
fn covariance() -> DMatrix<f64> {
    let scale = |i: usize| 10f64.powf(-1.0 + 2.0 * i as f64 / (D - 1) as f64);
    DMatrix::from_fn(D, D, |i, j| scale(i) * scale(j) * 0.6f64.powi((i as i32 - j as i32).abs()))
}

/// `sum_k N(0 | (A (x - m))_k, 1)` with `A = L^-1`, `L L' = Sigma`.
fn model(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Model {
    let l = cov.clone().cholesky().unwrap().l();
    let a = l.try_inverse().unwrap();
    let am = &a * mean;
    let obs = (0..D)
        .map(|k| {
            let mut lp = LinearPredictor::constant(0.0);
            for j in 0..D {
                if a[(k, j)] != 0.0 {
                    lp.push(Atom::Param { idx: j, coef: a[(k, j)] });
                }
            }
            GaussianObs { data: Replicates::single(am[k]), location: Location::Linear(lp), spread: Spread::Sd(1.0) }
        })
        .collect();
    Model::new((0..D).map(|i| format!("x{i}")).collect(), vec![DensityTerm::Gaussian { obs, scale: 1.0 }]).unwrap()
}

pub fn run() -> Outcome {
    let mut r = rng(202);
    let mean = DVector::from_fn(D, |_, _| r.random_range(-3.0..3.0));
    let cov = covariance();
    let model = model(&mean, &cov);
    let cfg = SamplerConfig::sized(4, 1000, 1000, 2024);
    let draws = sample(&model, &random_inits(D, 4, 7, 2.0), &cfg).unwrap();

    let (mut worst_z, mut worst_rhat): (f64, f64) = (0.0, 0.0);
    for i in 0..D {
        let traces = draws.traces(i);
        let m = traces.iter().flatten().sum::<f64>() / draws.total_draws() as f64;
        let z = (m - mean[i]).abs() / mcse_mean(&traces).unwrap();
        worst_z = worse(worst_z, z);
        worst_rhat = worse(worst_rhat, rhat_ess(&draws, i).unwrap().rhat);
    }
    Outcome::new(
        worst_z < 4.0 && worst_rhat < 1.01,
        format!("4x1000 draws: max |mean error| / MCSE {worst_z:.2} (< 4), max R-hat {worst_rhat:.4} (< 1.01)"),
    )
}
