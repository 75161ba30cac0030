//! Analytic gradients against central finite differences for every term
//! kind, including each atom, location and spread variant it can carry.

use rand::Rng;
use rand_distr::StandardNormal;
use tsln::inference::{
    Atom, BernoulliObs, DensityTerm, GaussianObs, LinearPredictor, Location, Mixing, Model, Replicates, Spread,
};

use crate::common::{rng, worse};
use crate::Outcome;

const DIM: usize = 6;
const POINTS: usize = 100;
const TOL: f64 = 1e-5;

/// A predictor touching every atom kind.
fn rich_predictor() -> LinearPredictor {
    LinearPredictor::constant(0.3)
        .with(Atom::Param { idx: 0, coef: 0.7 })
        .with(Atom::Scaled { log_scale: 1, idx: 2, coef: 1.1 })
        .with(Atom::Product { a: 3, b: 4, coef: -0.6 })
        .with(Atom::Bym2 { log_sigma: 1, rho: Mixing::Logit(5), s: 2, v: 3, inv_kappa: 1.7 })
        .with(Atom::Bym2 { log_sigma: 4, rho: Mixing::Fixed(0.35), s: 0, v: 5, inv_kappa: 0.8 })
}

fn simple(idx: usize, coef: f64) -> LinearPredictor {
    LinearPredictor::param(idx).with(Atom::Param { idx: (idx + 1) % DIM, coef })
}

fn kinds() -> Vec<(&'static str, DensityTerm)> {
    let obs = |data: Replicates, location: Location, spread: Spread| GaussianObs { data, location, spread };
    let reps = Replicates::from_values(&[0.2, -0.4, 1.3, 0.5]);
    vec![
        (
            "bernoulli_logit_weighted",
            DensityTerm::BernoulliLogitWeighted {
                obs: vec![
                    BernoulliObs { y: true, weight: 1.7, eta: rich_predictor() },
                    BernoulliObs { y: false, weight: 0.4, eta: simple(2, -1.3) },
                ],
            },
        ),
        (
            "gaussian_linear_sd",
            DensityTerm::Gaussian {
                obs: vec![obs(reps, Location::Linear(rich_predictor()), Spread::Sd(0.8))],
                scale: 0.25,
            },
        ),
        (
            "gaussian_linear_log_sd",
            DensityTerm::Gaussian {
                obs: vec![obs(Replicates::single(0.4), Location::Linear(simple(0, 0.5)), Spread::LogSd(3))],
                scale: 1.0,
            },
        ),
        (
            "gaussian_gvf",
            DensityTerm::Gaussian {
                obs: vec![obs(
                    reps,
                    Location::Linear(simple(4, 0.9)),
                    Spread::Gvf { design: simple(1, -0.3), log_sd: 5, factor: 2.5, extra: 0.05 },
                )],
                scale: 0.5,
            },
        ),
        (
            "gaussian_weighted_inv_logit",
            DensityTerm::Gaussian {
                obs: vec![obs(
                    Replicates::single(0.3),
                    Location::WeightedInvLogit(vec![(0.6, rich_predictor()), (0.4, simple(3, 0.2))]),
                    Spread::Sd(0.05),
                )],
                scale: 1.0,
            },
        ),
        ("half_gaussian", DensityTerm::HalfGaussian { log_params: vec![0, 3, 5], sd: 2.0 }),
        (
            "student_t",
            DensityTerm::StudentT { targets: vec![rich_predictor(), simple(1, 2.0)], df: 3.0, loc: 0.2, scale: 2.0 },
        ),
        ("uniform_logit", DensityTerm::UniformLogit { params: vec![1, 5] }),
        ("icar_pairwise", DensityTerm::IcarPairwise { edges: vec![(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (1, 4)] }),
        ("soft_sum_to_zero", DensityTerm::SoftSumToZero { params: vec![0, 2, 3, 4], sd: 0.1 }),
    ]
}

/// Largest `|analytic - numeric| / max(|numeric|, 1)` over coordinates.
fn worst_error(model: &Model, x: &[f64]) -> f64 {
    let (_, grad) = model.log_density_and_grad(x).unwrap();
    let f = |x: &[f64]| model.log_density_and_grad(x).unwrap().0;
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let h = 1e-5 * x[k].abs().max(1.0);
        let (mut up, mut down) = (x.to_vec(), x.to_vec());
        up[k] += h;
        down[k] -= h;
        let numeric = (f(&up) - f(&down)) / (2.0 * h);
        worst = worse(worst, (grad[k] - numeric).abs() / numeric.abs().max(1.0));
    }
    worst
}

pub fn run() -> Outcome {
    let names: Vec<String> = (0..DIM).map(|i| format!("x{i}")).collect();
    let mut r = rng(101);
    let mut failures = Vec::new();
    let mut overall: f64 = 0.0;
    let all = kinds();
    for (name, term) in &all {
        let model = Model::new(names.clone(), vec![term.clone()]).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..POINTS {
            let x: Vec<f64> = (0..DIM).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            worst = worse(worst, worst_error(&model, &x));
        }
        overall = worse(overall, worst);
        if worst >= TOL {
            failures.push(format!("{name} {worst:.2e}"));
        }
    }
    let detail = format!("{} term kinds x {POINTS} points, worst relative error {overall:.2e}", all.len());
    if failures.is_empty() {
        Outcome::new(true, detail)
    } else {
        Outcome::new(false, format!("{detail}; over {TOL:e}: {}", failures.join(", ")))
    }
}
