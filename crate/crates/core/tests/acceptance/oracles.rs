//! Randomized small instances checked against brute-force re-derivations
//! written without the library's helpers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tsln::graph::AreaGraph;
use tsln::inference::DrawMatrix;
use tsln::metrics::area_metric;
use tsln::stage1::{aggregate_stage1, PiDraws};
use tsln::summaries::{exceedance, lisa_classify, lisa_probabilities, odds_ratio_draws, Evidence};
use tsln::survey::{hajek, rescale_weights, Record, SurveyDataset};

use crate::common::{close, median, rng};
use crate::Outcome;

const TOL: f64 = 1e-10;
const INSTANCES: u64 = 200;

/// Checks one seeded instance, appending any mismatches.
type Case = fn(u64, &mut Vec<String>);

struct Instance {
    d: SurveyDataset,
    /// Raw weights and outcomes of each area's records.
    raw: Vec<Vec<(f64, f64)>>,
    population: Vec<f64>,
}

fn instance(r: &mut ChaCha8Rng) -> Instance {
    let m = r.random_range(1..=10);
    let mut records = Vec::new();
    let mut raw = vec![Vec::new(); m];
    let mut population = Vec::with_capacity(m);
    for (area, cell) in raw.iter_mut().enumerate() {
        // Some areas stay unsampled.
        let n = if r.random_bool(0.2) { 0 } else { r.random_range(1..=8) };
        population.push((n + r.random_range(0..40)).max(1) as f64);
        for _ in 0..n {
            let y = r.random_bool(0.4);
            let w = r.random_range(0.1..20.0);
            cell.push((w, f64::from(u8::from(y))));
            records.push(Record { area, y, w_raw: w, covariates: vec![], levels: vec![] });
        }
    }
    if records.is_empty() {
        records.push(Record { area: 0, y: true, w_raw: 1.0, covariates: vec![], levels: vec![] });
        raw[0].push((1.0, 1.0));
        population[0] = population[0].max(1.0);
    }
    let ids = (0..m).map(|i| format!("a{i}")).collect();
    let pops = population.iter().map(|&p| Some(p)).collect();
    let d = SurveyDataset::new(ids, pops, vec![], vec![], records).unwrap();
    Instance { d, raw, population }
}

/// Hajek mean and variance from raw weights.
fn direct_oracle(cell: &[(f64, f64)], population: f64) -> (f64, Option<f64>) {
    let n = cell.len() as f64;
    let total: f64 = cell.iter().map(|c| c.0).sum();
    let mu = cell.iter().map(|(w, y)| w * y).sum::<f64>() / total;
    if cell.len() < 2 {
        return (mu, None);
    }
    let ss: f64 = cell.iter().map(|(w, y)| (n * w / total).powi(2) * (y - mu).powi(2)).sum();
    (mu, Some(ss * (1.0 - n / population) / (n * (n - 1.0))))
}

fn check(failures: &mut Vec<String>, what: &str, got: f64, want: f64) {
    if !close(got, want, TOL) {
        failures.push(format!("{what}: {got} vs {want}"));
    }
}

fn hajek_case(seed: u64, failures: &mut Vec<String>) {
    let inst = instance(&mut rng(seed));
    let ws = rescale_weights(&inst.d).unwrap();
    for (area, cell) in inst.raw.iter().enumerate().filter(|(_, c)| !c.is_empty()) {
        let (mu, psi) = direct_oracle(cell, inst.population[area]);
        let got = hajek(&inst.d, &ws, area).unwrap();
        check(failures, "hajek mu", got.mu, mu);
        match (got.psi, psi) {
            (Some(a), Some(b)) => check(failures, "hajek psi", a, b),
            (None, None) => {}
            (a, b) => failures.push(format!("hajek psi presence {a:?} vs {b:?}")),
        }
    }
}

fn aggregate_case(seed: u64, failures: &mut Vec<String>) {
    let mut r = rng(seed);
    let inst = instance(&mut r);
    let ws = rescale_weights(&inst.d).unwrap();
    let n = inst.d.n_records();
    let t = r.random_range(2..=50);
    let t_tilde = r.random_range(2..=t);
    let values: Vec<f64> = (0..t * n).map(|_| r.random_range(0.05..0.95)).collect();
    let pi = PiDraws::new(n, values.clone());
    let s1 = aggregate_stage1(&pi, &inst.d, &ws, t_tilde, seed).unwrap();

    let mut sorted = s1.subset.clone();
    sorted.dedup();
    if sorted.len() != t_tilde || s1.subset.windows(2).any(|p| p[0] >= p[1]) || s1.subset[t_tilde - 1] >= t {
        failures.push(format!("subset {:?} is not {t_tilde} sorted distinct draws of {t}", s1.subset));
    }

    // Record positions in dataset order, grouped by area.
    let mut rows = vec![Vec::new(); inst.raw.len()];
    for j in 0..n {
        rows[inst.d.area_of(j)].push(j);
    }
    let sampled: Vec<usize> = (0..inst.raw.len()).filter(|&a| !inst.raw[a].is_empty()).collect();
    if s1.areas.len() != sampled.len() {
        failures.push(format!("{} aggregated areas, {} sampled", s1.areas.len(), sampled.len()));
        return;
    }
    for (a, &area) in s1.areas.iter().zip(&sampled) {
        let cell = &inst.raw[area];
        let pop = inst.population[area];
        let nf = cell.len() as f64;
        let total: f64 = cell.iter().map(|c| c.0).sum();
        let w: Vec<f64> = cell.iter().map(|c| nf * c.0 / total).collect();
        let (_, psi_d) = direct_oracle(cell, pop);
        let psi_d = psi_d.unwrap_or(0.0);
        let (mut theta, mut tau, mut psi_b) = (Vec::new(), Vec::new(), Vec::new());
        for draw in 0..t {
            let p: Vec<f64> = rows[area].iter().map(|&j| values[draw * n + j]).collect();
            let mu = w.iter().zip(&p).map(|(w, p)| w * p).sum::<f64>() / nf;
            let b = w.iter().zip(&p).zip(cell).map(|((w, p), c)| w * (p - c.1)).sum::<f64>() / nf;
            let vb = if cell.len() < 2 {
                0.0
            } else {
                let ss: f64 = w.iter().zip(&p).zip(cell).map(|((w, p), c)| w * w * (p - c.1 - b).powi(2)).sum();
                ss * (1.0 - nf / pop) / (nf * (nf - 1.0))
            };
            theta.push((mu / (1.0 - mu)).ln());
            tau.push((psi_d + vb) / (mu * (1.0 - mu)).powi(2));
            psi_b.push(vb);
        }
        let tf = t as f64;
        let mean_theta = theta.iter().sum::<f64>() / tf;
        let var = theta.iter().map(|x| (x - mean_theta).powi(2)).sum::<f64>() / (tf - 1.0);
        let mean_psi_b = psi_b.iter().sum::<f64>() / tf;
        check(failures, "tau_bar", a.tau_bar, tau.iter().sum::<f64>() / tf);
        check(failures, "var_theta", a.var_theta, var);
        check(failures, "theta_median", a.theta_median, median(&theta));
        check(failures, "psi_b_mean", a.psi_b_mean, mean_psi_b);
        check(failures, "psi_mean", a.psi_mean, psi_d + mean_psi_b);
        check(failures, "psi_d", a.psi_d, psi_d);
        for (&s, &got) in s1.subset.iter().zip(&a.theta) {
            check(failures, "theta subset", got, theta[s]);
        }
    }
}

fn odds_case(seed: u64, failures: &mut Vec<String>) {
    let mut r = rng(seed);
    let t = r.random_range(100..=150);
    let national = r.random_range(0.05..0.95);
    let mu: Vec<f64> = (0..t).map(|_| r.random_range(0.01..0.99)).collect();
    let or = odds_ratio_draws(&mu, national).unwrap();
    let mut above = 0;
    for (&m, &got) in mu.iter().zip(&or) {
        let want = (m * (1.0 - national)) / ((1.0 - m) * national);
        check(failures, "odds ratio", got, want);
        above += usize::from(want > 1.0);
    }
    check(failures, "exceedance", exceedance(&or).unwrap(), above as f64 / t as f64);
}

fn evidence_oracle(pz: f64, pl: f64) -> Evidence {
    if pz > 0.8 && pl > 0.8 {
        Evidence::HC
    } else if pz > 0.8 && pl <= 0.8 {
        Evidence::H
    } else if pz < 0.2 && pl < 0.2 {
        Evidence::LC
    } else if pz < 0.2 && pl >= 0.2 {
        Evidence::L
    } else {
        Evidence::N
    }
}

fn lisa_case(seed: u64, failures: &mut Vec<String>) {
    let mut r = rng(seed);
    let m = r.random_range(2..=10);
    let t = r.random_range(20..=50);
    let mut pairs: Vec<(usize, usize)> = (1..m).map(|i| (r.random_range(0..i), i)).collect();
    for _ in 0..r.random_range(0..m) {
        let (a, b) = (r.random_range(0..m), r.random_range(0..m));
        if a != b {
            pairs.push((a, b));
        }
    }
    let mut adj = vec![vec![0.0; m]; m];
    for &(a, b) in &pairs {
        adj[a][b] = 1.0;
        adj[b][a] = 1.0;
    }
    let dense: Vec<Vec<f64>> = adj
        .iter()
        .map(|row| {
            let deg: f64 = row.iter().sum();
            row.iter().map(|v| v / deg).collect()
        })
        .collect();
    let graph = AreaGraph::from_index_edges((0..m).map(|i| i.to_string()).collect(), pairs);
    let weights = graph.row_standardize().unwrap();

    // A shared per-area offset keeps the classes varied.
    let national = r.random_range(0.2..0.8);
    let shift: Vec<f64> = (0..m).map(|_| r.random_range(-0.15..0.15)).collect();
    let values: Vec<f64> =
        (0..t * m).map(|k| (national + shift[k % m] + r.random_range(-0.1..0.1)).clamp(0.01, 0.99)).collect();
    let mu = DrawMatrix::new(1, t, (0..m).map(|i| format!("mu[{i}]")).collect(), values.clone());

    let mut above_z = vec![0u32; m];
    let mut above_lag = vec![0u32; m];
    for draw in 0..t {
        let z: Vec<f64> = (0..m).map(|i| values[draw * m + i] - national).collect();
        for i in 0..m {
            let lag: f64 = (0..m).map(|k| dense[i][k] * z[k]).sum();
            above_z[i] += u32::from(z[i] > 0.0);
            above_lag[i] += u32::from(lag > 0.0);
        }
    }
    let pz: Vec<f64> = above_z.iter().map(|&c| f64::from(c) / t as f64).collect();
    let pl: Vec<f64> = above_lag.iter().map(|&c| f64::from(c) / t as f64).collect();
    let probs = lisa_probabilities(&mu, national, &weights).unwrap();
    let classes = lisa_classify(&mu, national, &weights).unwrap();
    for i in 0..m {
        check(failures, "P(z > 0)", probs[i].0, pz[i]);
        check(failures, "P(lag > 0)", probs[i].1, pl[i]);
        let want = evidence_oracle(pz[i], pl[i]);
        if classes[i] != want {
            failures.push(format!("evidence {:?} vs {want:?} at ({}, {})", classes[i], pz[i], pl[i]));
        }
    }
}

fn metrics_case(seed: u64, failures: &mut Vec<String>) {
    let mut r = rng(seed);
    let t = r.random_range(20..=50);
    let draws: Vec<f64> = (0..t).map(|_| r.random_range(0.0..1.0f64).powi(2)).collect();
    let truth = r.random_range(0.05..0.95);
    let got = area_metric("a", &draws, truth).unwrap();

    let tf = t as f64;
    let arb = (draws.iter().map(|d| d - truth).sum::<f64>() / tf / truth).abs();
    let rrmse = (draws.iter().map(|d| (d - truth).powi(2)).sum::<f64>() / tf).sqrt() / truth;
    let mut s = draws.clone();
    s.sort_by(f64::total_cmp);
    let k = (0.95 * tf).floor() as usize + 1;
    let (mut lo, mut hi) = (f64::NAN, f64::NAN);
    for start in 0..=t - k {
        let (a, b) = (s[start], s[start + k - 1]);
        if lo.is_nan() || b - a < hi - lo {
            (lo, hi) = (a, b);
        }
    }
    check(failures, "arb", got.arb, arb);
    check(failures, "rrmse", got.rrmse, rrmse);
    check(failures, "hpdi lo", got.hpdi_lo, lo);
    check(failures, "hpdi hi", got.hpdi_hi, hi);
    if got.covered != (lo < truth && truth < hi) {
        failures.push(format!("coverage flag {} for {truth} in ({lo}, {hi})", got.covered));
    }
}

pub fn run() -> Outcome {
    let cases: [(&str, Case); 5] = [
        ("direct", hajek_case),
        ("aggregation", aggregate_case),
        ("odds ratio", odds_case),
        ("lisa", lisa_case),
        ("metrics", metrics_case),
    ];
    let mut report = Vec::new();
    let mut first = None;
    for (name, case) in cases {
        let mut failures = Vec::new();
        for seed in 0..INSTANCES {
            case(1_000 + seed, &mut failures);
        }
        if first.is_none() {
            first = failures.first().map(|f| format!("{name}: {f}"));
        }
        report.push(format!("{name} {}", failures.len()));
    }
    let detail = format!("{INSTANCES} instances each, mismatches: {}", report.join(", "));
    match first {
        None => Outcome::new(true, detail),
        Some(f) => Outcome::new(false, format!("{detail}; first {f}")),
    }
}
