//! Survey records, weight rescaling and Hajek direct estimation.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurveyError {
    #[error("area index {area} out of range for {areas} areas")]
    AreaOutOfRange { area: usize, areas: usize },
    #[error("record {0}: raw weight must be positive and finite")]
    NonPositiveWeight(usize),
    #[error("record {record}: factor `{factor}` level {level} exceeds cardinality {cardinality}")]
    LevelOutOfRange { record: usize, factor: String, level: u32, cardinality: usize },
    #[error("record {record}: expected {expected} values for `{what}`, got {got}")]
    RaggedRecord { record: usize, what: &'static str, expected: usize, got: usize },
    #[error("area {0} has no sampled records")]
    EmptyArea(usize),
    #[error("population size unknown for area {0}")]
    UnknownPopulation(usize),
    #[error("group {0} has no sampled records")]
    EmptyGroup(usize),
    #[error("coefficient of variation undefined for a zero point estimate")]
    ZeroPoint,
}

/// A categorical column with named levels; level indices are positions in
/// `levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

impl Factor {
    pub fn new(name: impl Into<String>, levels: Vec<String>) -> Self {
        Self { name: name.into(), levels }
    }

    /// Factor with levels `"0"`, `"1"`, ... `"{n-1}"`.
    pub fn anonymous(name: impl Into<String>, n: usize) -> Self {
        Self::new(name, (0..n).map(|i| i.to_string()).collect())
    }

    pub fn cardinality(&self) -> usize {
        self.levels.len()
    }
}

/// Individual-level survey records over a universe of `M` areas, of which
/// only some are sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    area_ids: Vec<String>,
    populations: Vec<Option<f64>>,
    area: Vec<usize>,
    y: Vec<bool>,
    w_raw: Vec<f64>,
    covariate_names: Vec<String>,
    /// Record-major, `covariate_names.len()` values per record.
    covariates: Vec<f64>,
    factors: Vec<Factor>,
    /// Record-major, `factors.len()` level indices per record.
    levels: Vec<u32>,
    area_rows: Vec<Vec<usize>>,
}

/// One survey respondent.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub area: usize,
    pub y: bool,
    pub w_raw: f64,
    pub covariates: Vec<f64>,
    pub levels: Vec<u32>,
}

impl SurveyDataset {
    pub fn new(
        area_ids: Vec<String>,
        populations: Vec<Option<f64>>,
        covariate_names: Vec<String>,
        factors: Vec<Factor>,
        records: Vec<Record>,
    ) -> Result<Self, SurveyError> {
        assert_eq!(area_ids.len(), populations.len());
        let m = area_ids.len();
        let q = covariate_names.len();
        let f = factors.len();
        let n = records.len();
        let mut area = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut w_raw = Vec::with_capacity(n);
        let mut covariates = Vec::with_capacity(n * q);
        let mut levels = Vec::with_capacity(n * f);
        let mut area_rows = vec![Vec::new(); m];
        for (j, r) in records.into_iter().enumerate() {
            if r.area >= m {
                return Err(SurveyError::AreaOutOfRange { area: r.area, areas: m });
            }
            if !(r.w_raw.is_finite() && r.w_raw > 0.0) {
                return Err(SurveyError::NonPositiveWeight(j));
            }
            if r.covariates.len() != q {
                return Err(SurveyError::RaggedRecord {
                    record: j,
                    what: "covariates",
                    expected: q,
                    got: r.covariates.len(),
                });
            }
            if r.levels.len() != f {
                return Err(SurveyError::RaggedRecord { record: j, what: "factors", expected: f, got: r.levels.len() });
            }
            for (fac, &lv) in factors.iter().zip(&r.levels) {
                if lv as usize >= fac.cardinality() {
                    return Err(SurveyError::LevelOutOfRange {
                        record: j,
                        factor: fac.name.clone(),
                        level: lv,
                        cardinality: fac.cardinality(),
                    });
                }
            }
            area_rows[r.area].push(j);
            area.push(r.area);
            y.push(r.y);
            w_raw.push(r.w_raw);
            covariates.extend(r.covariates);
            levels.extend(r.levels);
        }
        Ok(Self { area_ids, populations, area, y, w_raw, covariate_names, covariates, factors, levels, area_rows })
    }

    pub fn n_records(&self) -> usize {
        self.y.len()
    }

    pub fn n_areas(&self) -> usize {
        self.area_ids.len()
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    pub fn area_index(&self) -> HashMap<&str, usize> {
        self.area_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    pub fn population(&self, area: usize) -> Option<f64> {
        self.populations[area]
    }

    pub fn populations(&self) -> &[Option<f64>] {
        &self.populations
    }

    pub fn area_of(&self, record: usize) -> usize {
        self.area[record]
    }

    pub fn y(&self) -> &[bool] {
        &self.y
    }

    pub fn w_raw(&self) -> &[f64] {
        &self.w_raw
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate(&self, record: usize, col: usize) -> f64 {
        self.covariates[record * self.covariate_names.len() + col]
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn level(&self, record: usize, factor: usize) -> u32 {
        self.levels[record * self.factors.len() + factor]
    }

    /// Record indices belonging to `area`.
    pub fn rows(&self, area: usize) -> &[usize] {
        &self.area_rows[area]
    }

    pub fn sample_size(&self, area: usize) -> usize {
        self.area_rows[area].len()
    }

    /// Areas with at least one record, ascending.
    pub fn sampled_areas(&self) -> Vec<usize> {
        (0..self.n_areas()).filter(|&i| !self.area_rows[i].is_empty()).collect()
    }
}

/// Within-area (`w`) and globally (`w_tilde`) normalized weights, indexed
/// like the dataset's records.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub w: Vec<f64>,
    pub w_tilde: Vec<f64>,
}

/// `w_ij = n_i w_raw_ij / sum_j w_raw_ij` and
/// `w~_ij = n w_raw_ij / sum_ij w_raw_ij`.
pub fn rescale_weights(d: &SurveyDataset) -> Result<WeightSet, SurveyError> {
    let n = d.n_records();
    let mut w = vec![0.0; n];
    for area in 0..d.n_areas() {
        let rows = d.rows(area);
        if rows.is_empty() {
            continue;
        }
        let total: f64 = rows.iter().map(|&j| d.w_raw[j]).sum();
        let n_i = rows.len() as f64;
        for &j in rows {
            w[j] = n_i * d.w_raw[j] / total;
        }
    }
    let total: f64 = d.w_raw.iter().sum();
    let w_tilde = d.w_raw.iter().map(|&v| n as f64 * v / total).collect();
    Ok(WeightSet { w, w_tilde })
}

/// Direct estimate for one area or group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectEstimate {
    pub mu: f64,
    /// Sampling variance; absent when `n < 2`.
    pub psi: Option<f64>,
    pub n: usize,
    pub population: f64,
    pub stable: bool,
}

impl DirectEstimate {
    fn new(mu: f64, psi: Option<f64>, n: usize, population: f64) -> Self {
        let stable = n >= 2 && mu > 0.0 && mu < 1.0;
        Self { mu, psi, n, population, stable }
    }
}

/// Variance functional `v(.)` shared by direct estimates and stage-1 bias
/// terms: `(1/n)(1 - n/N)(1/(n-1)) sum_j w_j^2 (x_j - mean)^2`.
///
/// Returns `None` for `n < 2`.
pub fn sampling_variance(w: &[f64], x: &[f64], mean: f64, population: f64) -> Option<f64> {
    let n = w.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let ss: f64 = w.iter().zip(x).map(|(wi, xi)| wi * wi * (xi - mean) * (xi - mean)).sum();
    Some((1.0 / nf) * (1.0 - nf / population) * (1.0 / (nf - 1.0)) * ss)
}

/// Hajek estimate and approximate sampling variance for `area`.
pub fn hajek(d: &SurveyDataset, ws: &WeightSet, area: usize) -> Result<DirectEstimate, SurveyError> {
    let rows = d.rows(area);
    if rows.is_empty() {
        return Err(SurveyError::EmptyArea(area));
    }
    let population = d.population(area).ok_or(SurveyError::UnknownPopulation(area))?;
    let w: Vec<f64> = rows.iter().map(|&j| ws.w[j]).collect();
    let y: Vec<f64> = rows.iter().map(|&j| f64::from(u8::from(d.y[j]))).collect();
    Ok(hajek_from_parts(&w, &y, population))
}

/// Hajek estimator on already-normalized weights (`sum w = n`).
pub fn hajek_from_parts(w: &[f64], y: &[f64], population: f64) -> DirectEstimate {
    let n = w.len();
    let mu = (w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n as f64).clamp(0.0, 1.0);
    let psi = sampling_variance(w, y, mu, population);
    DirectEstimate::new(mu, psi, n, population)
}

/// Direct estimates for every sampled area (`None` for unsampled ones).
pub fn hajek_all(d: &SurveyDataset, ws: &WeightSet) -> Result<Vec<Option<DirectEstimate>>, SurveyError> {
    (0..d.n_areas()).map(|i| if d.rows(i).is_empty() { Ok(None) } else { hajek(d, ws, i).map(Some) }).collect()
}

/// Group-level Hajek estimates from pooled records, with raw weights
/// renormalized within each group. `groups[i]` is the group of area `i`
/// (`None` = not in any group). The group population is the sum over all
/// member areas, sampled or not.
pub fn aggregate_direct(
    d: &SurveyDataset,
    groups: &[Option<usize>],
    populations: &[f64],
    n_groups: usize,
) -> Result<Vec<DirectEstimate>, SurveyError> {
    let mut members = vec![Vec::new(); n_groups];
    let mut pop = vec![0.0; n_groups];
    for (area, g) in groups.iter().enumerate() {
        if let Some(g) = *g {
            members[g].push(area);
            pop[g] += populations[area];
        }
    }
    (0..n_groups)
        .map(|g| {
            let rows: Vec<usize> = members[g].iter().flat_map(|&a| d.rows(a).iter().copied()).collect();
            if rows.is_empty() {
                return Err(SurveyError::EmptyGroup(g));
            }
            let total: f64 = rows.iter().map(|&j| d.w_raw[j]).sum();
            let n = rows.len() as f64;
            let w: Vec<f64> = rows.iter().map(|&j| n * d.w_raw[j] / total).collect();
            let y: Vec<f64> = rows.iter().map(|&j| f64::from(u8::from(d.y[j]))).collect();
            Ok(hajek_from_parts(&w, &y, pop[g]))
        })
        .collect()
}

/// Overall (all records pooled) direct estimate.
pub fn overall_direct(d: &SurveyDataset, populations: &[f64]) -> Result<DirectEstimate, SurveyError> {
    let groups = vec![Some(0); d.n_areas()];
    Ok(aggregate_direct(d, &groups, populations, 1)?[0])
}

/// Coefficient of variation in percent.
pub fn cv(point: f64, sd: f64) -> Result<f64, SurveyError> {
    if point == 0.0 {
        return Err(SurveyError::ZeroPoint);
    }
    Ok(100.0 * sd / point.abs())
}
