//! CSV and JSON file formats.
//!
//! | file | columns |
//! |------|---------|
//! | survey | `area_id,y,w_raw,<covariates and factors...>` |
//! | areas | `area_id,population,remote_class,ses_decile,nest_id,<benchmarks...>,<covariates...>,ext_est,ext_se` |
//! | edges | `area_a,area_b` |
//! | stage-1 draws | `area_id,draw,theta_s1` |
//! | stage-1 sidecar | `area_id,n_i,population,tau_bar,var_theta,theta_median,psi_mean,psi_d,psi_b_mean,mu_d,stable,clamp_rate` |
//! | posterior draws | one file per chain, one column per parameter |
//! | summaries | `area_id,median,hpdi_lo,hpdi_hi,cv_pct,or_median,or_lo,or_hi,ep,evidence` |
//!
//! Floats are written in shortest round-trip form, so identical inputs give
//! byte-identical files.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::CellResult;
use crate::graph::{AreaGraph, GraphError};
use crate::inference::{ConvergenceReport, DrawMatrix};
use crate::metrics::MetricReport;
use crate::stage1::{AreaStage1, Stage1Summary};
use crate::stage2::{AreaFrame, BenchmarkSystem, External};
use crate::summaries::SummaryTable;
use crate::survey::{Factor, Record, SurveyDataset, SurveyError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}, row {row}: cannot parse `{value}` in column `{column}`")]
    Parse { path: PathBuf, row: usize, column: String, value: String },
    #[error("{path}: unknown area `{id}`")]
    UnknownArea { path: PathBuf, id: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

/// A CSV table held as strings.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, IoError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
        let header = rdr.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(csv_err(path))?;
        Ok(Self { path: path.to_path_buf(), header, rows })
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn col(&self, name: &str) -> Result<usize, IoError> {
        self.find(name).ok_or_else(|| IoError::MissingColumn { path: self.path.clone(), column: name.into() })
    }

    fn parse<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T, IoError> {
        let v = &self.rows[row][col];
        v.parse().map_err(|_| IoError::Parse {
            path: self.path.clone(),
            row: row + 1,
            column: self.header[col].clone(),
            value: v.clone(),
        })
    }

    fn invalid(&self, message: impl Into<String>) -> IoError {
        IoError::Invalid { path: self.path.clone(), message: message.into() }
    }
}

/// Distinct values in natural order: numeric if all parse as numbers,
/// lexicographic otherwise.
fn levels_of<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut v: Vec<String> = values.filter(|s| !s.is_empty()).map(str::to_string).collect();
    v.sort();
    v.dedup();
    if v.iter().all(|s| s.parse::<f64>().is_ok()) {
        v.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    v
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, IoError> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<(), IoError> {
    w.flush().map_err(io_err(path))
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

const AREA_RESERVED: [&str; 8] =
    ["area_id", "population", "remote_class", "ses_decile", "nest_id", "ext_est", "ext_se", "mu_true"];

/// Reads the areas CSV. `benchmarks` names the benchmark-group columns;
/// every other non-reserved column is a continuous covariate. Missing class
/// columns give a single level; blank benchmark cells leave an area out of
/// that system; `ext_est`/`ext_se` may be blank.
pub fn read_areas(path: &Path, benchmarks: &[String]) -> Result<AreaFrame, IoError> {
    let t = Table::read(path)?;
    let id = t.col("area_id")?;
    let pop = t.col("population")?;
    let area_ids: Vec<String> = t.rows.iter().map(|r| r[id].clone()).collect();
    let mut seen = HashMap::new();
    for (i, a) in area_ids.iter().enumerate() {
        if seen.insert(a.as_str(), i).is_some() {
            return Err(t.invalid(format!("duplicate area `{a}`")));
        }
    }
    let population = (0..t.rows.len()).map(|r| t.parse(r, pop)).collect::<Result<Vec<f64>, _>>()?;
    let mut frame = AreaFrame::minimal(area_ids, population);
    let m = frame.len();

    let class = |name: &str| -> Result<(Vec<String>, Vec<usize>), IoError> {
        let Some(c) = t.find(name) else {
            return Ok((vec!["all".into()], vec![0; m]));
        };
        let levels = levels_of(t.rows.iter().map(|r| r[c].as_str()));
        let idx = t
            .rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                levels.iter().position(|l| *l == row[c]).ok_or_else(|| IoError::Parse {
                    path: t.path.clone(),
                    row: r + 1,
                    column: name.into(),
                    value: row[c].clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok((levels, idx))
    };
    (frame.remote_levels, frame.remote_class) = class("remote_class")?;
    (frame.ses_levels, frame.ses_decile) = class("ses_decile")?;
    (frame.nest_levels, frame.nest) = class("nest_id")?;

    for b in benchmarks {
        let c = t.col(b)?;
        let levels = levels_of(t.rows.iter().map(|r| r[c].as_str()));
        let group = t.rows.iter().map(|r| levels.iter().position(|l| *l == r[c])).collect();
        frame.benchmarks.push(BenchmarkSystem { name: b.clone(), levels, group });
    }

    if let (Some(e), Some(s)) = (t.find("ext_est"), t.find("ext_se")) {
        for r in 0..m {
            if t.rows[r][e].is_empty() || t.rows[r][s].is_empty() {
                continue;
            }
            let se: f64 = t.parse(r, s)?;
            frame.external[r] = Some(External { estimate: t.parse(r, e)?, variance: se * se });
        }
    }

    for (c, name) in t.header.iter().enumerate() {
        if AREA_RESERVED.contains(&name.as_str()) || benchmarks.contains(name) {
            continue;
        }
        let values = (0..m).map(|r| t.parse(r, c)).collect::<Result<Vec<f64>, _>>()?;
        frame = frame.with_covariate(name.clone(), &values);
    }
    Ok(frame)
}

/// Writes the areas CSV, optionally with a `mu_true` column.
pub fn write_areas(path: &Path, frame: &AreaFrame, truth: Option<&[f64]>) -> Result<(), IoError> {
    let mut w = writer(path)?;
    let mut header: Vec<String> =
        ["area_id", "population", "remote_class", "ses_decile", "nest_id"].map(String::from).to_vec();
    header.extend(frame.benchmarks.iter().map(|b| b.name.clone()));
    header.extend(frame.covariate_names.iter().cloned());
    header.extend(["ext_est".to_string(), "ext_se".to_string()]);
    if truth.is_some() {
        header.push("mu_true".into());
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for i in 0..frame.len() {
        let mut row = vec![
            frame.area_ids[i].clone(),
            frame.population[i].to_string(),
            frame.remote_levels[frame.remote_class[i]].clone(),
            frame.ses_levels[frame.ses_decile[i]].clone(),
            frame.nest_levels[frame.nest[i]].clone(),
        ];
        for b in &frame.benchmarks {
            row.push(b.group[i].map_or(String::new(), |g| b.levels[g].clone()));
        }
        row.extend((0..frame.covariate_names.len()).map(|c| frame.covariate(i, c).to_string()));
        match frame.external[i] {
            Some(e) => row.extend([e.estimate.to_string(), e.variance.sqrt().to_string()]),
            None => row.extend([String::new(), String::new()]),
        }
        if let Some(t) = truth {
            row.push(t[i].to_string());
        }
        w.write_record(&row).map_err(csv_err(path))?;
    }
    flush(w, path)
}

/// Reads the `mu_true` column of an areas CSV.
pub fn read_truth(path: &Path) -> Result<Vec<f64>, IoError> {
    let t = Table::read(path)?;
    let c = t.col("mu_true")?;
    (0..t.rows.len()).map(|r| t.parse(r, c)).collect()
}

/// Reads the survey CSV over the areas of `frame`. Columns named in
/// `factors` are categorical; all other extra columns are continuous.
pub fn read_survey(path: &Path, frame: &AreaFrame, factors: &[String]) -> Result<SurveyDataset, IoError> {
    let t = Table::read(path)?;
    let (id, y, w) = (t.col("area_id")?, t.col("y")?, t.col("w_raw")?);
    let index: HashMap<&str, usize> = frame.area_ids.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let factor_cols = factors.iter().map(|f| t.col(f)).collect::<Result<Vec<_>, _>>()?;
    let cov_cols: Vec<usize> =
        (0..t.header.len()).filter(|c| ![id, y, w].contains(c) && !factor_cols.contains(c)).collect();
    let factor_defs: Vec<Factor> = factors
        .iter()
        .zip(&factor_cols)
        .map(|(name, &c)| Factor::new(name.clone(), levels_of(t.rows.iter().map(|r| r[c].as_str()))))
        .collect();

    let mut records = Vec::with_capacity(t.rows.len());
    for (r, row) in t.rows.iter().enumerate() {
        let area = *index
            .get(row[id].as_str())
            .ok_or_else(|| IoError::UnknownArea { path: t.path.clone(), id: row[id].clone() })?;
        let yv = parse_bool(&row[y]).ok_or_else(|| IoError::Parse {
            path: t.path.clone(),
            row: r + 1,
            column: "y".into(),
            value: row[y].clone(),
        })?;
        let levels = factor_defs
            .iter()
            .zip(&factor_cols)
            .map(|(f, &c)| f.levels.iter().position(|l| *l == row[c]).unwrap_or(0) as u32)
            .collect();
        records.push(Record {
            area,
            y: yv,
            w_raw: t.parse(r, w)?,
            covariates: cov_cols.iter().map(|&c| t.parse(r, c)).collect::<Result<_, _>>()?,
            levels,
        });
    }
    Ok(SurveyDataset::new(
        frame.area_ids.clone(),
        frame.population.iter().map(|&n| Some(n)).collect(),
        cov_cols.iter().map(|&c| t.header[c].clone()).collect(),
        factor_defs,
        records,
    )?)
}

/// Writes the survey CSV; factor columns follow the covariates.
pub fn write_survey(path: &Path, d: &SurveyDataset) -> Result<(), IoError> {
    let mut w = writer(path)?;
    let mut header = vec!["area_id".to_string(), "y".into(), "w_raw".into()];
    header.extend(d.covariate_names().iter().cloned());
    header.extend(d.factors().iter().map(|f| f.name.clone()));
    w.write_record(&header).map_err(csv_err(path))?;
    for j in 0..d.n_records() {
        let mut row =
            vec![d.area_ids()[d.area_of(j)].clone(), u8::from(d.y()[j]).to_string(), d.w_raw()[j].to_string()];
        row.extend((0..d.covariate_names().len()).map(|c| d.covariate(j, c).to_string()));
        row.extend(d.factors().iter().enumerate().map(|(f, fac)| fac.levels[d.level(j, f) as usize].clone()));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    flush(w, path)
}

/// Reads an `area_a,area_b` edge list over the areas of `frame`.
pub fn read_edges(path: &Path, area_ids: &[String]) -> Result<AreaGraph, IoError> {
    let t = Table::read(path)?;
    let (a, b) = (t.col("area_a")?, t.col("area_b")?);
    let edges: Vec<(String, String)> = t.rows.iter().map(|r| (r[a].clone(), r[b].clone())).collect();
    Ok(AreaGraph::build(area_ids, &edges)?)
}

pub fn write_edges(path: &Path, g: &AreaGraph) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(["area_a", "area_b"]).map_err(csv_err(path))?;
    for &(a, b) in g.edges() {
        w.write_record([&g.area_ids()[a], &g.area_ids()[b]]).map_err(csv_err(path))?;
    }
    flush(w, path)
}

#[derive(Serialize, Deserialize)]
struct Stage1Row {
    area_id: String,
    n_i: usize,
    population: f64,
    tau_bar: f64,
    var_theta: f64,
    theta_median: f64,
    psi_mean: f64,
    psi_d: f64,
    psi_b_mean: f64,
    mu_d: f64,
    stable: bool,
    clamp_rate: f64,
}

/// Writes `theta` draws and the per-area sidecar.
pub fn write_stage1(
    draws_path: &Path,
    sidecar_path: &Path,
    s1: &Stage1Summary,
    area_ids: &[String],
) -> Result<(), IoError> {
    let mut w = writer(draws_path)?;
    w.write_record(["area_id", "draw", "theta_s1"]).map_err(csv_err(draws_path))?;
    for a in &s1.areas {
        for (t, v) in a.theta.iter().enumerate() {
            w.write_record([area_ids[a.area].as_str(), &t.to_string(), &v.to_string()]).map_err(csv_err(draws_path))?;
        }
    }
    flush(w, draws_path)?;
    let mut w = writer(sidecar_path)?;
    for a in &s1.areas {
        w.serialize(Stage1Row {
            area_id: area_ids[a.area].clone(),
            n_i: a.n,
            population: a.population,
            tau_bar: a.tau_bar,
            var_theta: a.var_theta,
            theta_median: a.theta_median,
            psi_mean: a.psi_mean,
            psi_d: a.psi_d,
            psi_b_mean: a.psi_b_mean,
            mu_d: a.mu_d,
            stable: a.stable,
            clamp_rate: a.clamp_rate,
        })
        .map_err(csv_err(sidecar_path))?;
    }
    flush(w, sidecar_path)
}

/// Reads the files written by [`write_stage1`] over the areas `area_ids`.
pub fn read_stage1(draws_path: &Path, sidecar_path: &Path, area_ids: &[String]) -> Result<Stage1Summary, IoError> {
    let index: HashMap<&str, usize> = area_ids.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let lookup = |path: &Path, id: &str| {
        index.get(id).copied().ok_or_else(|| IoError::UnknownArea { path: path.to_path_buf(), id: id.to_string() })
    };
    let d = Table::read(draws_path)?;
    let (a, th) = (d.col("area_id")?, d.col("theta_s1")?);
    let mut theta: HashMap<usize, Vec<f64>> = HashMap::new();
    for r in 0..d.rows.len() {
        theta.entry(lookup(draws_path, &d.rows[r][a])?).or_default().push(d.parse(r, th)?);
    }
    let mut rdr = csv::Reader::from_path(sidecar_path).map_err(csv_err(sidecar_path))?;
    let mut areas = Vec::new();
    for row in rdr.deserialize::<Stage1Row>() {
        let row = row.map_err(csv_err(sidecar_path))?;
        let area = lookup(sidecar_path, &row.area_id)?;
        let draws = theta.remove(&area).ok_or_else(|| IoError::Invalid {
            path: draws_path.to_path_buf(),
            message: format!("no draws for `{}`", row.area_id),
        })?;
        areas.push(AreaStage1 {
            area,
            n: row.n_i,
            population: row.population,
            theta: draws,
            tau_bar: row.tau_bar,
            var_theta: row.var_theta,
            theta_median: row.theta_median,
            psi_mean: row.psi_mean,
            psi_d: row.psi_d,
            psi_b_mean: row.psi_b_mean,
            mu_d: row.mu_d,
            stable: row.stable,
            clamp_rate: row.clamp_rate,
        });
    }
    let t = areas.first().map_or(0, |a| a.theta.len());
    if areas.iter().any(|a| a.theta.len() != t) {
        return Err(IoError::Invalid {
            path: draws_path.to_path_buf(),
            message: "areas have unequal draw counts".into(),
        });
    }
    Ok(Stage1Summary { areas, subset: (0..t).collect() })
}

/// Writes one CSV per chain (`{stem}_chain{c}.csv`) and the diagnostics
/// sidecar `{stem}_diagnostics.json`.
pub fn write_draws(dir: &Path, stem: &str, dm: &DrawMatrix, report: &ConvergenceReport) -> Result<(), IoError> {
    for c in 0..dm.chains() {
        let path = dir.join(format!("{stem}_chain{}.csv", c + 1));
        let mut w = writer(&path)?;
        w.write_record(dm.names()).map_err(csv_err(&path))?;
        for d in 0..dm.draws() {
            w.write_record(dm.row(c, d).iter().map(|v| v.to_string())).map_err(csv_err(&path))?;
        }
        flush(w, &path)?;
    }
    write_json(&dir.join(format!("{stem}_diagnostics.json")), &report.to_json())
}

/// Reads the per-chain draw files written by [`write_draws`].
pub fn read_draws(dir: &Path, stem: &str) -> Result<DrawMatrix, IoError> {
    let mut chains = Vec::new();
    for c in 1.. {
        let path = dir.join(format!("{stem}_chain{c}.csv"));
        if !path.exists() {
            break;
        }
        chains.push(Table::read(&path)?);
    }
    let first = chains.first().ok_or_else(|| IoError::Invalid {
        path: dir.join(format!("{stem}_chain1.csv")),
        message: "no draw files".into(),
    })?;
    let names = first.header.clone();
    let draws = first.rows.len();
    let mut values = Vec::with_capacity(chains.len() * draws * names.len());
    for t in &chains {
        if t.header != names || t.rows.len() != draws {
            return Err(t.invalid("chains disagree in shape"));
        }
        for r in 0..draws {
            for c in 0..names.len() {
                values.push(t.parse::<f64>(r, c)?);
            }
        }
    }
    Ok(DrawMatrix::new(chains.len(), draws, names, values))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.into(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_summaries(path: &Path, table: &SummaryTable) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record([
        "area_id",
        "median",
        "hpdi_lo",
        "hpdi_hi",
        "cv_pct",
        "or_median",
        "or_lo",
        "or_hi",
        "ep",
        "evidence",
    ])
    .map_err(csv_err(path))?;
    for a in &table.areas {
        w.write_record([
            a.area_id.clone(),
            a.median.to_string(),
            a.hpdi_lo.to_string(),
            a.hpdi_hi.to_string(),
            a.cv_pct.to_string(),
            a.or_median.to_string(),
            a.or_lo.to_string(),
            a.or_hi.to_string(),
            a.ep.to_string(),
            a.evidence.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    flush(w, path)
}

/// Per-area metrics CSV.
pub fn write_area_metrics(path: &Path, report: &MetricReport) -> Result<(), IoError> {
    let mut w = writer(path)?;
    w.write_record(["area_id", "truth", "mean", "arb", "rrmse", "hpdi_lo", "hpdi_hi", "covered"])
        .map_err(csv_err(path))?;
    for a in &report.areas {
        w.write_record([
            a.area_id.clone(),
            a.truth.to_string(),
            a.mean.to_string(),
            a.arb.to_string(),
            a.rrmse.to_string(),
            a.hpdi_lo.to_string(),
            a.hpdi_hi.to_string(),
            u8::from(a.covered).to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    flush(w, path)
}

pub const EXPERIMENT_HEADER: [&str; 6] = ["replicate", "residual_sd", "area_effect", "metric", "value", "note"];

/// Long-format rows `(replicate, residual_sd, area_effect, metric, value,
/// note)` of one cell; a failed cell gives one `error` row.
pub fn experiment_rows(r: &CellResult) -> Vec<[String; 6]> {
    let key = [r.key.replicate.to_string(), r.key.residual_sd.to_string(), u8::from(r.key.area_effect).to_string()];
    let row = |metric: &str, value: String, note: String| {
        [key[0].clone(), key[1].clone(), key[2].clone(), metric.to_string(), value, note]
    };
    match &r.outcome {
        Err(e) => vec![row("error", String::new(), e.clone())],
        Ok(m) => [
            ("n", m.n as f64),
            ("stable_fraction", m.stable_fraction),
            ("sr", m.sr),
            ("alc", m.alc),
            ("marb", m.report.marb),
            ("mrrmse", m.report.mrrmse),
            ("coverage", m.report.coverage),
            ("mean_hpdi_width", m.report.mean_hpdi_width),
            ("stage1_max_rhat", m.stage1_max_rhat),
            ("stage1_divergences", m.stage1_divergences as f64),
            ("stage2_max_mu_rhat", m.stage2_max_mu_rhat),
            ("stage2_divergences", m.stage2_divergences as f64),
        ]
        .into_iter()
        .map(|(k, v)| row(k, v.to_string(), String::new()))
        .collect(),
    }
}

/// Appends experiment rows to a partial file as cells finish, then writes
/// the final file in grid order and atomically renames it into place.
pub struct ExperimentSink {
    partial: PathBuf,
    file: std::sync::Mutex<fs::File>,
}

impl ExperimentSink {
    pub fn create(final_path: &Path) -> Result<Self, IoError> {
        let partial = final_path.with_extension("csv.partial");
        let mut file = fs::File::create(&partial).map_err(io_err(&partial))?;
        writeln!(file, "{}", EXPERIMENT_HEADER.join(",")).map_err(io_err(&partial))?;
        Ok(Self { partial, file: std::sync::Mutex::new(file) })
    }

    /// Appends one cell; write errors are reported by [`Self::finish`].
    pub fn append(&self, r: &CellResult) {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for row in experiment_rows(r) {
            let _ = w.write_record(&row);
        }
        let bytes = w.into_inner().unwrap_or_default();
        if let Ok(mut f) = self.file.lock() {
            let _ = f.write_all(&bytes).and_then(|_| f.flush());
        }
    }

    pub fn finish(self, final_path: &Path, results: &[CellResult]) -> Result<(), IoError> {
        let tmp = final_path.with_extension("csv.tmp");
        let mut w = writer(&tmp)?;
        w.write_record(EXPERIMENT_HEADER).map_err(csv_err(&tmp))?;
        for r in results {
            for row in experiment_rows(r) {
                w.write_record(&row).map_err(csv_err(&tmp))?;
            }
        }
        flush(w, &tmp)?;
        fs::rename(&tmp, final_path).map_err(io_err(final_path))?;
        drop(self.file);
        fs::remove_file(&self.partial).map_err(io_err(&self.partial))
    }
}
