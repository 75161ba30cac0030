use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn tsln(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tsln")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn run(cmd: &str, config: &Path, out: &Path, seed: &str) -> (i32, String) {
    tsln(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed])
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

/// Five areas on a ring with 24 respondents each and deterministic outcomes.
fn toy(dir: &Path) {
    let mut areas = String::from("area_id,population,x\n");
    let mut edges = String::from("area_a,area_b\n");
    let mut survey = String::from("area_id,y,w_raw,age\n");
    for i in 0..5 {
        areas.push_str(&format!("T{i},{},{}\n", 1000 + 200 * i, i as f64 / 4.0));
        edges.push_str(&format!("T{i},T{}\n", (i + 1) % 5));
        for j in 0..24 {
            let y = (j * 7 + i * 3) % 10 < 2 + i;
            let w = 1.0 + ((j * 13 + i) % 5) as f64;
            survey.push_str(&format!("T{i},{},{w},{}\n", u8::from(y), (j % 6) as f64 / 5.0));
        }
    }
    write(&dir.join("areas.csv"), &areas);
    write(&dir.join("edges.csv"), &edges);
    write(&dir.join("survey.csv"), &survey);
    write(
        &dir.join("config.json"),
        r#"{
  "paths": {"survey": "survey.csv", "areas": "areas.csv", "edges": "edges.csv"},
  "stage1": {"continuous": ["age"]},
  "stage2": {"gvf": "off", "external": false, "covariates": ["x"], "continuous": "fixed"},
  "mcmc": {"t_tilde": 200, "stage1": {"chains": 2, "warmup": 300, "draws": 300},
           "stage2": {"chains": 4, "warmup": 500, "draws": 500}}
}"#,
    );
}

#[test]
fn simulate_is_reproducible_and_counts_replicates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    write(&cfg, r#"{"simulate": {"replicates": 1}}"#);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run("simulate", &cfg, &a, "5").0, 0);
    assert_eq!(run("simulate", &cfg, &b, "5").0, 0);
    let files = dir_bytes(&a);
    assert_eq!(files.iter().filter(|(n, _)| n.starts_with("survey_")).count(), 1);
    assert_eq!(files, dir_bytes(&b));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    write(&bad, r#"{"simulate": {"replicates": 0}}"#);
    assert_eq!(run("simulate", &bad, &tmp.path().join("o"), "1").0, 2);

    let unknown = tmp.path().join("unknown.json");
    write(&unknown, r#"{"stage1": {"residual_sdd": 1.0}}"#);
    assert_eq!(run("fit", &unknown, &tmp.path().join("o"), "1").0, 2);

    let missing = tmp.path().join("missing.json");
    write(&missing, r#"{"paths": {"survey": "s.csv", "areas": "nope.csv"}}"#);
    let (code, err) = run("fit", &missing, &tmp.path().join("o"), "1");
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("nope.csv"), "{err}");
}

#[test]
fn toy_dataset_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let cfg = tmp.path().join("config.json");
    let out = tmp.path().join("fit");

    let start = Instant::now();
    let (code, err) = run("fit", &cfg, &out, "11");
    assert_eq!(code, 0, "{err}");
    assert!(start.elapsed().as_secs() < 60);

    for stem in ["stage1", "stage2", "mu"] {
        let diag: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("{stem}_diagnostics.json"))).unwrap()).unwrap();
        assert!(diag.get("rhat").is_some() && diag.get("ess").is_some(), "{stem}: {diag}");
    }

    let (code, err) = run("summarize", &cfg, &out, "11");
    assert_eq!(code, 0, "{err}");
    let table = fs::read_to_string(out.join("summaries.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let evidence = r.rsplit(',').next().unwrap();
        assert!(["HC", "H", "N", "L", "LC"].contains(&evidence), "{r}");
    }
}

#[test]
fn summarize_refuses_unconverged_draws() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let out = tmp.path().join("fit");
    fs::create_dir_all(&out).unwrap();
    for c in 0..2 {
        let mut text = String::from("mu[T0],mu[T1],mu[T2],mu[T3],mu[T4]\n");
        for d in 0..100 {
            let v = 0.2 + 0.3 * c as f64 + 0.001 * (d % 7) as f64;
            text.push_str(&format!("{v},{v},{v},{v},{v}\n"));
        }
        write(&out.join(format!("mu_chain{}.csv", c + 1)), &text);
    }
    let (code, err) = run("summarize", &tmp.path().join("config.json"), &out, "1");
    assert_eq!(code, 3, "{err}");
    assert!(!out.join("summaries.csv").exists());
}

#[test]
fn experiment_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    write(
        &cfg,
        r#"{"experiment": {"residual_sds": [1.0], "area_effects": [true, false], "replicates": 1, "t_tilde": 100,
            "stage1": {"chains": 2, "warmup": 150, "draws": 150}, "stage2": {"chains": 2, "warmup": 150, "draws": 150},
            "workers": 2}}"#,
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run("experiment", &cfg, &a, "3").0, 0);
    assert_eq!(run("experiment", &cfg, &b, "3").0, 0);
    let files = dir_bytes(&a);
    assert!(files.iter().all(|(n, _)| !n.ends_with(".partial")));
    assert_eq!(files, dir_bytes(&b));
    let csv = fs::read_to_string(a.join("experiment.csv")).unwrap();
    assert!(csv.starts_with("replicate,residual_sd,area_effect,metric,value,note\n"));
    assert!(csv.lines().any(|l| l.starts_with("0,1,1,alc,")), "{csv}");
}
