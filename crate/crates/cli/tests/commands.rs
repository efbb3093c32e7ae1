use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lmebn_cli::modelfile::read_model;
use tempfile::TempDir;

const SMALL: &str = "N = 5\navg_parents = 1\nF = [3]\nn_j = [10]\nreplicates = 2\nseed = 11\neval_rows = 60\nmc_samples = 200\n";

fn lmebn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmebn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = lmebn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

fn rep_dir(out: &Path, rep: usize) -> PathBuf {
    let cells = out.join("cells");
    let cell = fs::read_dir(&cells).unwrap().next().unwrap().unwrap().path();
    cell.join(format!("rep{rep}"))
}

#[test]
fn generate_writes_one_dataset_per_replicate() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", "N = 10\navg_parents = 1\nF = [5]\nn_j = [10]\nscenario = \"balanced\"\nreplicates = 2\n");
    let out = tmp.path().join("out");
    ok(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    for r in 0..2 {
        let dir = rep_dir(&out, r);
        assert_eq!(rows(&dir.join("data.csv")), 50);
        assert_eq!(rows(&dir.join("eval.csv")), 1000);
        assert!(dir.join("truth.json").exists());
    }
    assert!(!rep_dir(&out, 0).with_file_name("rep2").exists());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cells"][0]["replicates"].as_array().unwrap().len(), 2);
    assert!(manifest.get("elapsed_ms").is_none());
}

#[test]
fn unbalanced_two_groups_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", "N = 10\navg_parents = 1\nF = [2]\nn_j = [10]\nscenario = \"unbalanced\"\n");
    let out = lmebn(&["generate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unbalanced"));
}

#[test]
fn config_errors_are_listed_together() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", "N = 10\nF = 5\nn_j = -3\ncolour = \"red\"\n");
    let out = lmebn(&["experiment", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["colour", "avg_parents", "n_j"] {
        assert!(err.contains(needle), "{needle} not in {err}");
    }
}

#[test]
fn generate_is_byte_identical_across_runs_and_job_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["generate", "--config", s(&cfg), "--out", s(&a), "--jobs", "1"]);
    ok(&["generate", "--config", s(&cfg), "--out", s(&b), "--jobs", "2"]);
    for r in 0..2 {
        for f in ["data.csv", "eval.csv", "truth.json"] {
            assert_eq!(fs::read(rep_dir(&a, r).join(f)).unwrap(), fs::read(rep_dir(&b, r).join(f)).unwrap(), "{f}");
        }
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    let c = tmp.path().join("c");
    ok(&["generate", "--config", s(&cfg), "--out", s(&c), "--seed", "12"]);
    assert_ne!(fs::read(rep_dir(&a, 0).join("data.csv")).unwrap(), fs::read(rep_dir(&c, 0).join("data.csv")).unwrap());
}

#[test]
fn learned_models_have_the_expected_group_arcs_and_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("g");
    ok(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    let data = rep_dir(&out, 0).join("data.csv");
    for strategy in ["gbn", "cgbn", "lme"] {
        let path = tmp.path().join(format!("{strategy}.json"));
        let stdout = ok(&["learn", s(&data), "--strategy", strategy, "--out", s(&path)]).stdout;
        assert!(String::from_utf8_lossy(&stdout).contains("BIC"));
        let (model, file) = read_model(&path).unwrap();
        let group_arcs: Vec<_> = file.arcs.iter().filter(|(u, _)| u == "F").collect();
        match strategy {
            "gbn" => {
                assert!(model.dag().group().is_none());
                assert!(group_arcs.is_empty());
            }
            _ => assert_eq!(group_arcs.len(), 5),
        }
        assert_eq!(file.training_rows, Some(30));
        let copy = tmp.path().join(format!("{strategy}-copy.json"));
        lmebn_cli::modelfile::write_model(&copy, &lmebn_cli::modelfile::to_file(&model, file.score, file.training_rows)).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&copy).unwrap());
        let (reloaded, _) = read_model(&copy).unwrap();
        let (a, b) = (model.compile_joint().unwrap(), reloaded.compile_joint().unwrap());
        for j in 0..model.n_groups() {
            let (x, y) = (a.component(j), b.component(j));
            assert!((x.mean() - y.mean()).amax() <= 1e-12);
            assert!((x.cov() - y.cov()).amax() <= 1e-12);
        }
    }
}

#[test]
fn evaluating_the_truth_gives_zero_distance() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("g");
    ok(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    let dir = rep_dir(&out, 1);
    let truth = dir.join("truth.json");
    let mut file = read_model(&truth).unwrap().1;
    file.training_rows = Some(30);
    let learned = tmp.path().join("truth-as-model.json");
    lmebn_cli::modelfile::write_model(&learned, &file).unwrap();
    let results = tmp.path().join("r.csv");
    let eval = dir.join("eval.csv");
    let args = ["evaluate", "--truth", s(&truth), "--model", s(&learned), "--data", s(&eval), "--out", s(&results)];
    ok(&args);
    ok(&args);
    let text = fs::read_to_string(&results).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], lines[2]);
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("shd"), "0");
    assert!(col("kl_joint").parse::<f64>().unwrap().abs() < 1e-9);
    let f1: f64 = col("f1").parse().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert_eq!(col("error"), "");
}

#[test]
fn experiment_grid_has_one_row_per_cell_replicate_and_strategy() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", &SMALL.replace("n_j = [10]", "n_j = [10, 12]"));
    let out = tmp.path().join("e");
    ok(&["experiment", "--config", s(&cfg), "--out", s(&out), "--jobs", "2"]);
    let text = fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 13);
    let keys: Vec<(String, String, String)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[3].to_string(), f[5].to_string(), f[6].to_string())
        })
        .collect();
    let mut expected = Vec::new();
    for n_j in ["10", "12"] {
        for rep in ["0", "1"] {
            for st in ["gbn", "cgbn", "lme"] {
                expected.push((n_j.to_string(), rep.to_string(), st.to_string()));
            }
        }
    }
    assert_eq!(keys, expected);
    let stdout = ok(&["experiment", "--config", s(&cfg), "--jobs", "1"]).stdout;
    assert_eq!(stdout, fs::read(out.join("results.csv")).unwrap());
}

#[test]
fn schema_errors_name_the_offending_cell() {
    let tmp = TempDir::new().unwrap();
    let model = tmp.path().join("m.json");
    let cases = [
        ("a,b\n1,2\n", "missing group column"),
        ("a,b,F\n1,2,x\n1,,y\n", "line 3, column b: missing value"),
        ("a,b,F\n1,2,x\n1,zz,y\n", "line 3, column b: not a number"),
        ("a,b,F\n1,2,\n", "line 2, column F"),
    ];
    for (text, needle) in cases {
        let data = write(tmp.path(), "d.csv", text);
        let out = lmebn(&["learn", s(&data), "--strategy", "gbn", "--out", s(&model)]);
        assert_eq!(out.status.code(), Some(2), "{text:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{needle:?} not in {err}");
    }
    let data = write(tmp.path(), "d.csv", "a,b,G\n1,2.5,x\n2,1,y\n0.5,3,x\n4,4,y\n");
    ok(&["learn", s(&data), "--strategy", "gbn", "--out", s(&model), "--group-col", "G"]);
}

#[test]
fn predictions_cover_every_row() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("g");
    ok(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    let dir = rep_dir(&out, 0);
    let model = tmp.path().join("lme.json");
    ok(&["learn", s(&dir.join("data.csv")), "--strategy", "lme", "--out", s(&model)]);
    let eval = dir.join("eval.csv");
    for extra in [&[][..], &["--unknown-f", "--engine", "lw", "--lw-samples", "300"][..]] {
        let pred = tmp.path().join("p.csv");
        let mut args = vec!["predict", "--model", s(&model), "--data", s(&eval), "--out", s(&pred)];
        args.extend_from_slice(extra);
        ok(&args);
        let text = fs::read_to_string(&pred).unwrap();
        assert_eq!(text.lines().count(), 61);
        assert!(text.lines().next().unwrap().ends_with("F,F_predicted"));
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(lmebn(&["learn"]).status.code(), Some(1));
    assert_eq!(lmebn(&["--help"]).status.code(), Some(0));
    let out = lmebn(&["generate", "--config", "/nonexistent.toml", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
}
