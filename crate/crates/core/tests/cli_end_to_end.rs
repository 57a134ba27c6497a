use std::fs;
use std::path::{Path, PathBuf};

use qndtomo::cli::{cmd_quantify, cmd_report, cmd_simulate, cmd_sweep, cmd_tomo, read_dataset, simulate_and_quantify, Overrides, RunConfig};
use qndtomo::Error;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn overrides(config: &Path, out: &Path) -> Overrides {
    Overrides { config: Some(config.to_path_buf()), output_dir: out.to_path_buf(), ..Default::default() }
}

const MOCK: &str = "seed = 5\n[protocol]\ntrajectories_per_cell = 10\n[backend]\nkind = \"mock\"\n[bootstrap]\nresamples = 0\n";

#[test]
fn simulate_writes_deterministic_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MOCK);
    let a = cmd_simulate(&overrides(&cfg, &tmp.path().join("a")), 0).unwrap();
    let b = cmd_simulate(&overrides(&cfg, &tmp.path().join("b")), 0).unwrap();
    assert_eq!(a.artifacts, b.artifacts);
    let ds = read_dataset(&tmp.path().join("a/dataset.txt")).unwrap();
    assert_eq!(ds.total_shots(), 180);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["artifacts"]["dataset.txt"].as_str().unwrap(), a.artifacts["dataset.txt"]);
}

#[test]
fn invalid_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[protocol]\ntrajectories = 10\n");
    let e = cmd_simulate(&overrides(&cfg, tmp.path()), 0).unwrap_err();
    assert!(matches!(e, Error::Config(_)));
    assert!(e.to_string().contains("trajectories"), "{e}");
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn tomo_and_quantify_on_ideal_mock() {
    let tmp = tempfile::tempdir().unwrap();
    let nt = 200;
    let cfg = write_config(tmp.path(), &MOCK.replace("= 10", &format!("= {nt}")));
    let sim = tmp.path().join("sim");
    cmd_simulate(&overrides(&cfg, &sim), 0).unwrap();
    let data = sim.join("dataset.txt");
    let t1 = cmd_tomo(&overrides(&cfg, &tmp.path().join("t1")), &data).unwrap();
    let t2 = cmd_tomo(&overrides(&cfg, &tmp.path().join("t2")), &data).unwrap();
    assert_eq!(t1.artifacts, t2.artifacts);

    let t = tmp.path().join("t1");
    let inputs = vec![t.join("povm.json"), t.join("choi.json"), t.join("tomo_report.json")];
    cmd_quantify(&overrides(&cfg, &tmp.path().join("q")), &inputs).unwrap();
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("q/report.json")).unwrap()).unwrap();
    let tol = 2.0 / (nt as f64).sqrt();
    assert!(rep["Q"].as_f64().unwrap() >= 1.0 - tol);
    assert!(rep["F"].as_f64().unwrap() >= 1.0 - tol);
    assert!(rep.get("std_q").is_none(), "no resamples, no spreads");
    assert_eq!(rep["shots"].as_u64().unwrap(), 18 * nt as u64);

    let ov = Overrides { bootstrap: Some(4), ..overrides(&cfg, &tmp.path().join("qb")) };
    cmd_quantify(&ov, &[data]).unwrap();
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("qb/report.json")).unwrap()).unwrap();
    assert!(rep["std_q"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(tmp.path().join("qb/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn truncated_dataset_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MOCK);
    cmd_simulate(&overrides(&cfg, tmp.path()), 0).unwrap();
    let text = fs::read_to_string(tmp.path().join("dataset.txt")).unwrap();
    let cut = tmp.path().join("cut.txt");
    fs::write(&cut, &text[..text.len() / 2]).unwrap();
    let e = cmd_tomo(&overrides(&cfg, &tmp.path().join("t")), &cut).unwrap_err();
    assert!(matches!(e, Error::Schema(_)), "{e}");
}

#[test]
fn sweep_matches_composition_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{MOCK}[sweep]\ndeltas = [7.7, 19.2]\nlong_format = true\n").replace("resamples = 0", "resamples = 3");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("sweep");
    let (m1, failed) = cmd_sweep(&overrides(&cfg, &out)).unwrap();
    assert!(!failed);
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(fs::read_to_string(out.join("sweep_long.csv")).unwrap().lines().count(), 7);

    // a single sweep point is simulate + quantify with the same config
    let mut point = RunConfig::from_toml_str(&text).unwrap();
    point.params.delta = 7.7;
    let direct = simulate_and_quantify(&point).unwrap();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], qndtomo::cli::fmt12(direct.f));
    assert_eq!(row[3], qndtomo::cli::fmt12(direct.q));

    // resume: finished points are reused, outputs are identical
    let reports: Vec<_> = m1.artifacts.keys().filter(|k| k.starts_with("points/")).cloned().collect();
    assert_eq!(reports.len(), 2);
    let stamp = fs::metadata(out.join(&reports[0])).unwrap().modified().unwrap();
    fs::remove_file(out.join("sweep.csv")).unwrap();
    let (m2, _) = cmd_sweep(&overrides(&cfg, &out)).unwrap();
    assert_eq!(m1.artifacts, m2.artifacts);
    assert_eq!(fs::metadata(out.join(&reports[0])).unwrap().modified().unwrap(), stamp);
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap(), table);
}

#[test]
fn sweep_records_failed_points_and_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[params]\nmodel = \"dispersive\"\nt_meas = 2.0\nfock_cutoff = 4\nomega_c = 0.1\n\
                [protocol]\ntrajectories_per_cell = 5\n[bootstrap]\nresamples = 0\n[sweep]\ndeltas = [0.0, 10.0]\n";
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("sweep");
    let (_, failed) = cmd_sweep(&overrides(&cfg, &out)).unwrap();
    assert!(failed);
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].contains("failed"), "{}", rows[1]);
    assert!(rows[2].starts_with("10,"), "{}", rows[2]);
}

#[test]
fn trajectory_dump_and_report_table() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "seed = 2\n[params]\nmodel = \"dispersive\"\ndelta = 10.0\nt_meas = 1.0\nfock_cutoff = 4\n\
                [protocol]\ntrajectories_per_cell = 2\n[bootstrap]\nresamples = 0\n";
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("sim");
    let man = cmd_simulate(&overrides(&cfg, &out), 3).unwrap();
    assert!(man.artifacts.contains_key("trajectories.csv"));
    let csv = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "input,trajectory,seed,stream,param_hash,step,t,signal,dw");
    let steps = csv.lines().filter(|l| l.starts_with("g,0,")).count();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * steps);

    let mock = write_config(tmp.path(), MOCK);
    for (i, seed) in [1u64, 2].iter().enumerate() {
        let ov = Overrides { seed: Some(*seed), ..overrides(&mock, &tmp.path().join(format!("runs/{i}"))) };
        cmd_simulate(&ov, 0).unwrap();
        cmd_quantify(&ov, &[tmp.path().join(format!("runs/{i}/dataset.txt"))]).unwrap();
    }
    let (_, table) = cmd_report(&overrides(&mock, &tmp.path().join("rep")), &[tmp.path().join("runs")]).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with("mock,"));
}
