mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qkdsat::scenario::{save_scenario, ParamSource};
use qkdsat::weather::CloudGrid;

fn qkdsat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkdsat")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Copy of a bundled scenario shortened to `days`, with absolute paths.
fn short_scenario(dir: &Path, days: u32) -> String {
    let data = common::data_dir();
    let mut f = common::bundled("g20_sso6.toml").file;
    f.simulation.duration_days = days;
    f.stations.file = data.join("g20.csv").display().to_string();
    f.link = ParamSource::File(data.join("micius.link").display().to_string());
    f.decoy = ParamSource::File(data.join("micius.decoy").display().to_string());
    f.isl.link_file = Some(data.join("isl.link").display().to_string());
    f.isl.decoy_file = Some(data.join("isl.decoy").display().to_string());
    f.isl.enabled = true;
    f.output.dir = dir.join("default_out").display().to_string();
    let path = dir.join("short.toml");
    save_scenario(&f, &path).unwrap();
    path.display().to_string()
}

#[test]
fn validate_micius_prints_the_comparison() {
    let o = qkdsat(&["validate-micius"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("Sifted key (bits)") && out.contains("Mean QBER (%)"), "{out}");
}

#[test]
fn run_writes_outputs_to_the_requested_directory() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path(), 2);
    let out = dir.path().join("custom");
    let o = qkdsat(&["run", &scenario, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["contact_plan.csv", "ledger.csv", "fom.csv", "isl_budget.csv", "isl_transfers.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let plan = fs::read_to_string(out.join("contact_plan.csv")).unwrap();
    assert!(plan.starts_with("sat,station,t_start,t_end,executed,reason,sifted_bits,secret_bits,qber\n"));
    assert!(!dir.path().join("default_out").exists());
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path(), 1);
    let o = qkdsat(&["sweep", &scenario, "--axis", "inclination", "--values", "30,sso"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "inclination_deg,usable_access_h");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("sso,"));
}

#[test]
fn gen_cloud_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    let o = qkdsat(&[
        "gen-cloud",
        "--mode",
        "uniform",
        "--p",
        "0.3",
        "--res",
        "5",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g = CloudGrid::read_csv(std::io::BufReader::new(fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(g, CloudGrid::uniform(0.3, 5.0).unwrap());
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = qkdsat(&["run", missing.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope.toml"));

    let o = qkdsat(&[
        "gen-cloud",
        "--mode",
        "uniform",
        "--out",
        dir.path().join("g.csv").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--p"));

    let scenario = short_scenario(dir.path(), 1);
    let text = fs::read_to_string(&scenario).unwrap().replace("step_s = 10.0", "step_s = -1.0");
    fs::write(&scenario, text).unwrap();
    let o = qkdsat(&["run", &scenario]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("short.toml:"), "{}", stderr(&o));

    let o = qkdsat(&["sweep", &scenario, "--axis", "inclination"]);
    assert!(!o.status.success());
}
