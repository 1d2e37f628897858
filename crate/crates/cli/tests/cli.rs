// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aidac_core::job_io::{write_job_binary, write_job_csv};
use aidac_core::mapper::VmmJob;

fn aidac(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aidac"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn error_json(o: &Output) -> serde_json::Value {
    assert!(!o.status.success());
    let line = String::from_utf8(o.stderr.clone()).unwrap();
    serde_json::from_str(line.trim()).expect("stderr is one JSON object")
}

#[test]
fn transfer_sweep_writes_256_rows() {
    let d = tempfile::tempdir().unwrap();
    let o = aidac(&["transfer-sweep", "--config", "default"], d.path());
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    let text = fs::read_to_string(d.path().join("transfer.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# aidac "));
    assert_eq!(lines[1], "input_code,voltage_v");
    assert_eq!(lines.len(), 2 + 256);
    assert_eq!(lines[257], "255,0.9");
}

#[test]
fn cost_report_json() {
    let d = tempfile::tempdir().unwrap();
    assert!(aidac(&["cost-report", "--config", "default"], d.path()).status.success());
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("cost_report.json")).unwrap()).unwrap();
    let tpw = v["performance"]["reference_totals"]["tops_per_watt"].as_f64().unwrap();
    assert!((tpw - 123.8).abs() < 0.1);
    assert!(v["energy"]["residual_fj"].as_f64().unwrap() > 0.0);
    let timeline = fs::read_to_string(d.path().join("timeline.csv")).unwrap();
    assert_eq!(timeline.lines().nth(1), Some("pass,phase,start_ps,end_ps"));
}

#[test]
fn seed_changes_mc_outputs() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a");
    let b = d.path().join("b");
    assert!(aidac(&["monte-carlo", "--trials", "50", "--seed", "1"], &a).status.success());
    assert!(aidac(&["monte-carlo", "--trials", "50", "--seed", "2"], &b).status.success());
    let read = |p: &Path| fs::read_to_string(p.join("mc_samples.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
    let hist = fs::read_to_string(a.join("mc_histogram.csv")).unwrap();
    assert_eq!(hist.lines().nth(1), Some("bin_low,bin_high,count"));
    let counts: u64 = hist.lines().skip(2).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(counts, 50);
}

#[test]
fn job_files_in_both_formats_agree() {
    let d = tempfile::tempdir().unwrap();
    let job = VmmJob::new((0..200).map(|i| i % 256).collect(), (0..200 * 3).map(|i| (i * 7) % 256).collect(), 3).unwrap();
    let csv = d.path().join("job.csv");
    let bin = d.path().join("job.bin");
    fs::write(&csv, write_job_csv(&job)).unwrap();
    fs::write(&bin, write_job_binary(&job, 8, 8)).unwrap();
    let oa = d.path().join("a");
    let ob = d.path().join("b");
    assert!(aidac(&["run-vmm", "--job", csv.to_str().unwrap(), "--tdc-bypass"], &oa).status.success());
    assert!(aidac(&["run-vmm", "--job", bin.to_str().unwrap(), "--tdc-bypass"], &ob).status.success());
    let body = |p: &Path| fs::read_to_string(p.join("vmm.csv")).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&oa), body(&ob));
    let rows: Vec<String> = body(&oa).lines().skip(1).map(str::to_string).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[1], f[2], "ideal nominal pipeline is exact: {r}");
    }
    let wide = d.path().join("wide.bin");
    fs::write(&wide, write_job_binary(&job, 10, 8)).unwrap();
    let e = error_json(&aidac(&["run-vmm", "--job", wide.to_str().unwrap()], &oa));
    assert_eq!(e["error"]["kind"], "input");
}

#[test]
fn errors_are_json() {
    let d = tempfile::tempdir().unwrap();
    let o = aidac(&["frobnicate"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "usage");

    let bad = d.path().join("bad.json");
    fs::write(&bad, r#"{"arch": {"n_in_bits": 0}}"#).unwrap();
    let o = aidac(&["transfer-sweep", "--config", bad.to_str().unwrap()], d.path());
    assert_eq!(o.status.code(), Some(1));
    let e = error_json(&o);
    assert_eq!(e["error"]["kind"], "config");
    assert!(e["error"]["message"].as_str().unwrap().contains("n_in_bits"));

    let o = aidac(&["transfer-sweep", "--config", "/no/such/file.json"], d.path());
    assert_eq!(error_json(&o)["error"]["kind"], "io");

    let o = aidac(&["run-vmm", "--random", "3by4"], d.path());
    assert_eq!(error_json(&o)["error"]["kind"], "input");
}

#[test]
fn custom_config_is_hashed_into_provenance() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.json");
    fs::write(&cfg, r#"{"arch": {"vdd_volts": 1.2}}"#).unwrap();
    let a = d.path().join("a");
    let b = d.path().join("b");
    assert!(aidac(&["transfer-sweep", "--config", cfg.to_str().unwrap()], &a).status.success());
    assert!(aidac(&["transfer-sweep"], &b).status.success());
    let first = |p: &Path| fs::read_to_string(p.join("transfer.csv")).unwrap().lines().next().unwrap().to_string();
    assert_ne!(first(&a), first(&b));
    let last = fs::read_to_string(a.join("transfer.csv")).unwrap().lines().last().unwrap().to_string();
    assert_eq!(last, "255,1.2");
}

#[test]
fn calibrated_config_round_trips() {
    let d = tempfile::tempdir().unwrap();
    assert!(aidac(&["calibrate", "--trials", "200"], d.path()).status.success());
    let cfg = d.path().join("calibrated_config.json");
    let o = aidac(&["monte-carlo", "--trials", "20", "--config", cfg.to_str().unwrap()], &d.path().join("mc"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
