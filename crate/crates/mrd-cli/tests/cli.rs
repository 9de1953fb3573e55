use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrd")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_config() -> String {
    configs().join("small.json").display().to_string()
}

#[test]
fn replicate_is_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = vec![];
    for (k, threads) in ["1", "4", "4"].iter().enumerate() {
        let dir = tmp.path().join(format!("run{k}"));
        let out = mrd(&["replicate", "--config", &small_config(), "--out", dir.to_str().unwrap(), "--threads", threads]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(dir);
    }
    for name in ["summary.csv", "replicas.csv", "histograms.csv", "report.json", "summary.csv.meta.json"] {
        let first = fs::read(outputs[0].join(name)).unwrap();
        for other in &outputs[1..] {
            assert_eq!(first, fs::read(other.join(name)).unwrap(), "{name} differs");
        }
    }
    let summary = fs::read_to_string(outputs[0].join("summary.csv")).unwrap();
    assert!(summary.starts_with("statistic,replicas,mean,sd,se_mean,target,target_sd,q_0.025,q_0.975"));
    let meta = fs::read_to_string(outputs[0].join("summary.csv.meta.json")).unwrap();
    assert!(meta.contains("config_hash") && meta.contains("\"seed\": 1") && meta.contains("version"));
}

#[test]
fn seed_flag_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(mrd(&["replicate", "--config", &small_config(), "--out", a.to_str().unwrap()]).status.success());
    assert!(mrd(&["replicate", "--config", &small_config(), "--out", b.to_str().unwrap(), "--seed", "2"]).status.success());
    assert_ne!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    let text = fs::read_to_string(configs().join("small.json")).unwrap().replace("\"replicas\"", "\"replica\"");
    fs::write(&bad, text).unwrap();
    let out = mrd(&["replicate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replica"));
    let missing = mrd(&["replicate"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn oracle_exit_codes() {
    let ok = mrd(&["oracle", "--budget", "40"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.lines().count() >= 15);
    assert!(stdout.contains("PASS type-mean covariance"));
    let broken = mrd(&["oracle", "--budget", "40", "--fault-injection"]);
    assert_eq!(broken.status.code(), Some(3));
    let empty = mrd(&["oracle", "--budget", "0"]);
    assert_eq!(empty.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("warning"));
    assert!(empty.stdout.is_empty());
}

#[test]
fn classify_prints_types() {
    let out = mrd(&["classify", "--buyer", "1,0", "--seller", "1,0"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "buyer,0,1\n0,t,ib\n1,is,c\n");
}

#[test]
fn sample_and_estimate_write_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    assert!(mrd(&["sample", "--config", &small_config(), "--out", dir]).status.success());
    let assignment = fs::read_to_string(tmp.path().join("assignment.csv")).unwrap();
    assert_eq!(assignment.lines().count(), 13);
    assert!(tmp.path().join("types.csv.meta.json").exists());
    let est = mrd(&["estimate", "--config", &small_config(), "--out", dir]);
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    let csv = fs::read_to_string(tmp.path().join("estimate.csv")).unwrap();
    assert!(csv.starts_with("N_c,N_ib,N_is,N_t,Y_c,Y_ib,Y_is,Y_t,tau_direct,tau_spill_B,tau_spill_S,tau,theta"));
    assert!(fs::read_to_string(tmp.path().join("estimate.json")).unwrap().contains("sigma_hat"));
}
