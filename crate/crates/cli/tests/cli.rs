use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nex")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "[model]\nh = 2\nk = 3\n[simulate]\nn = 5\nm = 4\nt = 6\nk_true = 3\n[sampler]\nwarmup = 30\nsamples = 10\nchains = 1\n";

#[test]
fn simulate_writes_the_file_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("sim");
    let o = nex(&["simulate", "--config", s(&cfg), "--seed", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "network.csv", "network_full.csv", "truth_pi.csv", "truth_params.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 3);
    assert!(m["outputs"].as_array().unwrap().iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn fit_and_evaluate_produce_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, TINY).unwrap();
    let sim = dir.path().join("sim");
    let fit = dir.path().join("fit");
    assert!(nex(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).status.success());
    let o = nex(&["fit", "--config", s(&cfg), "--data", s(&sim.join("network.csv")), "--out", s(&fit)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["draws_chain1.csv", "pi_mean.csv", "summary.csv", "diagnostics.json", "shrinkage.json", "manifest.json"] {
        assert!(fit.join(f).is_file(), "{f} missing");
    }
    let o = nex(&[
        "evaluate",
        "--fit",
        s(&fit),
        "--labels",
        s(&sim.join("network_full.csv")),
        "--truth",
        s(&sim.join("truth_pi.csv")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(fit.join("metrics.json")).unwrap()).unwrap();
    let corr = m["truth"]["in_sample"]["correlation"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&corr));
    assert!(m["out_of_sample"]["n_cells"].as_u64().unwrap() > 0);
}

#[test]
fn invalid_config_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[model]\nh = 4\nk = 2\n").unwrap();
    let out = dir.path().join("sim");
    let o = nex(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("H <= K"));
    assert!(!out.exists());

    fs::write(&cfg, "[model]\nbogus = 1\n").unwrap();
    let o = nex(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn malformed_data_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("net.csv");
    fs::write(&data, "# dims: 2,2,1\ni,j,t,value\n1,1,1,1\n1,2,1,x\n").unwrap();
    let o = nex(&["fit", "--data", s(&data), "--out", s(&dir.path().join("fit"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("net.csv") && err.contains('4'), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(nex(&["fit"]).status.code(), Some(1));
    assert_eq!(nex(&["nonsense"]).status.code(), Some(1));
    assert_eq!(nex(&["--help"]).status.code(), Some(0));
}

#[test]
fn repcheck_reports_exact_representation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rep.json");
    let o = nex(&["repcheck", "--random", "4,3,2", "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let text = serde_json::to_string(&v).unwrap();
    assert!(text.contains("nex_error"), "{text}");
}
