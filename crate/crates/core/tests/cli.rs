use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ml2o"))
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn base(optimizer: &str) -> Value {
    json!({
        "problem": {"name": "quadratic_pair", "params": {"dim": 3, "noise_sigma": 0.2}},
        "optimizer": {"name": optimizer},
        "steps": 20,
        "step_schedule": {"kind": "harmonic"},
        "sample_schedule": {"base": 4, "rate": 0.1},
        "seeds": [1, 2]
    })
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv") && !p.ends_with("timing.csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn run_writes_traces_summary_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &base("dssmg"));
    let out = tmp.path().join("out");
    let st = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    for f in ["trace_0_seed1_m0.csv", "trace_1_seed2_m0.csv", "summary.csv", "timing.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], json!([1, 2]));
    assert_eq!(manifest["config"]["optimizer"]["name"], "dssmg");
    let trace = fs::read_to_string(out.join("trace_0_seed1_m0.csv")).unwrap();
    assert_eq!(trace.lines().count(), 22);
    assert!(trace.starts_with("k,loss_0,loss_1,direction_norm,alpha,sample_size,guard_choice,criticality"));
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = base("smg");
    v["seeds"] = json!([1, 1]);
    let cfg = write_config(tmp.path(), "c.json", &v);
    for out in ["a", "b"] {
        let st = bin()
            .args(["run", "--threads", "2", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join(out))
            .status()
            .unwrap();
        assert!(st.success());
    }
    let (a, b) = (csvs(&tmp.path().join("a")), csvs(&tmp.path().join("b")));
    assert_eq!(a, b);
    let trace = |name: &str| a.iter().find(|(n, _)| n == name).unwrap().1.clone();
    assert_eq!(trace("trace_0_seed1_m0.csv"), trace("trace_1_seed1_m0.csv"));
}

#[test]
fn seeds_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &base("mgda"));
    let out = tmp.path().join("o");
    let st = bin().args(["run", "--seeds", "7,8,9", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    assert!(out.join("trace_2_seed9_m0.csv").is_file());
}

#[test]
fn config_errors_exit_with_1_and_name_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = base("adam_mo");
    v["steps"] = json!(0);
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("never");
    let res = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("optimizer.name"), "{err}");
    assert!(err.contains("steps"), "{err}");
    assert!(!out.exists());
}

#[test]
fn runtime_failure_exits_with_2_and_cleans_up() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = base("mgda");
    // a step size this large sends the iterates to infinity
    v["step_schedule"] = json!({"kind": "constant", "alpha": 1e300});
    v["steps"] = json!(50);
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("partial");
    let res = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.exists());
}

#[test]
fn front_needs_a_population() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &base("smg"));
    let st = bin().args(["front", "--config"]).arg(&cfg).arg("--out").arg(tmp.path().join("f")).status().unwrap();
    assert_eq!(st.code(), Some(1));

    let mut v = base("smg");
    v["population"] = json!(12);
    v["problem"]["params"]["half_width"] = json!(2.0);
    let cfg = write_config(tmp.path(), "p.json", &v);
    let out = tmp.path().join("f");
    let st = bin().args(["front", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    let front = fs::read_to_string(out.join("front_0_seed1.csv")).unwrap();
    assert!(front.lines().count() >= 2);
    assert!(out.join("trace_1_seed2_m11.csv").is_file());
}

#[test]
fn compare_reports_mean_and_std() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &base("dssmg"));
    let run = tmp.path().join("r");
    assert!(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&run).status().unwrap().success());
    let report = tmp.path().join("report.csv");
    let st = bin()
        .args(["compare", "--metric", "final-max-loss", "--out"])
        .arg(&report)
        .arg(&run)
        .arg(&run)
        .status()
        .unwrap();
    assert!(st.success());
    let text = fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].split(',').skip(2).collect::<Vec<_>>(), rows[1].split(',').skip(2).collect::<Vec<_>>());

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let st = bin().args(["compare"]).arg(&empty).status().unwrap();
    assert_eq!(st.code(), Some(2));

    let mut other = base("dssmg");
    other["problem"]["params"]["dim"] = json!(4);
    let cfg2 = write_config(tmp.path(), "d.json", &other);
    let run2 = tmp.path().join("r2");
    assert!(bin().args(["run", "--config"]).arg(&cfg2).arg("--out").arg(&run2).status().unwrap().success());
    let res = bin().args(["compare"]).arg(&run).arg(&run2).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("different problems"));
}

#[test]
fn single_seed_compared_to_itself_has_zero_std() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = base("mgda");
    v["seeds"] = json!([5]);
    let cfg = write_config(tmp.path(), "c.json", &v);
    let run = tmp.path().join("r");
    assert!(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&run).status().unwrap().success());
    let res = bin().args(["compare", "--metric", "criticality"]).arg(&run).arg(&run).output().unwrap();
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.lines().all(|l| l.ends_with("std 0.000000e0")), "{text}");
}

#[test]
fn train_then_run_learned_optimizers() {
    let tmp = tempfile::tempdir().unwrap();
    let train = json!({
        "problem": {"name": "quadratic_pair", "params": {"dim": 3}},
        "hidden": 4,
        "meta": {"horizon": 10, "truncation": 5, "meta_lr": 0.1, "epochs": 3,
                 "step": {"kind": "constant", "alpha": 0.05}, "source": {"kind": "exact"}, "seed": 1}
    });
    let tcfg = write_config(tmp.path(), "t.json", &train);
    let tout = tmp.path().join("train");
    let st = bin().args(["train-ml2o", "--config"]).arg(&tcfg).arg("--out").arg(&tout).status().unwrap();
    assert!(st.success());
    let trace = fs::read_to_string(tout.join("meta_loss.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3 * 2);

    let ck = tout.join("checkpoint.json");
    for opt in ["ml2o", "gml2o"] {
        let mut v = base(opt);
        v["optimizer"]["params"] = json!({"checkpoint": ck});
        let cfg = write_config(tmp.path(), &format!("{opt}.json"), &v);
        let out = tmp.path().join(opt);
        let res = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
        let last = summary.lines().nth(1).unwrap();
        assert_eq!(last.ends_with(','), opt == "ml2o", "{last}");
    }
}

#[test]
fn check_subcommand_passes() {
    let res = bin().arg("check").output().unwrap();
    let text = String::from_utf8_lossy(&res.stdout);
    assert_eq!(res.status.code(), Some(0), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
