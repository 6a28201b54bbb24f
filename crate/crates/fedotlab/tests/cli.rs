use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fedotlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedotlab")).args(args).env("FEDOTLAB_THREADS", "2").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_plan(dir: &Path, body: &str) -> String {
    let path = dir.join("plan.ini");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "[plan]\noutput = out\nmethods = fedot, fedavg\nm = 20\ntau = 5\nseeds = 0, 1\n[task]\nn = 3\nd = 3\nn_test = 20\n[train]\ntotal_iters = 50\nbatch = 5\n";

#[test]
fn run_writes_one_row_per_round_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), SMALL);
    let o = fedotlab(&["run", &plan]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read(dir.path().join("out/results.csv")).unwrap();
    let text = String::from_utf8(csv.clone()).unwrap();
    // header + 2 methods · 2 seeds · 50/5 rounds
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 10);
    assert!(text.starts_with("method,m,tau,seed,round,avg_test_acc,"));
    assert!(dir.path().join("out/summary.txt").exists());
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 2);

    let o = fedotlab(&["run", &plan]);
    assert!(o.status.success());
    assert_eq!(fs::read(dir.path().join("out/results.csv")).unwrap(), csv, "rerun changed the results");

    let single = Command::new(env!("CARGO_BIN_EXE_fedotlab")).args(["run", &plan]).env("FEDOTLAB_THREADS", "1").output().unwrap();
    assert!(single.status.success());
    assert_eq!(fs::read(dir.path().join("out/results.csv")).unwrap(), csv, "thread count changed the results");

    let report = fedotlab(&["report", dir.path().join("out/results.csv").to_str().unwrap()]);
    assert!(report.status.success());
    assert!(stdout(&report).contains("fedot"));
}

#[test]
fn bad_plans_exit_with_validation_or_resource_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_plan(dir.path(), &SMALL.replace("seeds = 0, 1", "seeds ="));
    assert_eq!(fedotlab(&["run", &empty]).status.code(), Some(1));
    let typo = write_plan(dir.path(), &SMALL.replace("batch = 5", "bacth = 5"));
    let o = fedotlab(&["run", &typo]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 13"));
    let huge = write_plan(dir.path(), &SMALL.replace("n = 3", "n = 100000"));
    assert_eq!(fedotlab(&["run", &huge]).status.code(), Some(3));
    assert_eq!(fedotlab(&["run", "/nonexistent/plan.ini"]).status.code(), Some(1));
    let valid = write_plan(dir.path(), SMALL);
    let threads = Command::new(env!("CARGO_BIN_EXE_fedotlab")).args(["run", &valid]).env("FEDOTLAB_THREADS", "zero").output().unwrap();
    assert_eq!(threads.status.code(), Some(1));
}

fn value_of(out: &str, key: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with(key)).unwrap();
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn ot_check_on_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let same = "1 3\n0.0 1\n1.0 1\n2.5 2\n";
    for name in ["a", "b", "c"] {
        fs::write(p.join(name), same).unwrap();
    }
    let files: Vec<String> = ["a", "b", "c"].iter().map(|n| p.join(n).to_str().unwrap().to_string()).collect();
    let o = fedotlab(&["ot-check", &files[0], &files[1], &files[2]]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(value_of(&out, "primal").abs() <= 1e-12);
    assert!(value_of(&out, "dual").abs() <= 1e-12);

    fs::write(p.join("d0"), "1 1\n0 1\n").unwrap();
    fs::write(p.join("d2"), "1 1\n2 1\n").unwrap();
    let o = fedotlab(&["ot-check", p.join("d0").to_str().unwrap(), p.join("d2").to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!((value_of(&out, "primal") - 1.0).abs() <= 1e-12);
    assert!((value_of(&out, "barycenter") - 1.0).abs() <= 1e-12);
    assert!((value_of(&out, "dual") - 1.0).abs() <= 1e-12);

    fs::write(p.join("bad"), "1 2\n0 1\n").unwrap();
    assert_eq!(fedotlab(&["ot-check", &files[0], p.join("bad").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn ot_check_random_and_caps() {
    let o = fedotlab(&["ot-check", "--random", "3", "4", "2", "--seed", "11"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    let primal = value_of(&out, "primal");
    assert!((primal - value_of(&out, "dual")).abs() <= 1e-6);
    assert!((primal - value_of(&out, "barycenter")).abs() <= 1e-6);
    let o = fedotlab(&["ot-check", "--random", "2", "5", "1", "--cost", "w2"]);
    assert!(stdout(&o).contains("pushforward"));
    assert_eq!(fedotlab(&["ot-check", "--random", "3", "30", "2"]).status.code(), Some(3));
    assert_eq!(fedotlab(&["ot-check"]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_catches_a_fault() {
    let o = fedotlab(&["gradcheck", "--points", "2"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let o = fedotlab(&["gradcheck", "--points", "1", "--inject-fault", "classifier.mlp.W1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).lines().any(|l| l.starts_with("classifier.mlp.W1") && l.ends_with("FAIL")));
    assert_eq!(fedotlab(&["gradcheck", "--inject-fault", "no.such.block"]).status.code(), Some(1));
}
