use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn epishape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epishape")).args(args).output().unwrap()
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all = args.to_vec();
    let out = dir.to_str().unwrap();
    all.extend(["--out", out]);
    epishape(&all)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

fn columns(dir: &Path, name: &str) -> String {
    let text = read(dir, name);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# epishape ") && header.contains(" config_hash="), "{header}");
    lines.next().unwrap().to_string()
}

#[test]
fn lambda_c_writes_both_brackets() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &["lambda-c", "--d", "3", "--recovery", "exp:1.0", "--n", "8", "--tol", "0.05", "--replicas", "400", "--seed", "7"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("lambda-c: n = 8, out ["), "{stdout}");
    let j = json(dir.path(), "lambda_c.json");
    for side in ["out", "in"] {
        let (lo, hi) = (j[side]["lo"].as_f64().unwrap(), j[side]["hi"].as_f64().unwrap());
        assert!(lo < hi && hi - lo <= 0.05);
        assert!(j[side]["p_lo"].as_f64().unwrap() < 0.5 && j[side]["p_hi"].as_f64().unwrap() >= 0.5);
    }
    assert_eq!(j["_meta"]["seed"], 7);
    assert_eq!(j["_meta"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn verify_quick_passes() {
    let o = epishape(&["verify", "--quick"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 failed"));
}

#[test]
fn usage_errors_exit_two() {
    let o = epishape(&["epidemic", "--lambda", "1.0"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("recovery") && e.contains("Usage: epishape epidemic"), "{e}");
    assert_eq!(epishape(&["epidemic", "--recovery", "exp:1", "--lambda", "1", "--bogus"]).status.code(), Some(2));
    assert_eq!(epishape(&["nonsense"]).status.code(), Some(2));
    let o = epishape(&["epidemic", "--recovery", "const:0.0", "--lambda", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(epishape(&["--help"]).status.success());
}

#[test]
fn truncation_exits_three_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["radial", "--lambda", "1", "--recovery", "exp:1", "--box-radius", "4", "--n", "8"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("increase box_radius"));
}

fn config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn config_file_with_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "d = 3\nlambda = 1.2\nrecovery = \"const:2.0\"\nL = 16\n");
    let o = run_in(dir.path(), &["epidemic", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read(dir.path(), "epidemic.csv");
    assert!(rows.lines().skip(2).all(|l| l.ends_with(",") || l.split(',').count() == 5));

    let o = run_in(dir.path(), &["fkg", "--config", &cfg, "--u", "(0,0,0)->(1,0,0)", "--v", "(0,0,0)->(0,1,0)"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("box_radius"));

    let cfg = config(dir.path(), "d = 3\nlambda = 1.2\nrecovery = \"const:2.0\"\n");
    let fkg = ["fkg", "--config", &cfg, "--u", "(0,0,0)->(1,0,0)", "--v", "(0,0,0)->(0,1,0)", "--replicas", "200"];
    let o = run_in(dir.path(), &fkg);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(dir.path(), "fkg.json")["_meta"]["settings"]["lambda"], 1.2);
    let mut with_flag = fkg.to_vec();
    with_flag.extend(["--lambda", "2.0"]);
    assert!(run_in(dir.path(), &with_flag).status.success());
    let j = json(dir.path(), "fkg.json");
    assert_eq!(j["_meta"]["settings"]["lambda"], 2.0);
    assert_eq!(j["_meta"]["settings"]["recovery"], "const:2.0");
}

#[test]
fn config_errors_name_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "lambda = 1.0\nrecovery = \"exp:1.0\"\nfoo = 1\nhorizonn = 2.0\n");
    let o = run_in(dir.path(), &["epidemic", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown config keys for `epidemic`: foo, horizonn"), "{}", stderr(&o));

    let cfg = config(dir.path(), "lambda = \"fast\"\nrecovery = \"exp:1.0\"\n");
    let o = run_in(dir.path(), &["epidemic", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`lambda`"), "{}", stderr(&o));

    let cfg = config(dir.path(), "lambda = 1.0\nrecovery = \"const:0.0\"\n");
    assert_eq!(run_in(dir.path(), &["epidemic", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn outputs_are_reproducible_across_jobs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let shape = ["shape", "--d", "2", "--lambda", "3", "--recovery", "exp:1", "--t", "3", "--replicas", "20", "--L", "32"];
    let mut one = shape.to_vec();
    one.extend(["--jobs", "1", "--seed", "4", "--ladder", "1,2,3"]);
    let mut two = shape.to_vec();
    two.extend(["--jobs", "2", "--seed", "4", "--ladder", "1,2,3"]);
    assert!(run_in(a.path(), &one).status.success());
    assert!(run_in(b.path(), &two).status.success());
    for name in ["radii.csv", "cloud.csv", "sandwich.csv", "shape.json"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let first = read(a.path(), "radii.csv");
    assert!(first.lines().next().unwrap().ends_with(" seed=4"));

    let mut other = shape.to_vec();
    other.extend(["--seed", "5"]);
    assert!(run_in(b.path(), &other).status.success());
    assert_ne!(read(a.path(), "radii.csv"), read(b.path(), "radii.csv"));
}

#[test]
fn csv_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let common = ["--d", "2", "--lambda", "1.5", "--recovery", "exp:1.0"];
    let with = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        v.extend(common.iter().map(|s| s.to_string()));
        v
    };
    let ok = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = run_in(p, &refs);
        assert!(o.status.success(), "{:?}: {}", refs, stderr(&o));
    };
    ok(with(&["epidemic", "--L", "4", "--horizon", "2"]));
    assert_eq!(columns(p, "epidemic.csv"), "x_1,x_2,infection_time,recovery_time");
    ok(with(&["shape", "--t", "2", "--replicas", "10", "--L", "24"]));
    assert_eq!(columns(p, "radii.csv"), "direction,radius,ci_lo,ci_hi");
    assert_eq!(columns(p, "cloud.csv"), "replica,x_1,x_2");
    ok(with(&["radial", "--L", "20", "--c-prime", "4", "--n", "2,4", "--replicas", "20", "--k-grid", "0.5,2", "--growth-radii", "4,8,12,14"]));
    assert_eq!(columns(p, "radial.csv"), "z,n,replica,ratio");
    assert!(json(p, "growth.json")["rows"].as_array().unwrap().len() == 2);
    ok(with(&["tails", "--n", "1,2,3,4,5", "--replicas", "200"]));
    assert_eq!(columns(p, "survival.csv"), "lambda,n,direction,p_hat,se,replicas");
    let fits = json(p, "survival_fit.json");
    for key in ["model", "rate", "r2", "support"] {
        assert!(fits["out"].get(key).is_some(), "{key}");
    }
    ok(with(&["tails", "--kind", "kappa", "--L", "12", "--c-prime", "2", "--replicas", "30"]));
    assert_eq!(columns(p, "kappa.csv"), "n,p_hat,replicas");
    ok(with(&["slab", "--k", "2", "--extent", "8", "--replicas", "20"]));
    assert_eq!(columns(p, "slab.csv"), "k,extent,height,frequency,se,replicas");
    let o = run_in(p, &with(&["tails", "--kind", "nope"]).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));
}
