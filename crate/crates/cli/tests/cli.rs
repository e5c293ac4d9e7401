use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn forchup(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forchup")).args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = forchup(args, dir);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = "
seed = 5
[grid]
nx = 16
ny = 16
mx = 2
my = 2
[upscale]
refine = 2
";

fn small(dir: &Path, extra: &str) {
    fs::write(dir.join("run.toml"), format!("{SMALL}{extra}")).unwrap();
}

fn manifest(dir: &Path, command: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("out/manifest-{command}.json"))).unwrap()).unwrap()
}

#[test]
fn generate_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    small(d.path(), "");
    ok(&["generate", "--config", "run.toml", "--out", "a"], d.path());
    ok(&["generate", "--config", "run.toml", "--out", "b"], d.path());
    for f in ["k.csv", "phi.csv", "beta.csv", "fields.vtk", "manifest-generate.json"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
    ok(&["generate", "--config", "run.toml", "--out", "c", "--seed", "6"], d.path());
    assert_ne!(fs::read(d.path().join("a/k.csv")).unwrap(), fs::read(d.path().join("c/k.csv")).unwrap());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("a/manifest-generate.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["tolerances"]["picard_tol"], 1e-8);
}

#[test]
fn uniform_field_csv_is_constant() {
    let d = tempfile::tempdir().unwrap();
    small(d.path(), "[field]\ncontrast = 0.0\nk_min = 2.5\n");
    ok(&["generate", "--config", "run.toml", "--out", "out"], d.path());
    let k = fs::read_to_string(d.path().join("out/k.csv")).unwrap();
    assert_eq!(k.lines().count(), 257);
    assert!(k.lines().skip(1).all(|l| l.ends_with(",2.5e0")));
}

#[test]
fn darcy_upscale_has_unit_mobility() {
    let d = tempfile::tempdir().unwrap();
    small(d.path(), "[law]\nkind = \"darcy\"\n");
    ok(&["upscale", "--config", "run.toml", "--out", "out"], d.path());
    let m = manifest(d.path(), "upscale");
    assert_eq!(m["summary"]["tables"], 0);
    assert!(!d.path().join("out/gstar").exists());
    let model = fs::read_to_string(d.path().join("out/coarse_model.json")).unwrap();
    assert_eq!(model.matches("\"kind\": \"unit\"").count() + model.matches("\"kind\":\"unit\"").count(), 4);
}

#[test]
fn homogeneous_upscale_is_identity_and_coarse_matches_fine() {
    let d = tempfile::tempdir().unwrap();
    small(d.path(), "[field]\ncontrast = 0.0\nk_min = 3.0\n[law]\nkind = \"darcy\"\n");
    ok(&["upscale", "--config", "run.toml", "--out", "out"], d.path());
    let blocks = fs::read_to_string(d.path().join("out/blocks.csv")).unwrap();
    for line in blocks.lines().skip(1) {
        let c: Vec<f64> = line.split(',').skip(3).take(4).map(|v| v.parse().unwrap()).collect();
        assert!((c[0] - 3.0).abs() < 1e-10 && c[1].abs() < 1e-10 && c[2].abs() < 1e-10 && (c[3] - 3.0).abs() < 1e-10);
    }
    ok(&["solve", "--config", "run.toml", "--out", "out", "--scale", "fine"], d.path());
    let fine = manifest(d.path(), "solve")["summary"]["average_velocity"].clone();
    ok(&["solve", "--config", "run.toml", "--out", "out", "--scale", "coarse"], d.path());
    let coarse = manifest(d.path(), "solve")["summary"]["average_velocity"].clone();
    for i in 0..2 {
        assert!((fine[i].as_f64().unwrap() - coarse[i].as_f64().unwrap()).abs() < 1e-10);
    }
}

#[test]
fn variant_iv_writes_polynomial_parameters() {
    let d = tempfile::tempdir().unwrap();
    small(d.path(), "[law]\nkind = \"darcy\"\n");
    ok(&["upscale", "--config", "run.toml", "--out", "out", "--variant", "iv"], d.path());
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("out/coarse_model.json")).unwrap()).unwrap();
    assert_eq!(model["variant"], "iv");
    for b in model["blocks"].as_array().unwrap() {
        assert!(!b["kstar_poly"].is_null());
        assert_eq!(b["phistar"]["form"], "poly");
    }
}

#[test]
fn solve_regimes_write_their_files() {
    let d = tempfile::tempdir().unwrap();
    small(d.path(), "[law]\nkind = \"darcy\"\n[transient]\nt_end = 0.05\n");
    let s = ok(&["solve", "--config", "run.toml", "--out", "out", "--regime", "basic-profile"], d.path());
    assert!(s.contains("fine-basic-profile-pressure.csv"));
    assert!(manifest(d.path(), "solve")["summary"]["pi"]["index"].as_f64().unwrap() > 0.0);
    ok(&["solve", "--config", "run.toml", "--out", "out", "--regime", "transient"], d.path());
    let series = fs::read_to_string(d.path().join("out/fine-transient.csv")).unwrap();
    assert!(series.lines().nth(1).unwrap().starts_with("time,pi,distance"));
    assert_eq!(series.lines().count(), 2 + 6);
}

#[test]
fn compare_driven_layers_gives_zero_for_matching_methods() {
    let d = tempfile::tempdir().unwrap();
    small(
        d.path(),
        "[field]\npattern = \"horizontal-stratified\"\nlayers = 4\n[law]\nbeta_min = 0.5\n[flow]\nproblem = \"driven\"\n[sweep]\nratios = [0.0, 10.0]\n",
    );
    ok(&["compare", "--config", "run.toml", "--out", "out"], d.path());
    let csv = fs::read_to_string(d.path().join("out/compare-horizontal-stratified.csv")).unwrap();
    let row = |name: &str| -> Vec<f64> {
        let line = csv.lines().find(|l| l.starts_with(&format!("{name},"))).unwrap();
        line.split(',').skip(1).map(|v| v.parse().unwrap()).collect()
    };
    assert!(row("numerical").iter().all(|e| *e < 1e-6));
    assert!(row("parallel").iter().all(|e| *e < 1e-6));
    assert!(row("perpendicular")[1] > 1e-6);
}

#[test]
fn layered_calculator() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("s.toml"), "[[layer]]\nthickness = 1\nk = 1\n[[layer]]\nthickness = 1\nk = 3\n").unwrap();
    let s = ok(&["layered", "s.toml"], d.path());
    assert!(s.contains("kstar_parallel = 2\n"));
    assert!(s.contains("kstar_perpendicular = 1.5\n"));
    fs::write(d.path().join("t.toml"), "[[layer]]\nthickness = 1\nk = 2\nbeta = 0.5\n[[layer]]\nthickness = 2\nk = 2\nbeta = 0.5\n").unwrap();
    let s = ok(&["layered", "t.toml", "--xi", "1.5"], d.path());
    assert!(s.contains("kstar_parallel = 2\n"));
    assert!(s.contains("betastar_parallel = 0.5"));
    let s = ok(&["layered", "t.toml", "--q", "2"], d.path());
    assert!(s.contains("layer_gradients = "));
}

#[test]
fn failures_exit_nonzero() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("run.toml"), "[grid]\nnx = 16\nny = 16\nmx = 3\nmy = 2\n").unwrap();
    let out = forchup(&["generate", "--config", "run.toml"], d.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot be split"));
    small(d.path(), "");
    assert!(!forchup(&["solve", "--config", "run.toml", "--scale", "coarse", "--out", "empty"], d.path()).status.success());
    assert!(!forchup(&["upscale", "--variant", "v"], d.path()).status.success());
    assert!(!forchup(&["layered", "missing.toml"], d.path()).status.success());
    let mut bad = String::from(SMALL);
    bad.push_str("[solver]\nmax_iter = 1\ntol = 1e-14\n[law]\nbeta_min = 50.0\n");
    fs::write(d.path().join("run.toml"), bad).unwrap();
    let out = forchup(&["solve", "--config", "run.toml", "--regime", "basic-profile"], d.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));
}
