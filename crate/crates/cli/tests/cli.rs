use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn lcvine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcvine"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn p(&self, s: &str) -> String {
        self.root.join(s).to_string_lossy().into_owned()
    }
}

/// A simulated network with one held-out station and a Gaussian-only
/// spatial fit, shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        let o = lcvine(&["simulate", "--d", "7", "--n", "300", "--holdout", "1", "--seed", "4", "--out-dir", &f.p("sim")]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = lcvine(&[
            "fit", "--stations", &f.p("sim/stations.csv"), "--obs", &f.p("sim/obs.csv"),
            "--families", "gaussian-only", "--out", &f.p("model.json"),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        f
    })
}

fn read_json(path: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_rejects_small_networks() {
    let dir = tempfile::tempdir().unwrap();
    let o = lcvine(&["simulate", "--d", "3", "--n", "10", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_writes_pipeline_inputs() {
    let f = fixture();
    for name in ["stations.csv", "obs.csv", "truth_stations.csv", "truth_obs.csv", "world.json"] {
        assert!(Path::new(&f.p(&format!("sim/{name}"))).exists(), "{name}");
    }
    let header = std::fs::read_to_string(f.p("sim/obs.csv")).unwrap();
    assert!(header.starts_with("date,1,2,3,4,5,6,7\n"));
}

#[test]
fn fitted_model_file_layout() {
    let f = fixture();
    let m = read_json(&f.p("model.json"));
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["mode"], "slcvcl");
    assert_eq!(m["slcvcl"]["beta"].as_object().unwrap().len(), 16);
    let slots = m["structure"]["slots"].as_array().unwrap();
    assert!(slots.iter().all(|s| s["family"]["kind"] == "gaussian"));
    let (s, l) = (m["slcvcl"]["cll"].as_f64().unwrap(), m["lcvcl"]["cll"].as_f64().unwrap());
    assert!(s <= l, "{s} > {l}");
}

#[test]
fn fit_prints_parameter_table() {
    let f = fixture();
    let o = lcvine(&[
        "fit", "--stations", &f.p("sim/stations.csv"), "--obs", &f.p("sim/obs.csv"),
        "--mode", "lcvcl", "--families", "gaussian", "--out", &f.p("local.json"),
    ]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("lcvcl:  cll") && !out.contains("beta_0;1"));
    assert!(read_json(&f.p("local.json"))["slcvcl"].is_null());
}

#[test]
fn fit_rejects_bad_input() {
    let f = fixture();
    let bad = f.p("bad.csv");
    std::fs::write(&bad, "date,1,2\n2000-01-01,1.0,oops\n").unwrap();
    let o = lcvine(&["fit", "--stations", &f.p("sim/stations.csv"), "--obs", &bad, "--out", &f.p("x.json")]);
    assert_eq!(code(&o), 2);
    let o = lcvine(&["fit", "--stations", &f.p("sim/stations.csv"), "--obs", &f.p("sim/obs.csv"), "--families", "banana", "--out", &f.p("x.json")]);
    assert_eq!(code(&o), 2);
}

fn predict(f: &Fixture, coords: &str, times: &str, extra: &[&str], out: &str) -> Output {
    let (model, obs) = (f.p("model.json"), f.p("sim/obs.csv"));
    let mut args = vec!["predict", "--model", &model, "--coords", coords, "--obs", &obs];
    args.extend(["--times", times, "--out", out]);
    args.extend(extra);
    lcvine(&args)
}

#[test]
fn predict_is_seeded() {
    let f = fixture();
    let (a, b) = (f.p("pa.csv"), f.p("pb.csv"));
    for out in [&a, &b] {
        let o = predict(f, "10.0,51.0,200", "2000-01-10:2000-01-20", &["--m", "50", "--seed", "9"], out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("time,mean,median,q025,q975\n"));
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn predict_defaults_to_1000_members() {
    let f = fixture();
    let out = f.p("pm.csv");
    let o = predict(f, "10.0,51.0,200", "2000-01-10", &["--samples"], &out);
    assert_eq!(code(&o), 0);
    let header = std::fs::read_to_string(&out).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header.split(',').count(), 5 + 1000);
}

#[test]
fn predict_error_codes() {
    let f = fixture();
    let stations = std::fs::read_to_string(f.p("sim/stations.csv")).unwrap();
    let first: Vec<&str> = stations.lines().nth(1).unwrap().split(',').collect();
    let at_station = format!("{},{},{}", first[2], first[3], first[4]);
    let o = predict(f, &at_station, "2000-01-10", &[], &f.p("p1.csv"));
    assert_eq!(code(&o), 2);
    let o = predict(f, "10.0,51.0,200", "1999-12-30:2000-01-02", &[], &f.p("p2.csv"));
    assert_eq!(code(&o), 5);
    let o = predict(f, "10.0,51.0", "2000-01-10", &[], &f.p("p3.csv"));
    assert_eq!(code(&o), 2);
}

#[test]
fn validate_single_and_pair() {
    let f = fixture();
    let common: Vec<String> = vec![
        "--truth".into(),
        f.p("sim/truth_obs.csv"),
        "--truth-stations".into(),
        f.p("sim/truth_stations.csv"),
        "--obs".into(),
        f.p("sim/obs.csv"),
        "--m".into(),
        "50".into(),
    ];
    let run = |models: &[String], out: &str| {
        let mut args: Vec<String> = vec!["validate".into(), "--model".into()];
        args.extend(models.iter().cloned());
        args.extend(common.iter().cloned());
        args.extend(["--out-dir".into(), out.to_string()]);
        lcvine(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let o = run(&[f.p("model.json")], &f.p("v1"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(f.p("v1/table.txt")).unwrap();
    assert!(table.contains("mean") && !table.contains("outperformance"));
    let scores = std::fs::read_to_string(f.p("v1/scores_model.csv")).unwrap();
    assert!(scores.starts_with("station,time,crps\n"));

    let o = run(&[f.p("model.json"), f.p("model.json")], &f.p("v2"));
    assert_eq!(code(&o), 0);
    let table = std::fs::read_to_string(f.p("v2/table.txt")).unwrap();
    assert!(table.contains("outperformance model vs model_2"));
    let diff = std::fs::read_to_string(f.p("v2/diff_model_vs_model_2.csv")).unwrap();
    assert!(diff.lines().skip(1).all(|l| l.ends_with(",0,tie")));
}
