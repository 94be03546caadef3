use std::path::Path;
use std::process::{Command, Output};

use eflow::hydrology::{eval_efd, eval_net_benefit, NetBenefitMode};
use eflow::pareto::{anchors, ParetoFront, Provenance};
use eflow::report::SolveOutput;
use eflow::scenario::{builtin_rajshahi, builtin_rajshahi_source};
use eflow::solver::SolverOptions;
use eflow::YearType;

fn eflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eflow")).args(args).env_remove("EFLOW_OUT_DIR").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn solve_prints_allocation_table() {
    let o = eflow(&["solve", "--builtin", "rajshahi", "--year", "dry", "--model", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let potato = out.lines().find(|l| l.starts_with("Potato")).unwrap();
    assert!(potato.ends_with("55271"), "{potato}");
    let flow = out.lines().find(|l| l.starts_with("Env. flow (GL)")).unwrap();
    let pump = out.lines().find(|l| l.starts_with("Pumped water (GL)")).unwrap();
    assert_eq!(flow.split_whitespace().count(), 3 + 12);
    assert_eq!(pump.split_whitespace().count(), 3 + 12);
    assert!(out.contains("f1 (net benefit) =") && out.contains("f2 (EFD)"));
}

#[test]
fn model_three_is_routed_to_pareto() {
    let o = eflow(&["solve", "--model", "3"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("eflow pareto"));
    assert_eq!(code(&eflow(&["solve", "--model", "7"])), 1);
    assert_eq!(code(&eflow(&["solve", "--year", "monsoon"])), 1);
    assert_eq!(code(&eflow(&["frobnicate"])), 1);
    assert_eq!(code(&eflow(&["--help"])), 0);
}

#[test]
fn unwritable_output_dir_fails_without_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = eflow(&["solve", "--year", "dry", "--format", "json,csv,table", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("not writable"));
    assert_eq!(files_in(dir.path()), vec!["file".to_string()]);
    assert!(stdout(&o).is_empty());
}

#[test]
fn env_out_dir_is_used_and_flag_wins() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["solve", "--year", "wet", "--model", "2", "--format", "json"];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_eflow")).args(&args).env("EFLOW_OUT_DIR", env_dir.path()).output().unwrap()
    };
    assert_eq!(code(&run(&[])), 0);
    assert_eq!(files_in(env_dir.path()), vec!["solve_model2_wet.json".to_string()]);
    assert_eq!(code(&run(&["--out", flag_dir.path().to_str().unwrap()])), 0);
    assert_eq!(files_in(flag_dir.path()), vec!["solve_model2_wet.json".to_string()]);
    assert_eq!(files_in(env_dir.path()).len(), 1);
}

#[test]
fn emitted_decision_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = eflow(&["solve", "--model", "1", "--format", "json,csv,table,plot", "--mps", "--out", d]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = builtin_rajshahi();
    for year in YearType::ALL {
        let text = std::fs::read_to_string(dir.path().join(format!("solve_model1_{year}.json"))).unwrap();
        let out: SolveOutput = serde_json::from_str(&text).unwrap();
        let dec = out.decision.unwrap();
        let nb = eval_net_benefit(&s, year, &dec, NetBenefitMode::Extended).unwrap();
        let efd = eval_efd(&s, year, &dec).unwrap();
        let (enb, eefd) = (out.nb.unwrap(), out.efd.unwrap());
        assert!((nb - enb).abs() <= 1e-10 * enb.abs(), "{year}: {nb} vs {enb}");
        assert!((efd - eefd).abs() <= 1e-10 * eefd.abs().max(1.0), "{year}: {efd} vs {eefd}");
        for suffix in ["csv", "txt", "plot.dat"] {
            assert!(dir.path().join(format!("solve_model1_{year}.{suffix}")).exists());
        }
        let mps = std::fs::read_to_string(dir.path().join(format!("solve_model1_{year}.mps"))).unwrap();
        assert!(mps.starts_with("NAME") && mps.trim_end().ends_with("ENDATA"));
    }
    assert!(!files_in(dir.path()).iter().any(|f| f.starts_with('.')), "temp files left behind");
}

#[test]
fn pareto_front_matches_anchors_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = eflow(&["pareto", "--year", "dry", "--weights", "20", "--seed", "7", "--format", "json,csv,plot", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["front_dry.json", "front_dry.csv", "front_dry.plot.dat"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let front: ParetoFront = serde_json::from_slice(&std::fs::read(a.path().join("front_dry.json")).unwrap()).unwrap();
    let s = std::sync::Arc::new(builtin_rajshahi());
    let (f1, f2) = anchors(&s, YearType::Dry, &SolverOptions::default()).unwrap();
    let first = front.points.first().unwrap();
    let last = front.points.last().unwrap();
    assert_eq!(first.provenance, Provenance::AnchorF2);
    assert_eq!(last.provenance, Provenance::AnchorF1);
    assert_eq!((first.nb, first.efd), (f2.nb, f2.efd));
    assert_eq!((last.nb, last.efd), (f1.nb, f1.efd));
    let plot = std::fs::read_to_string(a.path().join("front_dry.plot.dat")).unwrap();
    assert!(plot.lines().skip(1).all(|l| l.split_whitespace().count() == 2));
    assert_eq!(front.seed, 7);
}

#[test]
fn pareto_rejects_single_weight() {
    let o = eflow(&["pareto", "--weights", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("at least 2"));
}

fn sweep_csv(args: &[&str]) -> Vec<csv::StringRecord> {
    let mut full = vec!["sweep"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--year", "dry", "--format", "csv"]);
    let o = eflow(&full);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|r| r.unwrap()).collect()
}

fn column(rows: &[csv::StringRecord], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i].parse().unwrap_or(f64::NEG_INFINITY)).collect()
}

#[test]
fn pump_cap_sweep_is_nondecreasing() {
    let rows = sweep_csv(&["t_pump", "--values", "100,300,500", "--model", "1"]);
    assert_eq!(rows.len(), 3);
    let nb = column(&rows, 3);
    assert!(nb.windows(2).all(|w| w[1] >= w[0]), "{nb:?}");
}

#[test]
fn default_canal_cap_sweep_equals_solve() {
    let s = builtin_rajshahi();
    let v = s.limits.canal_cap.to_string();
    let rows = sweep_csv(&["canal_cap", "--values", &v, "--model", "1"]);
    let dir = tempfile::tempdir().unwrap();
    let o = eflow(&["solve", "--year", "dry", "--format", "json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let out: SolveOutput =
        serde_json::from_slice(&std::fs::read(dir.path().join("solve_model1_dry.json")).unwrap()).unwrap();
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), out.nb.unwrap());
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), out.efd.unwrap());
}

#[test]
fn tef_fraction_sweep_raises_deficiency() {
    let rows = sweep_csv(&["tef_fraction_high", "--values", "0.4,0.6", "--model", "2"]);
    let efd = column(&rows, 4);
    assert!(efd[1] >= efd[0], "{efd:?}");
}

#[test]
fn validate_reports_and_sets_exit_status() {
    let o = eflow(&["validate", "--builtin", "rajshahi"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("validation: ok"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = builtin_rajshahi_source().replacen("price = 33000.0", "price = -33000.0", 1);
    std::fs::write(&path, text).unwrap();
    let o = eflow(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("crops[0].price"), "{}", stdout(&o));

    let o = eflow(&["validate", "--scenario", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("not found"));

    let o = eflow(&["solve", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn clamp_flag_changes_the_model() {
    let run = |clamp: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = eflow(&["solve", "--year", "dry", "--clamp", clamp, "--format", "json", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        let out: SolveOutput =
            serde_json::from_slice(&std::fs::read(dir.path().join("solve_model1_dry.json")).unwrap()).unwrap();
        out
    };
    let none = run("none");
    let per_crop = run("per-crop");
    assert_eq!(none.requirement_clamp.as_str(), "none");
    assert!(none.nb.unwrap() > per_crop.nb.unwrap());
}

fn schema_keys(name: &str) -> Vec<String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs").join(name);
    let schema: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    let mut keys: Vec<String> =
        schema["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    keys.sort();
    keys
}

fn object_keys(v: &serde_json::Value) -> Vec<String> {
    let mut keys: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    keys
}

#[test]
fn shipped_schemas_cover_emitted_fields() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&eflow(&["solve", "--year", "avg", "--format", "json", "--out", d])), 0);
    assert_eq!(code(&eflow(&["pareto", "--year", "avg", "--weights", "2", "--format", "json", "--out", d])), 0);
    let solve: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("solve_model1_avg.json")).unwrap()).unwrap();
    let front: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("front_avg.json")).unwrap()).unwrap();
    assert_eq!(object_keys(&solve), schema_keys("solve.schema.json"));
    assert_eq!(object_keys(&front), schema_keys("front.schema.json"));
}
