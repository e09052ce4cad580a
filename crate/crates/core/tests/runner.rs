use std::fs;
use std::path::Path;

use greflect::config::{parse_config, ExperimentKind};
use greflect::runner::run_experiment;

const SIMULATE: &str = r#"
seed = 42
paths = 3

[grid]
horizon = 1.0
steps = 1000

[problem]
f = "0"
h = "0"
g = "1"

[problem.obstacle]
s0 = 0.0
"#;

fn run(text: &str, kind: ExperimentKind, dir: &Path) -> greflect::Result<Vec<String>> {
    let mut spec = parse_config(text).unwrap();
    spec.kind = Some(kind);
    let report = run_experiment(&spec, dir)?;
    Ok(report.files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect())
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files = run(SIMULATE, ExperimentKind::Simulate, a.path()).unwrap();
    assert_eq!(files, ["paths.csv", "manifest.json"]);
    run(SIMULATE, ExperimentKind::Simulate, b.path()).unwrap();
    let first = fs::read(a.path().join("paths.csv")).unwrap();
    assert_eq!(first, fs::read(b.path().join("paths.csv")).unwrap());
    assert_eq!(rows(&a.path().join("paths.csv")).len(), 3 * 1001);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["spec"]["grid"]["steps"], 1000);
}

#[test]
fn qv_study_rms_decreases() {
    let text = SIMULATE.replace("paths = 3", "paths = 4000").replace("steps = 1000", "steps = 100\nlevels = 3");
    let dir = tempfile::tempdir().unwrap();
    run(&text, ExperimentKind::CheckQv, dir.path()).unwrap();
    let rms: Vec<f64> = rows(&dir.path().join("qv_study.csv")).iter().map(|r| r[4].parse().unwrap()).collect();
    assert_eq!(rms.len(), 3);
    assert!(rms.windows(2).all(|w| w[1] < w[0]), "{rms:?}");
}

#[test]
fn comparison_column_does_not_grow() {
    let text = format!(
        "{}\n[problem2]\nf = \"0\"\ng = \"1\"\n",
        SIMULATE.replace("f = \"0\"", "f = \"-1\"").replace("paths = 3", "paths = 500").replace("steps = 1000", "steps = 250\nlevels = 3")
    );
    let dir = tempfile::tempdir().unwrap();
    run(&text, ExperimentKind::Compare, dir.path()).unwrap();
    let v: Vec<f64> = rows(&dir.path().join("comparison.csv")).iter().map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(v.len(), 3);
    assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{v:?}");
}

#[test]
fn every_kind_runs_on_a_small_config() {
    let text = format!(
        "payoff = \"b*b\"\nevent = \"b\"\n{}\n[problem2]\nx0 = 0.1\ng = \"1\"\n",
        SIMULATE.replace("paths = 3", "paths = 20").replace("steps = 1000", "steps = 50\nlevels = 2")
    );
    let expected = [
        (ExperimentKind::Simulate, "paths.csv"),
        (ExperimentKind::Skorokhod, "reflected.csv"),
        (ExperimentKind::Picard, "picard_trace.csv"),
        (ExperimentKind::Expectation, "expectation.json"),
        (ExperimentKind::Capacity, "capacity.json"),
        (ExperimentKind::CheckIto, "ito_study.csv"),
        (ExperimentKind::CheckBdg, "bdg.json"),
        (ExperimentKind::CheckQv, "qv_study.csv"),
        (ExperimentKind::Compare, "comparison.csv"),
        (ExperimentKind::Stability, "stability.csv"),
        (ExperimentKind::Gheat, "gheat.csv"),
    ];
    for (kind, file) in expected {
        let dir = tempfile::tempdir().unwrap();
        let spec_text = text.replace("payoff = \"b*b\"", if kind == ExperimentKind::Gheat { "payoff = \"x*x\"" } else { "payoff = \"b*b\"" });
        let files = run(&spec_text, kind, dir.path()).unwrap_or_else(|e| panic!("{}: {e}", kind.name()));
        assert!(files.iter().any(|f| f == file), "{}: {files:?}", kind.name());
        assert_eq!(files.last().unwrap(), "manifest.json");
    }
}

#[test]
fn numeric_abort_leaves_no_files() {
    let text = SIMULATE.replace("g = \"1\"", "g = \"1/(x - x)\"");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let err = run(&text, ExperimentKind::Simulate, &out).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn missing_kind_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(SIMULATE, ExperimentKind::Expectation, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
}

#[test]
fn shipped_configs_validate_for_their_kind() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for kind in ExperimentKind::ALL {
        let path = dir.join(format!("{}.toml", kind.name()));
        let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let spec = parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        spec.validate_for(kind).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
