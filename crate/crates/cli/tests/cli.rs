use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 42
paths = 2

[grid]
horizon = 1.0
steps = 100

[problem]
f = "0"
h = "0"
g = "1"

[problem.obstacle]
s0 = 0.0
"#;

fn greflect(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_greflect")).args(args).current_dir(dir).env_remove("GREFLECT_THREADS").output().unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

#[test]
fn simulate_succeeds_and_lists_files() {
    let dir = setup(CONFIG);
    let out = greflect(&["simulate", "--config", "run.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let listed = String::from_utf8(out.stdout).unwrap();
    assert!(listed.contains("paths.csv") && listed.contains("manifest.json"));
    assert!(dir.path().join("o/paths.csv").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = setup(CONFIG);
    let run = |seed: &str, out: &str| {
        assert_eq!(greflect(&["simulate", "--config", "run.toml", "--out", out, "--seed", seed], dir.path()).status.code(), Some(0));
        fs::read(dir.path().join(out).join("paths.csv")).unwrap()
    };
    assert_eq!(run("7", "a"), run("7", "b"));
    assert_ne!(run("7", "a"), run("8", "c"));
    let manifest = fs::read_to_string(dir.path().join("c/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 8"));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = setup(CONFIG);
    assert_eq!(greflect(&["simulate", "--config", "run.toml", "--out", "one", "--threads", "1"], dir.path()).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_greflect"))
        .args(["simulate", "--config", "run.toml", "--out", "env"])
        .env("GREFLECT_THREADS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("one/paths.csv")).unwrap(), fs::read(dir.path().join("env/paths.csv")).unwrap());
}

#[test]
fn config_errors_exit_with_one() {
    let cases = [
        (format!("sigma = 0.5\n{CONFIG}"), "sigma"),
        (CONFIG.replace("steps = 100", "steps = 0"), "grid.steps"),
        (CONFIG.replace("g = \"1\"", "g = \"1 +\""), "problem.g"),
        (CONFIG.replace("[grid]\nhorizon = 1.0\nsteps = 100\n", ""), "grid"),
    ];
    for (text, needle) in cases {
        let dir = setup(&text);
        let out = greflect(&["simulate", "--config", "run.toml", "--out", "o"], dir.path());
        assert_eq!(out.status.code(), Some(1), "{needle}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(needle), "{needle}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!dir.path().join("o").exists());
    }
}

#[test]
fn bad_invocations_exit_with_one() {
    let dir = setup(CONFIG);
    assert_eq!(greflect(&["teleport", "--config", "run.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(greflect(&["simulate", "--config", "missing.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(greflect(&["simulate"], dir.path()).status.code(), Some(1));
    assert_eq!(greflect(&["expectation", "--config", "run.toml"], dir.path()).status.code(), Some(1));
    let declared = setup(&format!("kind = \"picard\"\n{CONFIG}"));
    assert_eq!(greflect(&["simulate", "--config", "run.toml"], declared.path()).status.code(), Some(1));
}

#[test]
fn numeric_abort_exits_with_two_and_writes_nothing() {
    let dir = setup(&CONFIG.replace("f = \"0\"", "f = \"exp(exp(exp(x + 10)))\""));
    let out = greflect(&["simulate", "--config", "run.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
    assert!(!dir.path().join("o").exists() || fs::read_dir(dir.path().join("o")).unwrap().next().is_none());
}

#[test]
fn help_exits_cleanly() {
    let dir = setup(CONFIG);
    let out = greflect(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("--threads"));
}
