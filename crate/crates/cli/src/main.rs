use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use greflect::config::{parse_config, ExperimentKind};
use greflect::runner::run_experiment;

/// Run a reflected G-SDE experiment described by a TOML config.
#[derive(Debug, Parser)]
#[command(name = "greflect", version)]
struct Args {
    /// Experiment kind: simulate, picard, expectation, capacity, check_ito,
    /// check_bdg, check_qv, compare, stability, gheat or skorokhod.
    kind: String,

    /// Path to the experiment config.
    #[arg(long)]
    config: PathBuf,

    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads (0 = one per core).
    #[arg(long, env = "GREFLECT_THREADS")]
    threads: Option<usize>,
}

const CONFIG_ERROR: u8 = 1;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("greflect: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(args: Args) -> Result<(), (u8, String)> {
    let config_err = |msg: String| (CONFIG_ERROR, msg);
    let kind = ExperimentKind::from_name(&args.kind).ok_or_else(|| {
        let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        config_err(format!("unknown experiment kind `{}` (expected one of {})", args.kind, names.join(", ")))
    })?;
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| config_err(format!("cannot read {}: {e}", args.config.display())))?;
    let mut spec = parse_config(&text).map_err(|e| config_err(format!("{}: {e}", args.config.display())))?;
    if let Some(k) = spec.kind {
        if k != kind {
            return Err(config_err(format!("config declares kind `{}` but `{}` was requested", k.name(), kind.name())));
        }
    }
    spec.kind = Some(kind);
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let out = args.out.or_else(|| spec.out_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    spec.out_dir = Some(out.display().to_string());
    spec.validate_for(kind).map_err(|e| config_err(e.to_string()))?;

    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_err(format!("cannot start thread pool: {e}")))?;
    }
    let report = run_experiment(&spec, &out).map_err(|e| (e.exit_code() as u8, e.to_string()))?;
    for f in &report.files {
        println!("{}", f.display());
    }
    Ok(())
}
