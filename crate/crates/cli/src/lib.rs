//! `dhl` batch front-end: configuration parsing, job orchestration and
//! artifact persistence.

pub mod config;
pub mod experiments;
pub mod output;
pub mod plots;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use config::{parse_config, ExperimentConfig, Kind};
use output::{long_csv, read_manifest, scan_artifacts, write_atomic, write_manifest, Manifest, Versions, RESULTS};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;

pub const OUT_ENV: &str = "DHL_OUT";
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "dhl", version, about = "Degenerate elliptic regularity and homogenization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to `$DHL_OUT/<kind>-<digest>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Added to every configured seed.
    #[arg(long, default_value_t = 0)]
    pub seed_offset: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exponent table over a (d, p, q) grid.
    Exponents(RunArgs),
    /// Dirichlet solves; writes field and solution binaries.
    Solve(RunArgs),
    /// Optimal cutoff energy against its bound.
    Cutoff(RunArgs),
    /// Harnack, weak Harnack and local boundedness ratios.
    Harnack(RunArgs),
    /// Two-dimensional local bound.
    Bound2d(RunArgs),
    /// Corrector campaign over growing tori.
    Corrector(RunArgs),
    /// Refinement sweep over radial power weights.
    Sweep(RunArgs),
    /// Plot scripts for the tables in an output directory.
    Plots(RunArgs),
}

impl Command {
    fn parts(&self) -> (Option<Kind>, &RunArgs) {
        match self {
            Command::Exponents(a) => (Some(Kind::Exponents), a),
            Command::Solve(a) => (Some(Kind::Solve), a),
            Command::Cutoff(a) => (Some(Kind::Cutoff), a),
            Command::Harnack(a) => (Some(Kind::Harnack), a),
            Command::Bound2d(a) => (Some(Kind::Bound2d), a),
            Command::Corrector(a) => (Some(Kind::Corrector), a),
            Command::Sweep(a) => (Some(Kind::Sweep), a),
            Command::Plots(a) => (None, a),
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, String> {
    let config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => parse_config("").map_err(|e| e.to_string())?,
    };
    Ok(config.with_seed_offset(args.seed_offset))
}

fn output_dir(args: &RunArgs, config: &ExperimentConfig, kind: Kind, digest: &str) -> PathBuf {
    if let Some(out) = &args.out {
        return out.clone();
    }
    if let Some(out) = &config.output {
        return out.clone();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("dhl-out"));
    root.join(format!("{}-{digest}", kind.name()))
}

/// Removes artifacts listed by a previous manifest in `dir`.
fn clear_previous(dir: &Path) -> std::io::Result<()> {
    if let Ok(old) = read_manifest(dir) {
        for a in old.artifacts {
            let path = dir.join(&a.path);
            if path.is_file() {
                fs::remove_file(path)?;
            }
        }
    }
    Ok(())
}

fn run_experiment(kind: Kind, args: &RunArgs) -> Result<u8, String> {
    let config = load_config(args)?;
    config.validate_for(kind).map_err(|e| format!("config: {e}"))?;
    let mut config = config;
    config.kind = Some(kind);
    let digest = config.digest();
    let dir = output_dir(args, &config, kind, &digest);
    let threads = args.threads.or(config.threads);
    if threads == Some(0) {
        return Err("--threads must be at least 1".into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| format!("thread pool: {e}"))?;
    let outcome = pool.install(|| experiments::execute(kind, &config, &digest))?;

    let io = |e: std::io::Error| format!("{}: {e}", dir.display());
    fs::create_dir_all(&dir).map_err(io)?;
    clear_previous(&dir).map_err(io)?;
    for (rel, bytes) in outcome.binaries.iter().chain(&outcome.tables) {
        write_atomic(&dir.join(rel), bytes).map_err(io)?;
    }
    write_atomic(&dir.join(RESULTS), &long_csv(&outcome.reports).map_err(io)?).map_err(io)?;
    let mut stored = config.clone();
    stored.output = None;
    stored.threads = None;
    write_atomic(&dir.join(CONFIG_COPY), stored.to_toml().as_bytes()).map_err(io)?;
    plots::emit_plots(&dir).map_err(io)?;

    let failed = !outcome.failures.is_empty();
    let manifest = Manifest {
        tool: "dhl".into(),
        versions: Versions::current(),
        experiment: kind.name().into(),
        config_digest: digest,
        seeds: config.seeds.clone(),
        jobs: outcome.jobs,
        status: if failed { "partial".into() } else { "ok".into() },
        failures: outcome.failures,
        artifacts: scan_artifacts(&dir, &config.seeds).map_err(io)?,
    };
    write_manifest(&dir, &manifest).map_err(io)?;
    for f in &manifest.failures {
        eprintln!("job failed: {}: {}", f.job, f.error);
    }
    println!("{}", dir.display());
    Ok(if failed { EXIT_PARTIAL } else { EXIT_OK })
}

fn run_plots(args: &RunArgs) -> Result<u8, String> {
    let dir = match (&args.out, &args.config) {
        (Some(out), _) => out.clone(),
        (None, Some(_)) => {
            let config = load_config(args)?;
            let kind = config.kind.ok_or("plots needs --out or a config with `kind` set")?;
            let digest = config.digest();
            output_dir(args, &config, kind, &digest)
        }
        (None, None) => return Err("plots needs --out <dir>".into()),
    };
    let io = |e: std::io::Error| format!("{}: {e}", dir.display());
    let written = plots::emit_plots(&dir).map_err(io)?;
    if !written.is_empty() {
        if let Ok(mut manifest) = read_manifest(&dir) {
            manifest.artifacts = scan_artifacts(&dir, &manifest.seeds).map_err(io)?;
            write_manifest(&dir, &manifest).map_err(io)?;
        }
    }
    for w in &written {
        println!("{}", dir.join(w).display());
    }
    Ok(EXIT_OK)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> u8 {
    let (kind, args) = cli.command.parts();
    let result = match kind {
        Some(kind) => run_experiment(kind, args),
        None => run_plots(args),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_CONFIG
    })
}
