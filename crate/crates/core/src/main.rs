use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sburgers::experiments::{with_threads, StudyConfig};
use sburgers::io::{self, Command, Format, ResultBundle};

#[derive(Parser)]
#[command(name = "sburgers", version, about = "Spectral Galerkin studies of the stochastic Burgers equation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML configuration, or `default` for the built-in study.
    #[arg(long, default_value = "default")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = io::OUT_DIR_ENV, default_value = "results")]
    out: PathBuf,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one trajectory and dump its record.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Sample path index.
        #[arg(long, default_value_t = 0)]
        sample: u64,
        /// Galerkin dimension (largest grid dimension by default).
        #[arg(long = "dim")]
        m: Option<usize>,
    },
    /// Strong error against the reference dimension, with moment statistics.
    StrongRate {
        #[command(flatten)]
        common: Common,
    },
    /// Weak error of the test functional against the reference dimension.
    WeakRate {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference checks of the variation processes and the
    /// derivative-bound scan.
    DerivativeCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Property battery; exits nonzero if any check fails.
    Invariants {
        #[command(flatten)]
        common: Common,
        /// Random fields per algebraic check.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Rerun the command recorded in a results.json or manifest.json.
    Reproduce {
        manifest: PathBuf,
        #[arg(long, env = io::OUT_DIR_ENV, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value = "both")]
        format: Format,
    },
    /// Print a configuration file with every key set to its default.
    ExampleConfig,
}

fn load(common: &Common) -> sburgers::Result<StudyConfig> {
    let mut cfg = io::parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run_with(threads: Option<usize>, f: impl FnOnce() -> sburgers::Result<ResultBundle> + Send) -> sburgers::Result<ResultBundle> {
    match threads {
        Some(n) => with_threads(n, f)?,
        None => f(),
    }
}

fn read_manifest(path: &PathBuf) -> sburgers::Result<io::RunManifest> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let manifest = value.get("manifest").cloned().unwrap_or(value);
    Ok(serde_json::from_value(manifest)?)
}

fn run(cli: Cli) -> sburgers::Result<bool> {
    let (bundle, out, format) = match cli.command {
        Cmd::ExampleConfig => {
            print!("{}", io::example_config());
            return Ok(true);
        }
        Cmd::Reproduce { manifest, out, threads, format } => {
            let m = read_manifest(&manifest)?;
            (run_with(threads, || io::reproduce(&m))?, out, format)
        }
        Cmd::Simulate { common, sample, m } => {
            let cfg = load(&common)?;
            let b = run_with(common.threads, || io::execute(Command::Simulate { sample, m }, &cfg))?;
            (b, common.out, common.format)
        }
        Cmd::StrongRate { common } => {
            let cfg = load(&common)?;
            (run_with(common.threads, || io::execute(Command::StrongRate, &cfg))?, common.out, common.format)
        }
        Cmd::WeakRate { common } => {
            let cfg = load(&common)?;
            (run_with(common.threads, || io::execute(Command::WeakRate, &cfg))?, common.out, common.format)
        }
        Cmd::DerivativeCheck { common } => {
            let cfg = load(&common)?;
            (run_with(common.threads, || io::execute(Command::DerivativeCheck, &cfg))?, common.out, common.format)
        }
        Cmd::Invariants { common, trials } => {
            let cfg = load(&common)?;
            let b = run_with(common.threads, || io::execute(Command::Invariants { trials }, &cfg))?;
            (b, common.out, common.format)
        }
    };
    let written = io::emit(&bundle, &out, format)?;
    let r = &bundle.results;
    for est in [&r.strong, &r.weak].into_iter().flatten() {
        match est.slope {
            Some(s) => println!("slope {s:.4} over {} points", est.points.iter().filter(|p| p.resolved).count()),
            None => println!("slope not fitted: {:?}", est.status),
        }
    }
    let mut ok = true;
    if let Some(inv) = &r.invariants {
        for c in &inv.checks {
            println!("{} {} worst={:e} tol={:e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.worst, c.tolerance);
        }
        ok = inv.all_passed();
    }
    for p in &written {
        eprintln!("wrote {}", p.display());
    }
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
