//! `hexfem solve|infer|topopt|taylor-test --config run.toml`
//!
//! Exit codes: 0 success, 1 Taylor orders out of range, 2 config error,
//! 3 solver failure, 4 IO error.

mod config;
mod output;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::Command;
use output::{Bundle, Failure, RunResult};

#[derive(Parser)]
#[command(
    name = "hexfem",
    version,
    about = "Finite element solves, inversions and topology optimization on hexahedral meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Quasi-static load-stepped solve
    Solve(RunArgs),
    /// Recover a Poisson source field from sparse observations
    Infer(RunArgs),
    /// SIMP compliance minimization on a cantilever plate
    Topopt(RunArgs),
    /// Check adjoint gradients by Taylor remainder convergence
    #[command(name = "taylor-test")]
    TaylorTest(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for element loops and vector kernels
    #[arg(long, env = "HEXFEM_THREADS")]
    threads: Option<usize>,
    /// Random seed (overrides the config's seed)
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cmd: Command, args: &RunArgs) -> RunResult<()> {
    let raw = config::load(&args.config).map_err(|e| {
        if e.downcast_ref::<std::io::Error>().is_some() {
            Failure::Io(e)
        } else {
            Failure::Config(e)
        }
    })?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let cfg = raw.resolve(cmd, args.seed).map_err(Failure::Config)?;
    let threads = args.threads.or(cfg.threads);
    if threads == Some(0) {
        return Err(Failure::Config(anyhow::anyhow!(
            "thread count must be at least 1"
        )));
    }
    let out_dir = match (&args.out, cfg.output.as_ref().and_then(|o| o.dir.clone())) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => PathBuf::from("hexfem_out"),
    };
    let resolved = cfg.to_toml().map_err(Failure::Config)?;

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Failure::Config(e.into()))?
    };
    let mut bundle = Bundle::create(&out_dir)?;
    bundle.text("resolved_config.toml", &resolved)?;
    let result: RunResult<Value> = pool.install(|| match cmd {
        Command::Solve => run::solve(&cfg, &base, &mut bundle),
        Command::Infer => run::infer(&cfg, &base, &mut bundle),
        Command::Topopt => run::topopt(&cfg, &mut bundle),
        Command::Taylor => run::taylor(&cfg, &mut bundle),
    });
    let summary = result.as_ref().cloned().unwrap_or(Value::Null);
    let failure = result.err();
    println!("outputs in {}", bundle.root().display());
    bundle.finish(
        cmd.name(),
        &resolved,
        cfg.seed.unwrap(),
        pool.current_num_threads(),
        &summary,
        failure.as_ref(),
    )?;
    failure.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match &cli.command {
        Sub::Solve(a) => (Command::Solve, a),
        Sub::Infer(a) => (Command::Infer, a),
        Sub::Topopt(a) => (Command::Topopt, a),
        Sub::TaylorTest(a) => (Command::Taylor, a),
    };
    match execute(cmd, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hexfem {}: {}", cmd.name(), f.message());
            ExitCode::from(f.code())
        }
    }
}
