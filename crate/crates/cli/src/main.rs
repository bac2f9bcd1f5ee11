//! `ditasep` command-line harness.
//!
//! Exit status: 0 when every assertion of the run passed, 1 when an
//! assertion failed, 2 on invalid input or a runtime error. Inputs are
//! validated before anything is written.

mod args;
mod commands;
mod config;
mod init;
mod output;
mod speed;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::Parser;

use args::{Cli, Cmd, DEFAULT_MEM_CAP_MB, DEFAULT_SEED};
use commands::Ctx;
use output::ConfigEcho;

struct Resolved {
    cmd: Cmd,
    seed: u64,
    threads: Option<usize>,
    out_dir: PathBuf,
    mem_cap_mb: u64,
}

fn resolve(cli: Cli) -> Result<Resolved> {
    let Cmd::Run(r) = &cli.cmd else {
        return Ok(Resolved {
            seed: cli.seed.unwrap_or(DEFAULT_SEED),
            threads: cli.threads,
            out_dir: cli.out_dir.unwrap_or_else(|| PathBuf::from(".")),
            mem_cap_mb: cli.mem_cap_mb.unwrap_or(DEFAULT_MEM_CAP_MB),
            cmd: cli.cmd,
        });
    };
    let mut cfg = config::load(&r.config)?;
    cfg.set(&r.set)?;
    let argv = cfg.argv()?;
    let inner = Cli::try_parse_from(std::iter::once("ditasep".to_string()).chain(argv))
        .map_err(|e| anyhow!("{}", e.render()))
        .with_context(|| format!("parameters of {}", r.config.display()))?;
    if matches!(inner.cmd, Cmd::Run(_)) {
        bail!("a config cannot run another config");
    }
    Ok(Resolved {
        seed: cli.seed.or(inner.seed).or(cfg.seed).unwrap_or(DEFAULT_SEED),
        threads: cli.threads.or(inner.threads).or(cfg.threads),
        out_dir: cli.out_dir.or(inner.out_dir).or(cfg.out_dir.map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(".")),
        mem_cap_mb: cli.mem_cap_mb.or(inner.mem_cap_mb).or(cfg.mem_cap_mb).unwrap_or(DEFAULT_MEM_CAP_MB),
        cmd: inner.cmd,
    })
}

fn execute(cli: Cli) -> Result<bool> {
    let r = resolve(cli)?;
    if let Some(n) = r.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting the thread pool")?;
    }
    let ctx = Ctx { seed: r.seed, mem_cap_mb: r.mem_cap_mb, out_dir: r.out_dir };
    let echo = ConfigEcho {
        experiment: config::experiment_name(r.cmd.name()).to_string(),
        seed: r.seed,
        mem_cap_mb: r.mem_cap_mb,
        params: r.cmd.params(),
    };
    let (run, passed) = commands::dispatch(&r.cmd, &ctx)?;
    let dir = run.dir().to_path_buf();
    run.finish(&echo, passed)?;
    eprintln!("{}: {} (outputs in {})", r.cmd.name(), if passed { "PASS" } else { "FAIL" }, dir.display());
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
