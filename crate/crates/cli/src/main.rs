use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcmcml::experiments::config::ExperimentConfig;
use mcmcml::experiments::coverage::{run_coverage, write_coverage, write_json};
use mcmcml::experiments::diagnose::{run_diagnose, write_diagnostics};
use mcmcml::experiments::fit::fit_dataset;
use mcmcml::experiments::simulate::simulate_dataset;
use mcmcml::seeds::derive_seed;
use mcmcml::Dataset;

/// Monte Carlo maximum likelihood for the autologistic model.
#[derive(Parser)]
#[command(name = "mcmcml", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from the configured model and write `dataset.csv`.
    Simulate(Common),
    /// Fit a dataset and print the estimate report.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; overrides `data` in the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run a replication study of interval coverage.
    Coverage(Common),
    /// Exact kernel, covariance-decay and normalizer checks.
    Diagnose(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

struct Context {
    cfg: ExperimentConfig,
    seed: u64,
    out: Option<PathBuf>,
    workers: usize,
}

impl Common {
    fn load(&self) -> mcmcml::Result<Context> {
        let cfg = ExperimentConfig::load(&self.config)?;
        let out = self.out.clone().or_else(|| cfg.out.as_ref().map(|p| cfg.resolve(p)));
        Ok(Context {
            seed: self.seed.unwrap_or(cfg.seed),
            out,
            workers: self.workers,
            cfg,
        })
    }
}

impl Context {
    fn out_dir(&self) -> &Path {
        self.out.as_deref().unwrap_or(Path::new("."))
    }
}

const OK: u8 = 0;
const FAILURE: u8 = 1;
const FLAGGED: u8 = 2;

fn simulate(ctx: Context) -> mcmcml::Result<u8> {
    let data = simulate_dataset(&ctx.cfg, ctx.cfg.n, derive_seed(ctx.seed, 0))?;
    let dir = ctx.out_dir();
    std::fs::create_dir_all(dir)?;
    let path = dir.join("dataset.csv");
    data.write_csv(std::fs::File::create(&path)?)?;
    eprintln!("wrote {} rows to {}", data.n(), path.display());
    Ok(OK)
}

fn fit(ctx: Context, data: Option<PathBuf>) -> mcmcml::Result<u8> {
    let path = match (data, &ctx.cfg.data) {
        (Some(p), _) => p,
        (None, Some(p)) => ctx.cfg.resolve(p),
        (None, None) => {
            return Err(mcmcml::Error::Config("no dataset: pass --data or set `data`".into()));
        }
    };
    let dataset = Dataset::read_csv_path(&path)?;
    let outcome = fit_dataset(&ctx.cfg, &dataset, ctx.seed, derive_seed(ctx.seed, 1))?;
    let report = &outcome.report;
    let json = serde_json::to_string_pretty(report)?;
    println!("{json}");
    if let Some(dir) = &ctx.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), report)?;
    }
    Ok(match &report.diagnostic {
        Some(msg) => {
            eprintln!("flagged: {msg}");
            FLAGGED
        }
        None => OK,
    })
}

fn coverage(ctx: Context) -> mcmcml::Result<u8> {
    if ctx.cfg.replications < 50 {
        eprintln!("warning: {} replications is too few for stable coverage estimates", ctx.cfg.replications);
    }
    let outcome = run_coverage(&ctx.cfg, ctx.seed, ctx.workers)?;
    write_coverage(&outcome, &ctx.cfg.theta0()?, ctx.cfg.level, ctx.out_dir())?;
    let s = &outcome.summary;
    eprintln!("{} of {} replications succeeded", s.succeeded, s.replications);
    for (j, name) in s.param_names.iter().enumerate() {
        eprintln!(
            "{name}: coverage {:.3}, without W {:.3}",
            s.coverage[j], s.coverage_without_w[j]
        );
    }
    Ok(OK)
}

fn diagnose(ctx: Context) -> mcmcml::Result<u8> {
    let outcome = run_diagnose(&ctx.cfg, ctx.seed)?;
    write_diagnostics(&outcome, ctx.out_dir())?;
    let s = &outcome.summary;
    for notice in &s.notices {
        eprintln!("notice: {notice}");
    }
    if let Some(k) = &s.kernel {
        eprintln!(
            "kernel: rho {:.6}, stationary {}, reversible {}",
            k.rho, k.stationary, k.reversible
        );
    }
    if let Some(l) = &s.lemma {
        eprintln!("lemma bound: {} cases, {} failures", l.cases, l.failures);
    }
    Ok(if s.passed { OK } else { FLAGGED })
}

fn run(cli: Cli) -> mcmcml::Result<u8> {
    match cli.command {
        Command::Simulate(c) => simulate(c.load()?),
        Command::Fit { common, data } => fit(common.load()?, data),
        Command::Coverage(c) => coverage(c.load()?),
        Command::Diagnose(c) => diagnose(c.load()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { FAILURE } else { OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(FAILURE)
        }
    }
}
