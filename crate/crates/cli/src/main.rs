use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aisdsr::config::{ScenarioConfig, Variant};
use aisdsr::sweep::{run_sweep, DetailRow, SweepResult, SweepSpec};
use aisdsr::trace::{Channel, Tracer};
use aisdsr::world::{RunError, World};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aisdsr", version, about = "MANET black-hole simulator with DSR and route vetting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario.
    Run(RunArgs),
    /// Sweep pause times across variants and seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Output directory; the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated trace channels: events, packets, defense, mobility.
    #[arg(long, value_delimiter = ',')]
    trace: Vec<Channel>,
    /// Also write the full data ledger as ledger.jsonl.
    #[arg(long)]
    ledger: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pause_times: Option<Vec<f64>>,
    /// Seeds per point, counted up from the scenario seed.
    #[arg(long)]
    seeds: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    fn run(e: impl Into<anyhow::Error>) -> Self {
        Failure::Run(e.into())
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    ScenarioConfig::load(path).map_err(|e| Failure::Config(e.into()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Run)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load(&args.scenario)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if (!args.trace.is_empty() || args.ledger) && args.out.is_none() {
        return Err(Failure::Config(anyhow!("--trace and --ledger need --out")));
    }
    let mut tracer = Tracer::disabled();
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::Run)?;
        for c in &args.trace {
            let path = dir.join(format!("{}.jsonl", c.label()));
            let f = File::create(&path)
                .with_context(|| format!("creating {}", path.display()))
                .map_err(Failure::Run)?;
            tracer = tracer.with(*c, Box::new(BufWriter::new(f)));
        }
    }

    let world = World::new(&cfg, tracer).map_err(|e| Failure::Config(e.into()))?;
    let out = world.run().map_err(|e| match e {
        RunError::Config(c) => Failure::Config(c.into()),
        other => Failure::run(other),
    })?;

    let text = out.report_text();
    match &args.out {
        None => print!("{text}"),
        Some(dir) => {
            write(dir, "report.txt", &text)?;
            let single = SweepResult {
                rows: vec![DetailRow {
                    variant: cfg.variant,
                    pause_time: cfg.mobility.pause_time,
                    seed: cfg.seed,
                    report: Some(out.report.clone()),
                    error: None,
                }],
            };
            write(dir, "detail.csv", &single.detail_csv())?;
            if args.ledger {
                let path = dir.join("ledger.jsonl");
                let f = File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))
                    .map_err(Failure::Run)?;
                out.ledger.write_jsonl(BufWriter::new(f)).map_err(Failure::run)?;
            }
            eprintln!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let cfg = load(&args.scenario)?;
    let mut spec = SweepSpec::from_config(&cfg);
    if let Some(p) = args.pause_times {
        spec.pause_times = p;
    }
    if let Some(n) = args.seeds {
        spec.seeds = (0..u64::from(n)).map(|i| cfg.seed + i).collect();
    }
    if let Some(v) = args.variants {
        spec.variants = v;
    }
    let result = run_sweep(&cfg, &spec).map_err(|e| Failure::Config(e.into()))?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(Failure::Run)?;
    write(&args.out, "detail.csv", &result.detail_csv())?;
    let summary = result.summary_csv();
    write(&args.out, "summary.csv", &summary)?;
    print!("{summary}");
    if result.any_failed() {
        let n = result.rows.iter().filter(|r| r.error.is_some()).count();
        return Err(Failure::Run(anyhow!("{n} run(s) failed; see the error column of detail.csv")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("run failed: {e:#}");
            ExitCode::from(1)
        }
    }
}
