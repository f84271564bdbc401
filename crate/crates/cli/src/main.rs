use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use risd2d::harness::{
    emit, load_records, parse_methods, run_experiment, summarize, write_summary_csv, Experiment, Format, Sweep,
    SweepKind, Tolerances,
};
use risd2d::SystemConfig;

#[derive(Parser)]
#[command(name = "risd2d", version, about = "Monte-Carlo RIS phase-shift experiments for joint D2D and cellular uplinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Power,
    Elements,
    Iters,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write one record per (sweep value, trial, method).
    ///
    /// Tolerances can be overridden through RISD2D_SDP_TOL_FEAS,
    /// RISD2D_SDP_TOL_GAP, RISD2D_SDP_MAX_ITERS, RISD2D_AO_MAX_OUTER_ITERS,
    /// RISD2D_AO_OUTER_TOL, RISD2D_DINKELBACH_TOL,
    /// RISD2D_DINKELBACH_MAX_ITERS and RISD2D_RANDOMIZATIONS.
    Run {
        /// System configuration (TOML). Defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "power")]
        sweep: SweepArg,
        /// Comma-separated sweep values; the built-in grid when omitted.
        #[arg(long)]
        values: Option<String>,
        #[arg(long, default_value = "AO,IC,ICAO")]
        methods: String,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Master seed; overrides the one in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Print per-method, per-sweep-value statistics of a record file.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn writer(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            sweep,
            values,
            methods,
            trials,
            seed,
            out,
            format,
        } => {
            let mut base = match &config {
                Some(p) => SystemConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => SystemConfig::default(),
            };
            if let Some(s) = seed {
                base.seed = s;
            }
            let kind = match sweep {
                SweepArg::Power => SweepKind::Power,
                SweepArg::Elements => SweepKind::Elements,
                SweepArg::Iters => SweepKind::Iters,
            };
            let sweep = match values {
                Some(v) => Sweep::parse(kind, &v)?,
                None => Sweep::default_for(kind),
            };
            let experiment = Experiment {
                base,
                sweep,
                methods: parse_methods(&methods)?,
                trials,
                tolerances: Tolerances::from_env()?,
            };
            let records = run_experiment(&experiment)?;
            let format = match format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            };
            let mut w = writer(&out)?;
            emit(&records, format, &mut w)?;
            w.flush()?;
            let failed = records.iter().filter(|r| !r.is_ok()).count();
            if failed > 0 {
                eprintln!("{failed} of {} records did not complete", records.len());
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize { input } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let records = load_records(file).with_context(|| format!("reading {}", input.display()))?;
            let mut w = writer(&None)?;
            write_summary_csv(&summarize(&records), &mut w)?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
