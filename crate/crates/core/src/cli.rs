//! Command-line front end.
//!
//! ```text
//! tracesim --config FILE --warmup N --simulate M [--json FILE] [--seed S] TRACE...
//! tracesim tracegen --pattern P --length N --seed S --out FILE [options]
//! ```
//!
//! Exit status is 0 on success, 1 for trace and run-time failures and 2 for
//! usage and configuration errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::parse_config;
use crate::metrics::SimReport;
use crate::modules::ModuleRegistry;
use crate::sim::{SimError, Simulation};
use crate::trace::synthetic::{Pattern, SyntheticSpec, SyntheticTrace};
use crate::trace::{InstructionSource, ReplayingTrace, TraceError, TraceWriter};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "tracesim",
    version,
    about = "Trace-driven cycle-level multicore simulator",
    args_conflicts_with_subcommands = true,
    subcommand_negates_reqs = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic trace file.
    Tracegen(TracegenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Machine description (JSON).
    #[arg(long, required = true)]
    pub config: Option<PathBuf>,
    /// Instructions per core before counters are reset.
    #[arg(long, required = true)]
    pub warmup: Option<u64>,
    /// Measured instructions per core.
    #[arg(long, required = true)]
    pub simulate: Option<u64>,
    /// Also write the report as flat JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Overrides the configuration's vm_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// One trace per core, in core order.
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TracegenArgs {
    #[arg(long)]
    pub pattern: Pattern,
    #[arg(long)]
    pub length: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; `.gz` and `.xz` extensions select compression.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stride: Option<u64>,
    #[arg(long)]
    pub start: Option<u64>,
    #[arg(long)]
    pub range: Option<u64>,
    #[arg(long)]
    pub body_len: Option<u32>,
    #[arg(long)]
    pub taken_rate: Option<f64>,
    #[arg(long)]
    pub spacing: Option<u32>,
}

impl TracegenArgs {
    pub fn spec(&self) -> SyntheticSpec {
        let mut s = SyntheticSpec::new(self.pattern, self.length, self.seed);
        if let Some(v) = self.stride {
            s.stride = v;
        }
        if let Some(v) = self.start {
            s.start = v;
        }
        if let Some(v) = self.range {
            s.range = v;
        }
        if let Some(v) = self.body_len {
            s.body_len = v;
        }
        if let Some(v) = self.taken_rate {
            s.taken_rate = v;
        }
        if let Some(v) = self.spacing {
            s.spacing = v;
        }
        s
    }
}

/// Exit status for an error.
pub fn exit_code(err: &SimError) -> i32 {
    match err {
        SimError::Config(_) | SimError::Usage(_) => EXIT_USAGE,
        SimError::Trace(TraceError::Spec(_)) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Loads the configuration and traces named in `args` and runs them to completion.
pub fn run_simulation(args: &RunArgs) -> Result<SimReport, SimError> {
    let config = args
        .config
        .as_ref()
        .ok_or_else(|| SimError::Usage("--config is required".into()))?;
    let text = std::fs::read_to_string(config)
        .map_err(|e| SimError::Usage(format!("cannot read config {}: {e}", config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.vm_seed = seed;
    }
    if args.traces.len() != cfg.num_cores {
        return Err(SimError::Usage(format!(
            "configuration has {} cores but {} traces were given",
            cfg.num_cores,
            args.traces.len()
        )));
    }
    let mut sources: Vec<Box<dyn InstructionSource>> = Vec::with_capacity(args.traces.len());
    for path in &args.traces {
        sources.push(Box::new(ReplayingTrace::open(path)?));
    }
    let registry = ModuleRegistry::with_reference_modules();
    let mut sim = Simulation::new(
        cfg,
        &registry,
        sources,
        args.warmup.unwrap_or(0),
        args.simulate.unwrap_or(0),
    )?;
    sim.run()
}

/// Writes a synthetic trace and returns the number of records.
pub fn tracegen(args: &TracegenArgs) -> Result<u64, TraceError> {
    let mut w = TraceWriter::create(&args.out)?;
    for rec in SyntheticTrace::new(args.spec())? {
        w.write(&rec)?;
    }
    w.finish()
}

/// Parses `argv`, runs the requested action and returns the exit status.
pub fn main_with_args<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match cli.command {
        Some(Command::Tracegen(args)) => match tracegen(&args) {
            Ok(n) => {
                let _ = writeln!(out, "wrote {n} records to {}", args.out.display());
                EXIT_OK
            }
            Err(e) => {
                let e = SimError::from(e);
                let _ = writeln!(err, "error: {e}");
                exit_code(&e)
            }
        },
        None => {
            let result = run_simulation(&cli.run).and_then(|report| {
                if let Some(path) = &cli.run.json {
                    std::fs::write(path, report.to_json()).map_err(|e| {
                        SimError::Usage(format!("cannot write {}: {e}", path.display()))
                    })?;
                }
                Ok(report)
            });
            match result {
                Ok(report) => {
                    let _ = write!(out, "{}", report.to_text());
                    EXIT_OK
                }
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    exit_code(&e)
                }
            }
        }
    }
}
