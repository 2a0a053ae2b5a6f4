//! `bench`: runs pipeline variants, compares reports and probes tracer cost.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowbench::bench::{
    compare, compare_pair, format_comparison, format_report, probe_overhead, BenchConfig, BenchError, BenchmarkReport,
    PROBE_EMITS, PROBE_FRAMES,
};
use flowbench::pipeline::PipelineVariant;

#[derive(Parser)]
#[command(name = "bench", version, about = "Latency benchmarks for the flowbench pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run pipeline variants and report latency, breakdowns and speedups.
    Run(RunArgs),
    /// Per-variant and per-segment deltas of report B against report A.
    Compare(CompareArgs),
    /// Measure tracer emit cost and its effect on end-to-end latency.
    ProbeOverhead(ProbeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Variant to run (cpu, accel, fused, streaming); repeatable.
    #[arg(long = "variant")]
    variants: Vec<String>,
    /// Clock mode: real or model.
    #[arg(long)]
    mode: Option<String>,
    /// Stop publishing after this many seconds.
    #[arg(long, conflicts_with = "messages")]
    duration_s: Option<f64>,
    /// Stop after this many frames reach the sink.
    #[arg(long)]
    messages: Option<u64>,
    /// Interleaved repetitions per variant, pooled into one report.
    #[arg(long)]
    rounds: Option<usize>,
    /// Disable tracing; only sink latency is reported.
    #[arg(long)]
    no_trace: bool,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export one trace file per variant into this directory.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Trace export format: chrome or csv.
    #[arg(long)]
    trace_format: Option<String>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Compare variant X of A with variant Y of B, written X:Y.
    #[arg(long)]
    pair: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ProbeArgs {
    /// Emit calls timed per tracing state.
    #[arg(long, default_value_t = PROBE_EMITS)]
    emits: usize,
    /// Pipeline frames measured per tracing state.
    #[arg(long, default_value_t = PROBE_FRAMES)]
    frames: u64,
    #[arg(long)]
    json: bool,
}

fn config_err(e: impl std::fmt::Display) -> BenchError {
    BenchError::Config(e.to_string())
}

fn build_config(args: &RunArgs) -> Result<BenchConfig, BenchError> {
    let mut cfg = match &args.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    if !args.variants.is_empty() {
        cfg.run.variants = args
            .variants
            .iter()
            .map(|v| v.parse::<PipelineVariant>().map_err(config_err))
            .collect::<Result<_, _>>()?;
    }
    if let Some(mode) = &args.mode {
        cfg.run.mode = mode.parse().map_err(config_err)?;
    }
    if let Some(n) = args.messages {
        cfg.set_messages(n);
    }
    if let Some(d) = args.duration_s {
        cfg.set_duration_s(d);
    }
    if let Some(r) = args.rounds {
        cfg.run.rounds = r;
    }
    if args.no_trace {
        cfg.tracing.enabled = false;
    }
    if args.out.is_some() {
        cfg.run.out.clone_from(&args.out);
    }
    if args.trace_out.is_some() {
        cfg.run.trace_out.clone_from(&args.trace_out);
    }
    if let Some(f) = &args.trace_format {
        cfg.run.trace_format.clone_from(f);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), BenchError> {
    let cfg = build_config(&args)?;
    let report = flowbench::bench::run(&cfg)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", format_report(&report));
    }
    Ok(())
}

fn parse_pair(s: &str) -> Result<(PipelineVariant, PipelineVariant), BenchError> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| config_err(format!("--pair expects X:Y, got '{s}'")))?;
    Ok((a.parse().map_err(config_err)?, b.parse().map_err(config_err)?))
}

fn compare_cmd(args: CompareArgs) -> Result<(), BenchError> {
    let pair = args.pair.as_deref().map(parse_pair).transpose()?;
    let a = BenchmarkReport::load(&args.a)?;
    let b = BenchmarkReport::load(&args.b)?;
    let table = match pair {
        Some((va, vb)) => compare_pair(&a, va, &b, vb)?,
        None => compare(&a, &b)?,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&table).expect("table serializes"));
    } else {
        print!("{}", format_comparison(&table));
    }
    Ok(())
}

fn probe(args: ProbeArgs) -> Result<(), BenchError> {
    let r = probe_overhead(args.emits, args.frames)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r).expect("probe serializes"));
    } else {
        println!("emit enabled   median {:.1} ns  p99 {:.1} ns", r.emit.enabled.median_ns, r.emit.enabled.p99_ns);
        println!("emit disabled  median {:.1} ns  p99 {:.1} ns", r.emit.disabled.median_ns, r.emit.disabled.p99_ns);
        println!("pipeline traced    mean {:.1} us over {} frames", r.traced_mean_ns / 1e3, r.frames);
        println!("pipeline untraced  mean {:.1} us", r.untraced_mean_ns / 1e3);
        println!("tracing delta      {:.1} us", r.delta_ns / 1e3);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare_cmd(a),
        Command::ProbeOverhead(a) => probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
