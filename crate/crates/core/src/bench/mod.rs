//! Benchmark harness: runs pipeline variants under a configuration, analyzes
//! their traces and reports latency, breakdowns and speedups.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::clock::Clock;
use crate::device::BackendRegistry;
use crate::graph::Stop;
use crate::hash::fnv1a64;
use crate::pipeline::{roles, Pipeline, PipelineConfig, PipelineError, PipelineVariant, SinkRecord, SourceConfig};
use crate::tracer::{export, overhead_probe, reconstruct_chains, Chain, LatencyBreakdown, SegmentStats, TraceDump, TraceError, Tracer};

pub use config::{
    BenchConfig, CameraSection, ResizeSection, RunSection, SourceSection, StopRule, TracingSection, DEFAULT_MESSAGES,
    DEFAULT_WARMUP_FRAMES,
};
pub use report::{
    compare, compare_pair, format_comparison, format_report, speedup, BenchmarkReport, Comparison, ComparisonTable,
    ReportMetadata, SegmentDelta, VariantDelta, VariantReport, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl BenchError {
    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> BenchError {
        BenchError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Everything one variant run produced, before aggregation.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub report: VariantReport,
    /// Complete chains after the warm-up prefix, in start order.
    pub chains: Vec<Chain>,
    /// Sink arrivals after the warm-up prefix, in sequence order.
    pub records: Vec<SinkRecord>,
    /// The first round's trace, when tracing was enabled.
    pub dump: Option<TraceDump>,
}

/// Pipeline settings shared by every variant of `cfg`.
pub fn pipeline_config(cfg: &BenchConfig, variant: PipelineVariant) -> PipelineConfig {
    PipelineConfig {
        backend: cfg.run.backend.clone(),
        zero_copy: cfg.run.zero_copy,
        queue_depth: cfg.run.queue_depth,
        ..PipelineConfig::new(variant, cfg.source_config(), cfg.resize_params(), cfg.cost_model.clone())
    }
}

fn stop_for(rule: StopRule) -> Stop {
    match rule {
        StopRule::Messages(n) => Stop::Messages {
            node: roles::SINK,
            count: n,
        },
        StopRule::DurationS(d) => Stop::Duration(Duration::from_secs_f64(d)),
    }
}

/// One pipeline run of one variant.
struct Round {
    /// Complete chains after the warm-up prefix.
    chains: Vec<Chain>,
    incomplete: usize,
    /// Sink arrivals after the warm-up prefix.
    records: Vec<SinkRecord>,
    /// Hashes of every received image, warm-up included, in sequence order.
    hashes: Vec<u64>,
    transfers: u64,
    dump: Option<TraceDump>,
}

fn run_round(cfg: &BenchConfig, variant: PipelineVariant, backends: &BackendRegistry) -> Result<Round, BenchError> {
    let tracer = Tracer::new(Clock::new(cfg.run.mode));
    let pipeline = Pipeline::new(&pipeline_config(cfg, variant), tracer.clone(), backends)?;
    let tracing = cfg.tracing.enabled;
    if tracing {
        tracer.start(cfg.trace_config())?;
    }
    let outcome = pipeline.run(stop_for(cfg.stop_rule()?));
    let dump = if tracing { Some(tracer.stop()?) } else { None };
    outcome?;

    let warmup = cfg.run.warmup_frames;
    let mut records = pipeline.sink().records();
    records.sort_by_key(|r| r.seq);
    let hashes = records.iter().map(|r| r.hash).collect();
    let records = records.into_iter().skip(warmup).collect();
    let (chains, incomplete) = match &dump {
        Some(dump) => {
            let mut set = reconstruct_chains(dump, pipeline.graph().spec());
            set.chains.sort_by_key(|c| (c.start_ts, c.seq));
            (set.chains.into_iter().skip(warmup).collect(), set.incomplete)
        }
        None => (Vec::new(), 0),
    };
    Ok(Round {
        chains,
        incomplete,
        records,
        hashes,
        transfers: pipeline.transfers().values().sum(),
        dump,
    })
}

/// Pools the rounds of one variant into a single report.
fn summarize(cfg: &BenchConfig, variant: PipelineVariant, rounds: Vec<Round>) -> Result<VariantRun, BenchError> {
    let warmup = cfg.run.warmup_frames;
    let tracing = cfg.tracing.enabled;
    let mut chains = Vec::new();
    let mut records = Vec::new();
    let mut digest = Vec::new();
    let (mut incomplete, mut transfers, mut received) = (0, 0, 0);
    let mut dump = None;
    for r in rounds {
        chains.extend(r.chains);
        records.extend(r.records);
        for h in &r.hashes {
            digest.extend_from_slice(&h.to_le_bytes());
        }
        received += r.hashes.len();
        incomplete += r.incomplete;
        transfers += r.transfers;
        dump = dump.or(r.dump);
    }

    let breakdown = if tracing {
        if chains.is_empty() {
            return Err(TraceError::NoCompleteChains { incomplete }.into());
        }
        Some(LatencyBreakdown::from_chains(&chains, incomplete))
    } else {
        None
    };
    let end_to_end = match &breakdown {
        Some(bd) => bd.end_to_end.clone(),
        None => {
            if records.is_empty() {
                return Err(BenchError::Runtime(format!(
                    "{variant}: no frames reached the sink after the {warmup}-frame warm-up"
                )));
            }
            let lat: Vec<u64> = records.iter().map(SinkRecord::latency_ns).collect();
            SegmentStats::from_samples(&lat)
        }
    };

    let report = VariantReport {
        variant,
        mode: cfg.run.mode,
        frames: end_to_end.count,
        warmup_frames: warmup,
        end_to_end,
        messaging_fraction: breakdown.as_ref().map(|b| b.messaging_fraction),
        compute_fraction: breakdown.as_ref().map(|b| b.compute_fraction),
        breakdown,
        transfers_per_frame: if received == 0 {
            0.0
        } else {
            transfers as f64 / received as f64
        },
        output_digest: format!("{:016x}", fnv1a64(&digest)),
        trace_file: None,
    };
    Ok(VariantRun {
        report,
        chains,
        records,
        dump,
    })
}

/// Builds, runs and analyzes one variant, repeated `cfg.run.rounds` times.
pub fn run_variant(
    cfg: &BenchConfig,
    variant: PipelineVariant,
    backends: &BackendRegistry,
) -> Result<VariantRun, BenchError> {
    cfg.validate()?;
    let rounds = (0..cfg.run.rounds)
        .map(|_| run_round(cfg, variant, backends))
        .collect::<Result<_, _>>()?;
    summarize(cfg, variant, rounds)
}

/// Runs every configured variant, exports traces and writes the report when
/// output paths are set.
pub fn run(cfg: &BenchConfig) -> Result<BenchmarkReport, BenchError> {
    run_with(cfg, &BackendRegistry::builtin())
}

/// Like [`run`] with a custom backend registry. With several rounds the
/// variants take turns, each round starting one variant later, so slow
/// drifts of the host affect every variant alike.
pub fn run_with(cfg: &BenchConfig, backends: &BackendRegistry) -> Result<BenchmarkReport, BenchError> {
    run_detailed(cfg, backends).map(|(report, _)| report)
}

/// Like [`run_with`], also returning each variant's pooled chains and sink
/// records. The runs' trace dumps are dropped once exported.
pub fn run_detailed(
    cfg: &BenchConfig,
    backends: &BackendRegistry,
) -> Result<(BenchmarkReport, Vec<VariantRun>), BenchError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let format = cfg.trace_format()?;
    let order = &cfg.run.variants;
    let mut rounds: Vec<Vec<Round>> = order.iter().map(|_| Vec::new()).collect();
    for r in 0..cfg.run.rounds {
        for i in 0..order.len() {
            let at = (i + r) % order.len();
            rounds[at].push(run_round(cfg, order[at], backends)?);
        }
    }
    let mut runs = Vec::new();
    for (&variant, rounds) in order.iter().zip(rounds) {
        let mut run = summarize(cfg, variant, rounds)?;
        if let (Some(dir), Some(dump)) = (&cfg.run.trace_out, run.dump.as_mut()) {
            std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
            dump.metadata.config_hash = Some(hash.clone());
            dump.metadata.mode = Some(cfg.run.mode.to_string());
            let path = dir.join(format!("{}.{}", variant.name(), format.extension()));
            export(dump, format, &path)?;
            run.report.trace_file = Some(path);
        }
        run.dump = None;
        runs.push(run);
    }
    let report = BenchmarkReport::new(cfg, hash, runs.iter().map(|r| r.report.clone()).collect())?;
    if let Some(out) = &cfg.run.out {
        report.write(out)?;
    }
    Ok((report, runs))
}

/// Tracer cost in isolation and its effect on a full pipeline.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProbeReport {
    pub emit: crate::tracer::OverheadReport,
    /// Frames measured per tracing state.
    pub frames: usize,
    /// CPU-baseline mean sink latency with tracing on.
    pub traced_mean_ns: f64,
    /// The same with tracing off.
    pub untraced_mean_ns: f64,
    pub delta_ns: f64,
}

pub const PROBE_EMITS: usize = 1_000_000;
pub const PROBE_FRAMES: u64 = 2000;
const PROBE_ROUNDS: u64 = 20;

/// The pipeline half of the probe: a small CPU-baseline frame with no
/// modeled costs, so the measured latency is the runtime's own work and the
/// tracer's share of it is visible.
pub fn probe_config() -> BenchConfig {
    let mut cfg = BenchConfig::from_toml_str(
        r#"
        [source]
        width = 80
        height = 60
        rate_hz = 200.0
        [camera]
        fx = 62.5
        fy = 62.5
        cx = 39.5
        cy = 29.5
        [resize]
        out_width = 40
        out_height = 30
        [cost_model]
        preset = "zero"
        [run]
        variants = ["cpu"]
        mode = "real"
        "#,
    )
    .expect("probe config is valid");
    cfg.camera.k1 = SourceConfig::default().camera.k1;
    cfg.camera.k2 = SourceConfig::default().camera.k2;
    cfg
}

/// Measures emit cost, then runs the probe pipeline with tracing on and off
/// in alternating rounds until each state has `frames` measured frames.
/// Both latencies come from sink timestamps, so the two states are measured
/// the same way.
pub fn probe_overhead(emits: usize, frames: u64) -> Result<ProbeReport, BenchError> {
    let emit = overhead_probe(emits);
    let rounds = PROBE_ROUNDS.min(frames.max(1));
    let per_round = frames.div_ceil(rounds);
    let mut cfg = probe_config();
    cfg.set_messages(per_round + cfg.run.warmup_frames as u64);
    let mut latencies: [Vec<u64>; 2] = Default::default();
    for r in 0..rounds {
        // Alternate which state goes first so neither always follows the other.
        let order = if r % 2 == 0 { [true, false] } else { [false, true] };
        for tracing in order {
            cfg.tracing.enabled = tracing;
            let run = run_variant(&cfg, PipelineVariant::CpuBaseline, &BackendRegistry::builtin())?;
            latencies[tracing as usize].extend(run.records.iter().map(SinkRecord::latency_ns));
        }
    }
    let mean = |v: &[u64]| SegmentStats::from_samples(v).mean_ns;
    let (traced_mean_ns, untraced_mean_ns) = (mean(&latencies[1]), mean(&latencies[0]));
    Ok(ProbeReport {
        emit,
        frames: latencies[1].len(),
        traced_mean_ns,
        untraced_mean_ns,
        delta_ns: traced_mean_ns - untraced_mean_ns,
    })
}

#[cfg(test)]
mod tests;
