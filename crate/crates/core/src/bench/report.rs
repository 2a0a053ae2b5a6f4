use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{BenchConfig, BenchError};
use crate::clock::ClockMode;
use crate::pipeline::PipelineVariant;
use crate::tracer::{LatencyBreakdown, SegmentStats};

/// Bumped whenever a report field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

/// Percent by which `other` is faster than `base`; negative for slowdowns.
pub fn speedup(base_ns: f64, other_ns: f64) -> Result<f64, BenchError> {
    if !(base_ns > 0.0) {
        return Err(BenchError::Runtime(format!("speedup needs a positive baseline, got {base_ns}")));
    }
    Ok((base_ns - other_ns) / base_ns * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: PipelineVariant,
    pub mode: ClockMode,
    /// Frames in the statistics, after the warm-up prefix.
    pub frames: usize,
    pub warmup_frames: usize,
    pub end_to_end: SegmentStats,
    /// Absent when tracing was disabled.
    pub messaging_fraction: Option<f64>,
    pub compute_fraction: Option<f64>,
    pub breakdown: Option<LatencyBreakdown>,
    pub transfers_per_frame: f64,
    /// Digest of every image the sink received, in sequence order.
    pub output_digest: String,
    pub trace_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub variant: PipelineVariant,
    pub baseline: PipelineVariant,
    pub speedup_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub generated_at: u64,
    pub cost_model: String,
    pub backend: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub mode: ClockMode,
    pub variants: Vec<VariantReport>,
    /// Speedups against the CPU baseline, when it was run.
    pub comparisons: Vec<Comparison>,
    pub metadata: ReportMetadata,
}

impl BenchmarkReport {
    pub fn new(cfg: &BenchConfig, config_hash: String, variants: Vec<VariantReport>) -> Result<Self, BenchError> {
        let base = variants.iter().find(|v| v.variant == PipelineVariant::CpuBaseline);
        let comparisons = match base {
            Some(base) => variants
                .iter()
                .map(|v| {
                    Ok(Comparison {
                        variant: v.variant,
                        baseline: PipelineVariant::CpuBaseline,
                        speedup_pct: speedup(base.end_to_end.mean_ns, v.end_to_end.mean_ns)?,
                    })
                })
                .collect::<Result<_, BenchError>>()?,
            None => Vec::new(),
        };
        Ok(BenchmarkReport {
            schema_version: SCHEMA_VERSION,
            config_hash,
            mode: cfg.run.mode,
            variants,
            comparisons,
            metadata: ReportMetadata {
                generated_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                cost_model: cfg.cost_model_name.clone(),
                backend: cfg.run.backend.clone(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
            },
        })
    }

    pub fn variant(&self, v: PipelineVariant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }

    pub fn speedup_pct(&self, v: PipelineVariant) -> Option<f64> {
        self.comparisons.iter().find(|c| c.variant == v).map(|c| c.speedup_pct)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Parses a report, rejecting other schema versions.
    pub fn from_json(text: &str) -> Result<BenchmarkReport, BenchError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| BenchError::Runtime(format!("report parse: {e}")))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            other => {
                return Err(BenchError::Runtime(format!(
                    "report schema mismatch: expected version {SCHEMA_VERSION}, found {other:?}"
                )))
            }
        }
        serde_json::from_value(value).map_err(|e| BenchError::Runtime(format!("report schema mismatch: {e}")))
    }

    pub fn load(path: &Path) -> Result<BenchmarkReport, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        BenchmarkReport::from_json(&text).map_err(|e| BenchError::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), BenchError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
        }
        std::fs::write(path, self.to_json() + "\n").map_err(|e| BenchError::io(path, e))
    }
}

fn ms(ns: f64) -> String {
    format!("{:.3}", ns / 1e6)
}

fn pct(f: Option<f64>) -> String {
    f.map_or_else(|| "-".into(), |f| format!("{:.1}%", f * 100.0))
}

/// Human-readable summary of a report.
pub fn format_report(report: &BenchmarkReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "mode {}  cost model {}  config {}",
        report.mode, report.metadata.cost_model, report.config_hash
    );
    let _ = writeln!(
        s,
        "{:<10} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9}",
        "variant", "frames", "mean ms", "p50 ms", "p95 ms", "max ms", "messaging", "speedup"
    );
    for v in &report.variants {
        let e = &v.end_to_end;
        let sp = report
            .speedup_pct(v.variant)
            .map_or_else(|| "-".into(), |p| format!("{p:.2}%"));
        let _ = writeln!(
            s,
            "{:<10} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9}",
            v.variant.name(),
            v.frames,
            ms(e.mean_ns),
            ms(e.p50_ns as f64),
            ms(e.p95_ns as f64),
            ms(e.max_ns as f64),
            pct(v.messaging_fraction),
            sp
        );
    }
    for v in &report.variants {
        let Some(bd) = &v.breakdown else { continue };
        let _ = writeln!(s, "\n{} breakdown (mean per frame)", v.variant.name());
        for seg in &bd.segments {
            let share = if bd.end_to_end.mean_ns > 0.0 {
                seg.stats.mean_ns * seg.stats.count as f64 / bd.frames.max(1) as f64 / bd.end_to_end.mean_ns
            } else {
                0.0
            };
            let class = serde_json::to_value(seg.class).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let _ = writeln!(s, "  {:<52} {:<9} {:>10} ms {:>6.1}%", seg.name, class, ms(seg.stats.mean_ns), share * 100.0);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDelta {
    pub name: String,
    pub a_mean_ns: f64,
    pub b_mean_ns: f64,
    pub delta_ns: f64,
    /// None when the segment takes no time in `a`.
    pub speedup_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantDelta {
    pub a_variant: PipelineVariant,
    pub b_variant: PipelineVariant,
    pub a_mean_ns: f64,
    pub b_mean_ns: f64,
    pub delta_ns: f64,
    pub speedup_pct: f64,
    /// Segments present in both breakdowns.
    pub segments: Vec<SegmentDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<VariantDelta>,
}

fn segment_means(v: &VariantReport) -> BTreeMap<&str, f64> {
    v.breakdown
        .iter()
        .flat_map(|bd| bd.segments.iter().map(|s| (s.name.as_str(), s.stats.mean_ns)))
        .collect()
}

fn delta(a: &VariantReport, b: &VariantReport) -> Result<VariantDelta, BenchError> {
    let (sa, sb) = (segment_means(a), segment_means(b));
    let order = a.breakdown.iter().flat_map(|bd| bd.segments.iter().map(|s| s.name.as_str()));
    let segments = order
        .filter_map(|name| {
            let (x, y) = (sa[name], *sb.get(name)?);
            Some(SegmentDelta {
                name: name.to_string(),
                a_mean_ns: x,
                b_mean_ns: y,
                delta_ns: y - x,
                speedup_pct: speedup(x, y).ok(),
            })
        })
        .collect();
    let (x, y) = (a.end_to_end.mean_ns, b.end_to_end.mean_ns);
    Ok(VariantDelta {
        a_variant: a.variant,
        b_variant: b.variant,
        a_mean_ns: x,
        b_mean_ns: y,
        delta_ns: y - x,
        speedup_pct: speedup(x, y)?,
        segments,
    })
}

/// Deltas of `b` against `a` for every variant both reports contain.
pub fn compare(a: &BenchmarkReport, b: &BenchmarkReport) -> Result<ComparisonTable, BenchError> {
    let rows = a
        .variants
        .iter()
        .filter_map(|va| b.variant(va.variant).map(|vb| delta(va, vb)))
        .collect::<Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(BenchError::Runtime("reports share no variant".into()));
    }
    Ok(ComparisonTable { rows })
}

/// Deltas of variant `vb` in `b` against variant `va` in `a`.
pub fn compare_pair(
    a: &BenchmarkReport,
    va: PipelineVariant,
    b: &BenchmarkReport,
    vb: PipelineVariant,
) -> Result<ComparisonTable, BenchError> {
    let find = |r: &'_ BenchmarkReport, v: PipelineVariant, which: &str| {
        r.variant(v)
            .cloned()
            .ok_or_else(|| BenchError::Runtime(format!("report {which} has no '{v}' variant")))
    };
    Ok(ComparisonTable {
        rows: vec![delta(&find(a, va, "a")?, &find(b, vb, "b")?)?],
    })
}

pub fn format_comparison(table: &ComparisonTable) -> String {
    let mut s = String::new();
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{} -> {}: {} ms -> {} ms (delta {} ms, speedup {:.2}%)",
            r.a_variant,
            r.b_variant,
            ms(r.a_mean_ns),
            ms(r.b_mean_ns),
            ms(r.delta_ns),
            r.speedup_pct
        );
        for seg in &r.segments {
            let sp = seg.speedup_pct.map_or_else(|| "-".into(), |p| format!("{p:.2}%"));
            let _ = writeln!(
                s,
                "  {:<52} {:>10} -> {:>10} ms  {:>9}",
                seg.name,
                ms(seg.a_mean_ns),
                ms(seg.b_mean_ns),
                sp
            );
        }
    }
    s
}
