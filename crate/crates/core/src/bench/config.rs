use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::clock::ClockMode;
use crate::device::CostModel;
use crate::hash::fnv1a64;
use crate::kernels::{CameraModel, Interpolation, ResizeParams};
use crate::pipeline::{PipelineVariant, SourceConfig};
use crate::tracer::{TraceConfig, TraceFormat};

pub const DEFAULT_WARMUP_FRAMES: usize = 5;
pub const DEFAULT_MESSAGES: u64 = 300;

/// `[source]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSection {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub rate_hz: f64,
    pub seed: u64,
}

impl Default for SourceSection {
    fn default() -> Self {
        let s = SourceConfig::default();
        SourceSection {
            width: s.width,
            height: s.height,
            channels: s.channels,
            rate_hz: s.rate_hz,
            seed: s.seed,
        }
    }
}

/// `[camera]`; width and height default to the source frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
    pub width: Option<usize>,
    pub height: Option<usize>,
}

impl Default for CameraSection {
    fn default() -> Self {
        let c = SourceConfig::default().camera;
        CameraSection {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            k1: c.k1,
            k2: c.k2,
            k3: c.k3,
            p1: c.p1,
            p2: c.p2,
            width: None,
            height: None,
        }
    }
}

/// `[resize]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResizeSection {
    pub out_width: usize,
    pub out_height: usize,
    pub interpolation: Interpolation,
}

impl Default for ResizeSection {
    fn default() -> Self {
        ResizeSection {
            out_width: 320,
            out_height: 240,
            interpolation: Interpolation::Bilinear,
        }
    }
}

/// `[tracing]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TracingSection {
    pub enabled: bool,
    pub ring_capacity: usize,
}

impl Default for TracingSection {
    fn default() -> Self {
        let t = TraceConfig::default();
        TracingSection {
            enabled: t.enabled,
            ring_capacity: t.ring_capacity,
        }
    }
}

/// `[run]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub variants: Vec<PipelineVariant>,
    pub mode: ClockMode,
    pub backend: String,
    /// Stop after this many frames reach the sink.
    pub messages: Option<u64>,
    /// Stop publishing after this many seconds.
    pub duration_s: Option<f64>,
    pub warmup_frames: usize,
    /// Repetitions of each variant's run, pooled into one report. Each
    /// round applies the stop rule and the warm-up anew.
    pub rounds: usize,
    pub zero_copy: bool,
    pub queue_depth: usize,
    pub out: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
    pub trace_format: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            variants: PipelineVariant::ALL.to_vec(),
            mode: ClockMode::Model,
            backend: "simdev".into(),
            messages: None,
            duration_s: None,
            warmup_frames: DEFAULT_WARMUP_FRAMES,
            rounds: 1,
            zero_copy: false,
            queue_depth: 8,
            out: None,
            trace_out: None,
            trace_format: "chrome".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    Messages(u64),
    DurationS(f64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    source: SourceSection,
    #[serde(default)]
    camera: CameraSection,
    #[serde(default)]
    resize: ResizeSection,
    #[serde(default)]
    cost_model: Option<toml::Table>,
    #[serde(default)]
    tracing: TracingSection,
    #[serde(default)]
    run: RunSection,
}

/// A parsed benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub source: SourceSection,
    pub camera: CameraSection,
    pub resize: ResizeSection,
    /// Preset name, preset file, or "inline".
    pub cost_model_name: String,
    pub cost_model: CostModel,
    pub tracing: TracingSection,
    pub run: RunSection,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig::from_toml_str("").expect("empty config is valid")
    }
}

fn config_err(msg: impl std::fmt::Display) -> BenchError {
    BenchError::Config(msg.to_string())
}

/// `[cost_model]` is either `preset = "<name or path>"` with optional field
/// overrides, or a complete inline cost table. Absent means
/// `paper-calibrated`.
fn resolve_cost(table: Option<toml::Table>) -> Result<(String, CostModel), BenchError> {
    let mut table = table.unwrap_or_else(|| {
        let mut t = toml::Table::new();
        t.insert("preset".into(), "paper-calibrated".into());
        t
    });
    let (name, mut merged) = match table.remove("preset") {
        Some(toml::Value::String(name)) => {
            let base = CostModel::resolve(&name).map_err(config_err)?;
            let merged: toml::Table = toml::from_str(&base.to_toml()).map_err(config_err)?;
            (name, merged)
        }
        Some(other) => return Err(config_err(format!("cost_model.preset must be a string, got {other}"))),
        None => ("inline".to_string(), toml::Table::new()),
    };
    for (k, v) in table {
        match (merged.get_mut(&k), v) {
            (Some(toml::Value::Table(base)), toml::Value::Table(over)) => base.extend(over),
            (_, v) => {
                merged.insert(k, v);
            }
        }
    }
    let text = toml::to_string(&merged).map_err(config_err)?;
    let cost = CostModel::from_toml_str(&text).map_err(config_err)?;
    Ok((name, cost))
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<BenchConfig, BenchError> {
        let raw: RawConfig = toml::from_str(text).map_err(config_err)?;
        let (cost_model_name, cost_model) = resolve_cost(raw.cost_model)?;
        let cfg = BenchConfig {
            source: raw.source,
            camera: raw.camera,
            resize: raw.resize,
            cost_model_name,
            cost_model,
            tracing: raw.tracing,
            run: raw.run,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<BenchConfig, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        BenchConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.run.variants.is_empty() {
            return Err(config_err("run.variants must name at least one variant"));
        }
        self.stop_rule()?;
        self.trace_format()?;
        if self.run.rounds == 0 {
            return Err(config_err("run.rounds must be >= 1"));
        }
        if self.run.queue_depth == 0 {
            return Err(config_err("run.queue_depth must be >= 1"));
        }
        if self.tracing.ring_capacity == 0 {
            return Err(config_err("tracing.ring_capacity must be >= 1"));
        }
        self.source_config().validate().map_err(config_err)?;
        self.resize_params().validate().map_err(config_err)?;
        Ok(())
    }

    pub fn stop_rule(&self) -> Result<StopRule, BenchError> {
        match (self.run.messages, self.run.duration_s) {
            (Some(_), Some(_)) => Err(config_err("set either run.messages or run.duration_s, not both")),
            (Some(0), _) => Err(config_err("run.messages must be > 0")),
            (Some(n), None) => Ok(StopRule::Messages(n)),
            (None, Some(d)) if !(d.is_finite() && d > 0.0) => {
                Err(config_err(format!("run.duration_s must be > 0, got {d}")))
            }
            (None, Some(d)) => Ok(StopRule::DurationS(d)),
            (None, None) => Ok(StopRule::Messages(DEFAULT_MESSAGES)),
        }
    }

    /// Stops by message count; clears any duration.
    pub fn set_messages(&mut self, n: u64) {
        self.run.messages = Some(n);
        self.run.duration_s = None;
    }

    /// Stops by duration; clears any message count.
    pub fn set_duration_s(&mut self, d: f64) {
        self.run.duration_s = Some(d);
        self.run.messages = None;
    }

    pub fn trace_format(&self) -> Result<TraceFormat, BenchError> {
        self.run.trace_format.parse().map_err(config_err)
    }

    pub fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            enabled: self.tracing.enabled,
            ring_capacity: self.tracing.ring_capacity,
        }
    }

    pub fn camera_model(&self) -> CameraModel {
        let c = &self.camera;
        CameraModel {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            k1: c.k1,
            k2: c.k2,
            k3: c.k3,
            p1: c.p1,
            p2: c.p2,
            width: c.width.unwrap_or(self.source.width),
            height: c.height.unwrap_or(self.source.height),
        }
    }

    pub fn source_config(&self) -> SourceConfig {
        let s = &self.source;
        SourceConfig {
            width: s.width,
            height: s.height,
            channels: s.channels,
            rate_hz: s.rate_hz,
            seed: s.seed,
            camera: self.camera_model(),
            count: match self.stop_rule() {
                Ok(StopRule::Messages(n)) => Some(n),
                _ => None,
            },
        }
    }

    pub fn resize_params(&self) -> ResizeParams {
        ResizeParams {
            out_width: self.resize.out_width,
            out_height: self.resize.out_height,
            interpolation: self.resize.interpolation,
        }
    }

    /// Digest of everything that influences measured results. Output paths
    /// and the variant selection are excluded.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            source: &'a SourceSection,
            camera: CameraModel,
            resize: &'a ResizeSection,
            cost_model: &'a CostModel,
            tracing: &'a TracingSection,
            mode: ClockMode,
            backend: &'a str,
            messages: Option<u64>,
            duration_s: Option<f64>,
            warmup_frames: usize,
            rounds: usize,
            zero_copy: bool,
            queue_depth: usize,
        }
        let r = &self.run;
        let h = Hashed {
            source: &self.source,
            camera: self.camera_model(),
            resize: &self.resize,
            cost_model: &self.cost_model,
            tracing: &self.tracing,
            mode: r.mode,
            backend: &r.backend,
            messages: r.messages,
            duration_s: r.duration_s,
            warmup_frames: r.warmup_frames,
            rounds: r.rounds,
            zero_copy: r.zero_copy,
            queue_depth: r.queue_depth,
        };
        let json = serde_json::to_string(&h).expect("config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = BenchConfig::from_toml_str("").unwrap();
        assert_eq!(c.run.variants, PipelineVariant::ALL.to_vec());
        assert_eq!(c.cost_model_name, "paper-calibrated");
        assert_eq!(c.stop_rule().unwrap(), StopRule::Messages(DEFAULT_MESSAGES));
        assert_eq!(c.run.warmup_frames, 5);
        assert_eq!(c.source_config().camera.width, 640);
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
            [source]
            width = 64
            height = 48
            channels = 1
            rate_hz = 30.0
            seed = 7

            [camera]
            fx = 50.0
            fy = 50.0
            cx = 31.5
            cy = 23.5
            k1 = 0.1

            [resize]
            out_width = 32
            out_height = 24
            interpolation = "nearest"

            [cost_model]
            preset = "zero"
            layer_fixed_ns = 1000
            [cost_model.per_pixel_ns]
            resize = 2.0

            [tracing]
            enabled = false
            ring_capacity = 1024

            [run]
            variants = ["cpu", "streaming"]
            mode = "real"
            duration_s = 2.5
            warmup_frames = 0
            trace_format = "csv"
        "#;
        let c = BenchConfig::from_toml_str(text).unwrap();
        assert_eq!(c.run.variants, vec![PipelineVariant::CpuBaseline, PipelineVariant::AccelStreaming]);
        assert_eq!(c.run.mode, ClockMode::Real);
        assert_eq!(c.stop_rule().unwrap(), StopRule::DurationS(2.5));
        assert_eq!(c.source_config().count, None);
        assert_eq!(c.cost_model.layer_fixed_ns, 1000);
        assert_eq!(c.cost_model.per_pixel_ns["resize"], 2.0);
        assert_eq!(c.cost_model_name, "zero");
        assert_eq!(c.camera_model().width, 64);
        assert_eq!(c.resize_params().interpolation, Interpolation::Nearest);
        assert_eq!(c.trace_format().unwrap(), TraceFormat::Csv);
        assert!(!c.trace_config().enabled);
    }

    #[test]
    fn inline_cost_model() {
        let c = BenchConfig::from_toml_str("[cost_model]\nh2d_fixed_ns = 5").unwrap();
        assert_eq!(c.cost_model_name, "inline");
        assert_eq!(c.cost_model.h2d_fixed_ns, 5);
        assert_eq!(c.cost_model.launch_fixed_ns, 0);
    }

    #[test]
    fn config_errors() {
        for bad in [
            "[run]\nvariants = []",
            "[run]\nvariants = [\"gpu\"]",
            "[run]\nmessages = 10\nduration_s = 1.0",
            "[run]\nmessages = 0",
            "[run]\nrounds = 0",
            "[run]\nduration_s = -1.0",
            "[run]\ntrace_format = \"xml\"",
            "[source]\nrate_hz = 0.0",
            "[source]\nbogus = 1",
            "[cost_model]\npreset = \"nope\"",
            "[cost_model]\nh2d_per_byte_ns = -1.0",
            "[camera]\nwidth = 10",
            "[resize]\nout_width = 0",
            "not toml at all [",
        ] {
            assert!(
                matches!(BenchConfig::from_toml_str(bad), Err(BenchError::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn hash_ignores_outputs_but_not_costs() {
        let a = BenchConfig::default();
        let mut b = a.clone();
        b.run.out = Some("x.json".into());
        b.run.variants = vec![PipelineVariant::AccelFused];
        assert_eq!(a.hash(), b.hash());
        b.cost_model.h2d_per_byte_ns += 1.0;
        assert_ne!(a.hash(), b.hash());
    }
}
