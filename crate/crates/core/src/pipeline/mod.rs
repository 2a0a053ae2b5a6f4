//! The rectify/resize perception graph in its four execution variants, fed
//! by a synthetic camera.
//!
//! Every variant has the same shape: a camera source publishes
//! `/camera/camera_info` and `/camera/image_raw`, the image is undistorted
//! and downscaled, and a sink records what arrives on `/image_resized`.
//! Variants differ only in where the two kernels run and how the
//! intermediate image travels.

mod nodes;
mod source;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{BackendRegistry, CostModel, Device, DeviceError, DeviceId};
use crate::graph::{
    ChannelKind, Devices, Graph, GraphError, GraphOptions, GraphSpec, NodeDescriptor, NodeId, Placement, RunStats, Stop,
    TopicName,
};
use crate::kernels::{KernelError, ResizeParams};
use crate::tracer::Tracer;

pub use nodes::{SinkLog, SinkRecord};
pub use source::{SourceConfig, SyntheticCamera};

pub const IMAGE_RAW: &str = "/camera/image_raw";
pub const CAMERA_INFO: &str = "/camera/camera_info";
pub const IMAGE_RECT: &str = "/image_rect";
pub const IMAGE_RESIZED: &str = "/image_resized";

/// The accelerator every device-placed node of a pipeline runs on.
pub const PIPELINE_DEVICE: DeviceId = DeviceId(0);

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown variant '{0}' (expected cpu|accel|fused|streaming)")]
    UnknownVariant(String),
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PipelineVariant {
    /// Both kernels on host nodes.
    CpuBaseline,
    /// Each node offloads its own kernel; images return to the host between nodes.
    AccelPerNode,
    /// One node runs a single rectify+resize kernel.
    AccelFused,
    /// Both nodes on the device, joined by an on-device stream queue.
    AccelStreaming,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 4] = [
        PipelineVariant::CpuBaseline,
        PipelineVariant::AccelPerNode,
        PipelineVariant::AccelFused,
        PipelineVariant::AccelStreaming,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineVariant::CpuBaseline => "cpu",
            PipelineVariant::AccelPerNode => "accel",
            PipelineVariant::AccelFused => "fused",
            PipelineVariant::AccelStreaming => "streaming",
        }
    }

    pub fn uses_device(self) -> bool {
        self != PipelineVariant::CpuBaseline
    }

    /// Host/device transfers needed for one frame.
    pub fn transfers_per_frame(self) -> u64 {
        match self {
            PipelineVariant::CpuBaseline => 0,
            PipelineVariant::AccelPerNode => 4,
            PipelineVariant::AccelFused | PipelineVariant::AccelStreaming => 2,
        }
    }
}

impl std::fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PipelineVariant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| PipelineError::UnknownVariant(s.to_string()))
    }
}

impl TryFrom<String> for PipelineVariant {
    type Error = PipelineError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PipelineVariant> for String {
    fn from(v: PipelineVariant) -> String {
        v.name().to_string()
    }
}

pub(crate) fn topic(name: &str) -> TopicName {
    TopicName::new(name).expect("pipeline topic names are valid")
}

/// Node roles, with ids that are stable across variants.
pub mod roles {
    use crate::graph::NodeId;

    pub const SOURCE: NodeId = NodeId(0);
    pub const RECTIFY: NodeId = NodeId(1);
    pub const RESIZE: NodeId = NodeId(2);
    pub const FUSED: NodeId = NodeId(3);
    pub const SINK: NodeId = NodeId(4);
}

/// Topology of `variant`. `backend` must name a registered backend when the
/// variant uses the device.
pub fn build_pipeline(
    variant: PipelineVariant,
    source: &SourceConfig,
    resize: &ResizeParams,
    backend: &str,
    backends: &BackendRegistry,
) -> Result<GraphSpec, PipelineError> {
    source.validate()?;
    resize.validate()?;
    if variant.uses_device() {
        backends.get(backend)?;
    }
    let (raw, info, rect, resized) = (
        topic(IMAGE_RAW),
        topic(CAMERA_INFO),
        topic(IMAGE_RECT),
        topic(IMAGE_RESIZED),
    );
    let on = |device: bool| {
        if device {
            Placement::Device(PIPELINE_DEVICE)
        } else {
            Placement::Host
        }
    };
    let src = NodeDescriptor::new(roles::SOURCE.0, "camera_source", Placement::Host)
        .publishes(&info)
        .publishes(&raw);
    let sink = NodeDescriptor::new(roles::SINK.0, "sink", Placement::Host).subscribes(&resized);
    let stage = |id: NodeId, name: &str, placement: Placement| NodeDescriptor::new(id.0, name, placement);

    let mut spec = GraphSpec::new(0).node(src);
    spec = match variant {
        PipelineVariant::AccelFused => spec.node(
            stage(roles::FUSED, "rectify_resize", on(true))
                .subscribes(&info)
                .subscribes(&raw)
                .publishes(&resized),
        ),
        _ => {
            let device = variant.uses_device();
            spec.node(
                stage(roles::RECTIFY, "rectify", on(device))
                    .subscribes(&info)
                    .subscribes(&raw)
                    .publishes(&rect),
            )
            .node(
                stage(roles::RESIZE, "resize", on(device))
                    .subscribes(&rect)
                    .publishes(&resized),
            )
        }
    };
    spec = spec.node(sink);
    if variant == PipelineVariant::AccelStreaming {
        spec = spec.edge(roles::RECTIFY.0, &rect, roles::RESIZE.0, ChannelKind::DeviceStream(0));
    }
    let mut spec = spec.wire_layered();
    // One worker per node: a publisher blocked on a full queue never starves
    // its consumer.
    spec.executor_workers = spec.nodes.len();
    spec.validate(|d| d == PIPELINE_DEVICE)?;
    Ok(spec)
}

/// Everything needed to instantiate one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub variant: PipelineVariant,
    pub source: SourceConfig,
    pub resize: ResizeParams,
    pub backend: String,
    pub cost: CostModel,
    /// Skip per-layer payload copies on layered channels.
    pub zero_copy: bool,
    pub queue_depth: usize,
    pub stream_capacity_beats: usize,
}

impl PipelineConfig {
    pub fn new(variant: PipelineVariant, source: SourceConfig, resize: ResizeParams, cost: CostModel) -> PipelineConfig {
        PipelineConfig {
            variant,
            source,
            resize,
            backend: "simdev".into(),
            cost,
            zero_copy: false,
            queue_depth: GraphOptions::default().queue_depth,
            stream_capacity_beats: GraphOptions::default().stream_capacity_beats,
        }
    }
}

/// A wired, runnable pipeline.
#[derive(Debug)]
pub struct Pipeline {
    variant: PipelineVariant,
    graph: Graph,
    sink: SinkLog,
    device: Option<Arc<Device>>,
}

impl Pipeline {
    pub fn new(cfg: &PipelineConfig, tracer: Tracer, backends: &BackendRegistry) -> Result<Pipeline, PipelineError> {
        cfg.cost.validate()?;
        let spec = build_pipeline(cfg.variant, &cfg.source, &cfg.resize, &cfg.backend, backends)?;
        let mut devices = Devices::new();
        let device = if cfg.variant.uses_device() {
            let dev = backends.get(&cfg.backend)?.open(PIPELINE_DEVICE, &cfg.cost, tracer.clone());
            devices.insert(PIPELINE_DEVICE, dev.clone());
            Some(dev)
        } else {
            None
        };
        let opts = GraphOptions {
            queue_depth: cfg.queue_depth,
            zero_copy: cfg.zero_copy,
            layer_fixed_ns: cfg.cost.layer_fixed_ns,
            layer_per_byte_ns: cfg.cost.layer_per_byte_ns,
            stream_capacity_beats: cfg.stream_capacity_beats,
        };
        let graph = Graph::create(spec, tracer, devices, opts)?;
        source::attach(&graph, &cfg.source)?;
        let sink = nodes::attach(&graph, cfg)?;
        Ok(Pipeline {
            variant: cfg.variant,
            graph,
            sink,
            device,
        })
    }

    pub fn variant(&self) -> PipelineVariant {
        self.variant
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn device(&self) -> Option<&Arc<Device>> {
        self.device.as_ref()
    }

    pub fn sink(&self) -> &SinkLog {
        &self.sink
    }

    pub fn run(&self, stop: Stop) -> Result<RunStats, PipelineError> {
        Ok(self.graph.spin(stop)?)
    }

    /// Runs until the sink has received `frames` images.
    pub fn run_frames(&self, frames: u64) -> Result<RunStats, PipelineError> {
        self.run(Stop::Messages {
            node: roles::SINK,
            count: frames,
        })
    }

    /// Host/device transfers so far, by direction.
    pub fn transfers(&self) -> BTreeMap<&'static str, u64> {
        let s = self.device.as_ref().map(|d| d.stats()).unwrap_or_default();
        BTreeMap::from([("h2d", s.h2d_count), ("d2h", s.d2h_count)])
    }
}
