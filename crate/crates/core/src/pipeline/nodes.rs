use std::sync::{Arc, Mutex};

use bytes::Bytes;

use super::{
    roles, topic, PipelineConfig, PipelineError, PipelineVariant, CAMERA_INFO, IMAGE_RAW, IMAGE_RECT, IMAGE_RESIZED,
};
use crate::clock::SharedClock;
use crate::device::{CostModel, Device, DeviceBuffer};
use crate::graph::{CallbackCtx, Graph, Message, NodeError, NodeId, Placement, TopicName};
use crate::hash::fnv1a64;
use crate::kernels::{decode_dims, encode_dims, encoded_pixels, IMAGE_HEADER_LEN, CameraModel, Image, ImageDims, KernelArgs, KernelRegistry, ResizeParams};

/// What the sink saw for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SinkRecord {
    pub seq: u64,
    /// FNV-1a 64 of the whole encoded image.
    pub hash: u64,
    pub len: usize,
    /// When the frame's image left the source.
    pub origin_ts: u64,
    pub arrival_ts: u64,
}

impl SinkRecord {
    pub fn latency_ns(&self) -> u64 {
        self.arrival_ts.saturating_sub(self.origin_ts)
    }
}

#[derive(Debug, Clone)]
struct Arrival {
    seq: u64,
    origin_ts: u64,
    arrival_ts: u64,
    payload: Bytes,
}

/// Frames received by the sink. Payloads are kept as received and hashed on
/// demand, so hashing never runs inside the measured callback.
#[derive(Debug, Clone, Default)]
pub struct SinkLog(Arc<Mutex<Vec<Arrival>>>);

impl SinkLog {
    pub fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<SinkRecord> {
        self.0
            .lock()
            .unwrap()
            .iter()
            .map(|a| SinkRecord {
                seq: a.seq,
                hash: fnv1a64(&a.payload),
                len: a.payload.len(),
                origin_ts: a.origin_ts,
                arrival_ts: a.arrival_ts,
            })
            .collect()
    }

    /// Received images in arrival order.
    pub fn images(&self) -> Result<Vec<Image>, PipelineError> {
        let log = self.0.lock().unwrap();
        Ok(log.iter().map(|a| Image::decode(&a.payload)).collect::<Result<_, _>>()?)
    }

    pub fn clear(&self) {
        self.0.lock().unwrap().clear();
    }
}

fn encode(dims: ImageDims, pixels: Vec<u8>) -> Result<Vec<u8>, NodeError> {
    Ok(Image::from_dims(dims, pixels)?.encode())
}

/// Copies a device image back to the host in wire form.
fn download(dev: &Device, dims: ImageDims, buf: &DeviceBuffer) -> Result<Vec<u8>, NodeError> {
    if buf.len() != dims.len() {
        return Err(format!("device image holds {} bytes, expected {}", buf.len(), dims.len()).into());
    }
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + buf.len());
    encode_dims(dims, &mut out);
    dev.d2h_append(buf, &mut out)?;
    Ok(out)
}

fn host_bytes(msg: &Message) -> Result<&Bytes, NodeError> {
    msg.payload
        .host()
        .ok_or_else(|| format!("'{}' arrived as device memory on a host channel", msg.topic).into())
}

fn device_buffer(msg: &Message) -> Result<&DeviceBuffer, NodeError> {
    msg.payload
        .device()
        .ok_or_else(|| format!("'{}' arrived as host memory on a stream channel", msg.topic).into())
}

/// Where a node's kernel runs.
#[derive(Clone)]
enum Exec {
    /// On the node's own thread, timed by the host cost table.
    Host {
        kernels: KernelRegistry,
        cost: Arc<CostModel>,
        clock: SharedClock,
    },
    Device(Arc<Device>),
}

impl Exec {
    fn for_node(graph: &Graph, node: NodeId, cost: &Arc<CostModel>) -> Exec {
        match node_device(graph, node) {
            Some(dev) => Exec::Device(dev),
            None => Exec::Host {
                kernels: KernelRegistry::builtin(),
                cost: cost.clone(),
                clock: graph.tracer().clock().clone(),
            },
        }
    }

    /// Runs `kernel` on an encoded host image and returns the encoded result.
    /// Offloaded runs copy the input in and the output back out.
    fn run_host_image(&self, kernel: &str, image: &[u8], args: impl Fn(ImageDims) -> KernelArgs) -> Result<Vec<u8>, NodeError> {
        let dims = decode_dims(image)?;
        let args = args(dims);
        match self {
            Exec::Host { kernels, cost, clock } => {
                let od = kernels.get(kernel)?.output_dims(&args)?;
                let ns = cost.host_kernel_ns(kernel, od.pixels());
                clock.charge(ns, || encode(od, kernels.run(kernel, encoded_pixels(image), &args)?))
            }
            Exec::Device(dev) => {
                let input = dev.h2d_copy(encoded_pixels(image));
                let out = dev.launch(kernel, &[&input], &args)?;
                let od = dev.kernels().get(kernel)?.output_dims(&args)?;
                download(dev, od, &out)
            }
        }
    }
}

/// Latest calibration seen on camera_info.
#[derive(Clone, Default)]
struct CameraSlot(Arc<Mutex<Option<CameraModel>>>);

impl CameraSlot {
    fn subscribe(&self, graph: &Graph, node: NodeId) -> Result<(), PipelineError> {
        let slot = self.clone();
        graph.subscribe(node, &topic(CAMERA_INFO), move |_, msg| {
            *slot.0.lock().unwrap() = Some(CameraModel::decode(host_bytes(&msg)?)?);
            Ok(())
        })?;
        Ok(())
    }

    fn get(&self) -> Result<CameraModel, NodeError> {
        self.0
            .lock()
            .unwrap()
            .ok_or_else(|| "image arrived before any camera_info".into())
    }
}

fn publish(ctx: &CallbackCtx<'_>, topic: &TopicName, bytes: Vec<u8>) -> Result<(), NodeError> {
    ctx.publish(topic, bytes)?;
    Ok(())
}

/// Installs the processing nodes and the sink of `cfg.variant`.
pub(crate) fn attach(graph: &Graph, cfg: &PipelineConfig) -> Result<SinkLog, PipelineError> {
    let cost = Arc::new(cfg.cost.clone());
    let resize = cfg.resize;
    let (raw, rect, resized) = (topic(IMAGE_RAW), topic(IMAGE_RECT), topic(IMAGE_RESIZED));
    let input_dims = cfg.source.dims()?;
    let with_resize = move |p: ResizeParams| move |d: ImageDims| KernelArgs::new(d).with_resize(p);

    match cfg.variant {
        PipelineVariant::CpuBaseline | PipelineVariant::AccelPerNode => {
            let camera = CameraSlot::default();
            camera.subscribe(graph, roles::RECTIFY)?;
            let exec = Exec::for_node(graph, roles::RECTIFY, &cost);
            let out = rect.clone();
            graph.subscribe(roles::RECTIFY, &raw, move |ctx, msg| {
                let cam = camera.get()?;
                let bytes = exec.run_host_image("rectify", host_bytes(&msg)?, |d| KernelArgs::new(d).with_camera(cam))?;
                publish(ctx, &out, bytes)
            })?;
            let exec = Exec::for_node(graph, roles::RESIZE, &cost);
            let out = resized.clone();
            graph.subscribe(roles::RESIZE, &rect, move |ctx, msg| {
                let bytes = exec.run_host_image("resize", host_bytes(&msg)?, with_resize(resize))?;
                publish(ctx, &out, bytes)
            })?;
        }
        PipelineVariant::AccelFused => {
            let camera = CameraSlot::default();
            camera.subscribe(graph, roles::FUSED)?;
            let exec = Exec::for_node(graph, roles::FUSED, &cost);
            let out = resized.clone();
            graph.subscribe(roles::FUSED, &raw, move |ctx, msg| {
                let cam = camera.get()?;
                let bytes = exec.run_host_image("rectify_resize", host_bytes(&msg)?, |d| {
                    KernelArgs::new(d).with_camera(cam).with_resize(resize)
                })?;
                publish(ctx, &out, bytes)
            })?;
        }
        PipelineVariant::AccelStreaming => {
            let camera = CameraSlot::default();
            camera.subscribe(graph, roles::RECTIFY)?;
            let dev = node_device(graph, roles::RECTIFY).expect("streaming stages are device-placed");
            let out = rect.clone();
            graph.subscribe(roles::RECTIFY, &raw, move |ctx, msg| {
                let image = host_bytes(&msg)?;
                let args = KernelArgs::new(decode_dims(image)?).with_camera(camera.get()?);
                let input = dev.h2d_copy(encoded_pixels(image));
                let output = dev.launch("rectify", &[&input], &args)?;
                ctx.publish(&out, output)?;
                Ok(())
            })?;
            // The stream carries raw pixels, so the reader knows the frame
            // geometry from the source configuration.
            let dev = node_device(graph, roles::RESIZE).expect("streaming stages are device-placed");
            let out = resized.clone();
            graph.subscribe(roles::RESIZE, &rect, move |ctx, msg| {
                let args = KernelArgs::new(input_dims).with_resize(resize);
                let output = dev.launch("resize", &[device_buffer(&msg)?], &args)?;
                let od = dev.kernels().get("resize")?.output_dims(&args)?;
                publish(ctx, &out, download(&dev, od, &output)?)
            })?;
        }
    }

    let log = SinkLog::default();
    let sink = log.clone();
    graph.subscribe(roles::SINK, &resized, move |ctx, msg| {
        let payload = host_bytes(&msg)?.clone();
        sink.0.lock().unwrap().push(Arrival {
            seq: msg.seq,
            origin_ts: msg.origin_ts,
            arrival_ts: ctx.clock().now(),
            payload,
        });
        Ok(())
    })?;
    Ok(log)
}

fn node_device(graph: &Graph, node: NodeId) -> Option<Arc<Device>> {
    match graph.spec().node_by_id(node)?.placement {
        Placement::Device(d) => graph.devices().get(&d).cloned(),
        Placement::Host => None,
    }
}
