//! Simulated accelerator: explicit host/device transfers, kernel launches and
//! on-device streaming queues, each charged from a [`CostModel`].
//!
//! Operations on one device are serialized on its timeline. Kernels execute
//! for real (outputs are bit-exact); the cost model only decides how long each
//! operation is accounted to take.

mod backend;
mod cost;
mod stream;

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SharedClock;
use crate::kernels::{KernelArgs, KernelError, KernelRegistry};
use crate::tracer::{Tp, Tracer};

pub use backend::{Backend, BackendRegistry, CpuBackend, SimDevBackend};
pub use cost::{CostModel, PRESETS};
pub use stream::{Beat, StreamId, StreamQueue, DEFAULT_MAX_FRAME};

#[derive(Debug, Error, PartialEq)]
pub enum DeviceError {
    #[error("buffer belongs to device {buffer} but was used on device {device}")]
    WrongDevice { buffer: u32, device: u32 },
    #[error("stream queue capacity must be at least one beat")]
    ZeroCapacity,
    #[error("stream beat width must be at least one byte")]
    ZeroBeatWidth,
    #[error("frame of {len} bytes exceeds the queue maximum of {max}")]
    FrameTooLarge { len: usize, max: usize },
    #[error("stream framing error: {0}")]
    StreamFraming(String),
    #[error("invalid cost model: {0}")]
    InvalidCost(String),
    #[error("unknown cost preset '{0}'")]
    UnknownPreset(String),
    #[error("unknown backend '{0}'")]
    UnknownBackend(String),
    #[error("backend '{0}' is already registered")]
    DuplicateBackend(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeviceId(pub u32);

/// Memory resident on one device. Its length is fixed at allocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceBuffer {
    device: DeviceId,
    data: Box<[u8]>,
}

impl DeviceBuffer {
    pub fn device(&self) -> DeviceId {
        self.device
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Read-only view, for tests; real code moves data with `d2h_copy`.
    pub fn peek(&self) -> &[u8] {
        &self.data
    }
}

/// Counters accumulated since creation or the last [`Device::reset`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceStats {
    /// Sum of the modeled durations of every operation.
    pub timeline_ns: u64,
    pub h2d_count: u64,
    pub h2d_bytes: u64,
    pub d2h_count: u64,
    pub d2h_bytes: u64,
    pub launches: u64,
    pub stream_beats: u64,
}

impl DeviceStats {
    pub fn transfers(&self) -> u64 {
        self.h2d_count + self.d2h_count
    }
}

/// Trace identity of a frame crossing a stream queue: the topic it is
/// published on, its sequence number, the node doing the write or read and,
/// for writes, the encoded parent link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamTag {
    pub node: u32,
    pub topic: u32,
    pub seq: u64,
    pub parent: u64,
}

pub struct Device {
    id: DeviceId,
    backend: String,
    cost: CostModel,
    clock: SharedClock,
    tracer: Tracer,
    kernels: KernelRegistry,
    exec: Mutex<()>,
    stats: Mutex<DeviceStats>,
    next_stream: AtomicU32,
}

impl std::fmt::Debug for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Device")
            .field("id", &self.id)
            .field("backend", &self.backend)
            .finish()
    }
}

impl Device {
    pub fn new(id: DeviceId, backend: &str, cost: CostModel, kernels: KernelRegistry, tracer: Tracer) -> Device {
        Device {
            id,
            backend: backend.to_string(),
            cost,
            clock: tracer.clock().clone(),
            tracer,
            kernels,
            exec: Mutex::new(()),
            stats: Mutex::new(DeviceStats::default()),
            next_stream: AtomicU32::new(0),
        }
    }

    pub fn id(&self) -> DeviceId {
        self.id
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn kernels(&self) -> &KernelRegistry {
        &self.kernels
    }

    pub fn stats(&self) -> DeviceStats {
        *self.stats.lock().unwrap()
    }

    pub fn timeline_ns(&self) -> u64 {
        self.stats().timeline_ns
    }

    pub fn reset(&self) {
        *self.stats.lock().unwrap() = DeviceStats::default();
    }

    fn check(&self, buf: &DeviceBuffer) -> Result<(), DeviceError> {
        if buf.device != self.id {
            return Err(DeviceError::WrongDevice {
                buffer: buf.device.0,
                device: self.id.0,
            });
        }
        Ok(())
    }

    fn account(&self, cost: u64, f: impl FnOnce(&mut DeviceStats)) {
        let mut s = self.stats.lock().unwrap();
        s.timeline_ns += cost;
        f(&mut s);
    }

    pub fn alloc(&self, len: usize) -> DeviceBuffer {
        DeviceBuffer {
            device: self.id,
            data: vec![0; len].into(),
        }
    }

    pub fn h2d_copy(&self, host: &[u8]) -> DeviceBuffer {
        let cost = self.cost.h2d_ns(host.len());
        let _serial = self.exec.lock().unwrap();
        self.tracer.emit_scoped(Tp::H2dBegin, host.len() as u64);
        let data: Box<[u8]> = self.clock.charge(cost, || host.into());
        self.tracer.emit_scoped(Tp::H2dEnd, host.len() as u64);
        self.account(cost, |s| {
            s.h2d_count += 1;
            s.h2d_bytes += host.len() as u64;
        });
        DeviceBuffer {
            device: self.id,
            data,
        }
    }

    pub fn d2h_copy(&self, buf: &DeviceBuffer) -> Result<Vec<u8>, DeviceError> {
        let mut host = Vec::new();
        self.d2h_append(buf, &mut host)?;
        Ok(host)
    }

    /// Copies `buf` to the end of `host`, so a caller can place a header in
    /// front of the pixels without a second copy.
    pub fn d2h_append(&self, buf: &DeviceBuffer, host: &mut Vec<u8>) -> Result<(), DeviceError> {
        self.check(buf)?;
        let cost = self.cost.d2h_ns(buf.len());
        let _serial = self.exec.lock().unwrap();
        self.tracer.emit_scoped(Tp::D2hBegin, buf.len() as u64);
        self.clock.charge(cost, || host.extend_from_slice(&buf.data));
        self.tracer.emit_scoped(Tp::D2hEnd, buf.len() as u64);
        self.account(cost, |s| {
            s.d2h_count += 1;
            s.d2h_bytes += buf.len() as u64;
        });
        Ok(())
    }

    /// Runs `kernel` on device-resident inputs into a new device buffer.
    pub fn launch(&self, kernel: &str, inputs: &[&DeviceBuffer], args: &KernelArgs) -> Result<DeviceBuffer, DeviceError> {
        let data = self.execute(kernel, inputs, args, None)?.expect("allocated output");
        Ok(DeviceBuffer { device: self.id, data })
    }

    /// Runs `kernel` into a preallocated output, which must match the
    /// kernel's output size exactly.
    pub fn launch_into(
        &self,
        kernel: &str,
        inputs: &[&DeviceBuffer],
        out: &mut DeviceBuffer,
        args: &KernelArgs,
    ) -> Result<(), DeviceError> {
        self.check(out)?;
        self.execute(kernel, inputs, args, Some(&mut out.data))?;
        Ok(())
    }

    /// Charged kernel execution. A missing output is allocated inside the
    /// charged region, as a device would allocate it on its own memory.
    fn execute(
        &self,
        kernel: &str,
        inputs: &[&DeviceBuffer],
        args: &KernelArgs,
        out: Option<&mut Box<[u8]>>,
    ) -> Result<Option<Box<[u8]>>, DeviceError> {
        for &b in inputs {
            self.check(b)?;
        }
        let k = self.kernels.get(kernel)?;
        let od = k.output_dims(args)?;
        if let Some(out) = &out {
            if out.len() != od.len() {
                return Err(KernelError::SizeMismatch {
                    expected: od.len(),
                    actual: out.len(),
                }
                .into());
            }
        }
        let cost = self.cost.launch_ns(kernel, od.pixels());
        let views: Vec<&[u8]> = inputs.iter().map(|b| &*b.data).collect();
        let _serial = self.exec.lock().unwrap();
        self.tracer.emit_scoped(Tp::KernelBegin, od.pixels() as u64);
        let result = self.clock.charge(cost, || match out {
            Some(out) => k.run(&views, args, out).map(|()| None),
            None => {
                let mut data = vec![0u8; od.len()].into_boxed_slice();
                k.run(&views, args, &mut data).map(|()| Some(data))
            }
        });
        self.tracer.emit_scoped(Tp::KernelEnd, od.pixels() as u64);
        let result = result?;
        self.account(cost, |s| s.launches += 1);
        Ok(result)
    }

    pub fn create_stream_queue(&self, capacity_beats: usize) -> Result<Arc<StreamQueue>, DeviceError> {
        self.create_stream_queue_with_width(capacity_beats, self.cost.stream_beat_bytes)
    }

    pub fn create_stream_queue_with_width(
        &self,
        capacity_beats: usize,
        width: usize,
    ) -> Result<Arc<StreamQueue>, DeviceError> {
        let id = StreamId(self.next_stream.fetch_add(1, Ordering::Relaxed));
        Ok(Arc::new(StreamQueue::new(id, self.id, capacity_beats, width)?))
    }

    /// Pushes a device buffer through `queue` without touching host memory.
    /// The final beat is released only after the write is fully charged, so a
    /// reader never completes a frame before its writer does. Returns the
    /// timestamp at which the write completed.
    pub fn stream_write(&self, queue: &StreamQueue, buf: &DeviceBuffer, tag: StreamTag) -> Result<u64, DeviceError> {
        self.check(buf)?;
        if queue.device() != self.id {
            return Err(DeviceError::WrongDevice {
                buffer: queue.device().0,
                device: self.id.0,
            });
        }
        let framed = queue.frame(&buf.data)?;
        let n = framed.beats();
        let cost = self.cost.stream_ns(n);
        self.tracer
            .emit(Tp::StreamWriteBegin, tag.node, tag.topic, tag.seq, tag.parent);
        self.clock.charge(cost, || queue.push(&framed, 0..n - 1));
        self.tracer
            .emit(Tp::StreamWriteEnd, tag.node, tag.topic, tag.seq, n as u64);
        let done = self.clock.now();
        queue.push(&framed, n - 1..n);
        self.account(cost, |s| s.stream_beats += n as u64);
        Ok(done)
    }

    /// Pops one frame from `queue` into device memory. `committed` is called
    /// once all beats have arrived and returns the writer's completion time;
    /// the read end is recorded no earlier than that.
    pub fn stream_read(
        &self,
        queue: &StreamQueue,
        tag: StreamTag,
        committed: impl FnOnce() -> u64,
    ) -> Result<DeviceBuffer, DeviceError> {
        if queue.device() != self.id {
            return Err(DeviceError::WrongDevice {
                buffer: queue.device().0,
                device: self.id.0,
            });
        }
        self.tracer
            .emit(Tp::StreamReadBegin, tag.node, tag.topic, tag.seq, 0);
        let data = queue.read()?;
        self.clock.advance_to(committed());
        self.tracer
            .emit(Tp::StreamReadEnd, tag.node, tag.topic, tag.seq, data.len() as u64);
        Ok(DeviceBuffer {
            device: self.id,
            data: data.into(),
        })
    }
}
