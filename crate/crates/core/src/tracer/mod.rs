//! Tracepoint emission into per-thread ring buffers, merged into a
//! time-sorted [`TraceDump`] when the session stops.

mod analysis;
mod export;
mod probe;
mod ring;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{self, Clock, SharedClock};

pub use analysis::{
    analyze_breakdown, decode_parent, encode_parent, reconstruct_chains, Chain, ChainSegment, ChainSet, LatencyBreakdown,
    SegmentClass, SegmentStats,
};
pub use export::{export, read_csv, CsvRow, TraceFormat};
pub use probe::{overhead_probe, OverheadReport};
use ring::Ring;

/// Topic id recorded for callbacks that were not triggered by a message.
/// Timer `i` of a node uses `TIMER_TOPIC - i`; see [`timer_topic`].
pub const TIMER_TOPIC: u32 = u32::MAX;

/// Reserved ids for timers, counted down from [`TIMER_TOPIC`].
pub const MAX_TIMERS: u32 = 1024;

pub fn timer_topic(index: u32) -> u32 {
    TIMER_TOPIC - index.min(MAX_TIMERS - 1)
}

pub fn is_timer_topic(topic: u32) -> bool {
    topic > TIMER_TOPIC - MAX_TIMERS
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace session already active")]
    AlreadyActive,
    #[error("no active trace session")]
    NotActive,
    #[error("no complete message chains in trace ({incomplete} incomplete)")]
    NoCompleteChains { incomplete: usize },
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    PublishPath,
    TakePath,
    Callback,
    Device,
    Queue,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::PublishPath => "publish_path",
            Category::TakePath => "take_path",
            Category::Callback => "callback",
            Category::Device => "device",
            Category::Queue => "queue",
        }
    }
}

/// Every tracepoint known to the runtime. The discriminant is the id stored
/// in [`TraceEvent::tp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u16)]
pub enum Tp {
    ClientPublish = 0,
    CorePublish = 1,
    MiddlewarePublish = 2,
    MiddlewareTake = 3,
    CoreTake = 4,
    ClientTake = 5,
    CallbackStart = 6,
    CallbackEnd = 7,
    H2dBegin = 8,
    H2dEnd = 9,
    KernelBegin = 10,
    KernelEnd = 11,
    D2hBegin = 12,
    D2hEnd = 13,
    StreamWriteBegin = 14,
    StreamWriteEnd = 15,
    StreamReadBegin = 16,
    StreamReadEnd = 17,
}

impl Tp {
    pub const ALL: [Tp; 18] = [
        Tp::ClientPublish,
        Tp::CorePublish,
        Tp::MiddlewarePublish,
        Tp::MiddlewareTake,
        Tp::CoreTake,
        Tp::ClientTake,
        Tp::CallbackStart,
        Tp::CallbackEnd,
        Tp::H2dBegin,
        Tp::H2dEnd,
        Tp::KernelBegin,
        Tp::KernelEnd,
        Tp::D2hBegin,
        Tp::D2hEnd,
        Tp::StreamWriteBegin,
        Tp::StreamWriteEnd,
        Tp::StreamReadBegin,
        Tp::StreamReadEnd,
    ];

    pub fn id(self) -> u16 {
        self as u16
    }

    pub fn from_id(id: u16) -> Option<Tp> {
        Tp::ALL.get(id as usize).copied()
    }

    pub fn from_name(name: &str) -> Option<Tp> {
        Tp::ALL.iter().copied().find(|tp| tp.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Tp::ClientPublish => "client_publish",
            Tp::CorePublish => "core_publish",
            Tp::MiddlewarePublish => "middleware_publish",
            Tp::MiddlewareTake => "middleware_take",
            Tp::CoreTake => "core_take",
            Tp::ClientTake => "client_take",
            Tp::CallbackStart => "callback_start",
            Tp::CallbackEnd => "callback_end",
            Tp::H2dBegin => "h2d_begin",
            Tp::H2dEnd => "h2d_end",
            Tp::KernelBegin => "kernel_begin",
            Tp::KernelEnd => "kernel_end",
            Tp::D2hBegin => "d2h_begin",
            Tp::D2hEnd => "d2h_end",
            Tp::StreamWriteBegin => "stream_write_begin",
            Tp::StreamWriteEnd => "stream_write_end",
            Tp::StreamReadBegin => "stream_read_begin",
            Tp::StreamReadEnd => "stream_read_end",
        }
    }

    pub fn category(self) -> Category {
        use Tp::*;
        match self {
            ClientPublish | CorePublish | MiddlewarePublish => Category::PublishPath,
            MiddlewareTake | CoreTake | ClientTake => Category::TakePath,
            CallbackStart | CallbackEnd => Category::Callback,
            H2dBegin | H2dEnd | KernelBegin | KernelEnd | D2hBegin | D2hEnd => Category::Device,
            StreamWriteBegin | StreamWriteEnd | StreamReadBegin | StreamReadEnd => Category::Queue,
        }
    }

    /// Tracepoints emitted by the client/core/middleware layers.
    pub fn is_host_layer(self) -> bool {
        matches!(
            self.category(),
            Category::PublishPath | Category::TakePath
        )
    }
}

/// Row of the tracepoint table carried by every dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tracepoint {
    pub id: u16,
    pub name: String,
    pub category: Category,
}

pub fn tracepoint_table() -> Vec<Tracepoint> {
    Tp::ALL
        .iter()
        .map(|tp| Tracepoint {
            id: tp.id(),
            name: tp.name().to_string(),
            category: tp.category(),
        })
        .collect()
}

/// Fixed-size trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Nanoseconds since session start.
    pub ts: u64,
    pub seq: u64,
    pub arg: u64,
    pub thread: u32,
    pub node: u32,
    pub topic: u32,
    pub tp: u16,
}

impl TraceEvent {
    pub fn tracepoint(&self) -> Option<Tp> {
        Tp::from_id(self.tp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub enabled: bool,
    /// Events retained per thread before the oldest are overwritten.
    pub ring_capacity: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            enabled: true,
            ring_capacity: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DumpMetadata {
    /// Clock reading (ns) at session start; event timestamps are relative to it.
    pub clock_epoch_ns: u64,
    pub config_hash: Option<String>,
    pub mode: Option<String>,
    pub overflow: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceDump {
    pub events: Vec<TraceEvent>,
    pub tracepoints: Vec<Tracepoint>,
    pub nodes: BTreeMap<u32, String>,
    pub topics: BTreeMap<u32, String>,
    pub metadata: DumpMetadata,
}

impl TraceDump {
    pub fn from_events(mut events: Vec<TraceEvent>) -> TraceDump {
        events.sort_by_key(|e| e.ts);
        TraceDump {
            events,
            tracepoints: tracepoint_table(),
            ..TraceDump::default()
        }
    }

    pub fn count(&self, tp: Tp) -> usize {
        self.events.iter().filter(|e| e.tp == tp.id()).count()
    }

    pub fn node_name(&self, node: u32) -> String {
        self.nodes
            .get(&node)
            .cloned()
            .unwrap_or_else(|| format!("node{node}"))
    }

    pub fn topic_name(&self, topic: u32) -> String {
        if is_timer_topic(topic) {
            return "timer".to_string();
        }
        self.topics
            .get(&topic)
            .cloned()
            .unwrap_or_else(|| format!("topic{topic}"))
    }
}

struct Session {
    id: u64,
    enabled: bool,
    capacity: usize,
    start_ts: u64,
    rings: Mutex<Vec<Arc<Mutex<Ring>>>>,
}

/// Handle shared by everything that emits. Cheap to clone.
#[derive(Clone)]
pub struct Tracer {
    inner: Arc<TracerInner>,
}

struct TracerInner {
    clock: SharedClock,
    active: AtomicBool,
    current_id: AtomicU64,
    session: Mutex<Option<Arc<Session>>>,
    names: Mutex<(BTreeMap<u32, String>, BTreeMap<u32, String>)>,
}

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

struct LocalRing {
    session_id: u64,
    session: Weak<Session>,
    start_ts: u64,
    ring: Arc<Mutex<Ring>>,
}

thread_local! {
    static LOCAL_RINGS: RefCell<Vec<LocalRing>> = const { RefCell::new(Vec::new()) };
}

impl std::fmt::Debug for Tracer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tracer")
            .field("active", &self.is_active())
            .finish()
    }
}

impl Tracer {
    pub fn new(clock: SharedClock) -> Tracer {
        Tracer {
            inner: Arc::new(TracerInner {
                clock,
                active: AtomicBool::new(false),
                current_id: AtomicU64::new(0),
                session: Mutex::new(None),
                names: Mutex::new((BTreeMap::new(), BTreeMap::new())),
            }),
        }
    }

    pub fn clock(&self) -> &SharedClock {
        &self.inner.clock
    }

    pub fn is_active(&self) -> bool {
        self.inner.active.load(Ordering::Acquire)
    }

    /// Names recorded in dumps so exports can label nodes and topics.
    pub fn register_names(
        &self,
        nodes: impl IntoIterator<Item = (u32, String)>,
        topics: impl IntoIterator<Item = (u32, String)>,
    ) {
        let mut names = self.inner.names.lock().unwrap();
        names.0.extend(nodes);
        names.1.extend(topics);
    }

    pub fn start(&self, config: TraceConfig) -> Result<(), TraceError> {
        let mut slot = self.inner.session.lock().unwrap();
        if slot.is_some() {
            return Err(TraceError::AlreadyActive);
        }
        let session = Arc::new(Session {
            id: NEXT_SESSION.fetch_add(1, Ordering::Relaxed),
            enabled: config.enabled,
            capacity: config.ring_capacity.max(1),
            start_ts: self.inner.clock.now(),
            rings: Mutex::new(Vec::new()),
        });
        self.inner.current_id.store(session.id, Ordering::Release);
        *slot = Some(session);
        self.inner.active.store(config.enabled, Ordering::Release);
        Ok(())
    }

    pub fn stop(&self) -> Result<TraceDump, TraceError> {
        let session = self
            .inner
            .session
            .lock()
            .unwrap()
            .take()
            .ok_or(TraceError::NotActive)?;
        self.inner.active.store(false, Ordering::Release);

        let rings = std::mem::take(&mut *session.rings.lock().unwrap());
        let mut overflow = 0;
        let mut events = Vec::new();
        for ring in &rings {
            let mut ring = ring.lock().unwrap();
            overflow += ring.overflow();
            events.extend(ring.drain());
        }
        // Stable sort: per-thread emission order survives timestamp ties.
        events.sort_by_key(|e| e.ts);
        let names = self.inner.names.lock().unwrap().clone();
        Ok(TraceDump {
            events,
            tracepoints: tracepoint_table(),
            nodes: names.0,
            topics: names.1,
            metadata: DumpMetadata {
                clock_epoch_ns: session.start_ts,
                config_hash: None,
                mode: Some(self.inner.clock.mode().to_string()),
                overflow,
                threads: rings.len(),
            },
        })
    }

    /// Records one event on the calling thread's ring. Returns immediately
    /// when no enabled session is active.
    #[inline]
    pub fn emit(&self, tp: Tp, node: u32, topic: u32, seq: u64, arg: u64) {
        if !self.inner.active.load(Ordering::Relaxed) {
            return;
        }
        self.emit_slow(tp, node, topic, seq, arg);
    }

    /// Emits with node/topic/seq taken from the callback executing on this
    /// thread (device and queue operations run inside callbacks).
    pub fn emit_scoped(&self, tp: Tp, arg: u64) {
        if !self.inner.active.load(Ordering::Relaxed) {
            return;
        }
        let (node, topic, seq) = match clock::current_scope() {
            Some(s) => (s.node, s.topic, s.seq),
            None => (u32::MAX, u32::MAX, 0),
        };
        self.emit_slow(tp, node, topic, seq, arg);
    }

    fn emit_slow(&self, tp: Tp, node: u32, topic: u32, seq: u64, arg: u64) {
        let id = self.inner.current_id.load(Ordering::Acquire);
        let Some((start_ts, ring)) = self.local_ring(id) else {
            return;
        };
        let ts = self.inner.clock.now().saturating_sub(start_ts);
        let event = TraceEvent {
            ts,
            seq,
            arg,
            thread: clock::thread_id(),
            node,
            topic,
            tp: tp.id(),
        };
        ring.lock().unwrap().push(event);
    }

    /// The calling thread's ring for session `id`. Only the first emit of a
    /// thread in a session touches the shared session lock.
    fn local_ring(&self, id: u64) -> Option<(u64, Arc<Mutex<Ring>>)> {
        LOCAL_RINGS.with(|rings| {
            let mut rings = rings.borrow_mut();
            if let Some(r) = rings.iter().find(|r| r.session_id == id) {
                return Some((r.start_ts, r.ring.clone()));
            }
            let session = self.inner.session.lock().unwrap().clone()?;
            if session.id != id || !session.enabled {
                return None;
            }
            rings.retain(|r| r.session.strong_count() > 0);
            let ring = Arc::new(Mutex::new(Ring::new(session.capacity)));
            session.rings.lock().unwrap().push(ring.clone());
            rings.push(LocalRing {
                session_id: id,
                session: Arc::downgrade(&session),
                start_ts: session.start_ts,
                ring: ring.clone(),
            });
            Some((session.start_ts, ring))
        })
    }
}

/// Convenience for tests and tools: a tracer on a fresh real-time clock.
pub fn real_tracer() -> Tracer {
    Tracer::new(Clock::real())
}
