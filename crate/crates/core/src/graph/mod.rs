//! Pub/sub node graph. Messages between host nodes cross three layers
//! (client, core, middleware) on each side of a bounded queue, with a
//! tracepoint at every boundary; nodes sharing a device can instead be
//! connected by an on-device stream queue that bypasses the host layers.

mod executor;
mod spec;

use bytes::Bytes;
use thiserror::Error;

use crate::device::{DeviceBuffer, DeviceError, DeviceId};

pub use executor::{CallbackCtx, Devices, Graph, GraphOptions, NodeError, RunStats, Stop, SubscriptionId, TimerId, TimerTick};
pub use spec::{ChannelKind, Edge, GraphSpec, NodeDescriptor, NodeId, Placement, TopicName};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid topic name '{0}' (must start with '/')")]
    InvalidTopic(String),
    #[error("invalid graph: {0}")]
    InvalidSpec(String),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown topic '{0}'")]
    UnknownTopic(String),
    #[error("unknown device {0:?}")]
    UnknownDevice(DeviceId),
    #[error("placement mismatch: stream edge {publisher} -> {subscriber} needs both nodes on one device")]
    PlacementMismatch { publisher: NodeId, subscriber: NodeId },
    #[error("node {node} does not publish '{topic}'")]
    NotPublisher { node: NodeId, topic: String },
    #[error("queue for '{topic}' is full and the graph is not spinning")]
    QueueFull { topic: String },
    #[error("graph is already spinning")]
    AlreadySpinning,
    #[error("'{topic}' carries {expected} payloads on this edge")]
    PayloadResidency { topic: String, expected: &'static str },
    #[error("callback of node {node} failed: {message}")]
    Callback { node: NodeId, message: String },
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Message body: host bytes on layered channels, device memory on stream
/// channels.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Host(Bytes),
    Device(DeviceBuffer),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Host(b) => b.len(),
            Payload::Device(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn host(&self) -> Option<&Bytes> {
        match self {
            Payload::Host(b) => Some(b),
            Payload::Device(_) => None,
        }
    }

    pub fn device(&self) -> Option<&DeviceBuffer> {
        match self {
            Payload::Device(b) => Some(b),
            Payload::Host(_) => None,
        }
    }
}

impl From<Bytes> for Payload {
    fn from(b: Bytes) -> Self {
        Payload::Host(b)
    }
}

impl From<Vec<u8>> for Payload {
    fn from(v: Vec<u8>) -> Self {
        Payload::Host(v.into())
    }
}

impl From<DeviceBuffer> for Payload {
    fn from(b: DeviceBuffer) -> Self {
        Payload::Device(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub topic: TopicName,
    pub topic_id: u32,
    pub seq: u64,
    pub publish_ts: u64,
    /// When the frame this message belongs to entered the graph.
    pub origin_ts: u64,
    pub source: NodeId,
    pub payload: Payload,
}
