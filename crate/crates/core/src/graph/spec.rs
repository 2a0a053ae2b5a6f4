use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::GraphError;
use crate::device::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Slash-rooted topic path such as `/camera/image_raw`. Cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName(Arc<str>);

impl TopicName {
    pub fn new(name: &str) -> Result<TopicName, GraphError> {
        if name.len() < 2 || !name.starts_with('/') || name.chars().any(char::is_whitespace) {
            return Err(GraphError::InvalidTopic(name.to_string()));
        }
        Ok(TopicName(name.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Placement {
    Host,
    Device(DeviceId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    /// Full client/core/middleware path with a bounded host queue.
    LayeredHost,
    /// Streaming queue on the device both endpoints are placed on.
    DeviceStream(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDescriptor {
    pub id: NodeId,
    pub name: String,
    pub placement: Placement,
    pub subscriptions: Vec<TopicName>,
    pub publications: Vec<TopicName>,
}

impl NodeDescriptor {
    pub fn new(id: u32, name: &str, placement: Placement) -> NodeDescriptor {
        NodeDescriptor {
            id: NodeId(id),
            name: name.to_string(),
            placement,
            subscriptions: Vec::new(),
            publications: Vec::new(),
        }
    }

    pub fn publishes(mut self, topic: &TopicName) -> NodeDescriptor {
        self.publications.push(topic.clone());
        self
    }

    pub fn subscribes(mut self, topic: &TopicName) -> NodeDescriptor {
        self.subscriptions.push(topic.clone());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub publisher: NodeId,
    pub topic: TopicName,
    pub subscriber: NodeId,
    pub kind: ChannelKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub nodes: Vec<NodeDescriptor>,
    pub edges: Vec<Edge>,
    pub executor_workers: usize,
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec {
            nodes: Vec::new(),
            edges: Vec::new(),
            executor_workers: 1,
        }
    }
}

impl GraphSpec {
    pub fn new(executor_workers: usize) -> GraphSpec {
        GraphSpec {
            executor_workers,
            ..GraphSpec::default()
        }
    }

    pub fn node(mut self, node: NodeDescriptor) -> GraphSpec {
        self.nodes.push(node);
        self
    }

    pub fn edge(mut self, publisher: u32, topic: &TopicName, subscriber: u32, kind: ChannelKind) -> GraphSpec {
        self.edges.push(Edge {
            publisher: NodeId(publisher),
            topic: topic.clone(),
            subscriber: NodeId(subscriber),
            kind,
        });
        self
    }

    /// Adds a layered edge for every publisher/subscriber pair of a topic that
    /// no explicit edge connects yet.
    pub fn wire_layered(mut self) -> GraphSpec {
        let existing: BTreeSet<(NodeId, TopicName, NodeId)> = self
            .edges
            .iter()
            .map(|e| (e.publisher, e.topic.clone(), e.subscriber))
            .collect();
        let mut added = Vec::new();
        for p in &self.nodes {
            for t in &p.publications {
                for s in self.nodes.iter().filter(|s| s.subscriptions.contains(t)) {
                    if !existing.contains(&(p.id, t.clone(), s.id)) {
                        added.push(Edge {
                            publisher: p.id,
                            topic: t.clone(),
                            subscriber: s.id,
                            kind: ChannelKind::LayeredHost,
                        });
                    }
                }
            }
        }
        self.edges.extend(added);
        self
    }

    /// Every topic, in order of first appearance. A topic's position is its
    /// numeric id in traces.
    pub fn topics(&self) -> Vec<TopicName> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let all = self
            .nodes
            .iter()
            .flat_map(|n| n.publications.iter().chain(&n.subscriptions))
            .chain(self.edges.iter().map(|e| &e.topic));
        for t in all {
            if seen.insert(t.clone()) {
                out.push(t.clone());
            }
        }
        out
    }

    pub fn topic_id(&self, topic: &TopicName) -> Option<u32> {
        self.topics().iter().position(|t| t == topic).map(|i| i as u32)
    }

    pub fn node_by_id(&self, id: NodeId) -> Option<&NodeDescriptor> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_by_name(&self, name: &str) -> Option<&NodeDescriptor> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Nodes that subscribe to something and publish nothing.
    pub fn sink_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| !n.subscriptions.is_empty() && n.publications.is_empty())
            .map(|n| n.id)
            .collect()
    }

    pub fn device_stream_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges
            .iter()
            .filter(|e| matches!(e.kind, ChannelKind::DeviceStream(_)))
    }

    /// Checks the structural invariants. `device_exists` decides whether a
    /// device placement refers to a known device.
    pub fn validate(&self, device_exists: impl Fn(DeviceId) -> bool) -> Result<(), GraphError> {
        if self.executor_workers == 0 {
            return Err(GraphError::InvalidSpec("executor_workers must be >= 1".into()));
        }
        let mut nodes = BTreeMap::new();
        for n in &self.nodes {
            if nodes.insert(n.id, n).is_some() {
                return Err(GraphError::DuplicateNode(n.id));
            }
            if let Placement::Device(d) = n.placement {
                if !device_exists(d) {
                    return Err(GraphError::UnknownDevice(d));
                }
            }
        }
        let mut queues = BTreeSet::new();
        for e in &self.edges {
            let p = nodes.get(&e.publisher).ok_or(GraphError::UnknownNode(e.publisher))?;
            let s = nodes.get(&e.subscriber).ok_or(GraphError::UnknownNode(e.subscriber))?;
            if let ChannelKind::DeviceStream(q) = e.kind {
                let same_device = matches!(
                    (p.placement, s.placement),
                    (Placement::Device(a), Placement::Device(b)) if a == b
                );
                if !same_device {
                    return Err(GraphError::PlacementMismatch {
                        publisher: e.publisher,
                        subscriber: e.subscriber,
                    });
                }
                if !queues.insert(q) {
                    return Err(GraphError::InvalidSpec(format!("stream queue {q} is used by two edges")));
                }
                if self.executor_workers < 2 {
                    return Err(GraphError::InvalidSpec(
                        "a device stream edge needs at least 2 executor workers".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
