//! Per-message chain reconstruction and latency breakdown.
//!
//! A chain starts at the publish that injected a frame into the graph and
//! ends at a sink's `callback_end`. It is rebuilt backwards: the sink
//! callback, its take-side events, the publish-side events of the message it
//! consumed, then the callback that published that message (named by the
//! parent reference stored in the publish event's `arg`), and so on. Inside
//! a callback the chain follows device events up to the publish that cuts
//! the callback short. Segment durations are differences of consecutive
//! chain timestamps, so they partition the end-to-end latency exactly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{is_timer_topic, Category, TraceDump, TraceError, TraceEvent, Tp, MAX_TIMERS, TIMER_TOPIC};
use crate::graph::GraphSpec;

const PARENT_SEQ_BITS: u32 = 40;
const PARENT_SEQ_MASK: u64 = (1 << PARENT_SEQ_BITS) - 1;
/// Width of the topic field; reserved timer ids occupy its top values.
const PARENT_TOPIC_FIELD: u64 = 1 << (64 - PARENT_SEQ_BITS);

/// Encodes the callback that published a message into the `arg` of the
/// publish-start event. Zero means the publish happened outside a callback.
/// Message topics must be below 2^24 - 1025; timer ids are folded into the
/// top of the 24-bit field.
pub fn encode_parent(topic: u32, seq: u64) -> u64 {
    let field = if is_timer_topic(topic) {
        PARENT_TOPIC_FIELD - 1 - (TIMER_TOPIC - topic) as u64
    } else {
        topic as u64 + 1
    };
    (field << PARENT_SEQ_BITS) | (seq & PARENT_SEQ_MASK)
}

pub fn decode_parent(arg: u64) -> Option<(u32, u64)> {
    let field = arg >> PARENT_SEQ_BITS;
    let topic = match field {
        0 => return None,
        f if f >= PARENT_TOPIC_FIELD - MAX_TIMERS as u64 => TIMER_TOPIC - (PARENT_TOPIC_FIELD - 1 - f) as u32,
        f => (f - 1) as u32,
    };
    Some((topic, arg & PARENT_SEQ_MASK))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentClass {
    Messaging,
    Compute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p95_ns: u64,
    pub max_ns: u64,
    pub count: usize,
}

impl SegmentStats {
    pub fn from_samples(samples: &[u64]) -> SegmentStats {
        if samples.is_empty() {
            return SegmentStats {
                mean_ns: 0.0,
                p50_ns: 0,
                p95_ns: 0,
                max_ns: 0,
                count: 0,
            };
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
        SegmentStats {
            mean_ns: sum as f64 / sorted.len() as f64,
            p50_ns: nearest_rank(&sorted, 50.0),
            p95_ns: nearest_rank(&sorted, 95.0),
            max_ns: *sorted.last().unwrap(),
            count: sorted.len(),
        }
    }
}

fn nearest_rank(sorted: &[u64], pct: f64) -> u64 {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// One step of a reconstructed chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSegment {
    pub name: String,
    pub class: SegmentClass,
    pub duration_ns: u64,
}

/// One frame's causal chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub sink: u32,
    pub seq: u64,
    pub start_ts: u64,
    pub end_to_end_ns: u64,
    pub segments: Vec<ChainSegment>,
}

impl Chain {
    pub fn total(&self, class: SegmentClass) -> u64 {
        self.segments
            .iter()
            .filter(|s| s.class == class)
            .map(|s| s.duration_ns)
            .sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ChainSet {
    pub chains: Vec<Chain>,
    pub incomplete: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSegmentStats {
    pub name: String,
    pub class: SegmentClass,
    #[serde(flatten)]
    pub stats: SegmentStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub frames: usize,
    pub incomplete_chains: usize,
    pub segments: Vec<NamedSegmentStats>,
    pub messaging_total: SegmentStats,
    pub compute_total: SegmentStats,
    pub end_to_end: SegmentStats,
    pub messaging_fraction: f64,
    pub compute_fraction: f64,
}

impl LatencyBreakdown {
    pub fn from_chains(chains: &[Chain], incomplete: usize) -> LatencyBreakdown {
        let mut order: Vec<(String, SegmentClass)> = Vec::new();
        let mut samples: HashMap<String, Vec<u64>> = HashMap::new();
        for chain in chains {
            for seg in &chain.segments {
                let entry = samples.entry(seg.name.clone()).or_insert_with(|| {
                    order.push((seg.name.clone(), seg.class));
                    Vec::new()
                });
                entry.push(seg.duration_ns);
            }
        }
        let segments = order
            .into_iter()
            .map(|(name, class)| NamedSegmentStats {
                stats: SegmentStats::from_samples(&samples[&name]),
                name,
                class,
            })
            .collect();

        let messaging: Vec<u64> = chains.iter().map(|c| c.total(SegmentClass::Messaging)).collect();
        let compute: Vec<u64> = chains.iter().map(|c| c.total(SegmentClass::Compute)).collect();
        let e2e: Vec<u64> = chains.iter().map(|c| c.end_to_end_ns).collect();
        let total_messaging: u128 = messaging.iter().map(|&v| v as u128).sum();
        let total_e2e: u128 = e2e.iter().map(|&v| v as u128).sum();
        let messaging_fraction = if total_e2e == 0 {
            0.0
        } else {
            total_messaging as f64 / total_e2e as f64
        };
        LatencyBreakdown {
            frames: chains.len(),
            incomplete_chains: incomplete,
            segments,
            messaging_total: SegmentStats::from_samples(&messaging),
            compute_total: SegmentStats::from_samples(&compute),
            end_to_end: SegmentStats::from_samples(&e2e),
            messaging_fraction,
            compute_fraction: 1.0 - messaging_fraction,
        }
    }
}

/// Reconstructs every chain ending at a sink of `graph` and aggregates them.
pub fn analyze_breakdown(dump: &TraceDump, graph: &GraphSpec) -> Result<LatencyBreakdown, TraceError> {
    let set = reconstruct_chains(dump, graph);
    if set.chains.is_empty() {
        return Err(TraceError::NoCompleteChains {
            incomplete: set.incomplete,
        });
    }
    Ok(LatencyBreakdown::from_chains(&set.chains, set.incomplete))
}

type CbKey = (u32, u32, u64);

struct Index<'a> {
    events: &'a [TraceEvent],
    cb_start: HashMap<CbKey, usize>,
    take: HashMap<(u32, u32, u64, u16), usize>,
    publish: HashMap<(u32, u64, u16), usize>,
    device: HashMap<CbKey, Vec<usize>>,
}

impl<'a> Index<'a> {
    fn build(events: &'a [TraceEvent]) -> Index<'a> {
        let mut idx = Index {
            events,
            cb_start: HashMap::new(),
            take: HashMap::new(),
            publish: HashMap::new(),
            device: HashMap::new(),
        };
        for (i, e) in events.iter().enumerate() {
            let Some(tp) = e.tracepoint() else { continue };
            let key = (e.node, e.topic, e.seq);
            match tp {
                Tp::CallbackStart => {
                    idx.cb_start.entry(key).or_insert(i);
                }
                Tp::MiddlewareTake | Tp::CoreTake | Tp::ClientTake | Tp::StreamReadEnd => {
                    idx.take.entry((e.node, e.topic, e.seq, e.tp)).or_insert(i);
                }
                Tp::ClientPublish
                | Tp::CorePublish
                | Tp::MiddlewarePublish
                | Tp::StreamWriteBegin
                | Tp::StreamWriteEnd => {
                    idx.publish.entry((e.topic, e.seq, e.tp)).or_insert(i);
                }
                _ if tp.category() == Category::Device => {
                    idx.device.entry(key).or_default().push(i);
                }
                _ => {}
            }
        }
        idx
    }

    fn take(&self, key: CbKey, tp: Tp) -> Option<usize> {
        self.take.get(&(key.0, key.1, key.2, tp.id())).copied()
    }

    fn publish(&self, topic: u32, seq: u64, tp: Tp) -> Option<usize> {
        self.publish.get(&(topic, seq, tp.id())).copied()
    }

    /// Event indices of one chain in forward order, or None if any link is
    /// missing.
    fn walk(&self, end: usize) -> Option<Vec<usize>> {
        let e = &self.events[end];
        let mut key: CbKey = (e.node, e.topic, e.seq);
        let mut cut = end;
        let mut rev = vec![end];
        // Bounded by the number of callbacks; guards against cyclic parent links.
        for _ in 0..=self.cb_start.len() {
            let start = *self.cb_start.get(&key)?;
            if let Some(dev) = self.device.get(&key) {
                // Same thread as the callback, so dump order is emission order.
                rev.extend(dev.iter().rev().filter(|&&i| i > start && i < cut));
            }
            rev.push(start);
            if is_timer_topic(key.1) {
                break;
            }
            let pub_start = if let Some(client) = self.take(key, Tp::ClientTake) {
                rev.push(client);
                rev.push(self.take(key, Tp::CoreTake)?);
                rev.push(self.take(key, Tp::MiddlewareTake)?);
                rev.push(self.publish(key.1, key.2, Tp::MiddlewarePublish)?);
                rev.push(self.publish(key.1, key.2, Tp::CorePublish)?);
                let p = self.publish(key.1, key.2, Tp::ClientPublish)?;
                rev.push(p);
                p
            } else {
                rev.push(self.take(key, Tp::StreamReadEnd)?);
                rev.push(self.publish(key.1, key.2, Tp::StreamWriteEnd)?);
                let p = self.publish(key.1, key.2, Tp::StreamWriteBegin)?;
                rev.push(p);
                p
            };
            let pe = &self.events[pub_start];
            match decode_parent(pe.arg) {
                None => break,
                Some((topic, _)) if is_timer_topic(topic) => break,
                Some((topic, seq)) => {
                    key = (pe.node, topic, seq);
                    cut = pub_start;
                }
            }
        }
        rev.reverse();
        Some(rev)
    }
}

/// Rebuilds every chain that ends at a sink callback of `graph`.
pub fn reconstruct_chains(dump: &TraceDump, graph: &GraphSpec) -> ChainSet {
    let sinks: Vec<u32> = graph.sink_nodes().iter().map(|n| n.0).collect();
    let names = Names::new(dump, graph);
    let index = Index::build(&dump.events);
    let mut set = ChainSet::default();
    for (i, e) in dump.events.iter().enumerate() {
        if e.tp != Tp::CallbackEnd.id() || !sinks.contains(&e.node) {
            continue;
        }
        match index.walk(i).and_then(|chain| build_chain(&dump.events, &chain, &names)) {
            Some(chain) => set.chains.push(chain),
            None => set.incomplete += 1,
        }
    }
    set.chains.sort_by_key(|c| (c.sink, c.seq));
    set
}

struct Names {
    nodes: HashMap<u32, String>,
    topics: HashMap<u32, String>,
}

impl Names {
    fn new(dump: &TraceDump, graph: &GraphSpec) -> Names {
        let mut nodes: HashMap<u32, String> =
            dump.nodes.iter().map(|(k, v)| (*k, v.clone())).collect();
        let mut topics: HashMap<u32, String> =
            dump.topics.iter().map(|(k, v)| (*k, v.clone())).collect();
        for n in &graph.nodes {
            nodes.insert(n.id.0, n.name.clone());
        }
        for (i, t) in graph.topics().iter().enumerate() {
            topics.insert(i as u32, t.as_str().to_string());
        }
        Names { nodes, topics }
    }

    fn site(&self, e: &TraceEvent) -> String {
        let tp = e.tracepoint().expect("indexed events have known tracepoints");
        match tp.category() {
            Category::PublishPath | Category::TakePath | Category::Queue => self
                .topics
                .get(&e.topic)
                .cloned()
                .unwrap_or_else(|| format!("topic{}", e.topic)),
            Category::Callback | Category::Device => self
                .nodes
                .get(&e.node)
                .cloned()
                .unwrap_or_else(|| format!("node{}", e.node)),
        }
    }
}

fn build_chain(events: &[TraceEvent], idx: &[usize], names: &Names) -> Option<Chain> {
    let first = &events[idx[0]];
    let last = &events[*idx.last()?];
    let mut segments = Vec::with_capacity(idx.len().saturating_sub(1));
    let mut inside_callback = false;
    for w in idx.windows(2) {
        let (a, b) = (&events[w[0]], &events[w[1]]);
        if b.ts < a.ts {
            return None;
        }
        let (ta, tb) = (a.tracepoint()?, b.tracepoint()?);
        match ta {
            Tp::CallbackStart => inside_callback = true,
            Tp::ClientPublish | Tp::StreamWriteBegin | Tp::CallbackEnd => inside_callback = false,
            _ => {}
        }
        let transfer = matches!(ta, Tp::H2dBegin | Tp::D2hBegin);
        let class = if inside_callback && !transfer {
            SegmentClass::Compute
        } else {
            SegmentClass::Messaging
        };
        segments.push(ChainSegment {
            name: format!("{}:{}->{}", names.site(a), ta.name(), tb.name()),
            class,
            duration_ns: b.ts - a.ts,
        });
    }
    Some(Chain {
        sink: last.node,
        seq: last.seq,
        start_ts: first.ts,
        end_to_end_ns: last.ts - first.ts,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ChannelKind, Edge, GraphSpec, NodeDescriptor, NodeId, Placement, TopicName};

    fn ev(tp: Tp, ts: u64, node: u32, topic: u32, seq: u64, arg: u64) -> TraceEvent {
        TraceEvent {
            ts,
            seq,
            arg,
            thread: 1,
            node,
            topic,
            tp: tp.id(),
        }
    }

    /// Publisher node 0 -> topic 0 -> sink node 1.
    fn two_node_graph() -> GraphSpec {
        let topic = TopicName::new("/t").unwrap();
        GraphSpec {
            nodes: vec![
                NodeDescriptor::new(0, "pub", Placement::Host).publishes(&topic),
                NodeDescriptor::new(1, "sink", Placement::Host).subscribes(&topic),
            ],
            edges: vec![Edge {
                publisher: NodeId(0),
                topic: topic.clone(),
                subscriber: NodeId(1),
                kind: ChannelKind::LayeredHost,
            }],
            executor_workers: 1,
        }
    }

    fn single_hop(ts: [u64; 8], seq: u64) -> Vec<TraceEvent> {
        let tps = [
            Tp::ClientPublish,
            Tp::CorePublish,
            Tp::MiddlewarePublish,
            Tp::MiddlewareTake,
            Tp::CoreTake,
            Tp::ClientTake,
            Tp::CallbackStart,
            Tp::CallbackEnd,
        ];
        tps.iter()
            .zip(ts)
            .enumerate()
            .map(|(i, (&tp, t))| ev(tp, t, if i < 3 { 0 } else { 1 }, 0, seq, 0))
            .collect()
    }

    #[test]
    fn hand_built_chain_partitions_exactly() {
        let dump = TraceDump::from_events(single_hop([0, 10, 20, 30, 40, 50, 60, 100], 0));
        let set = reconstruct_chains(&dump, &two_node_graph());
        assert_eq!(set.incomplete, 0);
        let chain = &set.chains[0];
        let durations: Vec<u64> = chain.segments.iter().map(|s| s.duration_ns).collect();
        assert_eq!(durations, vec![10, 10, 10, 10, 10, 10, 40]);
        assert_eq!(chain.end_to_end_ns, 100);
        assert_eq!(durations.iter().sum::<u64>(), chain.end_to_end_ns);
        let b = analyze_breakdown(&dump, &two_node_graph()).unwrap();
        assert_eq!(b.messaging_fraction, 0.6);
    }

    #[test]
    fn callback_of_27_in_100_gives_073() {
        let dump = TraceDump::from_events(single_hop([0, 10, 20, 40, 50, 60, 73, 100], 0));
        let b = analyze_breakdown(&dump, &two_node_graph()).unwrap();
        assert!((b.messaging_fraction - 0.73).abs() < 1e-12);
        assert_eq!(b.messaging_fraction + b.compute_fraction, 1.0);
    }

    #[test]
    fn callback_only_chain_is_all_compute() {
        let events = vec![
            ev(Tp::CallbackStart, 5, 1, TIMER_TOPIC, 0, 0),
            ev(Tp::CallbackEnd, 25, 1, TIMER_TOPIC, 0, 0),
        ];
        let b = analyze_breakdown(&TraceDump::from_events(events), &two_node_graph()).unwrap();
        assert_eq!(b.messaging_fraction, 0.0);
        assert_eq!(b.compute_fraction, 1.0);
        assert_eq!(b.end_to_end.max_ns, 20);
    }

    #[test]
    fn truncated_chain_is_excluded_and_counted() {
        let mut events = single_hop([0, 10, 20, 30, 40, 50, 60, 100], 0);
        events.extend(single_hop([200, 210, 220, 230, 240, 250, 260, 300], 1));
        // Drop the first message's client_publish, as if the ring overflowed.
        events.remove(0);
        let set = reconstruct_chains(&TraceDump::from_events(events), &two_node_graph());
        assert_eq!(set.chains.len(), 1);
        assert_eq!(set.chains[0].seq, 1);
        assert_eq!(set.incomplete, 1);
    }

    #[test]
    fn zero_complete_chains_is_an_error() {
        let err = analyze_breakdown(&TraceDump::default(), &two_node_graph()).unwrap_err();
        assert!(matches!(err, TraceError::NoCompleteChains { .. }));
    }

    #[test]
    fn device_events_split_callback_into_transfer_and_compute() {
        let mut events = single_hop([0, 1, 2, 3, 4, 5, 10, 100], 7);
        events.extend([
            ev(Tp::H2dBegin, 12, 1, 0, 7, 0),
            ev(Tp::H2dEnd, 30, 1, 0, 7, 0),
            ev(Tp::KernelBegin, 30, 1, 0, 7, 0),
            ev(Tp::KernelEnd, 60, 1, 0, 7, 0),
            ev(Tp::D2hBegin, 60, 1, 0, 7, 0),
            ev(Tp::D2hEnd, 90, 1, 0, 7, 0),
        ]);
        let set = reconstruct_chains(&TraceDump::from_events(events), &two_node_graph());
        let chain = &set.chains[0];
        assert_eq!(chain.end_to_end_ns, 100);
        // layers 10, callback prep 2, h2d 18, kernel 30, d2h 30, tail 10
        assert_eq!(chain.total(SegmentClass::Messaging), 10 + 18 + 30);
        assert_eq!(chain.total(SegmentClass::Compute), 2 + 0 + 30 + 0 + 10);
    }

    #[test]
    fn parent_encoding_round_trips() {
        assert_eq!(decode_parent(0), None);
        assert_eq!(decode_parent(encode_parent(3, 99)), Some((3, 99)));
        assert_eq!(
            decode_parent(encode_parent(TIMER_TOPIC, 5)),
            Some((TIMER_TOPIC, 5))
        );
        let t = crate::tracer::timer_topic(7);
        assert_eq!(decode_parent(encode_parent(t, 1 << 39)), Some((t, 1 << 39)));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let s = SegmentStats::from_samples(&[5, 1, 4, 2, 3]);
        assert_eq!(s.p50_ns, 3);
        assert_eq!(s.p95_ns, 5);
        assert_eq!(s.max_ns, 5);
        assert_eq!(s.mean_ns, 3.0);
    }
}
