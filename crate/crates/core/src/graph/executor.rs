use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use bytes::Bytes;

use super::{GraphError, GraphSpec, Message, NodeId, Payload, Placement, TopicName};
use crate::clock::{with_scope, CallbackScope, SharedClock};
use crate::device::{Device, DeviceBuffer, DeviceId, StreamQueue, StreamTag};
use crate::tracer::{encode_parent, timer_topic, Tp, Tracer, MAX_TIMERS};

pub type NodeError = Box<dyn std::error::Error + Send + Sync>;
pub type Devices = BTreeMap<DeviceId, Arc<Device>>;

type MsgFn = Box<dyn FnMut(&CallbackCtx<'_>, Message) -> Result<(), NodeError> + Send>;
type TimerFn = Box<dyn FnMut(&CallbackCtx<'_>, TimerTick) -> Result<(), NodeError> + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubscriptionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimerId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimerTick {
    /// Zero-based firing count.
    pub index: u64,
    /// Nominal firing time, ns since the spin started.
    pub scheduled_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// Timers stop firing at this offset; the run ends once in-flight work drains.
    Duration(Duration),
    /// Ends as soon as `node` has handled exactly `count` messages.
    Messages { node: NodeId, count: u64 },
    /// Ends when no work is pending and no timer can fire again.
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphOptions {
    /// Per-subscription queue depth on layered channels.
    pub queue_depth: usize,
    /// Skip the per-layer payload copy (the fixed layer cost still applies).
    pub zero_copy: bool,
    pub layer_fixed_ns: u64,
    pub layer_per_byte_ns: f64,
    pub stream_capacity_beats: usize,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            queue_depth: 8,
            zero_copy: false,
            layer_fixed_ns: 0,
            layer_per_byte_ns: 0.0,
            stream_capacity_beats: 8192,
        }
    }
}

impl GraphOptions {
    pub fn layer_ns(&self, len: usize) -> u64 {
        if self.zero_copy {
            self.layer_fixed_ns
        } else {
            self.layer_fixed_ns + (self.layer_per_byte_ns * len as f64).round() as u64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    /// Messages handled per node.
    pub processed: BTreeMap<NodeId, u64>,
    pub timer_fires: BTreeMap<NodeId, u64>,
    pub wall_ns: u64,
    /// Always 0: publishers block instead of dropping.
    pub dropped: u64,
    /// Publishes discarded because the run was already stopping.
    pub undelivered: u64,
}

struct EdgeRt {
    topic: u32,
    stream: Option<(Arc<Device>, Arc<StreamQueue>)>,
}

struct TimerRt {
    node: usize,
    topic: u32,
    period_ns: u64,
    phase_ns: u64,
    limit: Option<u64>,
    handler: Arc<Mutex<TimerFn>>,
}

impl TimerRt {
    fn due(&self, k: u64) -> u64 {
        self.phase_ns + k * self.period_ns
    }
}

struct Delivery {
    msg: Message,
    ready_ts: u64,
    order: u64,
}

/// Sideband for a frame in flight on a stream edge.
struct FrameMeta {
    seq: u64,
    origin_ts: u64,
    publish_ts: u64,
    source: NodeId,
    start_ts: u64,
    commit: Mutex<Option<u64>>,
    committed: Condvar,
}

impl FrameMeta {
    fn commit(&self, ts: u64) {
        *self.commit.lock().unwrap() = Some(ts);
        self.committed.notify_all();
    }

    fn wait_commit(&self) -> u64 {
        let c = self
            .committed
            .wait_while(self.commit.lock().unwrap(), |c| c.is_none())
            .unwrap();
        c.expect("committed")
    }
}

struct PendingRead {
    meta: Arc<FrameMeta>,
    order: u64,
}

enum Work {
    Timer { timer: usize, index: u64, due: u64 },
    Deliver { edge: usize, delivery: Delivery },
    Read { edge: usize, read: PendingRead },
}

struct Sched {
    spinning: bool,
    stop: bool,
    error: Option<GraphError>,
    rule: Stop,
    start_ns: u64,
    busy: Vec<bool>,
    queues: Vec<VecDeque<Delivery>>,
    reads: Vec<VecDeque<PendingRead>>,
    timers: Vec<TimerRt>,
    timer_next: Vec<u64>,
    handlers: HashMap<(usize, u32), Arc<Mutex<MsgFn>>>,
    order: u64,
    running: usize,
    processed: Vec<u64>,
    fires: Vec<u64>,
    undelivered: u64,
    /// Model time at which each node's last callback ended.
    free_at: Vec<u64>,
}

struct Inner {
    spec: GraphSpec,
    topics: Vec<TopicName>,
    topic_ids: HashMap<TopicName, u32>,
    node_ids: Vec<NodeId>,
    node_index: HashMap<NodeId, usize>,
    publications: Vec<Vec<u32>>,
    devices_of: Vec<Option<Arc<Device>>>,
    subs_of: Vec<Vec<usize>>,
    routes: HashMap<(usize, u32), Vec<usize>>,
    edges: Vec<EdgeRt>,
    tracer: Tracer,
    clock: SharedClock,
    devices: Devices,
    opts: GraphOptions,
    seqs: Mutex<HashMap<(usize, u32), u64>>,
    sched: Mutex<Sched>,
    cv: Condvar,
}

/// A constructed graph. Cheap to clone; clones share the runtime.
#[derive(Clone)]
pub struct Graph {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.inner.node_ids)
            .field("topics", &self.inner.topics)
            .finish()
    }
}

/// Handed to every callback: identifies the node and lets it publish.
pub struct CallbackCtx<'a> {
    inner: &'a Inner,
    node: usize,
    scope: CallbackScope,
}

impl CallbackCtx<'_> {
    pub fn node(&self) -> NodeId {
        self.inner.node_ids[self.node]
    }

    pub fn scope(&self) -> CallbackScope {
        self.scope
    }

    pub fn clock(&self) -> &SharedClock {
        &self.inner.clock
    }

    pub fn tracer(&self) -> &Tracer {
        &self.inner.tracer
    }

    /// The device this node is placed on, if any.
    pub fn device(&self) -> Option<&Arc<Device>> {
        self.inner.devices_of[self.node].as_ref()
    }

    pub fn publish(&self, topic: &TopicName, payload: impl Into<Payload>) -> Result<(), GraphError> {
        let t = self.inner.topic(topic)?;
        self.inner.publish(self.node, t, payload.into(), Some(self.scope))
    }
}

impl Graph {
    pub fn create(spec: GraphSpec, tracer: Tracer, devices: Devices, opts: GraphOptions) -> Result<Graph, GraphError> {
        spec.validate(|d| devices.contains_key(&d))?;
        if opts.queue_depth == 0 {
            return Err(GraphError::InvalidSpec("queue depth must be >= 1".into()));
        }
        let topics = spec.topics();
        let topic_ids: HashMap<TopicName, u32> =
            topics.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut nodes: Vec<_> = spec.nodes.iter().collect();
        nodes.sort_by_key(|n| n.id);
        let node_ids: Vec<NodeId> = nodes.iter().map(|n| n.id).collect();
        let node_index: HashMap<NodeId, usize> =
            node_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let publications = nodes
            .iter()
            .map(|n| n.publications.iter().map(|t| topic_ids[t]).collect())
            .collect();
        let devices_of = nodes
            .iter()
            .map(|n| match n.placement {
                Placement::Host => None,
                Placement::Device(d) => Some(devices[&d].clone()),
            })
            .collect::<Vec<_>>();

        let mut edges = Vec::new();
        let mut subs_of = vec![Vec::new(); nodes.len()];
        let mut routes: HashMap<(usize, u32), Vec<usize>> = HashMap::new();
        for e in &spec.edges {
            let p = node_index[&e.publisher];
            let s = node_index[&e.subscriber];
            let topic = topic_ids[&e.topic];
            let stream = match e.kind {
                super::ChannelKind::LayeredHost => None,
                super::ChannelKind::DeviceStream(_) => {
                    let dev = devices_of[p].clone().expect("validated placement");
                    let q = dev.create_stream_queue(opts.stream_capacity_beats)?;
                    Some((dev, q))
                }
            };
            let idx = edges.len();
            edges.push(EdgeRt {
                topic,
                stream,
            });
            subs_of[s].push(idx);
            routes.entry((p, topic)).or_default().push(idx);
        }

        tracer.register_names(
            nodes.iter().map(|n| (n.id.0, n.name.clone())),
            topics.iter().enumerate().map(|(i, t)| (i as u32, t.to_string())),
        );

        let sched = Sched {
            spinning: false,
            stop: false,
            error: None,
            rule: Stop::Idle,
            start_ns: 0,
            busy: vec![false; nodes.len()],
            queues: (0..edges.len()).map(|_| VecDeque::new()).collect(),
            reads: (0..edges.len()).map(|_| VecDeque::new()).collect(),
            timers: Vec::new(),
            timer_next: Vec::new(),
            handlers: HashMap::new(),
            order: 0,
            running: 0,
            processed: vec![0; nodes.len()],
            fires: vec![0; nodes.len()],
            undelivered: 0,
            free_at: vec![0; nodes.len()],
        };
        let clock = tracer.clock().clone();
        Ok(Graph {
            inner: Arc::new(Inner {
                spec,
                topics,
                topic_ids,
                node_ids,
                node_index,
                publications,
                devices_of,
                subs_of,
                routes,
                edges,
                tracer,
                clock,
                devices,
                opts,
                seqs: Mutex::new(HashMap::new()),
                sched: Mutex::new(sched),
                cv: Condvar::new(),
            }),
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.inner.spec
    }

    pub fn tracer(&self) -> &Tracer {
        &self.inner.tracer
    }

    pub fn devices(&self) -> &Devices {
        &self.inner.devices
    }

    pub fn options(&self) -> &GraphOptions {
        &self.inner.opts
    }

    pub fn topic_id(&self, topic: &TopicName) -> Option<u32> {
        self.inner.topic_ids.get(topic).copied()
    }

    pub fn node_count(&self) -> usize {
        self.inner.node_ids.len()
    }

    pub fn subscribe<F>(&self, node: NodeId, topic: &TopicName, callback: F) -> Result<SubscriptionId, GraphError>
    where
        F: FnMut(&CallbackCtx<'_>, Message) -> Result<(), NodeError> + Send + 'static,
    {
        let n = self.inner.index(node)?;
        let t = self.inner.topic(topic)?;
        let mut g = self.inner.sched.lock().unwrap();
        if g.spinning {
            return Err(GraphError::AlreadySpinning);
        }
        let id = SubscriptionId(g.handlers.len());
        g.handlers.insert((n, t), Arc::new(Mutex::new(Box::new(callback))));
        Ok(id)
    }

    /// Fires `callback` at `phase + k * period` for k = 0, 1, ... (at most
    /// `limit` times). In model mode timers are never late: each firing
    /// starts at exactly its nominal time.
    pub fn add_timer<F>(
        &self,
        node: NodeId,
        period: Duration,
        phase: Duration,
        limit: Option<u64>,
        callback: F,
    ) -> Result<TimerId, GraphError>
    where
        F: FnMut(&CallbackCtx<'_>, TimerTick) -> Result<(), NodeError> + Send + 'static,
    {
        let n = self.inner.index(node)?;
        if period.is_zero() {
            return Err(GraphError::InvalidSpec("timer period must be positive".into()));
        }
        let mut g = self.inner.sched.lock().unwrap();
        if g.spinning {
            return Err(GraphError::AlreadySpinning);
        }
        let local = g.timers.iter().filter(|t| t.node == n).count() as u32;
        if local >= MAX_TIMERS {
            return Err(GraphError::InvalidSpec("too many timers on one node".into()));
        }
        g.timers.push(TimerRt {
            node: n,
            topic: timer_topic(local),
            period_ns: period.as_nanos() as u64,
            phase_ns: phase.as_nanos() as u64,
            limit,
            handler: Arc::new(Mutex::new(Box::new(callback))),
        });
        g.timer_next.push(0);
        Ok(TimerId(g.timers.len() - 1))
    }

    /// Publishes from outside any callback. Blocks on a full queue while the
    /// graph spins; fails with `QueueFull` otherwise.
    pub fn publish(&self, node: NodeId, topic: &TopicName, payload: impl Into<Payload>) -> Result<(), GraphError> {
        let n = self.inner.index(node)?;
        let t = self.inner.topic(topic)?;
        self.inner.publish(n, t, payload.into(), None)
    }

    pub fn spin(&self, stop: Stop) -> Result<RunStats, GraphError> {
        let inner = &*self.inner;
        {
            let mut g = inner.sched.lock().unwrap();
            if g.spinning {
                return Err(GraphError::AlreadySpinning);
            }
            if let Stop::Messages { node, .. } = stop {
                inner.index(node)?;
            }
            g.spinning = true;
            g.stop = false;
            g.error = None;
            g.rule = stop;
            g.start_ns = if inner.clock.is_model() { 0 } else { inner.clock.now() };
            g.processed.iter_mut().for_each(|c| *c = 0);
            g.fires.iter_mut().for_each(|c| *c = 0);
            g.timer_next.iter_mut().for_each(|k| *k = 0);
            g.free_at.iter_mut().for_each(|t| *t = 0);
            g.undelivered = 0;
        }
        let wall = Instant::now();
        if !inner.node_ids.is_empty() {
            std::thread::scope(|s| {
                for _ in 0..inner.spec.executor_workers {
                    s.spawn(|| inner.worker());
                }
            });
        }
        let mut g = inner.sched.lock().unwrap();
        g.spinning = false;
        if let Some(e) = g.error.take() {
            return Err(e);
        }
        Ok(RunStats {
            processed: inner.node_ids.iter().copied().zip(g.processed.iter().copied()).collect(),
            timer_fires: inner.node_ids.iter().copied().zip(g.fires.iter().copied()).collect(),
            wall_ns: wall.elapsed().as_nanos() as u64,
            dropped: 0,
            undelivered: g.undelivered,
        })
    }
}

impl Sched {
    fn timer_eligible(&self, t: usize) -> Option<u64> {
        let timer = &self.timers[t];
        let k = self.timer_next[t];
        if timer.limit.is_some_and(|l| k >= l) {
            return None;
        }
        let due = timer.due(k);
        if let Stop::Duration(d) = self.rule {
            if due >= d.as_nanos() as u64 {
                return None;
            }
        }
        Some(due)
    }

    fn timers_exhausted(&self) -> bool {
        (0..self.timers.len()).all(|t| self.timer_eligible(t).is_none())
    }

    fn idle(&self) -> bool {
        self.running == 0
            && self.queues.iter().all(VecDeque::is_empty)
            && self.reads.iter().all(VecDeque::is_empty)
    }

    fn reads_pending(&self) -> bool {
        self.reads.iter().any(|r| !r.is_empty())
    }

    /// Next piece of work: lowest node id first, then timers by due time,
    /// then messages by enqueue order. `now` is None in model mode, where
    /// timers are always due.
    fn pick(&mut self, inner: &Inner, now: Option<u64>) -> Option<(usize, Work)> {
        for n in 0..self.busy.len() {
            if self.busy[n] {
                continue;
            }
            if !self.stop {
                let timer = (0..self.timers.len())
                    .filter(|&t| self.timers[t].node == n)
                    .filter_map(|t| self.timer_eligible(t).map(|due| (due, t)))
                    .filter(|(due, _)| now.map_or(true, |now| *due <= now))
                    .min();
                if let Some((due, t)) = timer {
                    let index = self.timer_next[t];
                    self.timer_next[t] += 1;
                    return Some((n, Work::Timer { timer: t, index, due }));
                }
            }
            let mut best: Option<(u64, usize, bool)> = None;
            for &e in &inner.subs_of[n] {
                let front = if inner.edges[e].stream.is_some() {
                    self.reads[e].front().map(|r| (r.order, e, true))
                } else if !self.stop {
                    self.queues[e].front().map(|d| (d.order, e, false))
                } else {
                    None
                };
                if let Some(f) = front {
                    if best.map_or(true, |b| f.0 < b.0) {
                        best = Some(f);
                    }
                }
            }
            match best {
                Some((_, e, true)) => {
                    let read = self.reads[e].pop_front().expect("front");
                    return Some((n, Work::Read { edge: e, read }));
                }
                Some((_, e, false)) => {
                    let delivery = self.queues[e].pop_front().expect("front");
                    return Some((n, Work::Deliver { edge: e, delivery }));
                }
                None => {}
            }
        }
        None
    }

    /// Earliest wall-clock offset at which a timer becomes due.
    fn next_due(&self) -> Option<u64> {
        (0..self.timers.len()).filter_map(|t| self.timer_eligible(t)).min()
    }
}

impl Inner {
    fn index(&self, node: NodeId) -> Result<usize, GraphError> {
        self.node_index.get(&node).copied().ok_or(GraphError::UnknownNode(node))
    }

    fn topic(&self, topic: &TopicName) -> Result<u32, GraphError> {
        self.topic_ids
            .get(topic)
            .copied()
            .ok_or_else(|| GraphError::UnknownTopic(topic.to_string()))
    }

    fn now_rel(&self, g: &Sched) -> Option<u64> {
        if self.clock.is_model() {
            None
        } else {
            Some(self.clock.now().saturating_sub(g.start_ns))
        }
    }

    fn worker(&self) {
        let mut g = self.sched.lock().unwrap();
        loop {
            let now = self.now_rel(&g);
            if let Some((n, work)) = g.pick(self, now) {
                g.busy[n] = true;
                g.running += 1;
                let is_timer = matches!(work, Work::Timer { .. });
                let handler = match &work {
                    Work::Timer { timer, .. } => Handler::Timer(g.timers[*timer].handler.clone(), g.timers[*timer].topic),
                    Work::Deliver { edge, .. } | Work::Read { edge, .. } => {
                        Handler::Msg(g.handlers.get(&(n, self.edges[*edge].topic)).cloned())
                    }
                };
                let free_at = g.free_at[n];
                drop(g);
                let result = self.run(n, work, handler, free_at);
                g = self.sched.lock().unwrap();
                g.free_at[n] = self.clock.now();
                g.busy[n] = false;
                g.running -= 1;
                if is_timer {
                    g.fires[n] += 1;
                } else {
                    g.processed[n] += 1;
                }
                if let Err(e) = result {
                    g.error.get_or_insert(e);
                    g.stop = true;
                }
                if let Stop::Messages { node, count } = g.rule {
                    if self.node_index[&node] == n && g.processed[n] >= count {
                        g.stop = true;
                    }
                }
                self.cv.notify_all();
                continue;
            }
            if g.stop {
                if !g.reads_pending() {
                    self.cv.notify_all();
                    return;
                }
                g = self.cv.wait(g).unwrap();
                continue;
            }
            if g.idle() && g.timers_exhausted() {
                let reached = match g.rule {
                    Stop::Duration(d) => now.map_or(true, |now| now >= d.as_nanos() as u64),
                    Stop::Messages { .. } | Stop::Idle => true,
                };
                if reached {
                    g.stop = true;
                    self.cv.notify_all();
                    continue;
                }
            }
            let wake = match (now, g.rule) {
                (None, _) => None,
                (Some(now), rule) => {
                    let timer = g.next_due();
                    let deadline = match rule {
                        Stop::Duration(d) => Some(d.as_nanos() as u64),
                        _ => None,
                    };
                    [timer, deadline].into_iter().flatten().min().map(|t| t.saturating_sub(now))
                }
            };
            g = match wake {
                Some(ns) => self.cv.wait_timeout(g, Duration::from_nanos(ns.max(1))).unwrap().0,
                None => self.cv.wait(g).unwrap(),
            };
        }
    }

    /// Runs one piece of work. In model mode the callback starts when both
    /// its input is ready and the node finished its previous callback.
    fn run(&self, n: usize, work: Work, handler: Handler, free_at: u64) -> Result<(), GraphError> {
        let id = self.node_ids[n];
        let fail = |e: NodeError| GraphError::Callback {
            node: id,
            message: e.to_string(),
        };
        match (work, handler) {
            (Work::Timer { index, due, .. }, Handler::Timer(h, topic)) => {
                self.clock.set_cursor(due.max(free_at));
                let scope = CallbackScope {
                    node: id.0,
                    topic,
                    seq: index,
                    origin_ts: self.clock.now(),
                };
                with_scope(scope, || {
                    let ctx = CallbackCtx { inner: self, node: n, scope };
                    self.tracer.emit(Tp::CallbackStart, id.0, topic, index, 0);
                    let r = (h.lock().unwrap())(
                        &ctx,
                        TimerTick {
                            index,
                            scheduled_ns: due,
                        },
                    );
                    self.tracer.emit(Tp::CallbackEnd, id.0, topic, index, 0);
                    r.map_err(fail)
                })
            }
            (Work::Deliver { delivery, .. }, Handler::Msg(h)) => {
                let Delivery { mut msg, ready_ts, .. } = delivery;
                self.clock.set_cursor(ready_ts.max(free_at));
                let scope = CallbackScope {
                    node: id.0,
                    topic: msg.topic_id,
                    seq: msg.seq,
                    origin_ts: msg.origin_ts,
                };
                with_scope(scope, || {
                    let (t, s) = (msg.topic_id, msg.seq);
                    let Payload::Host(data) = msg.payload else {
                        unreachable!("layered channels carry host payloads")
                    };
                    let len = data.len() as u64;
                    self.tracer.emit(Tp::MiddlewareTake, id.0, t, s, len);
                    let data = self.layer(data);
                    self.tracer.emit(Tp::CoreTake, id.0, t, s, len);
                    let data = self.layer(data);
                    self.tracer.emit(Tp::ClientTake, id.0, t, s, len);
                    let data = self.layer(data);
                    msg.payload = Payload::Host(data);
                    self.invoke(n, scope, h, msg).map_err(fail)
                })
            }
            (Work::Read { edge, read }, Handler::Msg(h)) => {
                let meta = read.meta;
                let e = &self.edges[edge];
                let (dev, q) = e.stream.as_ref().expect("stream edge");
                self.clock.set_cursor(meta.start_ts.max(free_at));
                let scope = CallbackScope {
                    node: id.0,
                    topic: e.topic,
                    seq: meta.seq,
                    origin_ts: meta.origin_ts,
                };
                with_scope(scope, || {
                    let tag = StreamTag {
                        node: id.0,
                        topic: e.topic,
                        seq: meta.seq,
                        parent: 0,
                    };
                    let buf = dev.stream_read(q, tag, || meta.wait_commit())?;
                    let msg = Message {
                        topic: self.topics[e.topic as usize].clone(),
                        topic_id: e.topic,
                        seq: meta.seq,
                        publish_ts: meta.publish_ts,
                        origin_ts: meta.origin_ts,
                        source: meta.source,
                        payload: Payload::Device(buf),
                    };
                    self.invoke(n, scope, h, msg).map_err(fail)
                })
            }
            _ => unreachable!("handler kind follows work kind"),
        }
    }

    fn invoke(&self, n: usize, scope: CallbackScope, h: Option<Arc<Mutex<MsgFn>>>, msg: Message) -> Result<(), NodeError> {
        let ctx = CallbackCtx { inner: self, node: n, scope };
        self.tracer
            .emit(Tp::CallbackStart, scope.node, scope.topic, scope.seq, 0);
        let r = match h {
            Some(h) => (h.lock().unwrap())(&ctx, msg),
            None => Ok(()),
        };
        self.tracer
            .emit(Tp::CallbackEnd, scope.node, scope.topic, scope.seq, 0);
        r
    }

    /// One layer crossing: a defensive copy charged at the layer cost.
    fn layer(&self, data: Bytes) -> Bytes {
        let cost = self.opts.layer_ns(data.len());
        if self.opts.zero_copy {
            self.clock.charge(cost, || data)
        } else {
            self.clock.charge(cost, || Bytes::copy_from_slice(&data))
        }
    }

    fn next_seq(&self, n: usize, topic: u32, parent: Option<u64>) -> u64 {
        let mut seqs = self.seqs.lock().unwrap();
        let last = seqs.get(&(n, topic)).copied();
        let seq = match (last, parent) {
            (None, Some(p)) => p,
            (None, None) => 0,
            (Some(l), Some(p)) if p > l => p,
            (Some(l), _) => l + 1,
        };
        seqs.insert((n, topic), seq);
        seq
    }

    fn publish(&self, n: usize, topic: u32, payload: Payload, scope: Option<CallbackScope>) -> Result<(), GraphError> {
        let id = self.node_ids[n];
        let name = &self.topics[topic as usize];
        if !self.publications[n].contains(&topic) {
            return Err(GraphError::NotPublisher {
                node: id,
                topic: name.to_string(),
            });
        }
        let edges: &[usize] = self.routes.get(&(n, topic)).map_or(&[], Vec::as_slice);
        let (streams, layered): (Vec<usize>, Vec<usize>) =
            edges.iter().partition(|&&e| self.edges[e].stream.is_some());
        match (&payload, streams.is_empty(), layered.is_empty()) {
            (Payload::Host(_), false, _) => {
                return Err(GraphError::PayloadResidency {
                    topic: name.to_string(),
                    expected: "device",
                })
            }
            (Payload::Device(_), _, false) => {
                return Err(GraphError::PayloadResidency {
                    topic: name.to_string(),
                    expected: "host",
                })
            }
            _ => {}
        }
        let seq = self.next_seq(n, topic, scope.map(|s| s.seq));
        let parent = scope.map_or(0, |s| encode_parent(s.topic, s.seq));
        match payload {
            Payload::Host(data) => {
                let len = data.len() as u64;
                self.tracer.emit(Tp::ClientPublish, id.0, topic, seq, parent);
                let publish_ts = self.clock.now();
                let origin_ts = scope.map_or(publish_ts, |s| s.origin_ts);
                let data = self.layer(data);
                self.tracer.emit(Tp::CorePublish, id.0, topic, seq, len);
                let data = self.layer(data);
                self.tracer.emit(Tp::MiddlewarePublish, id.0, topic, seq, len);
                let data = self.layer(data);
                let ready_ts = self.clock.now();
                let msg = Message {
                    topic: name.clone(),
                    topic_id: topic,
                    seq,
                    publish_ts,
                    origin_ts,
                    source: id,
                    payload: Payload::Host(data),
                };
                for e in layered {
                    self.enqueue(e, msg.clone(), ready_ts)?;
                }
                Ok(())
            }
            Payload::Device(buf) => {
                for e in streams {
                    self.stream_publish(e, n, seq, parent, scope, &buf)?;
                }
                Ok(())
            }
        }
    }

    fn enqueue(&self, e: usize, msg: Message, ready_ts: u64) -> Result<(), GraphError> {
        let mut g = self.sched.lock().unwrap();
        loop {
            if g.spinning && g.stop {
                g.undelivered += 1;
                return Ok(());
            }
            if g.queues[e].len() < self.opts.queue_depth {
                let order = next_order(&mut g);
                g.queues[e].push_back(Delivery { msg, ready_ts, order });
                self.cv.notify_all();
                return Ok(());
            }
            if !g.spinning {
                return Err(GraphError::QueueFull {
                    topic: msg.topic.to_string(),
                });
            }
            g = self.cv.wait(g).unwrap();
        }
    }

    fn stream_publish(
        &self,
        e: usize,
        n: usize,
        seq: u64,
        parent: u64,
        scope: Option<CallbackScope>,
        buf: &DeviceBuffer,
    ) -> Result<(), GraphError> {
        let edge = &self.edges[e];
        let (dev, q) = edge.stream.as_ref().expect("stream edge");
        if buf.device() != dev.id() {
            return Err(crate::device::DeviceError::WrongDevice {
                buffer: buf.device().0,
                device: dev.id().0,
            }
            .into());
        }
        q.check_frame(buf.len())?;
        let now = self.clock.now();
        let meta = Arc::new(FrameMeta {
            seq,
            origin_ts: scope.map_or(now, |s| s.origin_ts),
            publish_ts: now,
            source: self.node_ids[n],
            start_ts: now,
            commit: Mutex::new(None),
            committed: Condvar::new(),
        });
        {
            let mut g = self.sched.lock().unwrap();
            if !g.spinning {
                return Err(GraphError::QueueFull {
                    topic: self.topics[edge.topic as usize].to_string(),
                });
            }
            if g.stop {
                g.undelivered += 1;
                return Ok(());
            }
            let order = next_order(&mut g);
            g.reads[e].push_back(PendingRead {
                meta: meta.clone(),
                order,
            });
            self.cv.notify_all();
        }
        let tag = StreamTag {
            node: self.node_ids[n].0,
            topic: edge.topic,
            seq,
            parent,
        };
        let done = dev.stream_write(q, buf, tag);
        // Commit even on failure so the reader is never left waiting.
        meta.commit(*done.as_ref().unwrap_or(&now));
        done?;
        Ok(())
    }
}

fn next_order(g: &mut MutexGuard<'_, Sched>) -> u64 {
    g.order += 1;
    g.order
}

enum Handler {
    Timer(Arc<Mutex<TimerFn>>, u32),
    Msg(Option<Arc<Mutex<MsgFn>>>),
}
