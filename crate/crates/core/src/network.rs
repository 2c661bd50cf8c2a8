//! The network: host registry, classical and quantum topology graphs,
//! routing, packet dispatch and entanglement swap chains.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use parking_lot::{Mutex, RwLock};

use crate::backend::{Backend, Qubit};
use crate::host::Host;
use crate::packet::{
    append_log_record, encode_packet, AckStatus, ControlRecord, IdGenerator, NetworkPacket, Payload, ProtocolTag,
    SequenceTable, TransportPacket,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkKind {
    Classical,
    Quantum,
}

impl LinkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::Classical => "classical",
            LinkKind::Quantum => "quantum",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetworkError {
    #[error("duplicate host {0}")]
    DuplicateHost(String),
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error("no {kind} route from {from} to {to}")]
    NoRoute { kind: LinkKind, from: String, to: String },
    #[error("routing function failed: {0}")]
    Routing(String),
    #[error("entanglement swap failed: {0}")]
    SwapFailed(String),
}

/// A directed graph over host ids. Iteration order is sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    adj: BTreeMap<String, BTreeSet<String>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, n: &str) {
        self.adj.entry(n.to_string()).or_default();
    }

    pub fn add_edge(&mut self, a: &str, b: &str) {
        self.add_node(b);
        self.adj.entry(a.to_string()).or_default().insert(b.to_string());
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.adj.keys().map(String::as_str)
    }

    pub fn contains(&self, n: &str) -> bool {
        self.adj.contains_key(n)
    }

    pub fn successors(&self, n: &str) -> impl Iterator<Item = &str> {
        self.adj.get(n).into_iter().flatten().map(String::as_str)
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        self.adj.get(a).is_some_and(|s| s.contains(b))
    }

    pub fn edges(&self) -> Vec<(String, String)> {
        self.adj
            .iter()
            .flat_map(|(a, bs)| bs.iter().map(move |b| (a.clone(), b.clone())))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(BTreeSet::len).sum()
    }

    /// True when `path` is non-empty and every consecutive pair is an edge.
    pub fn is_path(&self, path: &[String]) -> bool {
        !path.is_empty() && path.iter().all(|n| self.contains(n)) && path.windows(2).all(|w| self.has_edge(&w[0], &w[1]))
    }

    /// Fewest-hop path; among equally short paths the lexicographically
    /// smallest sequence of ids wins.
    pub fn shortest_path(&self, from: &str, to: &str) -> Option<Vec<String>> {
        if !self.contains(from) || !self.contains(to) {
            return None;
        }
        if from == to {
            return Some(vec![from.to_string()]);
        }
        let mut parent: HashMap<&str, &str> = HashMap::new();
        let mut seen: HashSet<&str> = HashSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            for m in self.successors(n) {
                if seen.insert(m) {
                    parent.insert(m, n);
                    if m == to {
                        let mut path = vec![to.to_string()];
                        let mut cur = to;
                        while let Some(p) = parent.get(cur) {
                            path.push(p.to_string());
                            cur = p;
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(m);
                }
            }
        }
        None
    }

    /// Minimum total weight path using `weight(a, b)` for edge `a -> b`.
    pub fn weighted_path(&self, from: &str, to: &str, weight: impl Fn(&str, &str) -> f64) -> Option<Vec<String>> {
        use petgraph::graph::DiGraph;
        let mut g: DiGraph<&str, f64> = DiGraph::new();
        let idx: BTreeMap<&str, _> = self.nodes().map(|n| (n, g.add_node(n))).collect();
        for (a, bs) in &self.adj {
            for b in bs {
                g.add_edge(idx[a.as_str()], idx[b.as_str()], weight(a, b));
            }
        }
        let (&s, &t) = (idx.get(from)?, idx.get(to)?);
        let (_, nodes) = petgraph::algo::astar(&g, s, |n| n == t, |e| *e.weight(), |_| 0.0)?;
        Some(nodes.into_iter().map(|n| g[n].to_string()).collect())
    }

    /// Graphviz rendering with sorted nodes and edges.
    pub fn to_dot(&self, name: &str) -> String {
        let mut out = format!("digraph \"{name}\" {{\n");
        for n in self.nodes() {
            let _ = writeln!(out, "  \"{n}\";");
        }
        for (a, b) in self.edges() {
            let _ = writeln!(out, "  \"{a}\" -> \"{b}\";");
        }
        out.push_str("}\n");
        out
    }
}

/// Custom routing function: `(network, graph, source, target) -> path`.
/// The returned path must start at `source`, end at `target` and follow
/// graph edges.
pub type RoutingFn = Arc<dyn Fn(&Network, &Graph, &str, &str) -> Result<Vec<String>, String> + Send + Sync>;

#[derive(Debug, Clone)]
pub struct NetworkSettings {
    pub use_hop_by_hop: bool,
    pub use_ent_swap: bool,
    /// Sleep applied each time the dispatcher dequeues a packet.
    pub delay: Duration,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self {
            use_hop_by_hop: true,
            use_ent_swap: false,
            delay: Duration::ZERO,
        }
    }
}

/// One forwarding step taken by the dispatcher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopRecord {
    pub packet_id: String,
    pub protocol: ProtocolTag,
    pub kind: LinkKind,
    pub from: String,
    pub to: String,
}

#[derive(Default)]
struct Topology {
    reserved: BTreeSet<String>,
    hosts: BTreeMap<String, Host>,
    classical: BTreeMap<String, BTreeSet<String>>,
    quantum: BTreeMap<String, BTreeSet<String>>,
}

pub(crate) struct NetworkInner {
    backend: Backend,
    ids: IdGenerator,
    sequences: SequenceTable,
    clock: Instant,
    topo: RwLock<Topology>,
    settings: RwLock<NetworkSettings>,
    classical_algo: RwLock<Option<RoutingFn>>,
    quantum_algo: RwLock<Option<RoutingFn>>,
    tx: Sender<NetworkPacket>,
    rx: Receiver<NetworkPacket>,
    wake_tx: Sender<()>,
    wake_rx: Receiver<()>,
    in_transit: AtomicUsize,
    running: AtomicBool,
    worker: Mutex<Option<JoinHandle<()>>>,
    broadcast_seen: Mutex<HashSet<(String, String)>>,
    hop_log: Mutex<Option<Vec<HopRecord>>>,
    recording: Mutex<Option<Vec<u8>>>,
    packet_counts: Mutex<BTreeMap<ProtocolTag, u64>>,
}

impl Drop for NetworkInner {
    fn drop(&mut self) {
        for h in self.topo.get_mut().hosts.values() {
            h.stop();
        }
    }
}

/// Handle to one simulated network. Clones share state.
#[derive(Clone)]
pub struct Network {
    inner: Arc<NetworkInner>,
}

impl fmt::Debug for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network")
            .field("seed", &self.inner.backend.seed())
            .field("hosts", &self.host_ids())
            .finish()
    }
}

impl Network {
    pub fn new(seed: u64) -> Self {
        let (tx, rx) = crossbeam_channel::unbounded();
        let (wake_tx, wake_rx) = crossbeam_channel::bounded(1);
        Self {
            inner: Arc::new(NetworkInner {
                backend: Backend::new(seed),
                ids: IdGenerator::new(seed),
                sequences: SequenceTable::new(),
                clock: Instant::now(),
                topo: RwLock::new(Topology::default()),
                settings: RwLock::new(NetworkSettings::default()),
                classical_algo: RwLock::new(None),
                quantum_algo: RwLock::new(None),
                tx,
                rx,
                wake_tx,
                wake_rx,
                in_transit: AtomicUsize::new(0),
                running: AtomicBool::new(false),
                worker: Mutex::new(None),
                broadcast_seen: Mutex::new(HashSet::new()),
                hop_log: Mutex::new(None),
                recording: Mutex::new(None),
                packet_counts: Mutex::new(BTreeMap::new()),
            }),
        }
    }

    pub(crate) fn from_inner(inner: Arc<NetworkInner>) -> Self {
        Self { inner }
    }

    pub fn seed(&self) -> u64 {
        self.inner.backend.seed()
    }

    pub fn backend(&self) -> &Backend {
        &self.inner.backend
    }

    pub fn new_id(&self) -> String {
        self.inner.ids.next_id()
    }

    pub fn next_sequence(&self, sender: &str, receiver: &str) -> u64 {
        self.inner.sequences.next(sender, receiver)
    }

    pub fn elapsed_secs(&self) -> f64 {
        self.inner.clock.elapsed().as_secs_f64()
    }

    // -- lifecycle ---------------------------------------------------------

    /// Reserves `names` and starts the dispatcher.
    pub fn start(&self, names: &[&str]) -> Result<(), NetworkError> {
        {
            let mut topo = self.inner.topo.write();
            let mut fresh = BTreeSet::new();
            for n in names {
                if !fresh.insert(n.to_string()) || topo.reserved.contains(*n) {
                    return Err(NetworkError::DuplicateHost(n.to_string()));
                }
            }
            topo.reserved.extend(fresh);
        }
        if !self.inner.running.swap(true, Ordering::SeqCst) {
            let weak = Arc::downgrade(&self.inner);
            let rx = self.inner.rx.clone();
            let wake = self.inner.wake_rx.clone();
            let handle = thread::Builder::new()
                .name("network".into())
                .spawn(move || dispatch_loop(weak, rx, wake))
                .expect("spawn network thread");
            *self.inner.worker.lock() = Some(handle);
        }
        Ok(())
    }

    /// Stops every host and the dispatcher and drops in-flight packets.
    pub fn stop(&self) {
        let hosts: Vec<Host> = self.inner.topo.read().hosts.values().cloned().collect();
        for h in &hosts {
            h.stop();
        }
        self.inner.running.store(false, Ordering::SeqCst);
        let _ = self.inner.wake_tx.try_send(());
        if let Some(h) = self.inner.worker.lock().take() {
            if h.thread().id() != thread::current().id() {
                let _ = h.join();
            }
        }
        while self.inner.rx.try_recv().is_ok() {}
        self.inner.in_transit.store(0, Ordering::SeqCst);
        for h in &hosts {
            h.clear_stores();
        }
    }

    pub fn is_running(&self) -> bool {
        self.inner.running.load(Ordering::SeqCst)
    }

    // -- hosts and topology ------------------------------------------------

    /// Registers `host` and snapshots its connections.
    pub fn add_host(&self, host: &Host) -> Result<(), NetworkError> {
        {
            let topo = self.inner.topo.read();
            if topo.hosts.contains_key(host.host_id()) {
                return Err(NetworkError::DuplicateHost(host.host_id().to_string()));
            }
        }
        host.attach(&self.inner, self.seed());
        let mut topo = self.inner.topo.write();
        topo.reserved.insert(host.host_id().to_string());
        topo.hosts.insert(host.host_id().to_string(), host.clone());
        snapshot(&mut topo, host);
        Ok(())
    }

    pub fn add_hosts(&self, hosts: &[&Host]) -> Result<(), NetworkError> {
        hosts.iter().try_for_each(|h| self.add_host(h))
    }

    /// Re-reads the connections of an already registered host.
    pub fn update_host(&self, host: &Host) -> Result<(), NetworkError> {
        let mut topo = self.inner.topo.write();
        if !topo.hosts.contains_key(host.host_id()) {
            return Err(NetworkError::UnknownHost(host.host_id().to_string()));
        }
        snapshot(&mut topo, host);
        Ok(())
    }

    pub fn get_host(&self, id: &str) -> Option<Host> {
        self.inner.topo.read().hosts.get(id).cloned()
    }

    pub fn host_ids(&self) -> Vec<String> {
        self.inner.topo.read().hosts.keys().cloned().collect()
    }

    /// Snapshot of the `kind` graph over registered hosts.
    pub fn graph(&self, kind: LinkKind) -> Graph {
        let topo = self.inner.topo.read();
        let edges = match kind {
            LinkKind::Classical => &topo.classical,
            LinkKind::Quantum => &topo.quantum,
        };
        let mut g = Graph::new();
        for h in topo.hosts.keys() {
            g.add_node(h);
        }
        for (a, bs) in edges {
            if !topo.hosts.contains_key(a) {
                continue;
            }
            for b in bs.iter().filter(|b| topo.hosts.contains_key(*b)) {
                g.add_edge(a, b);
            }
        }
        g
    }

    pub fn export_graph(&self, kind: LinkKind) -> String {
        self.graph(kind).to_dot(kind.as_str())
    }

    // -- settings ----------------------------------------------------------

    pub fn settings(&self) -> NetworkSettings {
        self.inner.settings.read().clone()
    }

    pub fn use_hop_by_hop(&self) -> bool {
        self.inner.settings.read().use_hop_by_hop
    }

    pub fn use_ent_swap(&self) -> bool {
        self.inner.settings.read().use_ent_swap
    }

    pub fn set_use_hop_by_hop(&self, on: bool) {
        self.inner.settings.write().use_hop_by_hop = on;
    }

    pub fn set_use_ent_swap(&self, on: bool) {
        self.inner.settings.write().use_ent_swap = on;
    }

    pub fn set_delay(&self, delay: Duration) {
        self.inner.settings.write().delay = delay;
    }

    /// Installs (or with `None`, removes) a custom routing function.
    pub fn set_routing_algo(&self, kind: LinkKind, algo: Option<RoutingFn>) {
        let slot = match kind {
            LinkKind::Classical => &self.inner.classical_algo,
            LinkKind::Quantum => &self.inner.quantum_algo,
        };
        *slot.write() = algo;
    }

    pub fn set_routing_fn(
        &self,
        kind: LinkKind,
        f: impl Fn(&Network, &Graph, &str, &str) -> Result<Vec<String>, String> + Send + Sync + 'static,
    ) {
        self.set_routing_algo(kind, Some(Arc::new(f)));
    }

    // -- instrumentation ---------------------------------------------------

    pub fn enable_hop_log(&self) {
        self.inner.hop_log.lock().get_or_insert_with(Vec::new);
    }

    pub fn hop_log(&self) -> Vec<HopRecord> {
        self.inner.hop_log.lock().clone().unwrap_or_default()
    }

    /// Starts recording every classical packet the dispatcher handles.
    pub fn enable_recording(&self) {
        self.inner.recording.lock().get_or_insert_with(Vec::new);
    }

    pub fn take_recording(&self) -> Vec<u8> {
        self.inner.recording.lock().as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Packets handed to the network so far, per protocol tag.
    pub fn packet_counts(&self) -> BTreeMap<ProtocolTag, u64> {
        self.inner.packet_counts.lock().clone()
    }

    /// Blocks until no packet is in transit and every host is idle, or
    /// `timeout` elapses. Returns whether quiescence was reached.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut stable = 0;
        while Instant::now() < deadline {
            let hosts: Vec<Host> = self.inner.topo.read().hosts.values().cloned().collect();
            let idle = self.inner.in_transit.load(Ordering::SeqCst) == 0 && hosts.iter().all(Host::is_idle);
            stable = if idle { stable + 1 } else { 0 };
            if stable >= 3 {
                return true;
            }
            thread::sleep(Duration::from_millis(1));
        }
        false
    }

    // -- routing -----------------------------------------------------------

    pub fn route(&self, kind: LinkKind, from: &str, to: &str) -> Result<Vec<String>, NetworkError> {
        let graph = self.graph(kind);
        for n in [from, to] {
            if !graph.contains(n) {
                return Err(NetworkError::UnknownHost(n.to_string()));
            }
        }
        if from == to {
            return Ok(vec![from.to_string()]);
        }
        let algo = match kind {
            LinkKind::Classical => self.inner.classical_algo.read().clone(),
            LinkKind::Quantum => self.inner.quantum_algo.read().clone(),
        };
        match algo {
            Some(f) => {
                let path = f(self, &graph, from, to).map_err(|e| {
                    log::error!("routing function failed for {from} -> {to}: {e}");
                    NetworkError::Routing(e)
                })?;
                let valid = path.first().map(String::as_str) == Some(from)
                    && path.last().map(String::as_str) == Some(to)
                    && graph.is_path(&path);
                if !valid {
                    log::error!("routing function returned invalid path {path:?} for {from} -> {to}");
                    return Err(NetworkError::Routing(format!("invalid path {path:?}")));
                }
                Ok(path)
            }
            None => graph.shortest_path(from, to).ok_or_else(|| NetworkError::NoRoute {
                kind,
                from: from.to_string(),
                to: to.to_string(),
            }),
        }
    }

    // -- dispatch ----------------------------------------------------------

    pub(crate) fn enqueue(&self, pkt: NetworkPacket) {
        *self.inner.packet_counts.lock().entry(pkt.inner.protocol).or_default() += 1;
        self.inner.in_transit.fetch_add(1, Ordering::SeqCst);
        if self.inner.tx.send(pkt).is_err() {
            self.inner.in_transit.fetch_sub(1, Ordering::SeqCst);
        }
    }

    /// Routes a control packet (ACK) over the classical graph.
    pub(crate) fn send_control(&self, inner: TransportPacket) {
        let route = match self.route(LinkKind::Classical, &inner.sender, &inner.receiver) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("dropping {} from {}: {e}", inner.protocol, inner.sender);
                return;
            }
        };
        let mut pkt = NetworkPacket::wrap(self.new_id(), inner);
        if !self.use_hop_by_hop() {
            pkt.route_hint = Some(route);
        }
        self.enqueue(pkt);
    }

    pub(crate) fn start_broadcast(&self, pkt: NetworkPacket) {
        self.inner
            .broadcast_seen
            .lock()
            .insert((pkt.packet_id.clone(), pkt.src.clone()));
        self.enqueue(pkt);
    }

    fn dispatch(&self, mut pkt: NetworkPacket) {
        let delay = self.inner.settings.read().delay;
        if !delay.is_zero() {
            thread::sleep(delay);
        }
        if !pkt.is_quantum() {
            if let Some(log) = self.inner.recording.lock().as_mut() {
                if let Ok(bytes) = encode_packet(&pkt) {
                    append_log_record(log, &bytes);
                }
            }
        }
        if pkt.inner.protocol == ProtocolTag::SendBroadcast {
            self.flood(pkt);
            return;
        }
        if pkt.current == pkt.dst {
            self.deliver(&pkt.dst.clone(), pkt);
            return;
        }
        let kind = if pkt.is_quantum() {
            LinkKind::Quantum
        } else {
            LinkKind::Classical
        };
        let pinned = if self.use_hop_by_hop() {
            None
        } else {
            if pkt.route_hint.is_none() {
                pkt.route_hint = self.route(kind, &pkt.current, &pkt.dst).ok();
            }
            pkt.route_hint
                .as_ref()
                .and_then(|r| r.iter().position(|h| *h == pkt.current).and_then(|i| r.get(i + 1)))
                .cloned()
        };
        let next = match pinned {
            Some(n) => Ok(n),
            None => self.route(kind, &pkt.current, &pkt.dst).map(|r| r[1].clone()),
        };
        let next = match next {
            Ok(n) if self.graph(kind).has_edge(&pkt.current, &n) => n,
            Ok(n) => {
                log::warn!("link {} -> {n} no longer exists", pkt.current);
                self.bounce(pkt);
                return;
            }
            Err(e) => {
                log::warn!("cannot forward {} {} -> {}: {e}", pkt.inner.protocol, pkt.current, pkt.dst);
                self.bounce(pkt);
                return;
            }
        };
        self.record_hop(&pkt, kind, &next);
        pkt.current = next.clone();
        self.deliver(&next, pkt);
    }

    fn record_hop(&self, pkt: &NetworkPacket, kind: LinkKind, to: &str) {
        if let Some(log) = self.inner.hop_log.lock().as_mut() {
            log.push(HopRecord {
                packet_id: pkt.packet_id.clone(),
                protocol: pkt.inner.protocol,
                kind,
                from: pkt.current.clone(),
                to: to.to_string(),
            });
        }
    }

    /// Reports an unroutable packet back to its origin, when it expects an
    /// answer, and drops it.
    fn bounce(&self, pkt: NetworkPacket) {
        let original = &pkt.inner;
        let wants_answer = original.await_ack || original.protocol == ProtocolTag::SendEpr;
        if original.protocol == ProtocolTag::Ack || !wants_answer {
            return;
        }
        let record = ControlRecord {
            status: AckStatus::Unroutable,
            original: original.protocol,
            detail: String::new(),
        };
        let Ok(nack) = TransportPacket::new(
            pkt.dst.clone(),
            pkt.src.clone(),
            ProtocolTag::Ack,
            Payload::Control(record),
            original.sequence,
            false,
        ) else {
            return;
        };
        let mut back = NetworkPacket::wrap(self.new_id(), nack);
        back.current = pkt.current.clone();
        if self.route(LinkKind::Classical, &back.current, &back.dst).is_ok() {
            self.enqueue(back);
        }
    }

    fn deliver(&self, host_id: &str, pkt: NetworkPacket) {
        match self.get_host(host_id) {
            Some(h) => h.enqueue(pkt),
            None => log::warn!("dropping packet for unknown host {host_id}"),
        }
    }

    fn flood(&self, pkt: NetworkPacket) {
        let Payload::Classical(content) = &pkt.inner.payload else { return };
        let graph = self.graph(LinkKind::Classical);
        let at = pkt.current.clone();
        for next in graph.successors(&at) {
            let fresh = self
                .inner
                .broadcast_seen
                .lock()
                .insert((pkt.packet_id.clone(), next.to_string()));
            if !fresh {
                continue;
            }
            self.record_hop(&pkt, LinkKind::Classical, next);
            let seq = self.next_sequence(&pkt.src, next);
            let make = |receiver: &str, seq| {
                TransportPacket::new(
                    pkt.src.clone(),
                    receiver,
                    ProtocolTag::SendBroadcast,
                    Payload::Classical(content.clone()),
                    seq,
                    false,
                )
                .expect("classical broadcast payload")
            };
            let mut copy = NetworkPacket::wrap(pkt.packet_id.clone(), make(next, seq));
            copy.current = next.to_string();
            self.deliver(next, copy);
            if pkt.ttl > 1 {
                let mut onward = NetworkPacket::wrap(pkt.packet_id.clone(), make(&pkt.inner.receiver, 0));
                onward.current = next.to_string();
                onward.ttl = pkt.ttl - 1;
                self.inner.in_transit.fetch_add(1, Ordering::SeqCst);
                if self.inner.tx.send(onward).is_err() {
                    self.inner.in_transit.fetch_sub(1, Ordering::SeqCst);
                }
            }
        }
    }

    // -- entanglement swapping ---------------------------------------------

    /// Establishes a Φ+ pair between `source` and `target` along the
    /// quantum route by consuming (or creating) one pair per hop and
    /// Bell-measuring at each intermediate host. Both end halves are
    /// stored under `qubit_id`.
    pub fn entanglement_swap_chain(&self, source: &str, target: &str, qubit_id: &str) -> Result<(), NetworkError> {
        let path = self.route(LinkKind::Quantum, source, target)?;
        if path.len() < 2 {
            return Err(NetworkError::SwapFailed(format!("{source} and {target} are the same host")));
        }
        let hosts = path
            .iter()
            .map(|id| self.get_host(id).ok_or_else(|| NetworkError::UnknownHost(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut pairs: Vec<(Qubit, Qubit)> = Vec::with_capacity(hosts.len() - 1);
        for w in hosts.windows(2) {
            let pair = if hosts.len() == 2 {
                None
            } else {
                take_shared_pair(&w[0], &w[1])
            };
            pairs.push(pair.unwrap_or_else(|| {
                self.backend().make_epr(w[0].host_id(), w[1].host_id(), &self.new_id())
            }));
        }
        let mut pairs = pairs.into_iter();
        let (mut left, mut carried) = pairs.next().expect("at least one hop");
        let (mut z_parity, mut x_parity) = (0u8, 0u8);
        for (i, (l, r)) in pairs.enumerate() {
            let node = &path[i + 1];
            let bell = (|| {
                carried.cnot(&l)?;
                carried.h()?;
                let m1 = carried.measure()?;
                let m2 = l.measure()?;
                Ok::<_, crate::backend::QubitError>((m1, m2))
            })();
            let (m1, m2) = bell.map_err(|e| NetworkError::SwapFailed(format!("Bell measurement at {node}: {e}")))?;
            log::debug!(
                "{:.6} | {node} | {} | m1={m1} m2={m2} towards {target}",
                self.elapsed_secs(),
                ProtocolTag::EprSwapControl
            );
            z_parity ^= m1;
            x_parity ^= m2;
            carried = r;
        }
        let correct = (|| {
            if x_parity == 1 {
                carried.x()?;
            }
            if z_parity == 1 {
                carried.z()?;
            }
            left.set_id(qubit_id)?;
            carried.set_id(qubit_id)?;
            Ok::<_, crate::backend::QubitError>(())
        })();
        correct.map_err(|e| NetworkError::SwapFailed(e.to_string()))?;
        let (src, dst) = (&hosts[0], &hosts[hosts.len() - 1]);
        dst.store_epr(source, carried)
            .map_err(|_| NetworkError::SwapFailed(format!("EPR memory of {target} is full")))?;
        if src.store_epr(target, left).is_err() {
            drop(dst.take_epr_now(source, Some(qubit_id)));
            return Err(NetworkError::SwapFailed(format!("EPR memory of {source} is full")));
        }
        Ok(())
    }
}

/// Removes a pair already shared by `a` and `b` from both stores.
fn take_shared_pair(a: &Host, b: &Host) -> Option<(Qubit, Qubit)> {
    for id in a.epr_ids(b.host_id()) {
        if let Some(qb) = b.take_epr_now(a.host_id(), Some(&id)) {
            match a.take_epr_now(b.host_id(), Some(&id)) {
                Some(qa) => return Some((qa, qb)),
                None => b.restore_epr(a.host_id(), qb),
            }
        }
    }
    None
}

fn snapshot(topo: &mut Topology, host: &Host) {
    let id = host.host_id().to_string();
    topo.classical
        .insert(id.clone(), host.classical_connections().into_iter().collect());
    topo.quantum.insert(id, host.quantum_connections().into_iter().collect());
}

fn dispatch_loop(weak: Weak<NetworkInner>, rx: Receiver<NetworkPacket>, wake: Receiver<()>) {
    loop {
        let pkt = crossbeam_channel::select! {
            recv(rx) -> msg => match msg {
                Ok(p) => Some(p),
                Err(_) => return,
            },
            recv(wake) -> _ => None,
            default(Duration::from_millis(50)) => None,
        };
        let Some(inner) = weak.upgrade() else { return };
        if !inner.running.load(Ordering::SeqCst) {
            return;
        }
        if let Some(pkt) = pkt {
            let net = Network { inner };
            net.dispatch(pkt);
            net.inner.in_transit.fetch_sub(1, Ordering::SeqCst);
        }
    }
}
