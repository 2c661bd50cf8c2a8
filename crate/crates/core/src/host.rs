//! Hosts: named nodes that consume a packet queue on their own thread, keep
//! classical and quantum stores, and expose the send/get protocol API.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU8, AtomicUsize, Ordering};
use std::sync::{Arc, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use parking_lot::{Condvar, Mutex, RwLock};
use rand_chacha::ChaCha8Rng;

use crate::backend::{substream, Qubit, QubitError, StreamKind};
use crate::network::{LinkKind, Network, NetworkError, NetworkInner};
use crate::packet::{
    AckStatus, Message, NetworkPacket, Payload, ProtocolTag, TransportPacket, META_EPR_ID, META_GHZ_ID,
};
use crate::transport::{self, TransportError};

pub const DEFAULT_ACK_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_POLL_DELAY: Duration = Duration::from_millis(50);

#[derive(Debug, thiserror::Error)]
pub enum HostError {
    #[error("host {0} is already started")]
    AlreadyStarted(String),
    #[error("host {0} is not started")]
    NotStarted(String),
    #[error("host {0} is stopped")]
    HostStopped(String),
    #[error("host {0} is not attached to a network")]
    NotAttached(String),
    #[error("host {0} cannot connect to itself")]
    SelfLink(String),
    #[error("memory limit must be non-negative, got {0}")]
    InvalidLimit(i64),
    #[error("qubit is owned by {owner}, not {host}")]
    NotOwner { host: String, owner: String },
    #[error("no route from {from} to {to}")]
    NoRoute { from: String, to: String },
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("entanglement swap failed: {0}")]
    SwapFailed(String),
    #[error(transparent)]
    Qubit(#[from] QubitError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Outcome of a send operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckResult {
    /// The receiver committed the payload and acknowledged it.
    Acked,
    /// Handed to the network without waiting for an acknowledgement.
    Sent,
    Timeout,
    NoRoute,
    /// The receiver refused the payload (memory limit, missing entanglement).
    Rejected,
}

impl AckResult {
    pub fn is_success(self) -> bool {
        matches!(self, AckResult::Acked | AckResult::Sent)
    }

    pub(crate) fn from_status(status: AckStatus) -> Self {
        match status {
            AckStatus::Accepted => AckResult::Acked,
            AckStatus::Rejected => AckResult::Rejected,
            AckStatus::Unroutable => AckResult::NoRoute,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionKind {
    Both,
    Classical,
    Quantum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryKind {
    Epr,
    Data,
    Total,
}

/// How long a `get_*` call may block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Wait {
    NoWait,
    For(Duration),
    Forever,
}

impl From<f64> for Wait {
    /// `0` probes without blocking, negative values wait indefinitely.
    fn from(secs: f64) -> Self {
        if secs < 0.0 {
            Wait::Forever
        } else if secs == 0.0 {
            Wait::NoWait
        } else {
            Wait::For(Duration::from_secs_f64(secs))
        }
    }
}

impl From<Duration> for Wait {
    fn from(d: Duration) -> Self {
        if d.is_zero() {
            Wait::NoWait
        } else {
            Wait::For(d)
        }
    }
}

pub type ClassicalSniffFn = Arc<dyn Fn(&str, &str, &mut Message) + Send + Sync>;
pub type QuantumSniffFn = Arc<dyn Fn(&str, &str, &mut Qubit) + Send + Sync>;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;
pub type ProtocolResult<T = ()> = Result<T, BoxError>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("protocol failed: {0}")]
    Failed(String),
    #[error("protocol panicked: {0}")]
    Panicked(String),
}

/// Completion handle for a protocol started with [`Host::run_protocol`].
pub struct ProtocolHandle<T = ()> {
    thread: Option<JoinHandle<()>>,
    outcome: Arc<Mutex<Option<Result<T, ProtocolError>>>>,
}

impl<T> ProtocolHandle<T> {
    pub fn is_finished(&self) -> bool {
        self.outcome.lock().is_some()
    }

    /// Error raised by the protocol, once it has finished.
    pub fn error(&self) -> Option<ProtocolError> {
        self.outcome.lock().as_ref().and_then(|r| r.as_ref().err().cloned())
    }

    /// Blocks until the protocol finishes and returns its value.
    pub fn join(mut self) -> Result<T, ProtocolError> {
        self.wait();
        self.outcome
            .lock()
            .take()
            .unwrap_or_else(|| Err(ProtocolError::Panicked("no outcome recorded".into())))
    }

    pub fn wait(&mut self) {
        if let Some(t) = self.thread.take() {
            if let Err(panic) = t.join() {
                let msg = panic_message(&panic);
                *self.outcome.lock() = Some(Err(ProtocolError::Panicked(msg)));
            }
        }
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Limits {
    epr: Option<usize>,
    data: Option<usize>,
    total: Option<usize>,
}

#[derive(Debug)]
struct StoredMessage {
    msg: Message,
    consumed: bool,
}

#[derive(Default)]
struct Stores {
    /// Arrival order; retrieval reverses it.
    classical: Vec<StoredMessage>,
    data: BTreeMap<String, VecDeque<Qubit>>,
    epr: BTreeMap<String, VecDeque<Qubit>>,
    ghz: BTreeMap<String, VecDeque<Qubit>>,
    limits: Limits,
}

fn count(store: &BTreeMap<String, VecDeque<Qubit>>) -> usize {
    store.values().map(VecDeque::len).sum()
}

fn take_matching(queue: Option<&mut VecDeque<Qubit>>, id: Option<&str>) -> Option<Qubit> {
    let queue = queue?;
    match id {
        None => queue.pop_front(),
        Some(id) => {
            let pos = queue.iter().position(|q| q.id() == id)?;
            queue.remove(pos)
        }
    }
}

#[derive(Clone, Copy)]
enum Store {
    Data,
    Epr,
    Ghz,
}

impl Stores {
    fn total(&self) -> usize {
        count(&self.data) + count(&self.epr) + count(&self.ghz)
    }

    fn has_room(&self, which: Store) -> bool {
        if let Some(t) = self.limits.total {
            if self.total() >= t {
                return false;
            }
        }
        match which {
            Store::Data => self.limits.data.is_none_or(|l| count(&self.data) < l),
            Store::Epr => self.limits.epr.is_none_or(|l| count(&self.epr) < l),
            Store::Ghz => true,
        }
    }

    fn map(&mut self, which: Store) -> &mut BTreeMap<String, VecDeque<Qubit>> {
        match which {
            Store::Data => &mut self.data,
            Store::Epr => &mut self.epr,
            Store::Ghz => &mut self.ghz,
        }
    }
}

const CREATED: u8 = 0;
const RUNNING: u8 = 1;
const STOPPED: u8 = 2;

#[derive(Default)]
struct Sniffing {
    classical: bool,
    quantum: bool,
    classical_fn: Option<ClassicalSniffFn>,
    quantum_fn: Option<QuantumSniffFn>,
}

struct Config {
    ack_timeout: Duration,
    poll_delay: Duration,
}

pub(crate) struct HostInner {
    id: String,
    tx: Sender<NetworkPacket>,
    rx: Receiver<NetworkPacket>,
    wake_tx: Sender<()>,
    wake_rx: Receiver<()>,
    /// Packets enqueued or being processed.
    in_flight: AtomicUsize,
    /// Send operations in progress.
    busy: AtomicUsize,
    deferred: AtomicUsize,
    lifecycle: AtomicU8,
    stores: Mutex<Stores>,
    stores_cv: Condvar,
    peers: Mutex<(BTreeSet<String>, BTreeSet<String>)>,
    config: Mutex<Config>,
    sniff: RwLock<Sniffing>,
    pending: Mutex<HashMap<(String, u64), Sender<AckResult>>>,
    network: RwLock<Weak<NetworkInner>>,
    protocol_rng: Mutex<Option<ChaCha8Rng>>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

/// A network node. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct Host {
    pub(crate) inner: Arc<HostInner>,
}

impl fmt::Debug for Host {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Host").field("id", &self.inner.id).finish()
    }
}

struct BusyGuard<'a>(&'a AtomicUsize);

impl<'a> BusyGuard<'a> {
    fn new(c: &'a AtomicUsize) -> Self {
        c.fetch_add(1, Ordering::SeqCst);
        Self(c)
    }
}

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

/// A packet parked until the EPR half it needs shows up.
pub(crate) struct Deferred {
    pub deadline: Instant,
    pub packet: TransportPacket,
}

impl Host {
    pub fn new(id: impl Into<String>) -> Self {
        let (tx, rx) = crossbeam_channel::unbounded();
        let (wake_tx, wake_rx) = crossbeam_channel::bounded(1);
        Self {
            inner: Arc::new(HostInner {
                id: id.into(),
                tx,
                rx,
                wake_tx,
                wake_rx,
                in_flight: AtomicUsize::new(0),
                busy: AtomicUsize::new(0),
                deferred: AtomicUsize::new(0),
                lifecycle: AtomicU8::new(CREATED),
                stores: Mutex::new(Stores::default()),
                stores_cv: Condvar::new(),
                peers: Mutex::new((BTreeSet::new(), BTreeSet::new())),
                config: Mutex::new(Config {
                    ack_timeout: DEFAULT_ACK_TIMEOUT,
                    poll_delay: DEFAULT_POLL_DELAY,
                }),
                sniff: RwLock::new(Sniffing::default()),
                pending: Mutex::new(HashMap::new()),
                network: RwLock::new(Weak::new()),
                protocol_rng: Mutex::new(None),
                worker: Mutex::new(None),
            }),
        }
    }

    pub fn host_id(&self) -> &str {
        &self.inner.id
    }

    pub(crate) fn attach(&self, net: &Arc<NetworkInner>, seed: u64) {
        *self.inner.network.write() = Arc::downgrade(net);
        *self.inner.protocol_rng.lock() = Some(substream(seed, StreamKind::Protocol, &self.inner.id));
    }

    pub fn network(&self) -> Result<Network, HostError> {
        self.inner
            .network
            .read()
            .upgrade()
            .map(Network::from_inner)
            .ok_or_else(|| HostError::NotAttached(self.inner.id.clone()))
    }

    // -- lifecycle ---------------------------------------------------------

    pub fn start(&self) -> Result<(), HostError> {
        match self
            .inner
            .lifecycle
            .compare_exchange(CREATED, RUNNING, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(_) => {}
            Err(RUNNING) => return Err(HostError::AlreadyStarted(self.inner.id.clone())),
            Err(_) => return Err(HostError::HostStopped(self.inner.id.clone())),
        }
        let host = self.clone();
        let handle = thread::Builder::new()
            .name(format!("host-{}", self.inner.id))
            .spawn(move || host.run_queue())
            .expect("spawn host thread");
        *self.inner.worker.lock() = Some(handle);
        Ok(())
    }

    /// Halts the queue processor. Queued packets are dropped and pending
    /// acknowledgement waits resolve as timeouts.
    pub fn stop(&self) {
        let prev = self.inner.lifecycle.swap(STOPPED, Ordering::SeqCst);
        {
            let mut pending = self.inner.pending.lock();
            for (_, tx) in pending.drain() {
                let _ = tx.try_send(AckResult::Timeout);
            }
        }
        self.inner.stores_cv.notify_all();
        let _ = self.inner.wake_tx.try_send(());
        if prev == RUNNING {
            let handle = self.inner.worker.lock().take();
            if let Some(h) = handle {
                if h.thread().id() != thread::current().id() {
                    let _ = h.join();
                }
            }
        }
    }

    pub fn is_running(&self) -> bool {
        self.inner.lifecycle.load(Ordering::SeqCst) == RUNNING
    }

    fn stopped(&self) -> bool {
        self.inner.lifecycle.load(Ordering::SeqCst) == STOPPED
    }

    fn ensure_running(&self) -> Result<(), HostError> {
        match self.inner.lifecycle.load(Ordering::SeqCst) {
            RUNNING => Ok(()),
            CREATED => Err(HostError::NotStarted(self.inner.id.clone())),
            _ => Err(HostError::HostStopped(self.inner.id.clone())),
        }
    }

    /// True when no packet is queued or being processed, nothing is parked
    /// waiting for entanglement and no send operation is in progress.
    pub fn is_idle(&self) -> bool {
        self.inner.in_flight.load(Ordering::SeqCst) == 0
            && self.inner.busy.load(Ordering::SeqCst) == 0
            && self.inner.deferred.load(Ordering::SeqCst) == 0
    }

    pub fn set_ack_timeout(&self, timeout: Duration) {
        self.inner.config.lock().ack_timeout = timeout;
    }

    pub fn ack_timeout(&self) -> Duration {
        self.inner.config.lock().ack_timeout
    }

    /// Queue poll interval.
    pub fn set_delay(&self, delay: Duration) {
        self.inner.config.lock().poll_delay = delay.max(Duration::from_millis(1));
    }

    // -- connections -------------------------------------------------------

    pub fn add_connection(&self, peer: &str, kind: ConnectionKind) -> Result<(), HostError> {
        if peer == self.inner.id {
            return Err(HostError::SelfLink(peer.to_string()));
        }
        let mut peers = self.inner.peers.lock();
        if matches!(kind, ConnectionKind::Both | ConnectionKind::Classical) {
            peers.0.insert(peer.to_string());
        }
        if matches!(kind, ConnectionKind::Both | ConnectionKind::Quantum) {
            peers.1.insert(peer.to_string());
        }
        Ok(())
    }

    pub fn add_connections(&self, peers: &[&str], kind: ConnectionKind) -> Result<(), HostError> {
        peers.iter().try_for_each(|p| self.add_connection(p, kind))
    }

    pub fn remove_connection(&self, peer: &str, kind: ConnectionKind) -> Result<(), HostError> {
        if peer == self.inner.id {
            return Err(HostError::SelfLink(peer.to_string()));
        }
        let mut peers = self.inner.peers.lock();
        if matches!(kind, ConnectionKind::Both | ConnectionKind::Classical) {
            peers.0.remove(peer);
        }
        if matches!(kind, ConnectionKind::Both | ConnectionKind::Quantum) {
            peers.1.remove(peer);
        }
        Ok(())
    }

    pub fn classical_connections(&self) -> Vec<String> {
        self.inner.peers.lock().0.iter().cloned().collect()
    }

    pub fn quantum_connections(&self) -> Vec<String> {
        self.inner.peers.lock().1.iter().cloned().collect()
    }

    // -- sniffing ----------------------------------------------------------

    pub fn set_c_relay_sniffing(&self, enabled: bool) {
        self.inner.sniff.write().classical = enabled;
    }

    pub fn set_q_relay_sniffing(&self, enabled: bool) {
        self.inner.sniff.write().quantum = enabled;
    }

    pub fn set_c_relay_sniffing_fn(&self, f: impl Fn(&str, &str, &mut Message) + Send + Sync + 'static) {
        self.inner.sniff.write().classical_fn = Some(Arc::new(f));
    }

    pub fn set_q_relay_sniffing_fn(&self, f: impl Fn(&str, &str, &mut Qubit) + Send + Sync + 'static) {
        self.inner.sniff.write().quantum_fn = Some(Arc::new(f));
    }

    // -- memory ------------------------------------------------------------

    pub fn set_memory_limit(&self, kind: MemoryKind, n: i64) -> Result<(), HostError> {
        if n < 0 {
            return Err(HostError::InvalidLimit(n));
        }
        let n = Some(n as usize);
        let mut st = self.inner.stores.lock();
        match kind {
            MemoryKind::Epr => st.limits.epr = n,
            MemoryKind::Data => st.limits.data = n,
            MemoryKind::Total => st.limits.total = n,
        }
        Ok(())
    }

    pub fn clear_memory_limit(&self, kind: MemoryKind) {
        let mut st = self.inner.stores.lock();
        match kind {
            MemoryKind::Epr => st.limits.epr = None,
            MemoryKind::Data => st.limits.data = None,
            MemoryKind::Total => st.limits.total = None,
        }
    }

    pub fn data_qubit_count(&self) -> usize {
        count(&self.inner.stores.lock().data)
    }

    pub fn epr_qubit_count(&self) -> usize {
        count(&self.inner.stores.lock().epr)
    }

    pub fn ghz_qubit_count(&self) -> usize {
        count(&self.inner.stores.lock().ghz)
    }

    /// Number of stored EPR halves shared with `partner`.
    pub fn epr_count(&self, partner: &str) -> usize {
        self.inner.stores.lock().epr.get(partner).map_or(0, VecDeque::len)
    }

    /// Ids of the stored EPR halves shared with `partner`, oldest first.
    pub fn epr_ids(&self, partner: &str) -> Vec<String> {
        self.inner
            .stores
            .lock()
            .epr
            .get(partner)
            .map(|q| q.iter().map(|x| x.id().to_string()).collect())
            .unwrap_or_default()
    }

    /// Drops every stored qubit and message.
    pub fn clear_stores(&self) {
        let drained = {
            let mut st = self.inner.stores.lock();
            st.classical.clear();
            (
                std::mem::take(&mut st.data),
                std::mem::take(&mut st.epr),
                std::mem::take(&mut st.ghz),
            )
        };
        drop(drained);
    }

    fn try_store(&self, which: Store, key: &str, q: Qubit) -> Result<(), Qubit> {
        let mut st = self.inner.stores.lock();
        if !st.has_room(which) {
            return Err(q);
        }
        st.map(which).entry(key.to_string()).or_default().push_back(q);
        drop(st);
        self.inner.stores_cv.notify_all();
        Ok(())
    }

    pub(crate) fn store_data(&self, sender: &str, q: Qubit) -> Result<(), Qubit> {
        self.try_store(Store::Data, sender, q)
    }

    pub(crate) fn store_epr(&self, partner: &str, q: Qubit) -> Result<(), Qubit> {
        self.try_store(Store::Epr, partner, q)
    }

    pub(crate) fn store_ghz(&self, distributor: &str, q: Qubit) -> Result<(), Qubit> {
        self.try_store(Store::Ghz, distributor, q)
    }

    pub(crate) fn store_message(&self, msg: Message) {
        self.inner.stores.lock().classical.push(StoredMessage { msg, consumed: false });
        self.inner.stores_cv.notify_all();
    }

    /// Removes a stored EPR half without waiting.
    pub(crate) fn take_epr_now(&self, partner: &str, id: Option<&str>) -> Option<Qubit> {
        let mut st = self.inner.stores.lock();
        take_matching(st.epr.get_mut(partner), id)
    }

    /// Puts an EPR half back at the head of the queue for `partner`.
    pub(crate) fn restore_epr(&self, partner: &str, q: Qubit) {
        self.inner
            .stores
            .lock()
            .epr
            .entry(partner.to_string())
            .or_default()
            .push_front(q);
    }

    // -- retrieval ---------------------------------------------------------

    fn wait_for<T>(&self, wait: Wait, mut probe: impl FnMut(&mut Stores) -> Option<T>) -> Option<T> {
        let deadline = match wait {
            Wait::For(d) => Some(Instant::now() + d),
            _ => None,
        };
        let mut st = self.inner.stores.lock();
        loop {
            if let Some(v) = probe(&mut st) {
                return Some(v);
            }
            if self.stopped() {
                return None;
            }
            match wait {
                Wait::NoWait => return None,
                Wait::For(_) => {
                    let dl = deadline.expect("deadline set");
                    if Instant::now() >= dl {
                        return None;
                    }
                    self.inner.stores_cv.wait_until(&mut st, dl);
                }
                Wait::Forever => {
                    self.inner.stores_cv.wait_for(&mut st, Duration::from_millis(100));
                }
            }
        }
    }

    /// All messages received from `sender`, newest first. Blocks up to
    /// `wait` for at least one to be present.
    pub fn get_classical(&self, sender: &str, wait: impl Into<Wait>) -> Vec<Message> {
        self.wait_for(wait.into(), |st| {
            let mut msgs: Vec<Message> = st
                .classical
                .iter()
                .filter(|m| m.msg.sender == sender)
                .map(|m| m.msg.clone())
                .collect();
            if msgs.is_empty() {
                return None;
            }
            msgs.sort_by(|a, b| b.seq_num.cmp(&a.seq_num));
            Some(msgs)
        })
        .unwrap_or_default()
    }

    /// Consumes the oldest unread message from `sender`.
    pub fn get_next_classical(&self, sender: &str, wait: impl Into<Wait>) -> Option<Message> {
        self.wait_for(wait.into(), |st| {
            let slot = st
                .classical
                .iter_mut()
                .filter(|m| !m.consumed && m.msg.sender == sender)
                .min_by_key(|m| m.msg.seq_num)?;
            slot.consumed = true;
            Some(slot.msg.clone())
        })
    }

    /// Every stored message, newest arrival first.
    pub fn classical(&self) -> Vec<Message> {
        self.inner
            .stores
            .lock()
            .classical
            .iter()
            .rev()
            .map(|m| m.msg.clone())
            .collect()
    }

    pub fn empty_classical(&self) {
        self.inner.stores.lock().classical.clear();
    }

    pub fn get_data_qubit(&self, sender: &str, qubit_id: Option<&str>, wait: impl Into<Wait>) -> Option<Qubit> {
        self.wait_for(wait.into(), |st| take_matching(st.data.get_mut(sender), qubit_id))
    }

    pub fn get_epr(&self, partner: &str, qubit_id: Option<&str>, wait: impl Into<Wait>) -> Option<Qubit> {
        self.wait_for(wait.into(), |st| take_matching(st.epr.get_mut(partner), qubit_id))
    }

    pub fn get_ghz(&self, distributor: &str, wait: impl Into<Wait>) -> Option<Qubit> {
        self.wait_for(wait.into(), |st| take_matching(st.ghz.get_mut(distributor), None))
    }

    /// Stores `q` as this host's half of a pair shared with `partner`,
    /// renaming it to `qubit_id` when given.
    pub fn add_epr(&self, partner: &str, mut q: Qubit, qubit_id: Option<&str>) -> Result<String, HostError> {
        self.check_owner(&q)?;
        if let Some(id) = qubit_id {
            q.set_id(id)?;
        }
        let id = q.id().to_string();
        self.store_epr(partner, q)
            .map_err(|_| HostError::Rejected(format!("EPR memory of {} is full", self.inner.id)))?;
        Ok(id)
    }

    // -- qubits and randomness ---------------------------------------------

    /// A fresh `|0>` qubit owned by this host.
    pub fn create_qubit(&self, qubit_id: Option<&str>) -> Result<Qubit, HostError> {
        let net = self.network()?;
        let id = qubit_id.map_or_else(|| net.new_id(), str::to_string);
        Ok(net.backend().create_qubit(&self.inner.id, &id)?)
    }

    /// Runs `f` with this host's seeded protocol generator.
    pub fn with_rng<T>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> T) -> T {
        let mut guard = self.inner.protocol_rng.lock();
        let rng = guard.get_or_insert_with(|| substream(0, StreamKind::Protocol, &self.inner.id));
        f(rng)
    }

    fn check_owner(&self, q: &Qubit) -> Result<(), HostError> {
        match q.owner() {
            None => Err(QubitError::InvalidQubit.into()),
            Some(o) if o != self.inner.id => Err(HostError::NotOwner {
                host: self.inner.id.clone(),
                owner: o,
            }),
            Some(_) => Ok(()),
        }
    }

    // -- sending -----------------------------------------------------------

    pub(crate) fn register_pending(&self, peer: &str, seq: u64) -> Receiver<AckResult> {
        let (tx, rx) = crossbeam_channel::bounded(1);
        self.inner.pending.lock().insert((peer.to_string(), seq), tx);
        rx
    }

    /// Resolves the await registered for `(peer, seq)`, at most once.
    pub(crate) fn resolve_pending(&self, peer: &str, seq: u64, result: AckResult) -> bool {
        match self.inner.pending.lock().remove(&(peer.to_string(), seq)) {
            Some(tx) => tx.try_send(result).is_ok(),
            None => false,
        }
    }

    fn await_ack(&self, peer: &str, seq: u64, rx: Receiver<AckResult>) -> AckResult {
        let timeout = self.ack_timeout();
        match rx.recv_timeout(timeout) {
            Ok(r) => r,
            Err(_) => {
                self.inner.pending.lock().remove(&(peer.to_string(), seq));
                AckResult::Timeout
            }
        }
    }

    /// Wraps a payload into a transport packet, routes it and optionally
    /// waits for the acknowledgement.
    fn send_packet(
        &self,
        receiver: &str,
        protocol: ProtocolTag,
        payload: Payload,
        await_ack: bool,
        meta: &[(&str, &str)],
    ) -> Result<AckResult, HostError> {
        let net = self.network()?;
        let kind = if payload.is_quantum() {
            LinkKind::Quantum
        } else {
            LinkKind::Classical
        };
        let route = match net.route(kind, &self.inner.id, receiver) {
            Ok(r) => r,
            Err(e) => {
                self.log("no-route", &format!("{protocol} to {receiver}: {e}"));
                return Ok(AckResult::NoRoute);
            }
        };
        let seq = net.next_sequence(&self.inner.id, receiver);
        let mut inner = TransportPacket::new(self.inner.id.clone(), receiver, protocol, payload, seq, await_ack)
            .map_err(|e| TransportError::InvalidMessage(e.to_string()))?;
        for (k, v) in meta {
            inner = inner.with_meta(k, *v);
        }
        let waiter = await_ack.then(|| self.register_pending(receiver, seq));
        let mut pkt = NetworkPacket::wrap(net.new_id(), inner);
        if !net.use_hop_by_hop() {
            pkt.route_hint = Some(route);
        }
        net.enqueue(pkt);
        Ok(match waiter {
            None => AckResult::Sent,
            Some(rx) => self.await_ack(receiver, seq, rx),
        })
    }

    pub fn send_classical(
        &self,
        receiver: &str,
        content: impl Into<Vec<u8>>,
        await_ack: bool,
    ) -> Result<AckResult, HostError> {
        self.ensure_running()?;
        let _busy = BusyGuard::new(&self.inner.busy);
        self.send_packet(
            receiver,
            ProtocolTag::SendClassical,
            Payload::Classical(content.into()),
            await_ack,
            &[],
        )
    }

    /// Sends `q` directly. The qubit is consumed whatever the outcome.
    pub fn send_qubit(&self, receiver: &str, q: Qubit, await_ack: bool) -> Result<AckResult, HostError> {
        self.ensure_running()?;
        self.check_owner(&q)?;
        let _busy = BusyGuard::new(&self.inner.busy);
        self.send_packet(receiver, ProtocolTag::SendQubit, Payload::Qubit(q), await_ack, &[])
    }

    /// Establishes a Φ+ pair with `receiver`. Both halves end up in the
    /// hosts' EPR stores under the returned id. Multi-hop routes use an
    /// entanglement swap chain when the network has swapping enabled,
    /// otherwise the second half is relayed as a qubit.
    pub fn send_epr(&self, receiver: &str, qubit_id: Option<&str>, await_ack: bool) -> Result<String, HostError> {
        self.ensure_running()?;
        let _busy = BusyGuard::new(&self.inner.busy);
        let net = self.network()?;
        let route = net
            .route(LinkKind::Quantum, &self.inner.id, receiver)
            .map_err(|_| HostError::NoRoute {
                from: self.inner.id.clone(),
                to: receiver.to_string(),
            })?;
        let id = qubit_id.map_or_else(|| net.new_id(), str::to_string);
        if route.len() > 2 && net.use_ent_swap() {
            net.entanglement_swap_chain(&self.inner.id, receiver, &id)
                .map_err(|e| HostError::SwapFailed(e.to_string()))?;
            return Ok(id);
        }
        let (mine, theirs) = net.backend().make_epr(&self.inner.id, &self.inner.id, &id);
        if self.store_epr(receiver, mine).is_err() {
            return Err(HostError::Rejected(format!("EPR memory of {} is full", self.inner.id)));
        }
        let result = self.send_packet(receiver, ProtocolTag::SendEpr, Payload::Qubit(theirs), await_ack, &[])?;
        match result {
            AckResult::Acked | AckResult::Sent => Ok(id),
            AckResult::NoRoute => {
                drop(self.take_epr_now(receiver, Some(&id)));
                Err(HostError::NoRoute {
                    from: self.inner.id.clone(),
                    to: receiver.to_string(),
                })
            }
            AckResult::Timeout => {
                drop(self.take_epr_now(receiver, Some(&id)));
                Err(HostError::Timeout(format!("EPR ack from {receiver}")))
            }
            AckResult::Rejected => Err(HostError::Rejected(format!("{receiver} refused EPR half"))),
        }
    }

    /// Teleports `q` to `receiver`, establishing an EPR pair first if none
    /// is stored.
    pub fn send_teleport(&self, receiver: &str, q: Qubit, await_ack: bool) -> Result<AckResult, HostError> {
        self.ensure_running()?;
        self.check_owner(&q)?;
        let _busy = BusyGuard::new(&self.inner.busy);
        let net = self.network()?;
        if net.route(LinkKind::Classical, &self.inner.id, receiver).is_err() {
            return Ok(AckResult::NoRoute);
        }
        let id = match transport::ensure_epr(self, receiver, None) {
            Ok(id) => id,
            Err(e) => return Ok(e.as_ack_result()),
        };
        let half = self
            .take_epr_now(receiver, Some(&id))
            .ok_or_else(|| TransportError::MissingEntanglement(id.clone()))?;
        let bits = transport::teleport_encode(q, half)?;
        self.log("teleport", &format!("to {receiver} m1={} m2={} epr={}", bits.m1, bits.m2, bits.epr_id));
        self.send_packet(receiver, ProtocolTag::SendTeleport, Payload::Corrections(bits), await_ack, &[])
    }

    /// Sends two classical bits (`"00"`, `"01"`, `"10"` or `"11"`) over one
    /// qubit of a shared EPR pair.
    pub fn send_superdense(&self, receiver: &str, two_bits: &str, await_ack: bool) -> Result<AckResult, HostError> {
        self.ensure_running()?;
        transport::parse_two_bits(two_bits)?;
        let _busy = BusyGuard::new(&self.inner.busy);
        let id = match transport::ensure_epr(self, receiver, None) {
            Ok(id) => id,
            Err(e) => return Ok(e.as_ack_result()),
        };
        let half = self
            .take_epr_now(receiver, Some(&id))
            .ok_or_else(|| TransportError::MissingEntanglement(id.clone()))?;
        let encoded = transport::superdense_encode(two_bits, half)?;
        self.send_packet(
            receiver,
            ProtocolTag::SendSuperdense,
            Payload::Qubit(encoded),
            await_ack,
            &[(META_EPR_ID, id.as_str())],
        )
    }

    /// Creates a GHZ state and sends one share to each receiver. With
    /// `distribute` false the sender keeps an extra share, retrievable with
    /// `get_ghz(own_id)`.
    pub fn send_ghz(&self, receivers: &[&str], distribute: bool, await_ack: bool) -> Result<String, HostError> {
        self.ensure_running()?;
        let _busy = BusyGuard::new(&self.inner.busy);
        let net = self.network()?;
        if receivers.is_empty() {
            return Err(QubitError::EmptyGhz.into());
        }
        for r in receivers {
            if net.route(LinkKind::Quantum, &self.inner.id, r).is_err() {
                return Err(HostError::NoRoute {
                    from: self.inner.id.clone(),
                    to: r.to_string(),
                });
            }
        }
        let id = net.new_id();
        let n = receivers.len() + usize::from(!distribute);
        let owners = vec![self.inner.id.as_str(); n];
        let mut shares = net.backend().make_ghz(&owners, &id)?;
        if !distribute {
            let mine = shares.remove(0);
            if self.store_ghz(&self.inner.id, mine).is_err() {
                return Err(HostError::Rejected(format!("memory of {} is full", self.inner.id)));
            }
        }
        let mut failure = None;
        for (r, q) in receivers.iter().zip(shares) {
            let res = self.send_packet(r, ProtocolTag::SendGhz, Payload::Qubit(q), await_ack, &[(META_GHZ_ID, id.as_str())])?;
            if !res.is_success() && failure.is_none() {
                failure = Some((r.to_string(), res));
            }
        }
        match failure {
            None => Ok(id),
            Some((r, AckResult::NoRoute)) => Err(HostError::NoRoute {
                from: self.inner.id.clone(),
                to: r,
            }),
            Some((r, AckResult::Rejected)) => Err(HostError::Rejected(format!("{r} refused GHZ share"))),
            Some((r, _)) => Err(HostError::Timeout(format!("GHZ ack from {r}"))),
        }
    }

    /// Floods `content` to every classically reachable host. No ACKs.
    pub fn send_broadcast(&self, content: impl Into<Vec<u8>>) -> Result<(), HostError> {
        self.ensure_running()?;
        let _busy = BusyGuard::new(&self.inner.busy);
        let net = self.network()?;
        let inner = TransportPacket::new(
            self.inner.id.clone(),
            "*",
            ProtocolTag::SendBroadcast,
            Payload::Classical(content.into()),
            0,
            false,
        )
        .map_err(|e| TransportError::InvalidMessage(e.to_string()))?;
        net.start_broadcast(NetworkPacket::wrap(net.new_id(), inner));
        Ok(())
    }

    // -- protocols ---------------------------------------------------------

    /// Runs `f` on its own thread with this host as argument.
    pub fn run_protocol<F, T>(&self, f: F, blocking: bool) -> Result<ProtocolHandle<T>, HostError>
    where
        F: FnOnce(Host) -> ProtocolResult<T> + Send + 'static,
        T: Send + 'static,
    {
        self.ensure_running()?;
        let host = self.clone();
        let outcome = Arc::new(Mutex::new(None));
        let slot = Arc::clone(&outcome);
        let thread = thread::Builder::new()
            .name(format!("protocol-{}", self.inner.id))
            .spawn(move || {
                let res = f(host).map_err(|e| ProtocolError::Failed(e.to_string()));
                *slot.lock() = Some(res);
            })
            .expect("spawn protocol thread");
        let mut handle = ProtocolHandle {
            thread: Some(thread),
            outcome,
        };
        if blocking {
            handle.wait();
        }
        Ok(handle)
    }

    // -- queue processing --------------------------------------------------

    /// Hands a packet to this host's queue.
    pub(crate) fn enqueue(&self, pkt: NetworkPacket) {
        if self.stopped() {
            return;
        }
        self.inner.in_flight.fetch_add(1, Ordering::SeqCst);
        self.log("enqueue", &describe(&pkt));
        if self.inner.tx.send(pkt).is_err() {
            self.inner.in_flight.fetch_sub(1, Ordering::SeqCst);
        }
    }

    fn run_queue(&self) {
        let mut deferred: Vec<Deferred> = Vec::new();
        while self.is_running() {
            let poll = self.inner.config.lock().poll_delay;
            let timeout = if deferred.is_empty() {
                poll
            } else {
                poll.min(Duration::from_millis(2))
            };
            crossbeam_channel::select! {
                recv(self.inner.rx) -> msg => match msg {
                    Ok(pkt) => {
                        self.log("dequeue", &describe(&pkt));
                        self.process(pkt, &mut deferred);
                        self.inner.in_flight.fetch_sub(1, Ordering::SeqCst);
                    }
                    Err(_) => break,
                },
                recv(self.inner.wake_rx) -> _ => {}
                default(timeout) => {}
            }
            if !deferred.is_empty() {
                self.retry_deferred(&mut deferred);
            }
        }
        // Drain whatever is left; dropped qubits are released.
        while let Ok(pkt) = self.inner.rx.try_recv() {
            drop(pkt);
            self.inner.in_flight.fetch_sub(1, Ordering::SeqCst);
        }
        deferred.clear();
        self.inner.deferred.store(0, Ordering::SeqCst);
    }

    fn process(&self, pkt: NetworkPacket, deferred: &mut Vec<Deferred>) {
        if pkt.dst != self.inner.id {
            self.relay_process(pkt);
            return;
        }
        if let Some(packet) = transport::receive(self, pkt.inner) {
            let deadline = Instant::now() + self.ack_timeout();
            deferred.push(Deferred { deadline, packet });
            self.inner.deferred.store(deferred.len(), Ordering::SeqCst);
        }
    }

    fn retry_deferred(&self, deferred: &mut Vec<Deferred>) {
        let now = Instant::now();
        let parked = std::mem::take(deferred);
        for d in parked {
            if now >= d.deadline {
                transport::abandon(self, d.packet);
                continue;
            }
            if let Some(packet) = transport::receive(self, d.packet) {
                deferred.push(Deferred {
                    deadline: d.deadline,
                    packet,
                });
            }
        }
        self.inner.deferred.store(deferred.len(), Ordering::SeqCst);
    }

    /// Forwards a packet that is addressed to another host, running the
    /// sniffing hooks on its payload first.
    pub(crate) fn relay_process(&self, mut pkt: NetworkPacket) {
        let sender = pkt.inner.sender.clone();
        let receiver = pkt.inner.receiver.clone();
        {
            let sniff = self.inner.sniff.read();
            match &mut pkt.inner.payload {
                Payload::Qubit(q) => {
                    let _ = q.set_owner(&self.inner.id);
                    if sniff.quantum {
                        if let Some(f) = &sniff.quantum_fn {
                            f(&sender, &receiver, q);
                        }
                    }
                }
                Payload::Classical(content) if pkt.inner.protocol == ProtocolTag::SendClassical => {
                    if sniff.classical {
                        if let Some(f) = &sniff.classical_fn {
                            let mut msg = Message {
                                sender: sender.clone(),
                                content: std::mem::take(content),
                                seq_num: pkt.inner.sequence,
                            };
                            f(&sender, &receiver, &mut msg);
                            *content = msg.content;
                        }
                    }
                }
                _ => {}
            }
        }
        pkt.ttl = pkt.ttl.saturating_sub(1);
        if pkt.ttl == 0 {
            self.log("drop", &format!("ttl exhausted {}", describe(&pkt)));
            return;
        }
        self.log("relay", &describe(&pkt));
        match self.network() {
            Ok(net) => net.enqueue(pkt),
            Err(_) => self.log("drop", "detached host cannot relay"),
        }
    }

    pub(crate) fn log(&self, event: &str, detail: &str) {
        if log::log_enabled!(log::Level::Debug) {
            let ts = self.network().map(|n| n.elapsed_secs()).unwrap_or(0.0);
            log::debug!("{ts:.6} | {} | {event} | {detail}", self.inner.id);
        }
    }
}

fn describe(pkt: &NetworkPacket) -> String {
    format!(
        "{} {}->{} seq={} at={} ttl={}",
        pkt.inner.protocol, pkt.src, pkt.dst, pkt.inner.sequence, pkt.current, pkt.ttl
    )
}
