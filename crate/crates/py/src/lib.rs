//! Python bindings: networks, hosts, qubits and the built-in scenarios.
//!
//! Blocking calls (sends that wait for an ACK, receives with a timeout)
//! release the interpreter lock while they wait.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use qnetsim_core::backend::Gate;
use qnetsim_core::config::TopologyConfig;
use qnetsim_core::scenarios::{self, ScenarioOptions};
use qnetsim_core::{AckResult, ConnectionKind, LinkKind, MemoryKind, Wait};

create_exception!(qnetsim, QnetsimError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    QnetsimError::new_err(e.to_string())
}

pub fn ack_name(r: AckResult) -> &'static str {
    match r {
        AckResult::Acked => "acked",
        AckResult::Sent => "sent",
        AckResult::Timeout => "timeout",
        AckResult::NoRoute => "no_route",
        AckResult::Rejected => "rejected",
    }
}

pub fn connection_kind(s: &str) -> Result<ConnectionKind, String> {
    match s {
        "both" => Ok(ConnectionKind::Both),
        "classical" => Ok(ConnectionKind::Classical),
        "quantum" => Ok(ConnectionKind::Quantum),
        _ => Err(format!("unknown connection kind {s:?}; use both, classical or quantum")),
    }
}

pub fn link_kind(s: &str) -> Result<LinkKind, String> {
    match s {
        "classical" => Ok(LinkKind::Classical),
        "quantum" => Ok(LinkKind::Quantum),
        _ => Err(format!("unknown link kind {s:?}; use classical or quantum")),
    }
}

pub fn memory_kind(s: &str) -> Result<MemoryKind, String> {
    match s {
        "epr" => Ok(MemoryKind::Epr),
        "data" => Ok(MemoryKind::Data),
        "total" => Ok(MemoryKind::Total),
        _ => Err(format!("unknown memory kind {s:?}; use epr, data or total")),
    }
}

/// Seconds to a wait policy: `0` polls, negative waits forever.
pub fn wait_from_secs(secs: f64) -> Result<Wait, String> {
    if secs.is_nan() {
        return Err("wait must be a number of seconds".into());
    }
    Ok(Wait::from(secs))
}

fn value_err(e: String) -> PyErr {
    PyValueError::new_err(e)
}

#[derive(FromPyObject)]
enum Content {
    Text(String),
    Bytes(Vec<u8>),
}

impl From<Content> for Vec<u8> {
    fn from(c: Content) -> Self {
        match c {
            Content::Text(s) => s.into_bytes(),
            Content::Bytes(b) => b,
        }
    }
}

/// A simulated qubit. Measuring or sending it consumes the handle.
#[pyclass(name = "Qubit", module = "qnetsim")]
pub struct PyQubit {
    inner: Mutex<Option<qnetsim_core::Qubit>>,
}

impl PyQubit {
    fn wrap(q: qnetsim_core::Qubit) -> Self {
        Self {
            inner: Mutex::new(Some(q)),
        }
    }

    fn take(&self) -> PyResult<qnetsim_core::Qubit> {
        self.inner
            .lock()
            .expect("qubit lock")
            .take()
            .ok_or_else(|| err("qubit was already measured, sent or released"))
    }

    fn with<T>(&self, f: impl FnOnce(&qnetsim_core::Qubit) -> PyResult<T>) -> PyResult<T> {
        let guard = self.inner.lock().expect("qubit lock");
        let q = guard
            .as_ref()
            .ok_or_else(|| err("qubit was already measured, sent or released"))?;
        f(q)
    }

    fn gate(&self, g: Gate) -> PyResult<()> {
        self.with(|q| q.apply(&g).map_err(err))
    }
}

#[pymethods]
impl PyQubit {
    #[getter]
    fn id(&self) -> PyResult<String> {
        self.with(|q| Ok(q.id().to_string()))
    }

    #[getter]
    fn owner(&self) -> PyResult<Option<String>> {
        self.with(|q| Ok(q.owner()))
    }

    #[getter]
    fn is_live(&self) -> bool {
        self.inner.lock().expect("qubit lock").as_ref().is_some_and(|q| q.is_live())
    }

    fn i(&self) -> PyResult<()> {
        self.gate(Gate::I)
    }

    fn x(&self) -> PyResult<()> {
        self.gate(Gate::X)
    }

    fn y(&self) -> PyResult<()> {
        self.gate(Gate::Y)
    }

    fn z(&self) -> PyResult<()> {
        self.gate(Gate::Z)
    }

    fn h(&self) -> PyResult<()> {
        self.gate(Gate::H)
    }

    fn s(&self) -> PyResult<()> {
        self.gate(Gate::S)
    }

    fn t(&self) -> PyResult<()> {
        self.gate(Gate::T)
    }

    fn rx(&self, theta: f64) -> PyResult<()> {
        self.gate(Gate::Rx(theta))
    }

    fn ry(&self, theta: f64) -> PyResult<()> {
        self.gate(Gate::Ry(theta))
    }

    fn rz(&self, theta: f64) -> PyResult<()> {
        self.gate(Gate::Rz(theta))
    }

    fn cnot(&self, target: &PyQubit) -> PyResult<()> {
        if std::ptr::eq(self, target) {
            return Err(err("control and target must be different qubits"));
        }
        self.with(|c| target.with(|t| c.cnot(t).map_err(err)))
    }

    fn cz(&self, target: &PyQubit) -> PyResult<()> {
        if std::ptr::eq(self, target) {
            return Err(err("control and target must be different qubits"));
        }
        self.with(|c| target.with(|t| c.cz(t).map_err(err)))
    }

    /// Destructive Z-basis measurement.
    fn measure(&self) -> PyResult<u8> {
        self.take()?.measure().map_err(err)
    }

    fn measure_non_destructive(&self) -> PyResult<u8> {
        self.with(|q| q.measure_non_destructive().map_err(err))
    }

    fn release(&self) -> PyResult<()> {
        self.take()?.release();
        Ok(())
    }

    fn __repr__(&self) -> String {
        match self.inner.lock().expect("qubit lock").as_ref() {
            Some(q) => format!("Qubit(id={:?}, owner={:?})", q.id(), q.owner().unwrap_or_default()),
            None => "Qubit(<consumed>)".to_string(),
        }
    }
}

/// A received classical message.
#[pyclass(name = "Message", module = "qnetsim", frozen)]
pub struct PyMessage {
    #[pyo3(get)]
    sender: String,
    #[pyo3(get)]
    seq_num: u64,
    raw: Vec<u8>,
}

impl From<qnetsim_core::Message> for PyMessage {
    fn from(m: qnetsim_core::Message) -> Self {
        Self {
            sender: m.sender,
            seq_num: m.seq_num,
            raw: m.content,
        }
    }
}

#[pymethods]
impl PyMessage {
    /// Content decoded as UTF-8 (lossy).
    #[getter]
    fn content(&self) -> String {
        String::from_utf8_lossy(&self.raw).into_owned()
    }

    #[getter]
    fn raw<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.raw)
    }

    fn __repr__(&self) -> String {
        format!("Message(sender={:?}, seq_num={}, content={:?})", self.sender, self.seq_num, self.content())
    }
}

/// A network node. Create it, add connections, start it and add it to a
/// `Network`.
#[pyclass(name = "Host", module = "qnetsim", skip_from_py_object)]
#[derive(Clone)]
pub struct PyHost {
    inner: qnetsim_core::Host,
}

#[pymethods]
impl PyHost {
    #[new]
    fn new(host_id: String) -> Self {
        Self {
            inner: qnetsim_core::Host::new(host_id),
        }
    }

    #[getter]
    fn host_id(&self) -> String {
        self.inner.host_id().to_string()
    }

    fn start(&self) -> PyResult<()> {
        self.inner.start().map_err(err)
    }

    fn stop(&self) {
        self.inner.stop();
    }

    #[getter]
    fn is_running(&self) -> bool {
        self.inner.is_running()
    }

    #[pyo3(signature = (peer, kind = "both"))]
    fn add_connection(&self, peer: &str, kind: &str) -> PyResult<()> {
        self.inner.add_connection(peer, connection_kind(kind).map_err(value_err)?).map_err(err)
    }

    #[pyo3(signature = (peer, kind = "both"))]
    fn remove_connection(&self, peer: &str, kind: &str) -> PyResult<()> {
        self.inner.remove_connection(peer, connection_kind(kind).map_err(value_err)?).map_err(err)
    }

    #[getter]
    fn classical_connections(&self) -> Vec<String> {
        self.inner.classical_connections()
    }

    #[getter]
    fn quantum_connections(&self) -> Vec<String> {
        self.inner.quantum_connections()
    }

    fn set_ack_timeout(&self, secs: f64) -> PyResult<()> {
        if !(secs.is_finite() && secs > 0.0) {
            return Err(PyValueError::new_err("timeout must be a positive number of seconds"));
        }
        self.inner.set_ack_timeout(Duration::from_secs_f64(secs));
        Ok(())
    }

    fn set_memory_limit(&self, kind: &str, limit: i64) -> PyResult<()> {
        self.inner.set_memory_limit(memory_kind(kind).map_err(value_err)?, limit).map_err(err)
    }

    fn clear_memory_limit(&self, kind: &str) -> PyResult<()> {
        self.inner.clear_memory_limit(memory_kind(kind).map_err(value_err)?);
        Ok(())
    }

    #[getter]
    fn data_qubit_count(&self) -> usize {
        self.inner.data_qubit_count()
    }

    #[getter]
    fn epr_qubit_count(&self) -> usize {
        self.inner.epr_qubit_count()
    }

    fn epr_count(&self, partner: &str) -> usize {
        self.inner.epr_count(partner)
    }

    /// Relays prefix forwarded classical messages with `prefix`.
    fn set_classical_sniffing_prefix(&self, prefix: String) {
        self.inner.set_c_relay_sniffing_fn(move |_, _, m| {
            let mut content = prefix.clone().into_bytes();
            content.extend_from_slice(&m.content);
            m.content = content;
        });
        self.inner.set_c_relay_sniffing(true);
    }

    /// Relays measure forwarded qubits in the Z basis without removing them.
    fn set_quantum_sniffing(&self, enabled: bool) {
        self.inner.set_q_relay_sniffing_fn(|_, _, q| {
            let _ = q.measure_non_destructive();
        });
        self.inner.set_q_relay_sniffing(enabled);
    }

    #[pyo3(signature = (qubit_id = None))]
    fn create_qubit(&self, qubit_id: Option<&str>) -> PyResult<PyQubit> {
        self.inner.create_qubit(qubit_id).map(PyQubit::wrap).map_err(err)
    }

    #[pyo3(signature = (receiver, content, await_ack = false))]
    fn send_classical(&self, py: Python<'_>, receiver: &str, content: Content, await_ack: bool) -> PyResult<&'static str> {
        let bytes: Vec<u8> = content.into();
        let h = self.inner.clone();
        py.detach(move || h.send_classical(receiver, bytes, await_ack))
            .map(ack_name)
            .map_err(err)
    }

    fn send_broadcast(&self, content: Content) -> PyResult<()> {
        self.inner.send_broadcast(Vec::<u8>::from(content)).map_err(err)
    }

    #[pyo3(signature = (receiver, qubit, await_ack = false))]
    fn send_qubit(&self, py: Python<'_>, receiver: &str, qubit: &PyQubit, await_ack: bool) -> PyResult<&'static str> {
        let q = qubit.take()?;
        let h = self.inner.clone();
        py.detach(move || h.send_qubit(receiver, q, await_ack)).map(ack_name).map_err(err)
    }

    #[pyo3(signature = (receiver, qubit_id = None, await_ack = true))]
    fn send_epr(&self, py: Python<'_>, receiver: &str, qubit_id: Option<&str>, await_ack: bool) -> PyResult<String> {
        let h = self.inner.clone();
        py.detach(move || h.send_epr(receiver, qubit_id, await_ack)).map_err(err)
    }

    #[pyo3(signature = (receiver, qubit, await_ack = false))]
    fn send_teleport(&self, py: Python<'_>, receiver: &str, qubit: &PyQubit, await_ack: bool) -> PyResult<&'static str> {
        let q = qubit.take()?;
        let h = self.inner.clone();
        py.detach(move || h.send_teleport(receiver, q, await_ack)).map(ack_name).map_err(err)
    }

    #[pyo3(signature = (receiver, bits, await_ack = false))]
    fn send_superdense(&self, py: Python<'_>, receiver: &str, bits: &str, await_ack: bool) -> PyResult<&'static str> {
        let h = self.inner.clone();
        py.detach(move || h.send_superdense(receiver, bits, await_ack)).map(ack_name).map_err(err)
    }

    #[pyo3(signature = (receivers, distribute = true, await_ack = true))]
    fn send_ghz(&self, py: Python<'_>, receivers: Vec<String>, distribute: bool, await_ack: bool) -> PyResult<String> {
        let h = self.inner.clone();
        py.detach(move || {
            let refs: Vec<&str> = receivers.iter().map(String::as_str).collect();
            h.send_ghz(&refs, distribute, await_ack)
        })
        .map_err(err)
    }

    /// All messages from `sender`, newest first.
    #[pyo3(signature = (sender, wait = 0.0))]
    fn get_classical(&self, py: Python<'_>, sender: &str, wait: f64) -> PyResult<Vec<PyMessage>> {
        let w = wait_from_secs(wait).map_err(value_err)?;
        let h = self.inner.clone();
        Ok(py.detach(move || h.get_classical(sender, w)).into_iter().map(PyMessage::from).collect())
    }

    /// Oldest unread message from `sender`, or `None`.
    #[pyo3(signature = (sender, wait = 0.0))]
    fn get_next_classical(&self, py: Python<'_>, sender: &str, wait: f64) -> PyResult<Option<PyMessage>> {
        let w = wait_from_secs(wait).map_err(value_err)?;
        let h = self.inner.clone();
        Ok(py.detach(move || h.get_next_classical(sender, w)).map(PyMessage::from))
    }

    #[pyo3(signature = (sender, qubit_id = None, wait = 0.0))]
    fn get_data_qubit(&self, py: Python<'_>, sender: &str, qubit_id: Option<&str>, wait: f64) -> PyResult<Option<PyQubit>> {
        let w = wait_from_secs(wait).map_err(value_err)?;
        let h = self.inner.clone();
        Ok(py.detach(move || h.get_data_qubit(sender, qubit_id, w)).map(PyQubit::wrap))
    }

    #[pyo3(signature = (partner, qubit_id = None, wait = 0.0))]
    fn get_epr(&self, py: Python<'_>, partner: &str, qubit_id: Option<&str>, wait: f64) -> PyResult<Option<PyQubit>> {
        let w = wait_from_secs(wait).map_err(value_err)?;
        let h = self.inner.clone();
        Ok(py.detach(move || h.get_epr(partner, qubit_id, w)).map(PyQubit::wrap))
    }

    #[pyo3(signature = (distributor, wait = 0.0))]
    fn get_ghz(&self, py: Python<'_>, distributor: &str, wait: f64) -> PyResult<Option<PyQubit>> {
        let w = wait_from_secs(wait).map_err(value_err)?;
        let h = self.inner.clone();
        Ok(py.detach(move || h.get_ghz(distributor, w)).map(PyQubit::wrap))
    }

    fn __repr__(&self) -> String {
        format!("Host({:?})", self.inner.host_id())
    }
}

/// A simulation: one backend, one packet dispatcher, any number of hosts.
#[pyclass(name = "Network", module = "qnetsim")]
pub struct PyNetwork {
    inner: qnetsim_core::Network,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        Self {
            inner: qnetsim_core::Network::new(seed),
        }
    }

    /// Builds and starts a network from topology text. Returns the network
    /// and a dict of its started hosts.
    #[staticmethod]
    #[pyo3(signature = (config, seed = 0))]
    fn from_config(config: &str, seed: u64) -> PyResult<(PyNetwork, BTreeMap<String, PyHost>)> {
        let cfg = TopologyConfig::parse(config).map_err(err)?;
        let (net, hosts) = cfg.build(seed).map_err(err)?;
        let hosts = hosts.into_iter().map(|(k, h)| (k, PyHost { inner: h })).collect();
        Ok((PyNetwork { inner: net }, hosts))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    #[pyo3(signature = (names = Vec::new()))]
    fn start(&self, names: Vec<String>) -> PyResult<()> {
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        self.inner.start(&refs).map_err(err)
    }

    fn stop(&self, py: Python<'_>) {
        let net = self.inner.clone();
        py.detach(move || net.stop());
    }

    #[getter]
    fn is_running(&self) -> bool {
        self.inner.is_running()
    }

    fn add_host(&self, host: &PyHost) -> PyResult<()> {
        self.inner.add_host(&host.inner).map_err(err)
    }

    fn update_host(&self, host: &PyHost) -> PyResult<()> {
        self.inner.update_host(&host.inner).map_err(err)
    }

    fn get_host(&self, host_id: &str) -> Option<PyHost> {
        self.inner.get_host(host_id).map(|h| PyHost { inner: h })
    }

    #[getter]
    fn host_ids(&self) -> Vec<String> {
        self.inner.host_ids()
    }

    fn set_use_hop_by_hop(&self, on: bool) {
        self.inner.set_use_hop_by_hop(on);
    }

    fn set_use_ent_swap(&self, on: bool) {
        self.inner.set_use_ent_swap(on);
    }

    fn set_delay(&self, secs: f64) -> PyResult<()> {
        if !(secs.is_finite() && secs >= 0.0) {
            return Err(PyValueError::new_err("delay must be a non-negative number of seconds"));
        }
        self.inner.set_delay(Duration::from_secs_f64(secs));
        Ok(())
    }

    fn route(&self, kind: &str, source: &str, target: &str) -> PyResult<Vec<String>> {
        self.inner.route(link_kind(kind).map_err(value_err)?, source, target).map_err(err)
    }

    /// The classical or quantum graph in DOT format.
    #[pyo3(signature = (kind = "classical"))]
    fn export_graph(&self, kind: &str) -> PyResult<String> {
        Ok(self.inner.export_graph(link_kind(kind).map_err(value_err)?))
    }

    fn entanglement_swap_chain(&self, py: Python<'_>, source: &str, target: &str, qubit_id: &str) -> PyResult<()> {
        let net = self.inner.clone();
        py.detach(move || net.entanglement_swap_chain(source, target, qubit_id)).map_err(err)
    }

    #[pyo3(signature = (timeout = 10.0))]
    fn wait_idle(&self, py: Python<'_>, timeout: f64) -> PyResult<bool> {
        if !(timeout.is_finite() && timeout >= 0.0) {
            return Err(PyValueError::new_err("timeout must be a non-negative number of seconds"));
        }
        let net = self.inner.clone();
        Ok(py.detach(move || net.wait_idle(Duration::from_secs_f64(timeout))))
    }

    /// Number of qubits alive in the backend.
    #[getter]
    fn live_qubits(&self) -> usize {
        self.inner.backend().live_qubit_count()
    }
}

/// Runs a built-in scenario and returns a dict with `name`, `seed`,
/// `success`, `metrics` and `transcript`.
#[pyfunction]
#[pyo3(signature = (
    name,
    seed = 0,
    topology = None,
    messages = None,
    bits = None,
    key_len = None,
    sniffing = None,
    generation = true,
    wait = 10.0,
))]
#[allow(clippy::too_many_arguments)]
fn run_scenario<'py>(
    py: Python<'py>,
    name: &str,
    seed: u64,
    topology: Option<&str>,
    messages: Option<usize>,
    bits: Option<usize>,
    key_len: Option<usize>,
    sniffing: Option<bool>,
    generation: bool,
    wait: f64,
) -> PyResult<Bound<'py, PyDict>> {
    if !(wait.is_finite() && wait > 0.0) {
        return Err(PyValueError::new_err("wait must be a positive number of seconds"));
    }
    let defaults = ScenarioOptions::default();
    let opts = ScenarioOptions {
        seed,
        topology: topology.map(TopologyConfig::parse).transpose().map_err(err)?,
        record: false,
        receive_wait: Duration::from_secs_f64(wait),
        n_messages: messages.unwrap_or(defaults.n_messages),
        n_bits: bits.unwrap_or(defaults.n_bits),
        key_len: key_len.unwrap_or(defaults.key_len),
        sniffing,
        generation,
    };
    let result = py.detach(|| scenarios::run_scenario(name, &opts)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("name", &result.name)?;
    out.set_item("seed", result.seed)?;
    out.set_item("success", result.success)?;
    out.set_item("metrics", result.metrics.clone())?;
    out.set_item("transcript", result.transcript.clone())?;
    Ok(out)
}

/// Registers the module contents; shared by the extension entry point and
/// embedded use.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QnetsimError", m.py().get_type::<QnetsimError>())?;
    m.add("SCENARIOS", scenarios::SCENARIOS.to_vec())?;
    m.add_class::<PyQubit>()?;
    m.add_class::<PyMessage>()?;
    m.add_class::<PyHost>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}

#[pymodule]
fn qnetsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
