//! Seeded, self-contained reproductions of the reference examples plus BB84
//! key establishment. Each returns a [`ScenarioResult`].

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Serialize;

use crate::config::{ConfigError, TopologyConfig};
use crate::host::{HostError, ProtocolError};
use crate::network::Network;

mod anonymous;
mod data_qubits;
mod eavesdrop;
mod routing;

pub use anonymous::{anonymous_entanglement, receiver_parity, EPR_ID};
pub use data_qubits::data_qubits;
pub use eavesdrop::{eavesdropping, install_eavesdropper, qkd, qkd_keygen, QkdKeys, LISTENING_PREFIX, QBER_ABORT};
pub use routing::{entanglement_route, entanglement_routing, entanglement_weights, RouteAudit, ZERO_PAIR_WEIGHT};

pub const SCENARIOS: [&str; 5] = [
    "data_qubits",
    "anonymous_entanglement",
    "entanglement_routing",
    "eavesdropping",
    "qkd",
];

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}; valid scenarios: {list}", list = SCENARIOS.join(", "))]
    UnknownScenario(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("insufficient key material: {sifted} sifted bits for a {needed}-bit key (qber {qber:.3})")]
    InsufficientKey { sifted: usize, needed: usize, qber: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub name: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub success: bool,
    pub transcript: Vec<String>,
    /// Encoded classical packet log, when recording was requested.
    #[serde(skip)]
    pub recording: Vec<u8>,
}

impl ScenarioResult {
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario result serializes")
    }

    /// The metrics block alone, compact.
    pub fn metrics_json(&self) -> String {
        serde_json::to_string(&self.metrics).expect("metrics serialize")
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    pub seed: u64,
    /// Replaces the scenario's built-in topology.
    pub topology: Option<TopologyConfig>,
    pub record: bool,
    /// Upper bound for blocking receives inside protocols.
    pub receive_wait: Duration,
    pub n_messages: usize,
    pub n_bits: usize,
    pub key_len: usize,
    /// Eavesdropper on the middle host; defaults to on for `eavesdropping`
    /// and off for `qkd`.
    pub sniffing: Option<bool>,
    /// Idle-time EPR generation at the middle nodes of the routing example.
    pub generation: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            topology: None,
            record: false,
            receive_wait: Duration::from_secs(10),
            n_messages: 100,
            n_bits: 256,
            key_len: 32,
            sniffing: None,
            generation: true,
        }
    }
}

impl ScenarioOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

pub fn run_scenario(name: &str, opts: &ScenarioOptions) -> Result<ScenarioResult, ScenarioError> {
    match name {
        "data_qubits" => data_qubits(opts),
        "anonymous_entanglement" => anonymous_entanglement(opts),
        "entanglement_routing" => entanglement_routing(opts),
        "eavesdropping" => eavesdropping(opts),
        "qkd" => qkd(opts),
        other => Err(ScenarioError::UnknownScenario(other.to_string())),
    }
}

/// Transcript lines collected from protocol threads.
#[derive(Clone, Default)]
pub(crate) struct Transcript(Arc<Mutex<Vec<String>>>);

impl Transcript {
    pub fn push(&self, host: &str, event: &str, detail: impl std::fmt::Display) {
        self.0.lock().push(format!("{host} | {event} | {detail}"));
    }

    fn take(&self) -> Vec<String> {
        std::mem::take(&mut *self.0.lock())
    }
}

/// Collects the scenario outcome and tears the network down. Adds the
/// `leaked_qubits` metric, which must be zero for success.
pub(crate) fn finish(
    name: &str,
    net: &Network,
    opts: &ScenarioOptions,
    mut metrics: BTreeMap<String, f64>,
    success: bool,
    transcript: &Transcript,
) -> ScenarioResult {
    net.wait_idle(Duration::from_secs(2));
    let recording = if opts.record { net.take_recording() } else { Vec::new() };
    net.stop();
    let leaked = net.backend().live_qubit_count();
    metrics.insert("leaked_qubits".into(), leaked as f64);
    ScenarioResult {
        name: name.to_string(),
        seed: opts.seed,
        metrics,
        success: success && leaked == 0,
        transcript: transcript.take(),
        recording,
    }
}

pub(crate) fn setup(
    opts: &ScenarioOptions,
    default: fn() -> TopologyConfig,
    required: &[&str],
) -> Result<(Network, BTreeMap<String, crate::host::Host>), ScenarioError> {
    let topo = opts.topology.clone().unwrap_or_else(default);
    topo.has_hosts(required)?;
    let (net, hosts) = topo.build(opts.seed)?;
    if opts.record {
        net.enable_recording();
    }
    Ok((net, hosts))
}
