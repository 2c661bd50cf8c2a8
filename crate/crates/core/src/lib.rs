//! Discrete-event simulator for quantum networks: a state-vector backend,
//! threaded hosts exchanging classical and quantum packets, routing over
//! separate classical and quantum topologies, and reference scenarios.

pub mod backend;
pub mod cli;
pub mod config;
pub mod host;
pub mod network;
pub mod packet;
pub mod scenarios;
pub mod transport;

pub use config::{ConfigError, TopologyConfig};
pub use backend::{Backend, Gate, Qubit, QubitError};
pub use host::{AckResult, ConnectionKind, Host, HostError, MemoryKind, ProtocolHandle, Wait};
pub use network::{Graph, LinkKind, Network, NetworkError, RoutingFn};
pub use packet::{Message, ProtocolTag};
pub use scenarios::{run_scenario, ScenarioError, ScenarioOptions, ScenarioResult};
pub use transport::TransportError;
