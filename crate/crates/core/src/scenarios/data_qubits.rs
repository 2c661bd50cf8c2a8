use std::collections::BTreeMap;

use super::{finish, setup, ScenarioError, ScenarioOptions, ScenarioResult, Transcript};
use crate::config::chain_topology;
use crate::host::AckResult;

const N_QUBITS: usize = 5;

/// Alice sends five `H|0>` qubits to Dean across the four-host chain; Dean
/// measures each one.
pub fn data_qubits(opts: &ScenarioOptions) -> Result<ScenarioResult, ScenarioError> {
    let (net, hosts) = setup(opts, chain_topology, &["Alice", "Dean"])?;
    let log = Transcript::default();
    let wait = opts.receive_wait;

    let tx_log = log.clone();
    let sender = hosts["Alice"].run_protocol(
        move |host| {
            let mut acks = 0usize;
            for i in 0..N_QUBITS {
                let q = host.create_qubit(None)?;
                q.h()?;
                let res = host.send_qubit("Dean", q, true)?;
                tx_log.push("Alice", "send_qubit", format!("#{i} {res:?}"));
                if res == AckResult::Acked {
                    acks += 1;
                }
            }
            Ok(acks)
        },
        false,
    )?;

    let rx_log = log.clone();
    let receiver = hosts["Dean"].run_protocol(
        move |host| {
            let mut outcomes = Vec::new();
            for i in 0..N_QUBITS {
                match host.get_data_qubit("Alice", None, wait) {
                    Some(q) => {
                        let m = q.measure()?;
                        rx_log.push("Dean", "measure", format!("#{i} -> {m}"));
                        outcomes.push(m);
                    }
                    None => rx_log.push("Dean", "missing", format!("#{i} did not arrive")),
                }
            }
            Ok(outcomes)
        },
        false,
    )?;

    let acks = sender.join()?;
    let outcomes = receiver.join()?;
    let ones = outcomes.iter().filter(|m| **m == 1).count();
    let metrics = BTreeMap::from([
        ("qubits_sent".to_string(), N_QUBITS as f64),
        ("qubits_received".to_string(), outcomes.len() as f64),
        ("acks".to_string(), acks as f64),
        ("ones".to_string(), ones as f64),
    ]);
    let success = outcomes.len() == N_QUBITS && acks == N_QUBITS;
    Ok(finish("data_qubits", &net, opts, metrics, success, &log))
}
