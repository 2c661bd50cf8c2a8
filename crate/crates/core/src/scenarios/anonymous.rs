use std::collections::BTreeMap;

use rand::Rng;

use super::{finish, setup, ScenarioError, ScenarioOptions, ScenarioResult, Transcript};
use crate::config::ghz_topology;
use crate::host::{AckResult, Host, Wait};

pub const EPR_ID: &str = "12345";

const PEERS: [&str; 4] = ["B", "C", "D", "E"];

/// Z-correction the receiver applies to its GHZ share: the XOR of the
/// broadcasts of every other participant.
///
/// The neutral nodes broadcast their X-basis outcomes and the sender
/// broadcasts its Z decision; together they fix the relative phase of the
/// remaining two-qubit state, so no other input is needed.
pub fn receiver_parity(peer_bits: &[u8]) -> u8 {
    peer_bits.iter().fold(0, |acc, b| acc ^ (b & 1))
}

fn random_bit(host: &Host) -> u8 {
    host.with_rng(|r| r.gen_range(0..2u8))
}

struct SenderOutcome {
    had_share: bool,
    fidelity: Option<f64>,
    teleport: Option<AckResult>,
}

struct ReceiverOutcome {
    had_share: bool,
    broadcasts_seen: usize,
    teleported_bit: Option<u8>,
}

#[cfg(any(test, feature = "diagnostics"))]
fn pair_fidelity(q: &crate::backend::Qubit) -> Option<f64> {
    let snap = q.backend().inspect_state(q).ok()?;
    if snap.amplitudes.len() != 4 {
        return None;
    }
    // Φ+ overlap does not depend on which qubit is the high bit.
    let overlap = (snap.amplitudes[0] + snap.amplitudes[3]) * std::f64::consts::FRAC_1_SQRT_2;
    Some((overlap.norm_sqr() * 1e9).round() / 1e9)
}

#[cfg(not(any(test, feature = "diagnostics")))]
fn pair_fidelity(_q: &crate::backend::Qubit) -> Option<f64> {
    None
}

/// GHZ-based anonymous entanglement: A distributes a four-party GHZ state,
/// B and C act as neutral nodes, D and E end up sharing a hidden EPR pair
/// over which D teleports `|0>` to E.
pub fn anonymous_entanglement(opts: &ScenarioOptions) -> Result<ScenarioResult, ScenarioError> {
    let (net, hosts) = setup(opts, ghz_topology, &["A", "B", "C", "D", "E"])?;
    let log = Transcript::default();
    let wait = opts.receive_wait;
    let (ready_tx, ready_rx) = crossbeam_channel::bounded::<()>(1);

    let dlog = log.clone();
    let distributor = hosts["A"].run_protocol(
        move |host| {
            let id = host.send_ghz(&PEERS, true, false)?;
            dlog.push("A", "send_ghz", id);
            Ok(())
        },
        false,
    )?;

    let mut nodes = Vec::new();
    for name in ["B", "C"] {
        let nlog = log.clone();
        nodes.push(hosts[name].run_protocol(
            move |host| {
                let Some(q) = host.get_ghz("A", wait) else {
                    nlog.push(host.host_id(), "failed", "no GHZ share");
                    return Ok(false);
                };
                q.h()?;
                let m = q.measure()?;
                host.send_broadcast(m.to_string())?;
                nlog.push(host.host_id(), "broadcast", m);
                Ok(true)
            },
            false,
        )?);
    }

    let slog = log.clone();
    let sender = hosts["D"].run_protocol(
        move |host| {
            let Some(q) = host.get_ghz("A", wait) else {
                slog.push("D", "failed", "no GHZ share");
                return Ok(SenderOutcome {
                    had_share: false,
                    fidelity: None,
                    teleport: None,
                });
            };
            let b = random_bit(&host);
            host.send_broadcast(b.to_string())?;
            if b == 1 {
                q.z()?;
            }
            // E signals once its correction is applied, so the pair can be
            // inspected before teleportation consumes it.
            let fidelity = match ready_rx.recv_timeout(wait) {
                Ok(()) => pair_fidelity(&q),
                Err(_) => None,
            };
            host.add_epr("E", q, Some(EPR_ID))?;
            let payload = host.create_qubit(None)?;
            let res = host.send_teleport("E", payload, true)?;
            slog.push("D", "send_teleport", format!("{res:?}"));
            host.empty_classical();
            Ok(SenderOutcome {
                had_share: true,
                fidelity,
                teleport: Some(res),
            })
        },
        false,
    )?;

    let rlog = log.clone();
    let receiver = hosts["E"].run_protocol(
        move |host| {
            let Some(q) = host.get_ghz("A", wait) else {
                rlog.push("E", "failed", "no GHZ share");
                return Ok(ReceiverOutcome {
                    had_share: false,
                    broadcasts_seen: 0,
                    teleported_bit: None,
                });
            };
            let b = random_bit(&host);
            host.send_broadcast(b.to_string())?;
            let mut peer_bits = Vec::new();
            for peer in ["B", "C", "D"] {
                if let Some(m) = host.get_next_classical(peer, wait) {
                    if let Ok(bit) = m.content_str().trim().parse::<u8>() {
                        peer_bits.push(bit);
                    }
                }
            }
            let parity = receiver_parity(&peer_bits);
            rlog.push("E", "parity", parity);
            if parity == 1 {
                q.z()?;
            }
            let _ = ready_tx.send(());
            host.add_epr("D", q, Some(EPR_ID))?;
            let teleported_bit = match host.get_data_qubit("D", None, Wait::from(wait)) {
                Some(t) => Some(t.measure()?),
                None => None,
            };
            rlog.push("E", "teleported", format!("{teleported_bit:?}"));
            Ok(ReceiverOutcome {
                had_share: true,
                broadcasts_seen: peer_bits.len(),
                teleported_bit,
            })
        },
        false,
    )?;

    distributor.join()?;
    let mut shares = 0usize;
    for n in nodes {
        shares += usize::from(n.join()?);
    }
    let s = sender.join()?;
    let r = receiver.join()?;
    shares += usize::from(s.had_share) + usize::from(r.had_share);

    let mut metrics = BTreeMap::from([
        ("ghz_shares_received".to_string(), shares as f64),
        ("broadcasts_seen".to_string(), r.broadcasts_seen as f64),
        ("teleported_bit".to_string(), r.teleported_bit.map_or(-1.0, f64::from)),
        (
            "teleport_acked".to_string(),
            f64::from(u8::from(s.teleport == Some(AckResult::Acked))),
        ),
    ]);
    let mut success = shares == PEERS.len() && r.broadcasts_seen == 3 && r.teleported_bit == Some(0);
    if let Some(f) = s.fidelity {
        metrics.insert("pair_fidelity".to_string(), f);
        success &= f >= 1.0 - 1e-9;
    }
    Ok(finish("anonymous_entanglement", &net, opts, metrics, success, &log))
}
