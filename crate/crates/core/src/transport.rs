//! Transport-layer encoders and decoders (teleportation, superdense coding)
//! and the receive path that turns incoming packets into store entries.

use crate::backend::{Qubit, QubitError};
use crate::host::{AckResult, Host, HostError};
use crate::packet::{
    AckStatus, ControlRecord, CorrectionBits, Message, Payload, ProtocolTag, TransportPacket, META_EPR_ID,
};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("missing entanglement: {0}")]
    MissingEntanglement(String),
    #[error("no route: {0}")]
    NoRoute(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("host error: {0}")]
    Host(String),
    #[error(transparent)]
    Qubit(#[from] QubitError),
}

impl TransportError {
    pub fn as_ack_result(&self) -> AckResult {
        match self {
            TransportError::NoRoute(_) => AckResult::NoRoute,
            TransportError::Timeout(_) => AckResult::Timeout,
            _ => AckResult::Rejected,
        }
    }
}

/// Makes sure the sender holds an EPR half shared with `receiver` and
/// returns its id. An existing half is reused (oldest first, or the one
/// named `qubit_id`); otherwise a new pair is established and acknowledged.
pub fn ensure_epr(host: &Host, receiver: &str, qubit_id: Option<&str>) -> Result<String, TransportError> {
    let ids = host.epr_ids(receiver);
    let existing = match qubit_id {
        Some(id) => ids.into_iter().find(|x| x == id),
        None => ids.into_iter().next(),
    };
    if let Some(id) = existing {
        return Ok(id);
    }
    host.send_epr(receiver, qubit_id, true).map_err(|e| match e {
        HostError::NoRoute { .. } => TransportError::NoRoute(e.to_string()),
        HostError::Timeout(m) => TransportError::Timeout(m),
        HostError::Rejected(m) | HostError::SwapFailed(m) => TransportError::Rejected(m),
        HostError::Qubit(q) => TransportError::Qubit(q),
        other => TransportError::Host(other.to_string()),
    })
}

/// Bell measurement of `q` against the sender's EPR half. Both qubits are
/// consumed.
pub fn teleport_encode(q: Qubit, epr_half: Qubit) -> Result<CorrectionBits, TransportError> {
    let epr_id = epr_half.id().to_string();
    q.cnot(&epr_half)?;
    q.h()?;
    let m1 = q.measure()?;
    let m2 = epr_half.measure()?;
    Ok(CorrectionBits { m1, m2, epr_id })
}

/// Applies `X^m2` then `Z^m1` to the receiver's EPR half, which then
/// carries the teleported state.
pub fn teleport_decode(epr_half: Qubit, bits: &CorrectionBits) -> Result<Qubit, TransportError> {
    if epr_half.id() != bits.epr_id {
        return Err(TransportError::MissingEntanglement(bits.epr_id.clone()));
    }
    if bits.m2 == 1 {
        epr_half.x()?;
    }
    if bits.m1 == 1 {
        epr_half.z()?;
    }
    Ok(epr_half)
}

pub fn parse_two_bits(bits: &str) -> Result<(u8, u8), TransportError> {
    match bits {
        "00" => Ok((0, 0)),
        "01" => Ok((0, 1)),
        "10" => Ok((1, 0)),
        "11" => Ok((1, 1)),
        _ => Err(TransportError::InvalidMessage(format!(
            "superdense payload must be two bits, got {bits:?}"
        ))),
    }
}

/// Encodes two bits onto the sender's half: `00 -> I`, `01 -> X`,
/// `10 -> Z`, `11 -> Z` then `X`.
pub fn superdense_encode(bits: &str, half: Qubit) -> Result<Qubit, TransportError> {
    let (b0, b1) = parse_two_bits(bits)?;
    if b0 == 1 {
        half.z()?;
    }
    if b1 == 1 {
        half.x()?;
    }
    Ok(half)
}

/// Bell measurement of the arrived qubit against the kept half.
pub fn superdense_decode(arrived: Qubit, kept: Qubit) -> Result<String, TransportError> {
    if arrived.id() != kept.id() {
        return Err(TransportError::MissingEntanglement(arrived.id().to_string()));
    }
    arrived.cnot(&kept)?;
    arrived.h()?;
    let a = arrived.measure()?;
    let b = kept.measure()?;
    Ok(format!("{a}{b}"))
}

/// Sends an ACK for `original` when one was requested. Refused EPR halves
/// are always reported so the sender can drop its own half.
pub(crate) fn emit_ack(host: &Host, original: &TransportPacket, status: AckStatus, detail: &str) {
    let must = original.await_ack || (status != AckStatus::Accepted && original.protocol == ProtocolTag::SendEpr);
    if !must || original.protocol == ProtocolTag::Ack {
        return;
    }
    let Ok(net) = host.network() else { return };
    let record = ControlRecord {
        status,
        original: original.protocol,
        detail: detail.to_string(),
    };
    let pkt = TransportPacket::new(
        host.host_id().to_string(),
        original.sender.clone(),
        ProtocolTag::Ack,
        Payload::Control(record),
        original.sequence,
        false,
    )
    .expect("control payload matches ACK");
    host.log("ack", &format!("{status:?} {} seq={} to {}", original.protocol, original.sequence, original.sender));
    net.send_control(pkt);
}

fn accept_or_reject(host: &Host, pkt: &TransportPacket, stored: Result<(), Qubit>, what: &str) {
    match stored {
        Ok(()) => emit_ack(host, pkt, AckStatus::Accepted, ""),
        Err(q) => {
            let id = q.id().to_string();
            host.log("reject", &format!("{what} {id} from {}: memory full", pkt.sender));
            drop(q);
            emit_ack(host, pkt, AckStatus::Rejected, &id);
        }
    }
}

/// Processes a packet addressed to `host`. Returns the packet back when it
/// needs an EPR half that has not arrived yet.
pub(crate) fn receive(host: &Host, mut pkt: TransportPacket) -> Option<TransportPacket> {
    let me = host.host_id().to_string();
    match pkt.protocol {
        ProtocolTag::SendClassical | ProtocolTag::SendBroadcast => {
            if let Payload::Classical(content) = &pkt.payload {
                host.store_message(Message {
                    sender: pkt.sender.clone(),
                    content: content.clone(),
                    seq_num: pkt.sequence,
                });
            }
            emit_ack(host, &pkt, AckStatus::Accepted, "");
        }
        ProtocolTag::SendQubit | ProtocolTag::SendEpr | ProtocolTag::SendGhz => {
            let Payload::Qubit(q) = std::mem::replace(&mut pkt.payload, Payload::Classical(Vec::new())) else {
                return None;
            };
            let _ = q.set_owner(&me);
            let stored = match pkt.protocol {
                ProtocolTag::SendQubit => host.store_data(&pkt.sender, q),
                ProtocolTag::SendEpr => host.store_epr(&pkt.sender, q),
                _ => host.store_ghz(&pkt.sender, q),
            };
            accept_or_reject(host, &pkt, stored, pkt.protocol.as_str());
        }
        ProtocolTag::SendTeleport => {
            let Payload::Corrections(bits) = &pkt.payload else { return None };
            let Some(half) = host.take_epr_now(&pkt.sender, Some(&bits.epr_id)) else {
                return Some(pkt);
            };
            match teleport_decode(half, bits) {
                Ok(q) => {
                    let stored = host.store_data(&pkt.sender, q);
                    accept_or_reject(host, &pkt, stored, "teleported qubit");
                }
                Err(e) => {
                    host.log("error", &e.to_string());
                    emit_ack(host, &pkt, AckStatus::Rejected, &e.to_string());
                }
            }
        }
        ProtocolTag::SendSuperdense => {
            let id = pkt.meta(META_EPR_ID).map(str::to_string);
            let Some(kept) = host.take_epr_now(&pkt.sender, id.as_deref()) else {
                return Some(pkt);
            };
            let Payload::Qubit(arrived) = std::mem::replace(&mut pkt.payload, Payload::Classical(Vec::new())) else {
                return None;
            };
            let _ = arrived.set_owner(&me);
            match superdense_decode(arrived, kept) {
                Ok(bits) => {
                    host.store_message(Message {
                        sender: pkt.sender.clone(),
                        content: bits.into_bytes(),
                        seq_num: pkt.sequence,
                    });
                    emit_ack(host, &pkt, AckStatus::Accepted, "");
                }
                Err(e) => {
                    host.log("error", &e.to_string());
                    emit_ack(host, &pkt, AckStatus::Rejected, &e.to_string());
                }
            }
        }
        ProtocolTag::Ack => {
            if let Payload::Control(rec) = &pkt.payload {
                if rec.original == ProtocolTag::SendEpr && rec.status != AckStatus::Accepted && !rec.detail.is_empty() {
                    drop(host.take_epr_now(&pkt.sender, Some(&rec.detail)));
                }
                host.resolve_pending(&pkt.sender, pkt.sequence, AckResult::from_status(rec.status));
            }
        }
        ProtocolTag::EprSwapControl | ProtocolTag::Relay => {
            host.log("control", &format!("{} from {}", pkt.protocol, pkt.sender));
        }
    }
    None
}

/// Gives up on a parked packet whose EPR half never arrived.
pub(crate) fn abandon(host: &Host, pkt: TransportPacket) {
    let detail = match &pkt.payload {
        Payload::Corrections(b) => b.epr_id.clone(),
        _ => pkt.meta(META_EPR_ID).unwrap_or_default().to_string(),
    };
    host.log("drop", &format!("{} from {}: missing entanglement {detail}", pkt.protocol, pkt.sender));
    emit_ack(host, &pkt, AckStatus::Rejected, &format!("missing entanglement {detail}"));
}
