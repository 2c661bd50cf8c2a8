use std::collections::BTreeMap;
use std::time::Duration;

use rand::Rng;

use super::{finish, setup, ScenarioError, ScenarioOptions, ScenarioResult, Transcript};
use crate::config::line_topology;
use crate::host::{AckResult, BoxError, Host, HostError};
use crate::network::{LinkKind, Network};

pub const LISTENING_PREFIX: &str = "I'm listening :)";

/// QBER above which key establishment is abandoned.
pub const QBER_ABORT: f64 = 0.11;

const BASES_TAG: &str = "bases:";
const REVEAL_TAG: &str = "reveal:";

/// Makes `eve` measure every relayed qubit in the Z basis (keeping it in
/// flight) and prefix every relayed classical message.
pub fn install_eavesdropper(eve: &Host) {
    eve.set_q_relay_sniffing_fn(|_, _, q| {
        let _ = q.measure_non_destructive();
    });
    eve.set_c_relay_sniffing_fn(|_, _, msg| {
        let mut content = LISTENING_PREFIX.as_bytes().to_vec();
        content.extend_from_slice(&msg.content);
        msg.content = content;
    });
    eve.set_q_relay_sniffing(true);
    eve.set_c_relay_sniffing(true);
}

/// Payload following the last occurrence of `tag`, which tolerates text a
/// relay may have put in front of it.
fn tagged(content: &str, tag: &str) -> Option<String> {
    content.rfind(tag).map(|i| content[i + tag.len()..].to_string())
}

fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|b| char::from(b'0' + b)).collect()
}

fn string_to_bits(s: &str) -> Vec<u8> {
    s.bytes().filter_map(|c| match c {
        b'0' => Some(0),
        b'1' => Some(1),
        _ => None,
    })
    .collect()
}

/// How many sifted bits are revealed for error estimation.
#[derive(Debug, Clone, Copy)]
enum Reveal {
    All,
    /// Half the sifted bits, but never so many that fewer than `key_len`
    /// remain.
    KeepKey(usize),
}

impl Reveal {
    fn sample_len(self, sifted: usize) -> usize {
        match self {
            Reveal::All => sifted,
            Reveal::KeepKey(key_len) => (sifted / 2).min(sifted.saturating_sub(key_len)),
        }
    }
}

struct Bb84 {
    alice_sifted: Vec<u8>,
    bob_sifted: Vec<u8>,
    sample_len: usize,
    errors: usize,
    qber: f64,
}

/// Prepare-and-measure BB84 between `alice` and `bob`: random bits in
/// random Z/X bases, basis sifting over the classical channel, then Alice
/// reveals a prefix of her sifted bits so Bob can estimate the error rate.
fn bb84(alice: &Host, bob: &Host, n_raw: usize, reveal: Reveal, wait: Duration) -> Result<Bb84, ScenarioError> {
    let (a_id, b_id) = (alice.host_id().to_string(), bob.host_id().to_string());
    // Qubits flow one way, the basis exchange needs both directions.
    let net = alice.network()?;
    for (kind, from, to) in [
        (LinkKind::Quantum, &a_id, &b_id),
        (LinkKind::Classical, &a_id, &b_id),
        (LinkKind::Classical, &b_id, &a_id),
    ] {
        if net.route(kind, from, to).is_err() {
            return Err(HostError::NoRoute {
                from: from.clone(),
                to: to.clone(),
            }
            .into());
        }
    }

    let peer = b_id.clone();
    let alice_side = alice.run_protocol(
        move |host| -> Result<Vec<u8>, BoxError> {
            let mut bits = Vec::with_capacity(n_raw);
            let mut bases = Vec::with_capacity(n_raw);
            for _ in 0..n_raw {
                let (bit, basis) = host.with_rng(|r| (r.gen_range(0..2u8), r.gen_range(0..2u8)));
                let q = host.create_qubit(None)?;
                if bit == 1 {
                    q.x()?;
                }
                if basis == 1 {
                    q.h()?;
                }
                host.send_qubit(&peer, q, true)?;
                bits.push(bit);
                bases.push(basis);
            }
            let theirs = host
                .get_next_classical(&peer, wait)
                .and_then(|m| tagged(&m.content_str(), BASES_TAG))
                .ok_or("no basis announcement")?;
            host.send_classical(&peer, format!("{BASES_TAG}{}", bits_to_string(&bases)), true)?;
            let sifted: Vec<u8> = theirs
                .bytes()
                .zip(&bases)
                .zip(&bits)
                .filter(|((theirs, mine), _)| *theirs == b'0' + **mine)
                .map(|(_, bit)| *bit)
                .collect();
            let sample = reveal.sample_len(sifted.len());
            host.send_classical(&peer, format!("{REVEAL_TAG}{}", bits_to_string(&sifted[..sample])), true)?;
            Ok(sifted)
        },
        false,
    )?;

    let peer = a_id.clone();
    let bob_side = bob.run_protocol(
        move |host| -> Result<(Vec<u8>, usize), BoxError> {
            let mut results = Vec::with_capacity(n_raw);
            let mut bases = String::with_capacity(n_raw);
            for _ in 0..n_raw {
                match host.get_data_qubit(&peer, None, wait) {
                    Some(q) => {
                        let basis = host.with_rng(|r| r.gen_range(0..2u8));
                        if basis == 1 {
                            q.h()?;
                        }
                        results.push(q.measure()?);
                        bases.push(char::from(b'0' + basis));
                    }
                    None => {
                        results.push(0);
                        bases.push('-');
                    }
                }
            }
            host.send_classical(&peer, format!("{BASES_TAG}{bases}"), true)?;
            let theirs = host
                .get_next_classical(&peer, wait)
                .and_then(|m| tagged(&m.content_str(), BASES_TAG))
                .ok_or("no basis announcement")?;
            let sifted: Vec<u8> = theirs
                .bytes()
                .zip(bases.bytes())
                .zip(&results)
                .filter(|((theirs, mine), _)| theirs == mine)
                .map(|(_, m)| *m)
                .collect();
            let revealed = host
                .get_next_classical(&peer, wait)
                .and_then(|m| tagged(&m.content_str(), REVEAL_TAG))
                .map(|s| string_to_bits(&s))
                .ok_or("no revealed sample")?;
            let errors = revealed.iter().zip(&sifted).filter(|(a, b)| a != b).count();
            Ok((sifted, errors))
        },
        false,
    )?;

    let alice_sifted = alice_side.join()?;
    let (bob_sifted, errors) = bob_side.join()?;
    let sample_len = reveal.sample_len(alice_sifted.len());
    let qber = if sample_len == 0 {
        0.0
    } else {
        errors as f64 / sample_len as f64
    };
    Ok(Bb84 {
        alice_sifted,
        bob_sifted,
        sample_len,
        errors,
        qber,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QkdKeys {
    pub key_a: Vec<u8>,
    pub key_b: Vec<u8>,
    pub qber: f64,
    pub sifted_len: usize,
    pub sample_len: usize,
}

/// Establishes a `key_len`-bit key between hosts `a` and `b` of a running
/// network with BB84, sending four raw qubits per key bit. Fails with
/// [`ScenarioError::InsufficientKey`] when sifting leaves too few bits or
/// the estimated QBER exceeds [`QBER_ABORT`].
pub fn qkd_keygen(net: &Network, a: &str, b: &str, key_len: usize, wait: Duration) -> Result<QkdKeys, ScenarioError> {
    if key_len == 0 {
        return Err(ScenarioError::InvalidOption("key_len must be at least 1".into()));
    }
    let alice = net
        .get_host(a)
        .ok_or_else(|| ScenarioError::InvalidOption(format!("unknown host {a}")))?;
    let bob = net
        .get_host(b)
        .ok_or_else(|| ScenarioError::InvalidOption(format!("unknown host {b}")))?;
    let run = bb84(&alice, &bob, 4 * key_len, Reveal::KeepKey(key_len), wait)?;
    let sifted = run.alice_sifted.len();
    if sifted < run.sample_len + key_len || run.qber > QBER_ABORT {
        return Err(ScenarioError::InsufficientKey {
            sifted,
            needed: key_len,
            qber: run.qber,
        });
    }
    let range = run.sample_len..run.sample_len + key_len;
    Ok(QkdKeys {
        key_a: run.alice_sifted[range.clone()].to_vec(),
        key_b: run.bob_sifted.get(range).map(<[u8]>::to_vec).unwrap_or_default(),
        qber: run.qber,
        sifted_len: sifted,
        sample_len: run.sample_len,
    })
}

/// Eavesdropping on the line A - E - B: E prefixes relayed classical
/// messages and measures relayed qubits. A BB84 run between A and B then
/// reveals the whole sifted string to estimate the error rate.
pub fn eavesdropping(opts: &ScenarioOptions) -> Result<ScenarioResult, ScenarioError> {
    if opts.n_bits < 64 {
        return Err(ScenarioError::InvalidOption("n_bits must be at least 64".into()));
    }
    let (net, hosts) = setup(opts, line_topology, &["A", "E", "B"])?;
    let log = Transcript::default();
    let sniffing = opts.sniffing.unwrap_or(true);
    if sniffing {
        install_eavesdropper(&hosts["E"]);
    }
    let (alice, bob) = (&hosts["A"], &hosts["B"]);

    let ack = alice.send_classical("B", "hello", true)?;
    let greeting = bob.get_next_classical("A", opts.receive_wait);
    let prefix_detected = greeting
        .as_ref()
        .is_some_and(|m| m.content_str().starts_with(LISTENING_PREFIX));
    log.push("B", "received", greeting.map(|m| m.content_str()).unwrap_or_default());
    log.push("A", "send_classical", format!("{ack:?}"));

    let run = bb84(alice, bob, opts.n_bits, Reveal::All, opts.receive_wait)?;
    log.push("B", "qber", format!("{}/{}", run.errors, run.sample_len));
    let metrics = BTreeMap::from([
        ("sniffing".to_string(), f64::from(u8::from(sniffing))),
        ("prefix_detected".to_string(), f64::from(u8::from(prefix_detected))),
        ("raw_bits".to_string(), opts.n_bits as f64),
        ("sifted_len".to_string(), run.alice_sifted.len() as f64),
        ("revealed_len".to_string(), run.sample_len as f64),
        ("errors".to_string(), run.errors as f64),
        ("qber".to_string(), run.qber),
    ]);
    let success = ack == AckResult::Acked
        && if sniffing {
            prefix_detected && run.qber > QBER_ABORT
        } else {
            !prefix_detected && run.errors == 0
        };
    Ok(finish("eavesdropping", &net, opts, metrics, success, &log))
}

/// BB84 key establishment between A and B on the line topology, with the
/// middle host eavesdropping when `sniffing` is set.
pub fn qkd(opts: &ScenarioOptions) -> Result<ScenarioResult, ScenarioError> {
    let (net, hosts) = setup(opts, line_topology, &["A", "E", "B"])?;
    let log = Transcript::default();
    let sniffing = opts.sniffing.unwrap_or(false);
    if sniffing {
        install_eavesdropper(&hosts["E"]);
    }
    let mut metrics = BTreeMap::from([
        ("sniffing".to_string(), f64::from(u8::from(sniffing))),
        ("key_len".to_string(), opts.key_len as f64),
        ("raw_bits".to_string(), (4 * opts.key_len) as f64),
    ]);
    let success = match qkd_keygen(&net, "A", "B", opts.key_len, opts.receive_wait) {
        Ok(keys) => {
            let matched = keys.key_a == keys.key_b;
            log.push("A", "key", bits_to_string(&keys.key_a));
            log.push("B", "key", bits_to_string(&keys.key_b));
            metrics.extend([
                ("aborted".to_string(), 0.0),
                ("keys_match".to_string(), f64::from(u8::from(matched))),
                ("qber".to_string(), keys.qber),
                ("sifted_len".to_string(), keys.sifted_len as f64),
                ("sample_len".to_string(), keys.sample_len as f64),
            ]);
            matched
        }
        Err(ScenarioError::InsufficientKey { sifted, qber, .. }) => {
            log.push("B", "abort", format!("sifted={sifted} qber={qber:.3}"));
            metrics.extend([
                ("aborted".to_string(), 1.0),
                ("keys_match".to_string(), 0.0),
                ("qber".to_string(), qber),
                ("sifted_len".to_string(), sifted as f64),
            ]);
            false
        }
        Err(e) => {
            net.stop();
            return Err(e);
        }
    };
    Ok(finish("qkd", &net, opts, metrics, success, &log))
}
