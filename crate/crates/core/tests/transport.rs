mod common;

use common::*;
use qnetsim_core::backend::{Backend, Gate};
use qnetsim_core::packet::CorrectionBits;
use qnetsim_core::transport::{parse_two_bits, superdense_decode, superdense_encode, teleport_decode, teleport_encode};
use qnetsim_core::TransportError;

#[test]
fn teleport_encode_decode_recovers_state() {
    let backend = Backend::new(1);
    let mut patterns = std::collections::BTreeSet::new();
    for i in 0..64 {
        let theta = 0.1 + i as f64 * 0.05;
        let phi = -3.0 + i as f64 * 0.09;
        let q = backend.create_qubit("A", "q").unwrap();
        q.apply(&Gate::Ry(theta)).unwrap();
        q.apply(&Gate::Rz(phi)).unwrap();
        let (mine, theirs) = backend.make_epr("A", "B", "e");
        let bits = teleport_encode(q, mine).unwrap();
        patterns.insert((bits.m1, bits.m2));
        let out = teleport_decode(theirs, &bits).unwrap();
        let snap = backend.inspect_state(&out).unwrap();
        let want = bloch_state(theta, phi);
        let f = (want[0].conj() * snap.amplitudes[0] + want[1].conj() * snap.amplitudes[1]).norm_sqr();
        assert!(f >= 1.0 - 1e-9, "state {i}: fidelity {f}");
    }
    assert_eq!(patterns.len(), 4);
    assert_eq!(backend.live_qubit_count(), 0);
}

#[test]
fn corrections_follow_the_measured_bits() {
    // Decoding |0> with each correction pattern gives X^m2 then Z^m1.
    let backend = Backend::new(2);
    for (m1, m2) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let q = backend.create_qubit("B", "e").unwrap();
        let out = teleport_decode(q, &CorrectionBits { m1, m2, epr_id: "e".into() }).unwrap();
        let amp = backend.inspect_state(&out).unwrap().amplitudes;
        let sign = if m1 == 1 && m2 == 1 { -1.0 } else { 1.0 };
        let want = if m2 == 1 { [c(0.0, 0.0), c(sign, 0.0)] } else { [c(1.0, 0.0), c(0.0, 0.0)] };
        assert!(max_diff(&amp, &want) < 1e-12, "{m1}{m2}: {amp:?}");
    }
}

#[test]
fn superdense_round_trip_all_messages() {
    let backend = Backend::new(3);
    for _ in 0..25 {
        for m in ["00", "01", "10", "11"] {
            let (a, b) = backend.make_epr("A", "B", "e");
            let sent = superdense_encode(m, a).unwrap();
            assert_eq!(superdense_decode(sent, b).unwrap(), m);
        }
    }
    assert_eq!(backend.live_qubit_count(), 0);
}

#[test]
fn decoding_checks_the_pair_id() {
    let backend = Backend::new(6);
    let q = backend.create_qubit("B", "other").unwrap();
    let bits = CorrectionBits { m1: 0, m2: 0, epr_id: "e".into() };
    assert!(matches!(teleport_decode(q, &bits), Err(TransportError::MissingEntanglement(_))));
}

#[test]
fn two_bit_messages_are_validated() {
    assert_eq!(parse_two_bits("10").unwrap(), (1, 0));
    for bad in ["", "0", "012", "2a", "ab"] {
        assert!(matches!(parse_two_bits(bad), Err(TransportError::InvalidMessage(_))), "{bad}");
    }
    let backend = Backend::new(4);
    let (a, _b) = backend.make_epr("A", "B", "e");
    assert!(superdense_encode("x1", a).is_err());
}

#[test]
fn send_superdense_rejects_bad_input_before_touching_entanglement() {
    let (net, hosts, n) = line(2, 5);
    assert!(hosts[&n[0]].send_superdense(&n[1], "2", true).is_err());
    assert_eq!(net.backend().epr_created(), 0);
    assert_eq!(hosts[&n[0]].send_superdense(&n[1], "01", true).unwrap(), qnetsim_core::AckResult::Acked);
    assert_eq!(hosts[&n[1]].get_next_classical(&n[0], WAIT).unwrap().content_str(), "01");
    net.stop();
}
