mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{line, WAIT};
use qnetsim_core::config::{ghz_topology, TopologyConfig};
use qnetsim_core::packet::ProtocolTag;
use qnetsim_core::{AckResult, ConnectionKind, Host, HostError, LinkKind, Network, NetworkError};

#[test]
fn classical_message_is_acked_and_stored() {
    let (net, hosts, n) = line(3, 1);
    let res = hosts[&n[0]].send_classical(&n[2], "hello", true).unwrap();
    assert_eq!(res, AckResult::Acked);
    let msgs = hosts[&n[2]].get_classical(&n[0], 0.0);
    assert_eq!(msgs.len(), 1);
    assert_eq!(msgs[0].content_str(), "hello");
    assert_eq!(msgs[0].sender, n[0]);
    net.stop();
}

#[test]
fn sequence_numbers_order_messages() {
    let (net, hosts, n) = line(2, 2);
    for i in 0..5 {
        hosts[&n[0]].send_classical(&n[1], format!("m{i}"), true).unwrap();
    }
    let newest_first: Vec<_> = hosts[&n[1]].get_classical(&n[0], 0.0).iter().map(|m| m.content_str()).collect();
    assert_eq!(newest_first, ["m4", "m3", "m2", "m1", "m0"]);
    for i in 0..5 {
        assert_eq!(hosts[&n[1]].get_next_classical(&n[0], 0.0).unwrap().content_str(), format!("m{i}"));
    }
    assert!(hosts[&n[1]].get_next_classical(&n[0], 0.0).is_none());
    net.stop();
}

#[test]
fn unknown_receiver_is_no_route() {
    let (net, hosts, n) = line(2, 3);
    assert_eq!(hosts[&n[0]].send_classical("nobody", "x", true).unwrap(), AckResult::NoRoute);
    let q = hosts[&n[0]].create_qubit(None).unwrap();
    assert_eq!(hosts[&n[0]].send_qubit("nobody", q, true).unwrap(), AckResult::NoRoute);
    assert!(matches!(hosts[&n[0]].send_epr("nobody", None, true), Err(HostError::NoRoute { .. })));
    net.stop();
    assert_eq!(net.backend().live_qubit_count(), 0);
}

#[test]
fn disconnected_components_are_no_route() {
    let cfg = TopologyConfig::new(&["A", "B", "C", "D"])
        .link("A", "B", ConnectionKind::Both, true)
        .link("C", "D", ConnectionKind::Both, true);
    let (net, hosts) = cfg.build(4).unwrap();
    assert_eq!(hosts["A"].send_classical("D", "x", true).unwrap(), AckResult::NoRoute);
    assert!(matches!(
        net.route(LinkKind::Quantum, "A", "C"),
        Err(NetworkError::NoRoute { .. })
    ));
    net.stop();
}

#[test]
fn broadcast_reaches_every_reachable_host_once() {
    let (net, hosts) = ghz_topology().build(5).unwrap();
    hosts["A"].send_broadcast("from A").unwrap();
    hosts["B"].send_broadcast("from B").unwrap();
    assert!(net.wait_idle(WAIT));
    let count = |from: &str| {
        hosts
            .values()
            .map(|h| h.get_classical(from, 0.0).len())
            .sum::<usize>()
    };
    // A's links are one-way, so B's broadcast cannot reach A.
    assert_eq!(count("A"), 4);
    assert_eq!(count("B"), 3);
    assert!(hosts["A"].get_classical("B", 0.0).is_empty());
    assert!(hosts["B"].get_classical("B", 0.0).is_empty());
    net.stop();
}

#[test]
fn hop_log_follows_links_of_the_right_kind() {
    let cfg = TopologyConfig::new(&["A", "B", "C", "D"])
        .link("A", "B", ConnectionKind::Classical, true)
        .link("B", "D", ConnectionKind::Classical, true)
        .link("A", "C", ConnectionKind::Quantum, true)
        .link("C", "D", ConnectionKind::Both, true);
    let (net, hosts) = cfg.build(6).unwrap();
    net.enable_hop_log();
    hosts["A"].send_classical("D", "c", false).unwrap();
    let q = hosts["A"].create_qubit(None).unwrap();
    hosts["A"].send_qubit("D", q, false).unwrap();
    assert!(hosts["D"].get_data_qubit("A", None, WAIT).is_some());
    assert!(net.wait_idle(WAIT));
    let log = net.hop_log();
    let classical = net.graph(LinkKind::Classical);
    let quantum = net.graph(LinkKind::Quantum);
    for hop in &log {
        let g = match hop.kind {
            LinkKind::Classical => &classical,
            LinkKind::Quantum => &quantum,
        };
        assert!(g.has_edge(&hop.from, &hop.to), "{hop:?}");
    }
    let qubit_hops: Vec<_> = log
        .iter()
        .filter(|h| h.protocol == ProtocolTag::SendQubit)
        .map(|h| (h.from.as_str(), h.to.as_str()))
        .collect();
    assert_eq!(qubit_hops, [("A", "C"), ("C", "D")]);
    let classical_hops: Vec<_> = log
        .iter()
        .filter(|h| h.protocol == ProtocolTag::SendClassical)
        .map(|h| (h.from.as_str(), h.to.as_str()))
        .collect();
    assert_eq!(classical_hops, [("A", "B"), ("B", "D")]);
    net.stop();
}

#[test]
fn default_route_is_fewest_hops_with_name_tie_break() {
    let cfg = TopologyConfig::new(&["S", "x", "a", "T", "y"])
        .link("S", "x", ConnectionKind::Both, true)
        .link("S", "a", ConnectionKind::Both, true)
        .link("x", "T", ConnectionKind::Both, true)
        .link("a", "T", ConnectionKind::Both, true)
        .link("S", "y", ConnectionKind::Both, true)
        .link("y", "x", ConnectionKind::Both, true);
    let (net, _hosts) = cfg.build(7).unwrap();
    assert_eq!(net.route(LinkKind::Classical, "S", "T").unwrap(), ["S", "a", "T"]);
    net.stop();
}

fn counting_router(net: &Network, kind: LinkKind) -> Arc<AtomicUsize> {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = Arc::clone(&calls);
    net.set_routing_fn(kind, move |_, g, s, t| {
        c.fetch_add(1, Ordering::SeqCst);
        g.shortest_path(s, t).ok_or_else(|| "no path".to_string())
    });
    calls
}

#[test]
fn hop_by_hop_routes_at_every_relay() {
    let (net, hosts, n) = line(5, 8);
    let calls = counting_router(&net, LinkKind::Classical);
    hosts[&n[0]].send_classical(&n[4], "x", false).unwrap();
    assert!(hosts[&n[4]].get_next_classical(&n[0], WAIT).is_some());
    // The origin check plus one decision at each of the four forwarding hosts.
    assert_eq!(calls.load(Ordering::SeqCst), 5);
    net.stop();
}

#[test]
fn origin_pinned_routes_are_computed_once() {
    let (net, hosts, n) = line(5, 9);
    net.set_use_hop_by_hop(false);
    let calls = counting_router(&net, LinkKind::Classical);
    hosts[&n[0]].send_classical(&n[4], "x", false).unwrap();
    assert!(hosts[&n[4]].get_next_classical(&n[0], WAIT).is_some());
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    net.stop();
}

#[test]
fn routing_function_errors_become_no_route() {
    let (net, hosts, n) = line(3, 10);
    net.set_routing_fn(LinkKind::Classical, |_, _, _, _| Err("refused".into()));
    assert_eq!(hosts[&n[0]].send_classical(&n[2], "x", true).unwrap(), AckResult::NoRoute);
    assert!(matches!(net.route(LinkKind::Classical, &n[0], &n[2]), Err(NetworkError::Routing(_))));
    net.set_routing_algo(LinkKind::Classical, None);
    assert_eq!(hosts[&n[0]].send_classical(&n[2], "x", true).unwrap(), AckResult::Acked);
    net.stop();
}

#[test]
fn invalid_custom_paths_are_refused() {
    let (net, _hosts, n) = line(3, 11);
    let (a, c) = (n[0].clone(), n[2].clone());
    net.set_routing_fn(LinkKind::Classical, move |_, _, _, _| Ok(vec![a.clone(), c.clone()]));
    assert!(net.route(LinkKind::Classical, &n[0], &n[2]).is_err());
    net.stop();
}

#[test]
fn network_delay_slows_each_hop() {
    let (net, hosts, n) = line(3, 12);
    net.set_delay(Duration::from_millis(20));
    let start = Instant::now();
    assert_eq!(hosts[&n[0]].send_classical(&n[2], "x", true).unwrap(), AckResult::Acked);
    // Two hops out and two back.
    assert!(start.elapsed() >= Duration::from_millis(80), "{:?}", start.elapsed());
    net.stop();
}

#[test]
fn ack_timeout_is_reported() {
    let cfg = TopologyConfig::new(&["A", "B"]).link("A", "B", ConnectionKind::Both, false);
    let (net, hosts) = cfg.build(13).unwrap();
    hosts["A"].set_ack_timeout(Duration::from_millis(100));
    // B has no classical route back, so no acknowledgement can arrive.
    assert_eq!(hosts["A"].send_classical("B", "x", true).unwrap(), AckResult::Timeout);
    assert_eq!(hosts["B"].get_next_classical("A", WAIT).unwrap().content_str(), "x");
    net.stop();
}

#[test]
fn duplicate_and_unknown_hosts() {
    let net = Network::new(0);
    net.start(&[]).unwrap();
    let a = Host::new("A");
    net.add_host(&a).unwrap();
    assert!(matches!(net.add_host(&Host::new("A")), Err(NetworkError::DuplicateHost(_))));
    assert!(matches!(net.route(LinkKind::Classical, "A", "Z"), Err(NetworkError::UnknownHost(_))));
    net.stop();
    let net = Network::new(0);
    assert!(matches!(net.start(&["X", "X"]), Err(NetworkError::DuplicateHost(_))));
}

#[test]
fn update_host_refreshes_the_graph() {
    let (net, hosts, n) = line(2, 14);
    let a = &hosts[&n[0]];
    assert!(net.graph(LinkKind::Quantum).has_edge(&n[0], &n[1]));
    a.remove_connection(&n[1], ConnectionKind::Quantum).unwrap();
    // Edges are snapshotted when the host is added or updated.
    assert!(net.graph(LinkKind::Quantum).has_edge(&n[0], &n[1]));
    net.update_host(a).unwrap();
    assert!(!net.graph(LinkKind::Quantum).has_edge(&n[0], &n[1]));
    assert!(net.graph(LinkKind::Classical).has_edge(&n[0], &n[1]));
    net.stop();
}

#[test]
fn relay_sniffing_sees_only_forwarded_traffic() {
    let (net, hosts, n) = line(3, 15);
    let seen = Arc::new(AtomicUsize::new(0));
    for h in hosts.values() {
        h.set_c_relay_sniffing(true);
        let s = Arc::clone(&seen);
        h.set_c_relay_sniffing_fn(move |_, _, m| {
            s.fetch_add(1, Ordering::SeqCst);
            m.content.extend_from_slice(b"!");
        });
    }
    hosts[&n[0]].send_classical(&n[2], "x", false).unwrap();
    hosts[&n[0]].send_classical(&n[1], "y", false).unwrap();
    assert_eq!(hosts[&n[2]].get_next_classical(&n[0], WAIT).unwrap().content_str(), "x!");
    assert_eq!(hosts[&n[1]].get_next_classical(&n[0], WAIT).unwrap().content_str(), "y");
    assert_eq!(seen.load(Ordering::SeqCst), 1);
    net.stop();
}

#[test]
fn quantum_sniffing_can_disturb_qubits() {
    let (net, hosts, n) = line(3, 16);
    let relay = &hosts[&n[1]];
    relay.set_q_relay_sniffing(true);
    relay.set_q_relay_sniffing_fn(|_, _, q| {
        q.x().unwrap();
    });
    let q = hosts[&n[0]].create_qubit(None).unwrap();
    hosts[&n[0]].send_qubit(&n[2], q, true).unwrap();
    let got = hosts[&n[2]].get_data_qubit(&n[0], None, WAIT).unwrap();
    assert_eq!(got.owner().as_deref(), Some(n[2].as_str()));
    assert_eq!(got.measure().unwrap(), 1);
    net.stop();
}

#[test]
fn stopped_hosts_refuse_to_send() {
    let (net, hosts, n) = line(2, 17);
    let a = hosts[&n[0]].clone();
    net.stop();
    assert!(!a.is_running());
    assert!(matches!(a.send_classical(&n[1], "x", true), Err(HostError::NotStarted(_) | HostError::HostStopped(_))));
    assert_eq!(net.backend().live_qubit_count(), 0);
}

#[test]
fn epr_pairs_span_multiple_hops() {
    let (net, hosts, n) = line(4, 18);
    let id = hosts[&n[0]].send_epr(&n[3], Some("pair"), true).unwrap();
    assert_eq!(id, "pair");
    let a = hosts[&n[0]].get_epr(&n[3], Some("pair"), 0.0).unwrap();
    let b = hosts[&n[3]].get_epr(&n[0], Some("pair"), WAIT).unwrap();
    assert!((common::phi_plus_fidelity(net.backend(), &a, &b) - 1.0).abs() < 1e-9);
    net.stop();
}

#[test]
fn packet_counts_track_protocols() {
    let (net, hosts, n) = line(2, 19);
    hosts[&n[0]].send_classical(&n[1], "x", true).unwrap();
    hosts[&n[0]].send_epr(&n[1], None, true).unwrap();
    net.wait_idle(WAIT);
    let counts = net.packet_counts();
    assert_eq!(counts.get(&ProtocolTag::SendClassical), Some(&1));
    assert_eq!(counts.get(&ProtocolTag::SendEpr), Some(&1));
    assert_eq!(counts.get(&ProtocolTag::Ack), Some(&2));
    net.stop();
}
