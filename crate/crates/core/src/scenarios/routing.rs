use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::Rng;

use super::{finish, setup, ScenarioError, ScenarioOptions, ScenarioResult, Transcript};
use crate::config::diamond_topology;
use crate::host::{AckResult, Host};
use crate::network::{Graph, LinkKind, Network};

/// Weight of a quantum edge without any stored EPR pair.
pub const ZERO_PAIR_WEIGHT: f64 = 1_000_000.0;

const CHOICES: [&str; 4] = ["00", "11", "10", "01"];

/// Edge weights `1 / pairs` read from the live EPR stores, with
/// [`ZERO_PAIR_WEIGHT`] for edges without pairs.
pub fn entanglement_weights(net: &Network, graph: &Graph) -> BTreeMap<(String, String), f64> {
    let mut weights = BTreeMap::new();
    for node in graph.nodes() {
        let Some(host) = net.get_host(node) else { continue };
        for peer in host.quantum_connections() {
            if !graph.contains(&peer) {
                continue;
            }
            let pairs = host.epr_count(&peer);
            let w = if pairs == 0 { ZERO_PAIR_WEIGHT } else { 1.0 / pairs as f64 };
            weights.insert((node.to_string(), peer), w);
        }
    }
    weights
}

/// Minimum-weight path over the entanglement graph described by `weights`.
pub fn entanglement_route(weights: &BTreeMap<(String, String), f64>, source: &str, target: &str) -> Option<Vec<String>> {
    let mut g = Graph::new();
    for (a, b) in weights.keys() {
        g.add_edge(a, b);
    }
    g.weighted_path(source, target, |a, b| weights[&(a.to_string(), b.to_string())])
}

/// One routing decision with the weight snapshot it was based on.
#[derive(Debug, Clone)]
pub struct RouteAudit {
    pub source: String,
    pub target: String,
    pub weights: BTreeMap<(String, String), f64>,
    pub path: Vec<String>,
}

impl RouteAudit {
    pub fn path_weight(&self) -> f64 {
        path_weight(&self.weights, &self.path)
    }

    /// Smallest total weight over every simple path, by exhaustive search.
    pub fn best_weight(&self) -> f64 {
        let mut best = f64::INFINITY;
        let mut path = vec![self.source.clone()];
        explore(&self.weights, &self.target, &mut path, 0.0, &mut best);
        best
    }

    pub fn is_optimal(&self) -> bool {
        self.path_weight() <= self.best_weight() + 1e-9
    }
}

fn path_weight(weights: &BTreeMap<(String, String), f64>, path: &[String]) -> f64 {
    path.windows(2)
        .map(|w| weights.get(&(w[0].clone(), w[1].clone())).copied().unwrap_or(f64::INFINITY))
        .sum()
}

fn explore(weights: &BTreeMap<(String, String), f64>, target: &str, path: &mut Vec<String>, acc: f64, best: &mut f64) {
    let last = path.last().expect("non-empty").clone();
    if last == target {
        *best = best.min(acc);
        return;
    }
    for ((a, b), w) in weights {
        if *a == last && !path.contains(b) {
            path.push(b.clone());
            explore(weights, target, path, acc + w, best);
            path.pop();
        }
    }
}

fn wait_until_idle(host: &Host, limit: Duration) {
    let deadline = Instant::now() + limit;
    while !host.is_idle() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_micros(200));
    }
}

/// A sends superdense-coded messages to B over the diamond topology while
/// the middle nodes create EPR pairs with their neighbours. Quantum routes
/// follow the path with the most stored entanglement.
///
/// Generation runs in rounds: before each message the middle nodes take
/// turns, each waiting until it is idle and then sending at most one EPR
/// pair to each neighbour. The rounds keep the store sizes seen by the
/// routing function reproducible.
pub fn entanglement_routing(opts: &ScenarioOptions) -> Result<ScenarioResult, ScenarioError> {
    if opts.n_messages == 0 {
        return Err(ScenarioError::InvalidOption("n_messages must be at least 1".into()));
    }
    let (net, hosts) = setup(opts, diamond_topology, &["A", "node_1", "node_2", "B"])?;
    let log = Transcript::default();
    let wait = opts.receive_wait;
    let n = opts.n_messages;

    let audits: Arc<Mutex<Vec<RouteAudit>>> = Arc::default();
    let sink = Arc::clone(&audits);
    net.set_routing_fn(LinkKind::Quantum, move |net, graph, source, target| {
        let weights = entanglement_weights(net, graph);
        let path = entanglement_route(&weights, source, target).ok_or_else(|| "Error getting route.".to_string())?;
        sink.lock().push(RouteAudit {
            source: source.to_string(),
            target: target.to_string(),
            weights,
            path: path.clone(),
        });
        Ok(path)
    });

    let mut round_txs = Vec::new();
    let (done_tx, done_rx) = crossbeam_channel::unbounded::<usize>();
    let mut generators = Vec::new();
    if opts.generation {
        for name in ["node_1", "node_2"] {
            let (round_tx, round_rx) = crossbeam_channel::unbounded::<()>();
            round_txs.push(round_tx);
            let done = done_tx.clone();
            let glog = log.clone();
            generators.push(hosts[name].run_protocol(
                move |host| {
                    let mut created = 0usize;
                    while round_rx.recv().is_ok() {
                        wait_until_idle(&host, wait);
                        let mut this_round = 0usize;
                        for peer in host.quantum_connections() {
                            if host.with_rng(|r| r.gen_bool(0.5)) {
                                match host.send_epr(&peer, None, true) {
                                    Ok(_) => this_round += 1,
                                    Err(e) => glog.push(host.host_id(), "send_epr", e),
                                }
                            }
                        }
                        created += this_round;
                        let _ = done.send(this_round);
                    }
                    Ok(created)
                },
                false,
            )?);
        }
    }
    drop(done_tx);

    let receiver = hosts["B"].run_protocol(
        move |host| {
            let mut got = Vec::with_capacity(n);
            for _ in 0..n {
                match host.get_next_classical("A", wait) {
                    Some(m) => got.push(m.content_str()),
                    None => break,
                }
            }
            Ok(got)
        },
        false,
    )?;

    let slog = log.clone();
    let sender = hosts["A"].run_protocol(
        move |host| {
            let mut sent = Vec::with_capacity(n);
            let mut acks = 0usize;
            for i in 0..n {
                // One generator at a time: a pair between neighbours may be
                // swapped through the other middle node's edges.
                for tx in &round_txs {
                    let _ = tx.send(());
                    let _ = done_rx.recv_timeout(wait * 4);
                }
                let m = CHOICES[host.with_rng(|r| r.gen_range(0..CHOICES.len()))];
                let res = host.send_superdense("B", m, true)?;
                slog.push("A", "send_superdense", format!("#{i} {m} {res:?}"));
                if res == AckResult::Acked {
                    acks += 1;
                }
                sent.push(m.to_string());
            }
            drop(round_txs);
            Ok((sent, acks))
        },
        false,
    )?;

    let (sent, acks) = sender.join()?;
    let mut generated = 0usize;
    for g in generators {
        generated += g.join()?;
    }
    let received = receiver.join()?;
    let correct = sent.iter().zip(&received).filter(|(a, b)| a == b).count();

    let audits = std::mem::take(&mut *audits.lock());
    let violations = audits.iter().filter(|a| !a.is_optimal()).count();
    let mut metrics = BTreeMap::from([
        ("messages_sent".to_string(), sent.len() as f64),
        ("messages_correct".to_string(), correct as f64),
        ("acks".to_string(), acks as f64),
        ("epr_generated".to_string(), generated as f64),
        ("routing_calls".to_string(), audits.len() as f64),
        ("audit_violations".to_string(), violations as f64),
        ("zero_pair_weight".to_string(), ZERO_PAIR_WEIGHT),
    ]);
    for middle in ["node_1", "node_2"] {
        let through = audits
            .iter()
            .filter(|a| a.path.len() > 2 && a.path[1..a.path.len() - 1].iter().any(|h| h == middle))
            .count();
        metrics.insert(format!("route_count.{middle}"), through as f64);
    }
    let success = correct == n && violations == 0;
    Ok(finish("entanglement_routing", &net, opts, metrics, success, &log))
}
