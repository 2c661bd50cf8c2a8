//! Topology descriptions: a line-oriented, sectioned key-value format.
//!
//! ```text
//! # comments start with '#' or ';'
//! [settings]
//! use_hop_by_hop = true
//! use_ent_swap = false
//! delay = 0.0
//!
//! [host]
//! id = Alice
//!
//! [host]
//! id = Bob
//!
//! [link]
//! a = Alice
//! b = Bob
//! kind = both          # both | classical | quantum
//! bidirectional = true
//! ```
//!
//! A link adds the connection `a -> b`, and `b -> a` as well when
//! bidirectional (the default).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use crate::host::{ConnectionKind, Host};
use crate::network::Network;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot build network: {0}")]
    Build(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySettings {
    pub use_hop_by_hop: bool,
    pub use_ent_swap: bool,
    pub delay: f64,
}

impl Default for TopologySettings {
    fn default() -> Self {
        Self {
            use_hop_by_hop: true,
            use_ent_swap: false,
            delay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub kind: ConnectionKind,
    pub bidirectional: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopologyConfig {
    pub hosts: Vec<String>,
    pub links: Vec<LinkSpec>,
    pub settings: TopologySettings,
}

fn kind_name(k: ConnectionKind) -> &'static str {
    match k {
        ConnectionKind::Both => "both",
        ConnectionKind::Classical => "classical",
        ConnectionKind::Quantum => "quantum",
    }
}

fn parse_bool(v: &str, line: usize) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(parse_err(line, format!("expected a boolean, got {v:?}"))),
    }
}

enum Section {
    None,
    Settings,
    Host { line: usize, id: Option<String> },
    Link { line: usize, fields: BTreeMap<String, (String, usize)> },
}

impl TopologyConfig {
    pub fn new(hosts: &[&str]) -> Self {
        Self {
            hosts: hosts.iter().map(|h| h.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn link(mut self, a: &str, b: &str, kind: ConnectionKind, bidirectional: bool) -> Self {
        self.links.push(LinkSpec {
            a: a.to_string(),
            b: b.to_string(),
            kind,
            bidirectional,
        });
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = TopologyConfig::default();
        let mut host_lines: BTreeMap<String, usize> = BTreeMap::new();
        let mut link_lines = Vec::new();
        let mut section = Section::None;

        let mut close = |section: Section, cfg: &mut TopologyConfig| -> Result<(), ConfigError> {
            match section {
                Section::Host { line, id } => {
                    let id = id.ok_or_else(|| parse_err(line, "host section without id"))?;
                    if host_lines.insert(id.clone(), line).is_some() {
                        return Err(parse_err(line, format!("duplicate host {id}")));
                    }
                    cfg.hosts.push(id);
                }
                Section::Link { line, mut fields } => {
                    let mut take = |k: &str| fields.remove(k);
                    let a = take("a").ok_or_else(|| parse_err(line, "link without a"))?.0;
                    let b = take("b").ok_or_else(|| parse_err(line, "link without b"))?.0;
                    let kind = match take("kind") {
                        None => ConnectionKind::Both,
                        Some((k, l)) => match k.as_str() {
                            "both" => ConnectionKind::Both,
                            "classical" => ConnectionKind::Classical,
                            "quantum" => ConnectionKind::Quantum,
                            _ => return Err(parse_err(l, format!("unknown link kind {k:?}"))),
                        },
                    };
                    let bidirectional = match take("bidirectional") {
                        None => true,
                        Some((v, l)) => parse_bool(&v, l)?,
                    };
                    if let Some((k, (_, l))) = fields.into_iter().next() {
                        return Err(parse_err(l, format!("unknown link key {k:?}")));
                    }
                    if a == b {
                        return Err(parse_err(line, format!("self-link on {a}")));
                    }
                    link_lines.push(line);
                    cfg.links.push(LinkSpec { a, b, kind, bidirectional });
                }
                Section::None | Section::Settings => {}
            }
            Ok(())
        };

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let prev = std::mem::replace(&mut section, Section::None);
                close(prev, &mut cfg)?;
                section = match name.trim() {
                    "settings" => Section::Settings,
                    "host" => Section::Host { line, id: None },
                    "link" => Section::Link {
                        line,
                        fields: BTreeMap::new(),
                    },
                    other => return Err(parse_err(line, format!("unknown section [{other}]"))),
                };
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| parse_err(line, format!("expected key = value, got {content:?}")))?;
            match &mut section {
                Section::None => return Err(parse_err(line, "key outside of a section")),
                Section::Settings => match key {
                    "use_hop_by_hop" => cfg.settings.use_hop_by_hop = parse_bool(value, line)?,
                    "use_ent_swap" => cfg.settings.use_ent_swap = parse_bool(value, line)?,
                    "delay" => {
                        let d: f64 = value
                            .parse()
                            .map_err(|_| parse_err(line, format!("invalid delay {value:?}")))?;
                        if !(d.is_finite() && d >= 0.0) {
                            return Err(parse_err(line, "delay must be a non-negative number"));
                        }
                        cfg.settings.delay = d;
                    }
                    _ => return Err(parse_err(line, format!("unknown setting {key:?}"))),
                },
                Section::Host { id, .. } => match key {
                    "id" if !value.is_empty() => *id = Some(value.to_string()),
                    "id" => return Err(parse_err(line, "empty host id")),
                    _ => return Err(parse_err(line, format!("unknown host key {key:?}"))),
                },
                Section::Link { fields, .. } => {
                    fields.insert(key.to_string(), (value.to_string(), line));
                }
            }
        }
        close(section, &mut cfg)?;

        for (link, line) in cfg.links.iter().zip(link_lines) {
            for end in [&link.a, &link.b] {
                if !host_lines.contains_key(end) {
                    return Err(parse_err(line, format!("link references unknown host {end}")));
                }
            }
        }
        Ok(cfg)
    }

    /// Renders the config back into the text format.
    pub fn to_text(&self) -> String {
        let s = &self.settings;
        let mut out = format!(
            "[settings]\nuse_hop_by_hop = {}\nuse_ent_swap = {}\ndelay = {}\n",
            s.use_hop_by_hop, s.use_ent_swap, s.delay
        );
        for h in &self.hosts {
            let _ = write!(out, "\n[host]\nid = {h}\n");
        }
        for l in &self.links {
            let _ = write!(
                out,
                "\n[link]\na = {}\nb = {}\nkind = {}\nbidirectional = {}\n",
                l.a,
                l.b,
                kind_name(l.kind),
                l.bidirectional
            );
        }
        out
    }

    pub fn has_hosts(&self, required: &[&str]) -> Result<(), ConfigError> {
        let have: BTreeSet<&str> = self.hosts.iter().map(String::as_str).collect();
        match required.iter().find(|h| !have.contains(**h)) {
            Some(missing) => Err(ConfigError::Build(format!("topology lacks host {missing}"))),
            None => Ok(()),
        }
    }

    /// Creates the hosts, wires their connections, starts the network and
    /// registers and starts every host.
    pub fn build(&self, seed: u64) -> Result<(Network, BTreeMap<String, Host>), ConfigError> {
        let hosts: BTreeMap<String, Host> = self.hosts.iter().map(|id| (id.clone(), Host::new(id.clone()))).collect();
        let build_err = |e: &dyn std::fmt::Display| ConfigError::Build(e.to_string());
        for l in &self.links {
            let (a, b) = (&hosts[&l.a], &hosts[&l.b]);
            a.add_connection(&l.b, l.kind).map_err(|e| build_err(&e))?;
            if l.bidirectional {
                b.add_connection(&l.a, l.kind).map_err(|e| build_err(&e))?;
            }
        }
        let net = Network::new(seed);
        net.set_use_hop_by_hop(self.settings.use_hop_by_hop);
        net.set_use_ent_swap(self.settings.use_ent_swap);
        net.set_delay(Duration::from_secs_f64(self.settings.delay));
        let names: Vec<&str> = self.hosts.iter().map(String::as_str).collect();
        net.start(&names).map_err(|e| build_err(&e))?;
        for h in hosts.values() {
            h.start().map_err(|e| build_err(&e))?;
            net.add_host(h).map_err(|e| build_err(&e))?;
        }
        Ok((net, hosts))
    }
}

/// Example A: the chain Alice - Bob - Eve - Dean.
pub fn chain_topology() -> TopologyConfig {
    TopologyConfig::new(&["Alice", "Bob", "Eve", "Dean"])
        .link("Alice", "Bob", ConnectionKind::Both, true)
        .link("Bob", "Eve", ConnectionKind::Both, true)
        .link("Eve", "Dean", ConnectionKind::Both, true)
}

/// Example B: A reaches B..E over both kinds of link (one direction only);
/// B..E form a classical clique.
pub fn ghz_topology() -> TopologyConfig {
    let mut t = TopologyConfig::new(&["A", "B", "C", "D", "E"]);
    for p in ["B", "C", "D", "E"] {
        t = t.link("A", p, ConnectionKind::Both, false);
    }
    let peers = ["B", "C", "D", "E"];
    for (i, a) in peers.iter().enumerate() {
        for b in &peers[i + 1..] {
            t = t.link(a, b, ConnectionKind::Classical, true);
        }
    }
    t
}

/// Example C: the diamond A - {node_1, node_2} - B, origin-pinned routes
/// and entanglement swapping.
pub fn diamond_topology() -> TopologyConfig {
    let mut t = TopologyConfig::new(&["A", "node_1", "node_2", "B"])
        .link("A", "node_1", ConnectionKind::Both, true)
        .link("A", "node_2", ConnectionKind::Both, true)
        .link("node_1", "B", ConnectionKind::Both, true)
        .link("node_2", "B", ConnectionKind::Both, true);
    t.settings.use_hop_by_hop = false;
    t.settings.use_ent_swap = true;
    t
}

/// Example D: the line A - E - B.
pub fn line_topology() -> TopologyConfig {
    TopologyConfig::new(&["A", "E", "B"])
        .link("A", "E", ConnectionKind::Both, true)
        .link("E", "B", ConnectionKind::Both, true)
}
