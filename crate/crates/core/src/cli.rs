//! Command-line front end: `run`, `graph` and `log` subcommands.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::TopologyConfig;
use crate::network::LinkKind;
use crate::packet::{decode_log, Payload};
use crate::scenarios::{run_scenario, ScenarioError, ScenarioOptions, SCENARIOS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "qnetsim", version, about = "Quantum network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a built-in scenario and print its result as JSON.
    Run(RunArgs),
    /// Export a topology graph in DOT format.
    Graph(GraphArgs),
    /// Print the packets of a recorded packet log.
    Log(LogArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    #[arg(long, value_parser = SCENARIOS)]
    scenario: String,
    #[arg(long, env = "QNETSIM_SEED", default_value_t = 0)]
    seed: u64,
    /// Topology file replacing the scenario's built-in network.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LogLevel::Error)]
    log_level: LogLevel,
    /// Also write the result JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the classical packet log to this file.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Write the transcript lines to this file.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Messages sent in `entanglement_routing`.
    #[arg(long, default_value_t = 100)]
    messages: usize,
    /// Raw BB84 qubits in `eavesdropping`.
    #[arg(long, default_value_t = 256)]
    bits: usize,
    /// Key length in `qkd`.
    #[arg(long, default_value_t = 32)]
    key_len: usize,
    /// Eavesdropper on the middle host (eavesdropping/qkd).
    #[arg(long, value_enum)]
    sniffing: Option<Switch>,
    /// Disable idle-time EPR generation in `entanglement_routing`.
    #[arg(long)]
    no_generation: bool,
    /// Receive timeout inside protocols, in seconds.
    #[arg(long, default_value_t = 10.0)]
    wait: f64,
}

#[derive(clap::Args, Debug)]
struct GraphArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long, value_enum, default_value_t = Kind::Classical)]
    kind: Kind,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct LogArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum LogLevel {
    Error,
    Info,
    Debug,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Kind {
    Classical,
    Quantum,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Switch {
    On,
    Off,
}

/// Parses `args` (program name first) and executes the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Graph(a) => graph_cmd(a),
        Command::Log(a) => log_cmd(a),
    }
}

fn init_logging(level: LogLevel) {
    let filter = match level {
        LogLevel::Error => log::LevelFilter::Error,
        LogLevel::Info => log::LevelFilter::Info,
        LogLevel::Debug => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), String> {
    std::fs::write(path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn run_cmd(a: RunArgs) -> i32 {
    init_logging(a.log_level);
    let topology = match a.topology.as_deref().map(TopologyConfig::load).transpose() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if !(a.wait.is_finite() && a.wait > 0.0) {
        eprintln!("error: --wait must be a positive number of seconds");
        return EXIT_USAGE;
    }
    let opts = ScenarioOptions {
        seed: a.seed,
        topology,
        record: a.record.is_some(),
        receive_wait: Duration::from_secs_f64(a.wait),
        n_messages: a.messages,
        n_bits: a.bits,
        key_len: a.key_len,
        sniffing: a.sniffing.map(|s| matches!(s, Switch::On)),
        generation: !a.no_generation,
    };
    let result = match run_scenario(&a.scenario, &opts) {
        Ok(r) => r,
        Err(e @ (ScenarioError::Config(_) | ScenarioError::UnknownScenario(_) | ScenarioError::InvalidOption(_))) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
        Err(e) => {
            eprintln!("error: scenario {} failed: {e}", a.scenario);
            return EXIT_FAILURE;
        }
    };
    let json = result.to_json();
    println!("{json}");
    let mut outputs = Vec::new();
    if let Some(p) = &a.out {
        outputs.push(write_file(p, format!("{json}\n").as_bytes()));
    }
    if let Some(p) = &a.record {
        outputs.push(write_file(p, &result.recording));
    }
    if let Some(p) = &a.transcript {
        let mut text = result.transcript.join("\n");
        text.push('\n');
        outputs.push(write_file(p, text.as_bytes()));
    }
    if let Some(Err(e)) = outputs.into_iter().find(Result::is_err) {
        eprintln!("error: {e}");
        return EXIT_FAILURE;
    }
    if result.success {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

fn graph_cmd(a: GraphArgs) -> i32 {
    let cfg = match TopologyConfig::load(&a.topology) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let (net, _hosts) = match cfg.build(0) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let kind = match a.kind {
        Kind::Classical => LinkKind::Classical,
        Kind::Quantum => LinkKind::Quantum,
    };
    let dot = net.export_graph(kind);
    net.stop();
    match &a.out {
        Some(p) => match write_file(p, dot.as_bytes()) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_FAILURE
            }
        },
        None => {
            print!("{dot}");
            EXIT_OK
        }
    }
}

fn log_cmd(a: LogArgs) -> i32 {
    let bytes = match std::fs::read(&a.input) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", a.input.display());
            return EXIT_USAGE;
        }
    };
    let packets = match decode_log(&bytes) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for p in packets {
        let payload = match &p.inner.payload {
            Payload::Classical(c) => format!("{:?}", String::from_utf8_lossy(c)),
            Payload::Corrections(c) => format!("m1={} m2={} epr={}", c.m1, c.m2, c.epr_id),
            Payload::Control(c) => format!("{:?} {} {}", c.status, c.original, c.detail),
            Payload::Qubit(_) => "<qubit>".to_string(),
        };
        let _ = writeln!(
            out,
            "{} {} {}->{} at={} seq={} {}",
            p.packet_id, p.inner.protocol, p.inner.sender, p.inner.receiver, p.current, p.inner.sequence, payload
        );
    }
    EXIT_OK
}
