use clap::{Parser, Subcommand, ValueEnum};
use microsctp_cli::{
    run_sim_bench, run_sim_echo, run_sim_echo_server_demo, run_udp_bench, run_udp_echo_client,
    run_udp_echo_server, BenchConfig, EchoConfig, Profile, RunError,
};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "microsctp",
    version,
    about = "Message-oriented reliable transport over UDP: multistreaming, \
             multihoming failover, and a deterministic network simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    /// Perfect 1 ms links.
    Lossless,
    /// 20% loss, jittery delay, reordering.
    Lossy,
    /// Dual-homed server; primary path cut mid-transfer.
    Failover,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Profile {
        match p {
            ProfileArg::Lossless => Profile::Lossless,
            ProfileArg::Lossy => Profile::Lossy,
            ProfileArg::Failover => Profile::Failover,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Accept associations and echo every message back on its stream.
    EchoServer {
        /// Local address(es) to bind; comma-separate for multihoming.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        listen: Vec<SocketAddr>,
        /// Streams offered in each direction.
        #[arg(long, default_value_t = 10)]
        streams: u16,
        /// Serve over real UDP sockets (the default).
        #[arg(long, conflicts_with = "sim")]
        udp: bool,
        /// Run a scripted in-process simulator demonstration instead.
        #[arg(long)]
        sim: bool,
        /// Port used when --listen is omitted.
        #[arg(long, default_value_t = 9899)]
        port: u16,
        /// Exit after serving this many associations (UDP mode).
        #[arg(long)]
        max_assocs: Option<u64>,
        /// Simulator seed (--sim only).
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Send messages and verify the echoes, over UDP or the simulator.
    ///
    /// Without --connect the run is self-contained: client and echo
    /// server both live inside one deterministic simulator.
    EchoClient {
        /// Echo server to dial (UDP mode).
        #[arg(long)]
        connect: Option<SocketAddr>,
        /// Payload carried by every message.
        #[arg(long, default_value = "Hello world!")]
        message: String,
        /// Stream id the messages ride on.
        #[arg(long, default_value_t = 0)]
        sid: u16,
        /// Messages to send.
        #[arg(long, default_value_t = 1)]
        count: u32,
        /// Network conditions for simulator runs.
        #[arg(long, value_enum, default_value_t = ProfileArg::Lossless)]
        profile: ProfileArg,
        /// Simulator seed; same seed, same run, bit for bit.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Suppress the per-message "stream <sid>: ..." lines.
        #[arg(long)]
        quiet: bool,
        /// Write a packet-level trace to this file (simulator runs only).
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
    },
    /// One-way throughput benchmark.
    ///
    /// The lossless profile runs over real UDP loopback; lossy and
    /// failover run inside the deterministic simulator.
    Bench {
        /// Messages to send.
        #[arg(long, default_value_t = 100_000)]
        count: u32,
        /// Payload bytes per message.
        #[arg(long, default_value_t = 100)]
        size: usize,
        /// Streams the sender round-robins over.
        #[arg(long, default_value_t = 1)]
        streams: u16,
        #[arg(long, value_enum, default_value_t = ProfileArg::Lossless)]
        profile: ProfileArg,
        /// Simulator seed (simulated profiles only).
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write a packet-level trace to this file (simulated profiles).
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn write_trace(path: &PathBuf, lines: &[String]) -> Result<(), RunError> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cmd: Cmd) -> Result<(), RunError> {
    match cmd {
        Cmd::EchoServer { listen, streams, udp: _, sim, port, max_assocs, seed } => {
            if sim {
                let addrs = if listen.is_empty() {
                    vec!["10.0.0.2:9899".parse().expect("literal address")]
                } else {
                    listen
                };
                run_sim_echo_server_demo(&addrs, streams, seed)
            } else {
                let addrs = if listen.is_empty() {
                    vec![SocketAddr::from(([0, 0, 0, 0], port))]
                } else {
                    listen
                };
                run_udp_echo_server(&addrs, streams, max_assocs)
            }
        }
        Cmd::EchoClient { connect, message, sid, count, profile, seed, quiet, trace } => {
            let cfg = EchoConfig {
                count,
                size: message.len(),
                message: Some(message),
                sid: Some(sid),
                streams: 1,
                seed,
                trace: trace.is_some(),
            };
            let print = |m: &microsctp::ReceivedMessage| {
                if !quiet {
                    println!("stream {}: {}", m.sid, String::from_utf8_lossy(&m.payload));
                }
            };
            let report = match connect {
                Some(addr) => run_udp_echo_client(addr, &cfg, print)?,
                None => run_sim_echo(profile.into(), &cfg, print)?,
            };
            if let Some(path) = &trace {
                write_trace(path, &report.trace)?;
            }
            for (from, to) in &report.failovers {
                println!("failover: {from} -> {to}");
            }
            println!("{}", report.summary_line());
            Ok(())
        }
        Cmd::Bench { count, size, streams, profile, seed, trace } => {
            let cfg = BenchConfig { count, size, streams, seed, trace: trace.is_some() };
            let report = match profile {
                ProfileArg::Lossless => run_udp_bench(&cfg)?,
                p => run_sim_bench(p.into(), &cfg)?,
            };
            if let Some(path) = &trace {
                write_trace(path, &report.trace)?;
            }
            println!("{}", report.table());
            println!("{}", report.summary_line());
            if report.lost > 0 {
                return Err(RunError::Transfer(format!("{} messages lost", report.lost)));
            }
            Ok(())
        }
    }
}
