use std::fs;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use holotele::commands::{cmd_alice, cmd_bob, cmd_oracle, cmd_run, CliError, DirSink, EXIT_OK, EXIT_VERIFY};
use holotele::config::{ConfigError, Overrides, RunConfig};
use holotele::verify::cmd_verify_with;

#[derive(Parser, Debug)]
#[command(
    name = "holotele",
    version,
    about = "Monte Carlo simulator for teleporting multimode space-time light fields"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Lattice size as NX,NY,NT.
    #[arg(long, global = true, value_parser = parse_grid)]
    grid: Option<[usize; 3]>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    r0: Option<f64>,
    #[arg(long, global = true)]
    qc: Option<f64>,
    #[arg(long, global = true)]
    omegac: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    psi0: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    phi: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Frame stream: `stdout`/`stdin`/`-` for the standard pipe, or
    /// `tcp:ADDR` (Bob listens, Alice connects).
    #[arg(long, global = true, default_value = "-")]
    stream: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the whole chain in process and write reports (the default).
    Run,
    /// Measure every trial and write the photocurrent frame stream.
    Alice,
    /// Read the frame stream, reconstruct and dump the output fields.
    Bob,
    /// Exact second moments on a tiny grid, in the report formats.
    Oracle,
    /// Run the acceptance checks and print a JSON verdict.
    Verify,
}

fn parse_grid(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|p: Vec<usize>| format!("expected NX,NY,NT, got {} values", p.len()))
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        trials: common.trials,
        grid: common.grid,
        r0: common.r0,
        q_c: common.qc,
        omega_c: common.omegac,
        psi0: common.psi0,
        phi: common.phi,
        out: common.out.clone(),
    });
    Ok(cfg)
}

enum Endpoint {
    Pipe,
    Tcp(String),
}

fn endpoint(spec: &str) -> Result<Endpoint, CliError> {
    match spec {
        "-" | "stdout" | "stdin" => Ok(Endpoint::Pipe),
        _ => match spec.strip_prefix("tcp:") {
            Some(addr) if !addr.is_empty() => Ok(Endpoint::Tcp(addr.to_string())),
            _ => Err(ConfigError::Invalid(format!("unknown stream {spec:?}; use stdout, stdin or tcp:ADDR")).into()),
        },
    }
}

fn connect(addr: &str) -> Result<TcpStream, CliError> {
    let mut last = None;
    for _ in 0..50 {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
        thread::sleep(Duration::from_millis(100));
    }
    Err(CliError::io(
        format!("connecting to {addr}"),
        last.expect("at least one attempt"),
    ))
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let cfg = load(&cli.common)?;
    match cli.command.unwrap_or(Command::Run) {
        Command::Run => {
            let sink = DirSink::new(&cfg.out)?;
            let outcome = cmd_run(&cfg, &sink)?;
            let s = &outcome.summary.spectrum;
            if let Some(a) = &s.in_band {
                log::info!("in-band out/in ratio {:.4} (analytic {:.4})", a.ratio, a.analytic);
            }
            log::info!("reports written to {}", sink.root().display());
        }
        Command::Alice => {
            let frames = match endpoint(&cli.common.stream)? {
                Endpoint::Pipe => cmd_alice(&cfg, io::stdout().lock())?,
                Endpoint::Tcp(addr) => cmd_alice(&cfg, connect(&addr)?)?,
            };
            log::info!("sent {frames} frames");
        }
        Command::Bob => {
            let sink = DirSink::new(&cfg.out)?;
            let input: Box<dyn Read> = match endpoint(&cli.common.stream)? {
                Endpoint::Pipe => Box::new(io::stdin().lock()),
                Endpoint::Tcp(addr) => {
                    let listener =
                        TcpListener::bind(&addr).map_err(|e| CliError::io(format!("listening on {addr}"), e))?;
                    let (stream, peer) = listener.accept().map_err(|e| CliError::io("accepting Alice", e))?;
                    log::info!("Alice connected from {peer}");
                    Box::new(stream)
                }
            };
            let outcome = cmd_bob(&cfg, input, &sink)?;
            log::info!("reconstructed {} trials into {}", outcome.frames, sink.root().display());
        }
        Command::Oracle => {
            let sink = DirSink::new(&cfg.out)?;
            cmd_oracle(&cfg, &sink)?;
            log::info!("oracle reports written to {}", sink.root().display());
        }
        Command::Verify => {
            let report = cmd_verify_with(&cfg, |r| eprintln!("{}", r.line()));
            let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
            json.push(b'\n');
            let sink = DirSink::new(&cfg.out)?;
            fs::write(sink.root().join("verify.json"), &json).map_err(|e| CliError::io("writing verify.json", e))?;
            io::stdout()
                .write_all(&json)
                .map_err(|e| CliError::io("writing verdict", e))?;
            return Ok(if report.pass { EXIT_OK } else { EXIT_VERIFY });
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
