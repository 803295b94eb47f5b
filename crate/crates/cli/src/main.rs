//! `nfcbms`: provisioning, simulation, log verification and threat runs.
//!
//! Exit codes: 0 success, 1 verification or expectation failure, 2 I/O,
//! 3 invalid configuration, 4 bad key file, 5 simulation error, 64 usage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "nfcbms",
    version,
    about = "NFC battery-sensor readout simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a provisioning key pair or a session key file.
    Keygen(KeygenArgs),
    /// Sign a tag UID and write its provisioning file.
    Provision(ProvisionArgs),
    /// Run initialisation plus monitoring iterations and write reports.
    Simulate(SimulateArgs),
    /// Verify or decrypt a sample log.
    Log {
        #[command(subcommand)]
        action: LogCmd,
    },
    /// Run threat scenarios and print the outcome matrix.
    Threat(ThreatArgs),
    /// Reproduce published tables.
    Report {
        #[command(subcommand)]
        what: ReportCmd,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum KeyKind {
    /// secp128r1 provisioning key pair
    Ecdsa,
    /// AES-128 encryption and CMAC session keys
    Session,
}

#[derive(Args, Debug)]
struct KeygenArgs {
    #[arg(long, value_enum, default_value = "ecdsa")]
    kind: KeyKind,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the public half (ecdsa only).
    #[arg(long)]
    public_out: Option<PathBuf>,
    /// Deterministic generation; OS entropy otherwise.
    #[arg(long)]
    seed: Option<u64>,
    /// Session id (session keys only).
    #[arg(long, default_value_t = 1)]
    session_id: u32,
}

#[derive(Args, Debug)]
struct ProvisionArgs {
    /// Key file holding the private scalar.
    #[arg(long)]
    key: PathBuf,
    /// Tag UID, 8 bytes hex.
    #[arg(long)]
    uid: String,
    /// Output tag file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Secure,
    ReadoutOnly,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long, env = "NFCBMS_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Skip encryption and MAC of samples.
    #[arg(long)]
    no_security: bool,
    /// Skip tag and sensor configuration.
    #[arg(long)]
    cached_init: bool,
    /// Provisioning key file; derived from the seed when omitted.
    #[arg(long)]
    key: Option<PathBuf>,
    /// Session key file; derived from the seed when omitted.
    #[arg(long)]
    session_keys: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum LogCmd {
    /// Check every record; exit 0 only if all verify with no gaps.
    Verify {
        file: PathBuf,
        #[arg(long)]
        keys: PathBuf,
    },
    /// Decrypt verified records to CSV.
    Decrypt {
        file: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("which").required(true).args(["id", "all"]))]
struct ThreatArgs {
    /// One scenario, T1..T5.
    #[arg(long, value_parser = parse_threat)]
    id: Option<nfcbms_core::threat::ThreatId>,
    #[arg(long)]
    all: bool,
    /// Write the matrix CSV here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Disable a countermeasure (C1, C2, C3, C5); repeatable.
    #[arg(long, value_parser = parse_countermeasure)]
    disable: Vec<nfcbms_core::threat::Countermeasure>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Print the evidence behind each verdict.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum ReportCmd {
    /// Simulated against published figures with percent deviation.
    Tables {
        #[arg(long, env = "NFCBMS_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn parse_threat(s: &str) -> Result<nfcbms_core::threat::ThreatId, String> {
    s.parse()
}

fn parse_countermeasure(s: &str) -> Result<nfcbms_core::threat::Countermeasure, String> {
    use nfcbms_core::threat::Countermeasure;
    Countermeasure::ALL
        .into_iter()
        .find(|c| c.to_string().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| format!("unknown countermeasure {s:?}; expected C1, C2, C3 or C5"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(64)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Cmd::Keygen(a) => commands::keygen(a),
        Cmd::Provision(a) => commands::provision(a),
        Cmd::Simulate(a) => commands::simulate(a),
        Cmd::Log { action } => commands::log(action),
        Cmd::Threat(a) => commands::threat(a),
        Cmd::Report {
            what: ReportCmd::Tables { config, json },
        } => commands::report_tables(config, json),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
