use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use nfcbms_core::ecc::{KeyFile, KeyFileError, SigningKey};
use nfcbms_core::frame::Uid;
use nfcbms_core::ntag::{NtagDevice, TagFile};
use nfcbms_core::sample::MonitoringSample;
use nfcbms_core::seclog::{scan_file, LogError, RecordOutcome, SessionKeys};
use nfcbms_core::sim::{self, Mode, Scenario, SimError};
use nfcbms_core::threat::{self, Defenses};
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::{KeyKind, KeygenArgs, LogCmd, ModeArg, ProvisionArgs, SimulateArgs, ThreatArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Verification(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("bad key file: {0}")]
    BadKeyFile(String),
    #[error("simulation: {0}")]
    Simulation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Io(_) => 2,
            CliError::Config(_) => 3,
            CliError::BadKeyFile(_) => 4,
            CliError::Simulation(_) => 5,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => CliError::Config(m),
            SimError::Io(e) => CliError::Io(e),
            SimError::Log(LogError::Io(e)) => CliError::Io(e),
            other => CliError::Simulation(other.to_string()),
        }
    }
}

impl From<LogError> for CliError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Io(e) => CliError::Io(e),
            other => CliError::Verification(other.to_string()),
        }
    }
}

fn key_error(path: &Path, e: KeyFileError) -> CliError {
    match e {
        KeyFileError::Io(io) => CliError::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => CliError::BadKeyFile(format!("{}: {other}", path.display())),
    }
}

fn load_key(path: &Path) -> Result<KeyFile, CliError> {
    KeyFile::load(path).map_err(|e| key_error(path, e))
}

fn load_session_keys(path: &Path) -> Result<SessionKeys, CliError> {
    let text = read(path)?;
    let keys: SessionKeys = serde_json::from_str(&text)
        .map_err(|e| CliError::BadKeyFile(format!("{}: {e}", path.display())))?;
    keys.validate()
        .map_err(|e| CliError::BadKeyFile(format!("{}: {e}", path.display())))?;
    Ok(keys)
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| {
        CliError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario, CliError> {
    let Some(path) = path else {
        return Ok(Scenario::default());
    };
    let text = read(path)?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    scenario
        .validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(scenario)
}

pub fn keygen(a: KeygenArgs) -> Result<ExitCode, CliError> {
    let mut rng = match a.seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::seed_from_u64(OsRng.next_u64()),
    };
    match a.kind {
        KeyKind::Ecdsa => {
            let key = SigningKey::random(&mut rng);
            write(&a.out, to_json(&KeyFile::from_signing_key(&key)))?;
            if let Some(p) = &a.public_out {
                write(
                    p,
                    to_json(&KeyFile::from_verifying_key(&key.verifying_key())),
                )?;
            }
            println!("public key {}", hex::encode(key.verifying_key().to_sec1()));
        }
        KeyKind::Session => {
            let keys = SessionKeys::generate(rng.next_u64(), a.session_id);
            write(&a.out, to_json(&keys))?;
            println!(
                "session {} keys written to {}",
                a.session_id,
                a.out.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn provision(a: ProvisionArgs) -> Result<ExitCode, CliError> {
    let kf = load_key(&a.key)?;
    let key = kf
        .signing_key()
        .map_err(|e| CliError::BadKeyFile(format!("{}: {e}", a.key.display())))?
        .ok_or_else(|| CliError::BadKeyFile(format!("{}: no private key", a.key.display())))?;
    let uid: Uid = a
        .uid
        .parse()
        .map_err(|e| CliError::Config(format!("--uid: {e}")))?;
    let sig = key.sign(&uid.0);
    let tag = NtagDevice::provision(uid, &sig.to_bytes()).expect("32-byte signature");
    let text = to_json(&TagFile::from_device(&tag));
    match &a.out {
        Some(p) => write(p, text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn simulate(a: SimulateArgs) -> Result<ExitCode, CliError> {
    let mut scenario = load_scenario(a.config.as_deref())?;
    if let Some(s) = a.seed {
        scenario.seed = s;
    }
    if let Some(n) = a.iterations {
        scenario.iterations = n;
    }
    if let Some(m) = a.mode {
        scenario.mode = match m {
            ModeArg::Secure => Mode::Secure,
            ModeArg::ReadoutOnly => Mode::ReadoutOnly,
        };
    }
    if a.no_security {
        scenario.security = false;
    }
    if a.cached_init {
        scenario.cached_init = true;
    }
    scenario.validate()?;

    let (signer, public) = match &a.key {
        Some(p) => {
            let kf = load_key(p)?;
            let public = kf.verifying_key().map_err(|e| key_error(p, e.into()))?;
            let signer = kf
                .signing_key()
                .map_err(|e| key_error(p, e.into()))?
                .unwrap_or_else(|| sim::default_signing_key(scenario.seed));
            (signer, public)
        }
        None => {
            let k = sim::default_signing_key(scenario.seed);
            let vk = k.verifying_key();
            (k, vk)
        }
    };
    fs::create_dir_all(&a.out)?;
    let base_keys = match &a.session_keys {
        Some(p) => load_session_keys(p)?,
        None => {
            let k = SessionKeys::generate(scenario.seed ^ 0x5E55_1011, 1);
            write(&a.out.join("session_keys.json"), to_json(&k))?;
            k
        }
    };

    let (summary, runs) =
        sim::simulate(&scenario, &signer, public, Some(&base_keys), Some(&a.out))?;
    for run in &runs {
        let dir = a.out.join(format!("ccb-{}", run.summary.id));
        fs::create_dir_all(&dir)?;
        write(&dir.join("ledger.csv"), run.ledger.to_csv())?;
        write(&dir.join("cycles.csv"), run.cycles_csv())?;
        write(&dir.join("transcript.txt"), &run.transcript)?;
    }
    write(&a.out.join("summary.json"), to_json(&summary))?;

    for c in &summary.ccbs {
        println!(
            "ccb-{} {} auth={} init={:.3} ms readouts={:.3} ms cycles={:.3} ms records={}{}",
            c.id,
            c.uid,
            c.auth.as_deref().unwrap_or("skipped"),
            c.init_ms,
            c.readout_total_ms,
            c.cycles_total_ms,
            c.records,
            c.error
                .as_ref()
                .map(|e| format!(" error={e}"))
                .unwrap_or_default()
        );
    }
    println!("reports written to {}", a.out.display());
    if summary.failed() {
        return Err(CliError::Simulation(
            "one or more CCBs stopped early; see summary.json".into(),
        ));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn log(cmd: LogCmd) -> Result<ExitCode, CliError> {
    match cmd {
        LogCmd::Verify { file, keys } => {
            let keys = load_session_keys(&keys)?;
            let report = scan_file(&file, &keys)?;
            for r in report.failures() {
                println!("record {}: {}", r.index, outcome_label(r.outcome));
            }
            for g in &report.gaps {
                println!(
                    "sequence gap at record {}: expected {}, found {}",
                    g.at_index, g.expected, g.found
                );
            }
            println!(
                "{} records, {} verified, {} gaps",
                report.records.len(),
                report.verified(),
                report.gaps.len()
            );
            if report.is_clean() {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(CliError::Verification(format!(
                    "{} failed verification",
                    file.display()
                )))
            }
        }
        LogCmd::Decrypt { file, keys, out } => {
            let keys = load_session_keys(&keys)?;
            let report = scan_file(&file, &keys)?;
            let mut csv = MonitoringSample::csv_header() + "\n";
            for r in &report.records {
                match &r.plaintext {
                    Some(p) => {
                        let s = MonitoringSample::from_bytes(p)
                            .map_err(|e| CliError::Verification(e.to_string()))?;
                        csv.push_str(&s.csv_row());
                        csv.push('\n');
                    }
                    None => eprintln!("record {}: {}", r.index, outcome_label(r.outcome)),
                }
            }
            match &out {
                Some(p) => write(p, &csv)?,
                None => std::io::stdout().write_all(csv.as_bytes())?,
            }
            if report.is_clean() {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(CliError::Verification(format!(
                    "{} failed verification",
                    file.display()
                )))
            }
        }
    }
}

fn outcome_label(o: RecordOutcome) -> &'static str {
    match o {
        RecordOutcome::Verified => "verified",
        RecordOutcome::IntegrityFailure => "integrity failure",
        RecordOutcome::PaddingError => "padding error",
        RecordOutcome::CorruptEntry => "truncated record",
    }
}

pub fn threat(a: ThreatArgs) -> Result<ExitCode, CliError> {
    let mut defenses = Defenses::default();
    for c in &a.disable {
        let off = Defenses::without(*c);
        defenses.c1 &= off.c1;
        defenses.c2 &= off.c2;
        defenses.c3 &= off.c3;
        defenses.c5 &= off.c5;
    }
    let outcomes = match a.id {
        Some(id) => vec![threat::run_scenario(id, &defenses, a.seed)],
        None => threat::run_all(&defenses, a.seed),
    };
    let matrix = threat::matrix_report(&outcomes);
    print!("{matrix}");
    if a.verbose {
        for o in &outcomes {
            for e in &o.evidence {
                println!("  {}: {e}", o.id);
            }
        }
    }
    if let Some(p) = &a.report {
        write(p, &matrix)?;
    }
    let matched = outcomes.iter().filter(|o| o.matched_expectation).count();
    println!("{matched}/{} matched", outcomes.len());
    if matched == outcomes.len() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError::Verification(
            "scenario expectations not met".into(),
        ))
    }
}

pub fn report_tables(config: Option<PathBuf>, json: bool) -> Result<ExitCode, CliError> {
    let scenario = load_scenario(config.as_deref())?;
    let rows = sim::reproduce_tables(&scenario)?;
    if json {
        print!("{}", to_json(&rows));
    } else {
        print!("{}", sim::tables_text(&rows));
    }
    Ok(ExitCode::SUCCESS)
}
