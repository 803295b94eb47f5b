//! Threat scenarios T1-T5 run against a fresh simulated system each, with
//! outcomes judged from transcript and log evidence.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::auth::{AllowList, AuthPolicy};
use crate::battery::BatteryModule;
use crate::ccb::{Ccb, CcbConfig};
use crate::channel::{
    BatteryNode, ChannelConfig, Fate, FieldModel, NfcChannel, ReaderOrigin, Transcript,
};
use crate::clock::SimClock;
use crate::ecc::SigningKey;
use crate::frame::{Command, RequestFrame, Uid};
use crate::ntag::NtagDevice;
use crate::sample::{MonitoringSample, SAMPLE_LEN};
use crate::seclog::{
    encode_log, scan_bytes, RecordOutcome, SessionKeys, FILE_HEADER_LEN, RECORD_LEN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ThreatId {
    T1,
    T2,
    T3,
    T4,
    T5,
}

impl ThreatId {
    pub const ALL: [ThreatId; 5] = [
        ThreatId::T1,
        ThreatId::T2,
        ThreatId::T3,
        ThreatId::T4,
        ThreatId::T5,
    ];

    pub fn title(self) -> &'static str {
        match self {
            ThreatId::T1 => "battery control obstruction",
            ThreatId::T2 => "counterfeit module",
            ThreatId::T3 => "rogue in-chassis device",
            ThreatId::T4 => "external wireless access",
            ThreatId::T5 => "BMS log data compromise",
        }
    }

    pub fn assets(self) -> &'static [Asset] {
        use Asset::*;
        match self {
            ThreatId::T1 => &[SensorData, DiagnosticData],
            ThreatId::T2 => &[SystemIntegrity, DiagnosticData],
            ThreatId::T3 => &[SensorData, SystemIntegrity],
            ThreatId::T4 => &[SensorData, SystemIntegrity, DiagnosticData],
            ThreatId::T5 => &[SensorData, DiagnosticData],
        }
    }

    pub fn countermeasures(self) -> &'static [Countermeasure] {
        use Countermeasure::*;
        match self {
            ThreatId::T1 | ThreatId::T2 => &[C1],
            ThreatId::T3 => &[C1, C3],
            ThreatId::T4 => &[C2, C3],
            ThreatId::T5 => &[C5],
        }
    }

    pub fn expected(self) -> Verdict {
        match self {
            ThreatId::T5 => Verdict::Detected,
            _ => Verdict::Blocked,
        }
    }
}

impl fmt::Display for ThreatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ThreatId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ThreatId::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown threat id {s:?}; expected one of T1..T5"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Asset {
    SensorData,
    SystemIntegrity,
    DiagnosticData,
}

impl Asset {
    pub fn code(self) -> &'static str {
        match self {
            Asset::SensorData => "A1",
            Asset::SystemIntegrity => "A2",
            Asset::DiagnosticData => "A3",
        }
    }
}

/// There is no C4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Countermeasure {
    /// Signature authentication with UID allow-listing.
    C1,
    /// Pack sealing against external readers.
    C2,
    /// NFC physical layer: range limit and frame CRC.
    C3,
    /// Encrypted and MAC-protected logging.
    C5,
}

impl Countermeasure {
    pub const ALL: [Countermeasure; 4] = [
        Countermeasure::C1,
        Countermeasure::C2,
        Countermeasure::C3,
        Countermeasure::C5,
    ];
}

impl fmt::Display for Countermeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Defenses {
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    pub c5: bool,
}

impl Default for Defenses {
    fn default() -> Self {
        Defenses {
            c1: true,
            c2: true,
            c3: true,
            c5: true,
        }
    }
}

impl Defenses {
    pub fn without(c: Countermeasure) -> Self {
        let mut d = Defenses::default();
        match c {
            Countermeasure::C1 => d.c1 = false,
            Countermeasure::C2 => d.c2 = false,
            Countermeasure::C3 => d.c3 = false,
            Countermeasure::C5 => d.c5 = false,
        }
        d
    }

    /// Field model an attacker reader gets: the physical limit with C3, a
    /// high-gain antenna without it.
    fn attacker_field(&self, distance_cm: f64) -> FieldModel {
        let base = if self.c3 {
            FieldModel::default()
        } else {
            FieldModel {
                max_range_cm: 100.0,
                nominal_distance_cm: 10.0,
                ..FieldModel::default()
            }
        };
        base.at(distance_cm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Blocked,
    Detected,
    Compromised,
    Undetected,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Blocked => "blocked",
            Verdict::Detected => "detected",
            Verdict::Compromised => "compromised",
            Verdict::Undetected => "undetected",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioOutcome {
    pub id: ThreatId,
    pub result: Verdict,
    pub matched_expectation: bool,
    pub evidence: Vec<String>,
    #[serde(skip)]
    pub transcript: String,
}

/// Shared fixture: one legitimate provisioning key and module.
struct World {
    key: SigningKey,
    attacker: SigningKey,
    legit_uid: Uid,
    seed: u64,
}

impl World {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        World {
            key: SigningKey::random(&mut rng),
            attacker: SigningKey::random(&mut rng),
            legit_uid: Uid([0x04, 0x4E, 0x54, 0x41, 0x47, 0x10, 0x00, 0x01]),
            seed,
        }
    }

    fn node(&self, uid: Uid, signature: [u8; 32]) -> BatteryNode {
        let tag = NtagDevice::provision(uid, &signature).expect("32-byte signature");
        BatteryNode::new(tag, BatteryModule::default(), 2.0)
    }

    fn legit_node(&self) -> BatteryNode {
        self.node(self.legit_uid, self.key.sign(&self.legit_uid.0).to_bytes())
    }

    fn ccb(&self, defenses: &Defenses, channel: ChannelConfig) -> Ccb {
        let allow: AllowList = [self.legit_uid].into_iter().collect();
        let mut cfg = CcbConfig::new(allow, self.key.verifying_key());
        cfg.authenticate = defenses.c1;
        cfg.policy = AuthPolicy::Shutdown;
        cfg.security = defenses.c5;
        let ch = NfcChannel::new(FieldModel::default(), channel, ReaderOrigin::Ccb);
        Ccb::new(0, cfg, ch, SimClock::default(), self.seed)
    }
}

fn monitoring_frames_accepted(t: &Transcript, target: Uid) -> usize {
    t.exchanges
        .iter()
        .filter(|x| x.target == target && x.accepted())
        .filter(|x| {
            x.command()
                .is_some_and(|c| c.is_sram() || c.is_i2c() || c == Command::SetConfig)
        })
        .count()
}

/// A CCB meets a counterfeit module; blocked when no configuration or
/// monitoring frame is ever answered.
fn counterfeit(
    world: &World,
    defenses: &Defenses,
    id: ThreatId,
    node: &mut BatteryNode,
) -> ScenarioOutcome {
    let mut ccb = world.ccb(defenses, ChannelConfig::default());
    let init = ccb.run_init_phase(node);
    let mut evidence = vec![format!(
        "init: {}",
        match &init {
            Ok(_) => "completed".to_string(),
            Err(e) => e.to_string(),
        }
    )];
    if init.is_ok() {
        let _ = ccb.read_sensor_measurement(node);
    }
    let accepted = monitoring_frames_accepted(ccb.channel().transcript(), node.uid());
    evidence.push(format!(
        "configuration/monitoring frames answered by counterfeit: {accepted}"
    ));
    evidence.push(format!("ccb phase: {:?}", ccb.phase()));
    let result = if accepted == 0 {
        Verdict::Blocked
    } else {
        Verdict::Compromised
    };
    finish(id, result, evidence, ccb.channel().transcript().to_text())
}

fn finish(
    id: ThreatId,
    result: Verdict,
    evidence: Vec<String>,
    transcript: String,
) -> ScenarioOutcome {
    ScenarioOutcome {
        id,
        result,
        matched_expectation: result == id.expected(),
        evidence,
        transcript,
    }
}

/// Rogue reader probing a node with every command it knows; returns how
/// many requests were answered.
fn probe(channel: &mut NfcChannel, node: &mut BatteryNode) -> usize {
    let clock = SimClock::default();
    let uid = node.uid();
    let requests = [
        RequestFrame::new(Command::ReadSignature, Some(uid), 0, 0),
        RequestFrame::new(Command::GetConfig, Some(uid), 0, 0),
        RequestFrame::new(Command::SramContentRead, Some(uid), 0, 2),
        RequestFrame::new(Command::SramContentRead, None, 0, 64),
    ];
    for req in &requests {
        let _ = channel.transceive_raw(req, node, &clock);
    }
    channel
        .transcript()
        .exchanges
        .iter()
        .filter(|x| x.response.is_some())
        .count()
}

fn t3(world: &World, d: &Defenses) -> ScenarioOutcome {
    let mut evidence = Vec::new();
    let mut transcript = String::new();

    let rogue_uid = Uid([0x04, 0xBA, 0xD0, 0x00, 0x00, 0x00, 0x00, 0x03]);
    let mut rogue = world.node(rogue_uid, world.attacker.sign(&rogue_uid.0).to_bytes());
    let mut ccb = world.ccb(d, ChannelConfig::default());
    let _ = ccb.run_init_phase(&mut rogue);
    let accepted = monitoring_frames_accepted(ccb.channel().transcript(), rogue_uid);
    evidence.push(format!(
        "unknown module: auth {:?}, frames answered {accepted}",
        ccb.auth_outcome()
    ));
    transcript.push_str(&ccb.channel().transcript().to_text());

    let mut target = world.legit_node();
    crate::ccb::preconfigure(&mut target);
    let mut reader = NfcChannel::new(
        d.attacker_field(7.0),
        ChannelConfig::default(),
        ReaderOrigin::InChassis,
    );
    target.distance_cm = 7.0;
    let answered = probe(&mut reader, &mut target);
    evidence.push(format!("in-chassis probe at 7 cm: {answered} responses"));
    transcript.push_str(&reader.transcript().to_text());

    let result = if accepted == 0 && answered == 0 {
        Verdict::Blocked
    } else {
        Verdict::Compromised
    };
    finish(ThreatId::T3, result, evidence, transcript)
}

fn t4(world: &World, d: &Defenses) -> ScenarioOutcome {
    let mut evidence = Vec::new();
    let mut transcript = String::new();

    // close-range probe against the pack enclosure
    let mut node = world.legit_node();
    crate::ccb::preconfigure(&mut node);
    node.sealed = d.c2;
    node.distance_cm = 1.5;
    let mut reader = NfcChannel::new(
        d.attacker_field(1.5),
        ChannelConfig::default(),
        ReaderOrigin::External,
    );
    let close = probe(&mut reader, &mut node);
    evidence.push(format!(
        "external probe at 1.5 cm, sealed={}: {close} responses",
        node.sealed
    ));
    transcript.push_str(&reader.transcript().to_text());

    // probe at 7 cm through an unshielded service opening
    let mut node = world.legit_node();
    crate::ccb::preconfigure(&mut node);
    node.sealed = false;
    node.distance_cm = 7.0;
    let mut reader = NfcChannel::new(
        d.attacker_field(7.0),
        ChannelConfig::default(),
        ReaderOrigin::External,
    );
    let far = probe(&mut reader, &mut node);
    evidence.push(format!(
        "external probe at 7 cm via opening: {far} responses"
    ));
    transcript.push_str(&reader.transcript().to_text());

    // injected bit errors on the legitimate link
    let noisy = ChannelConfig {
        drop_probability: 0.0,
        corrupt_probability: 0.5,
        rng_seed: world.seed,
    };
    let mut node = world.legit_node();
    crate::ccb::preconfigure(&mut node);
    let mut link = NfcChannel::new(FieldModel::default(), noisy, ReaderOrigin::Ccb);
    let clock = SimClock::default();
    for _ in 0..200 {
        let req = RequestFrame::new(Command::SramContentRead, Some(node.uid()), 0, 2);
        let _ = link.transceive_raw(&req, &mut node, &clock);
    }
    let corrupted: Vec<_> = link
        .transcript()
        .exchanges
        .iter()
        .filter(|x| {
            matches!(
                x.fate,
                Fate::RequestCorrupted { .. } | Fate::ResponseCorrupted { .. }
            )
        })
        .collect();
    let slipped = corrupted.iter().filter(|x| x.accepted()).count();
    evidence.push(format!(
        "fault injection: {} corrupted exchanges, {slipped} accepted",
        corrupted.len()
    ));

    let result = if close == 0 && far == 0 && slipped == 0 {
        Verdict::Blocked
    } else {
        Verdict::Compromised
    };
    finish(ThreatId::T4, result, evidence, transcript)
}

/// Attacker edit applied to the stored log of record `index`.
const T5_RECORDS: usize = 12;
const T5_TARGET: usize = 7;

fn t5(world: &World, d: &Defenses) -> ScenarioOutcome {
    let mut evidence = Vec::new();
    let mut node = world.legit_node();
    let mut ccb = world.ccb(d, ChannelConfig::default());
    let keys = SessionKeys::generate(world.seed, 5);
    ccb.run_init_phase(&mut node)
        .expect("legitimate module initialises");
    if d.c5 {
        ccb.insert_keys(keys.clone()).expect("fresh key slot");
    }
    let mut plain = Vec::new();
    for _ in 0..T5_RECORDS {
        let _ = ccb.read_sensor_measurement(&mut node);
        let c = ccb.run_monitoring_cycle(&mut node).expect("cycle");
        plain.push(c.sample.to_bytes());
    }

    let result = if d.c5 {
        let mut image = encode_log(ccb.records());
        let leaked = plain
            .iter()
            .any(|p| p.windows(16).any(|w| image.windows(16).any(|x| x == w)));
        evidence.push(format!("plaintext windows found in log: {leaked}"));
        image[FILE_HEADER_LEN + T5_TARGET * RECORD_LEN + 100] ^= 0x01;
        let report = scan_bytes(&image, &keys).expect("well-formed header");
        let flagged: Vec<usize> = report.failures().map(|r| r.index).collect();
        evidence.push(format!("scan flagged records {flagged:?}"));
        let exact = flagged == [T5_TARGET]
            && report.records[T5_TARGET].outcome == RecordOutcome::IntegrityFailure;
        if exact && !leaked {
            Verdict::Detected
        } else {
            Verdict::Undetected
        }
    } else {
        let mut image: Vec<u8> = plain.concat();
        // raise cell 1 of the target record by 0x100 mV
        image[T5_TARGET * SAMPLE_LEN + 22] ^= 0x01;
        let parsed = image
            .chunks(SAMPLE_LEN)
            .map(MonitoringSample::from_bytes)
            .collect::<Result<Vec<_>, _>>();
        let rejected = parsed.is_err();
        evidence.push(format!("plaintext log, edit rejected on read: {rejected}"));
        if rejected {
            Verdict::Detected
        } else {
            Verdict::Undetected
        }
    };
    finish(
        ThreatId::T5,
        result,
        evidence,
        ccb.channel().transcript().to_text(),
    )
}

pub fn run_scenario(id: ThreatId, defenses: &Defenses, seed: u64) -> ScenarioOutcome {
    let world = World::new(seed);
    match id {
        ThreatId::T1 => {
            let sig = world.attacker.sign(&world.legit_uid.0).to_bytes();
            let mut node = world.node(world.legit_uid, sig);
            counterfeit(&world, defenses, id, &mut node)
        }
        ThreatId::T2 => {
            let mut node = world.node(world.legit_uid, [0u8; 32]);
            counterfeit(&world, defenses, id, &mut node)
        }
        ThreatId::T3 => t3(&world, defenses),
        ThreatId::T4 => t4(&world, defenses),
        ThreatId::T5 => t5(&world, defenses),
    }
}

pub fn run_all(defenses: &Defenses, seed: u64) -> Vec<ScenarioOutcome> {
    std::thread::scope(|s| {
        let handles: Vec<_> = ThreatId::ALL
            .into_iter()
            .map(|id| s.spawn(move || run_scenario(id, defenses, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario panicked"))
            .collect()
    })
}

/// `threat,assets,countermeasures,expected,result,matched`
pub fn matrix_report(outcomes: &[ScenarioOutcome]) -> String {
    let mut out = String::from("threat,assets,countermeasures,expected,result,matched\n");
    for o in outcomes {
        let assets: Vec<_> = o.id.assets().iter().map(|a| a.code()).collect();
        let cms: Vec<_> =
            o.id.countermeasures()
                .iter()
                .map(|c| c.to_string())
                .collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            o.id,
            assets.join(";"),
            cms.join(";"),
            o.id.expected(),
            o.result,
            o.matched_expectation
        ));
    }
    out
}

/// Threats whose expectation stops being met when `c` alone is disabled.
pub fn ablation_flips(c: Countermeasure, seed: u64) -> Vec<ThreatId> {
    run_all(&Defenses::without(c), seed)
        .into_iter()
        .filter(|o| !o.matched_expectation)
        .map(|o| o.id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_matched_with_defenses() {
        let out = run_all(&Defenses::default(), 11);
        for o in &out {
            assert!(o.matched_expectation, "{:?}: {:?}", o.id, o.evidence);
        }
    }

    #[test]
    fn ablations_flip_dependents() {
        use Countermeasure::*;
        use ThreatId::*;
        assert_eq!(ablation_flips(C1, 11), vec![T1, T2, T3]);
        assert_eq!(ablation_flips(C2, 11), vec![T4]);
        assert_eq!(ablation_flips(C3, 11), vec![T3, T4]);
        assert_eq!(ablation_flips(C5, 11), vec![T5]);
    }

    #[test]
    fn mapping_matches_threat_model() {
        let report = matrix_report(&run_all(&Defenses::default(), 3));
        let lines: Vec<_> = report.lines().collect();
        assert_eq!(lines[1], "T1,A1;A3,C1,blocked,blocked,true");
        assert_eq!(lines[4], "T4,A1;A2;A3,C2;C3,blocked,blocked,true");
        assert_eq!(lines[5], "T5,A1;A3,C5,detected,detected,true");
    }

    #[test]
    fn far_probe_sees_nothing() {
        let out = run_scenario(ThreatId::T4, &Defenses::default(), 5);
        assert!(out
            .evidence
            .iter()
            .any(|e| e.contains("7 cm via opening: 0 responses")));
        assert!(out.evidence.iter().any(|e| e.contains("0 accepted")));
    }

    #[test]
    fn parse_ids() {
        assert_eq!("t3".parse::<ThreatId>(), Ok(ThreatId::T3));
        assert!("T4x".parse::<ThreatId>().is_err());
    }
}
