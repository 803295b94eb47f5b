//! Cell control board: validation, configuration, readout loop and data
//! protection for one battery module.

use serde::Serialize;
use thiserror::Error;

use crate::auth::{authenticate_tag, ActionTaken, AllowList, AuthOutcome, AuthPolicy};
use crate::battery::{decode_temperature, reg, SensorState, SENSOR_ADDRESS};
use crate::channel::{BatteryNode, ChannelError, NfcChannel};
use crate::clock::{Phase, SimClock, SimTime};
use crate::ecc::VerifyingKey;
use crate::frame::{Command, ErrorCode, RequestFrame, SRAM_BLOCKS};
use crate::ntag::{EnergyState, TagConfig, HARVEST_CEILING_MV};
use crate::sample::{MonitoringSample, SampleHeader};
use crate::seclog::{
    pad, EncryptedRecord, LogError, LogStore, SecLogError, SecureLogger, SessionKeys,
};

/// SRAM blocks fetched per readout (8 bytes).
pub const READOUT_BLOCKS: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CcbPhase {
    Unconfigured,
    Validated,
    Initialized,
    Monitoring,
    Shutdown,
}

#[derive(Debug, Error)]
pub enum CcbError {
    #[error("authentication failed: {0:?}")]
    AuthFailed(AuthOutcome),
    #[error("tag not powered by the reader field")]
    NotPowered,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("operation needs phase {expected}, CCB is {actual:?}")]
    InvalidState {
        expected: &'static str,
        actual: CcbPhase,
    },
    #[error("CCB has shut down")]
    Shutdown,
    #[error(transparent)]
    SecLog(#[from] SecLogError),
    #[error(transparent)]
    Log(#[from] LogError),
}

impl CcbError {
    fn from_channel(e: ChannelError) -> Self {
        match e {
            ChannelError::Tag(ErrorCode::NotPowered) => CcbError::NotPowered,
            other => CcbError::Channel(other),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CcbConfig {
    pub allow_list: AllowList,
    pub public_key: VerifyingKey,
    pub policy: AuthPolicy,
    /// Skip NTAG and sensor configuration, relying on a previous session.
    pub cached_init: bool,
    /// Encrypt and MAC every sample.
    pub security: bool,
    /// Signature authentication; off only for countermeasure ablation.
    pub authenticate: bool,
    pub session_id: u32,
}

impl CcbConfig {
    pub fn new(allow_list: AllowList, public_key: VerifyingKey) -> Self {
        CcbConfig {
            allow_list,
            public_key,
            policy: AuthPolicy::Shutdown,
            cached_init: false,
            security: true,
            authenticate: true,
            session_id: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub step: &'static str,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitReport {
    pub steps: Vec<StepReport>,
    pub total_ms: f64,
    pub auth: Option<AuthOutcome>,
    pub action: ActionTaken,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Readout {
    pub temp_centi_c: i16,
    pub payload_len: usize,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    pub sequence: u32,
    pub start: SimTime,
    pub elapsed: SimTime,
    pub sample: MonitoringSample,
    pub record: Option<EncryptedRecord>,
}

/// Tag and sensor state left behind by an earlier session, which a cached
/// start relies on instead of reconfiguring.
pub fn preconfigure(node: &mut BatteryNode) {
    node.tag.config = operating_config();
    node.module.sensor.state = SensorState::Initialized;
}

fn operating_config() -> TagConfig {
    TagConfig {
        eh_voltage_setpoint_mv: HARVEST_CEILING_MV,
        i2c_master_enabled: true,
        initialized: true,
        staging_block: 0,
    }
}

pub struct Ccb {
    pub id: u32,
    config: CcbConfig,
    phase: CcbPhase,
    auth_outcome: Option<AuthOutcome>,
    sequence: u32,
    last_temp: Option<i16>,
    clock: SimClock,
    channel: NfcChannel,
    logger: SecureLogger,
    store: Option<LogStore>,
    records: Vec<EncryptedRecord>,
    warnings: Vec<String>,
}

impl Ccb {
    pub fn new(
        id: u32,
        config: CcbConfig,
        channel: NfcChannel,
        clock: SimClock,
        iv_seed: u64,
    ) -> Self {
        Ccb {
            id,
            config,
            phase: CcbPhase::Unconfigured,
            auth_outcome: None,
            sequence: 0,
            last_temp: None,
            clock,
            channel,
            logger: SecureLogger::new(iv_seed),
            store: None,
            records: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn phase(&self) -> CcbPhase {
        self.phase
    }

    pub fn auth_outcome(&self) -> Option<AuthOutcome> {
        self.auth_outcome
    }

    pub fn sequence(&self) -> u32 {
        self.sequence
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn into_clock(self) -> SimClock {
        self.clock
    }

    pub fn channel(&self) -> &NfcChannel {
        &self.channel
    }

    pub fn channel_mut(&mut self) -> &mut NfcChannel {
        &mut self.channel
    }

    pub fn config(&self) -> &CcbConfig {
        &self.config
    }

    pub fn records(&self) -> &[EncryptedRecord] {
        &self.records
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn last_temperature(&self) -> Option<i16> {
        self.last_temp
    }

    pub fn attach_store(&mut self, store: LogStore) {
        self.store = Some(store);
    }

    pub fn take_store(&mut self) -> Option<LogStore> {
        self.store.take()
    }

    pub fn discover(&mut self, nodes: &[BatteryNode]) -> Vec<crate::frame::Uid> {
        self.channel.discover(nodes, &mut self.clock)
    }

    pub fn insert_keys(&mut self, keys: SessionKeys) -> Result<(), CcbError> {
        self.ensure_not_shutdown()?;
        self.config.session_id = keys.session_id;
        self.logger.insert_keys(keys, &mut self.clock)?;
        Ok(())
    }

    fn ensure_not_shutdown(&self) -> Result<(), CcbError> {
        if self.phase == CcbPhase::Shutdown {
            Err(CcbError::Shutdown)
        } else {
            Ok(())
        }
    }

    fn ensure_operational(&self) -> Result<(), CcbError> {
        self.ensure_not_shutdown()?;
        match self.phase {
            CcbPhase::Initialized | CcbPhase::Monitoring => Ok(()),
            actual => Err(CcbError::InvalidState {
                expected: "initialized",
                actual,
            }),
        }
    }

    fn exchange(
        &mut self,
        req: &RequestFrame,
        node: &mut BatteryNode,
    ) -> Result<Vec<u8>, CcbError> {
        self.channel
            .transceive(req, node, &self.clock)
            .map(|r| r.payload)
            .map_err(CcbError::from_channel)
    }

    /// Authentication, energy check, tag configuration and sensor setup.
    pub fn run_init_phase(&mut self, node: &mut BatteryNode) -> Result<InitReport, CcbError> {
        self.ensure_not_shutdown()?;
        if self.phase != CcbPhase::Unconfigured {
            return Err(CcbError::InvalidState {
                expected: "unconfigured",
                actual: self.phase,
            });
        }
        let mut steps = Vec::new();
        let uid = node.uid();

        let mut action = ActionTaken::None;
        if self.config.authenticate {
            let t0 = self.clock.now();
            let (outcome, act) = authenticate_tag(
                &mut self.channel,
                node,
                &self.config.allow_list,
                &self.config.public_key,
                self.config.policy,
                &mut self.clock,
            )?;
            steps.push(step("authentication", self.clock.now() - t0));
            self.auth_outcome = Some(outcome);
            action = act;
            if outcome != AuthOutcome::Accepted {
                match act {
                    ActionTaken::SystemShutdown => self.phase = CcbPhase::Shutdown,
                    _ => self.warnings.push(format!(
                        "module {uid} failed authentication: {}",
                        outcome.label()
                    )),
                }
                return Err(CcbError::AuthFailed(outcome));
            }
        }
        self.phase = CcbPhase::Validated;

        let req = RequestFrame::new(Command::EnergyStatus, Some(uid), 0, 0);
        let status = self.exchange(&req, node);
        let d = self.clock.charge(Phase::EnergyHarvestCheck);
        steps.push(step("eh_check", d));
        let powered = EnergyState::from_bytes(&status?).is_some_and(|e| e.powered);
        if !powered {
            return Err(CcbError::NotPowered);
        }

        if !self.config.cached_init {
            let req = RequestFrame::new(Command::SetConfig, Some(uid), 0, 0)
                .with_payload(operating_config().to_bytes().to_vec());
            let r = self.exchange(&req, node);
            let d = self.clock.charge(Phase::NtagInit);
            steps.push(step("ntag_init", d));
            r?;

            let req = RequestFrame::new(Command::I2cWrite, Some(uid), SENSOR_ADDRESS as u16, 0)
                .with_payload(vec![reg::CONTROL, reg::CMD_INIT]);
            let r = self.exchange(&req, node);
            let d = self.clock.charge(Phase::SensorInit);
            steps.push(step("sensor_init", d));
            r?;
        }
        self.phase = CcbPhase::Initialized;
        let total = steps.iter().map(|s| s.duration_ms).sum::<f64>();
        Ok(InitReport {
            total_ms: round_ns(total),
            steps,
            auth: self.auth_outcome,
            action,
        })
    }

    /// Triggers one temperature conversion and fetches the staged result.
    pub fn read_sensor_measurement(&mut self, node: &mut BatteryNode) -> Result<Readout, CcbError> {
        self.ensure_operational()?;
        let uid = node.uid();
        let t0 = self.clock.now();
        let trigger = RequestFrame::new(Command::I2cWrite, Some(uid), SENSOR_ADDRESS as u16, 2)
            .with_payload(vec![reg::CONTROL, reg::CMD_START_TEMP]);
        let fetch = RequestFrame::new(Command::SramContentRead, Some(uid), 0, READOUT_BLOCKS);
        let result = self
            .exchange(&trigger, node)
            .and_then(|_| self.exchange(&fetch, node));
        let outcome = if result.is_ok() { "ok" } else { "missing" };
        self.clock.charge_with(Phase::SensorMeasurement, outcome);
        self.clock.charge_with(Phase::InterReadProcessing, outcome);
        let payload = match result {
            Ok(p) => p,
            Err(e) => {
                self.last_temp = None;
                return Err(e);
            }
        };
        let temp = decode_temperature([payload[0], payload[1]]);
        self.last_temp = Some(temp);
        Ok(Readout {
            temp_centi_c: temp,
            payload_len: payload.len(),
            elapsed_ms: (self.clock.now() - t0).as_ms(),
        })
    }

    /// Reads the complete 256-byte SRAM in one request.
    pub fn read_full_sram(&mut self, node: &mut BatteryNode) -> Result<Vec<u8>, CcbError> {
        self.ensure_operational()?;
        let req = RequestFrame::new(
            Command::SramContentRead,
            Some(node.uid()),
            0,
            SRAM_BLOCKS as u8,
        );
        let r = self.exchange(&req, node);
        self.clock.charge(Phase::FullSramRead);
        r
    }

    /// Sampling, diagnostics and (with security on) padding, encryption and
    /// logging of one sample.
    pub fn run_monitoring_cycle(
        &mut self,
        node: &mut BatteryNode,
    ) -> Result<CycleReport, CcbError> {
        self.ensure_operational()?;
        if self.config.security && self.logger.keys().is_none() {
            return Err(SecLogError::NoSessionKey.into());
        }
        self.phase = CcbPhase::Monitoring;
        let start = self.clock.now();
        node.module.advance_to(start);
        self.clock.charge(Phase::MeasurementSampling);
        let cells = node.module.cell_voltages();
        self.clock.charge(Phase::Diagnostics);
        let header = SampleHeader {
            module_uid: node.uid(),
            session_id: self.config.session_id,
            timestamp_ms: start.as_ms() as u32,
            sequence: self.sequence,
        };
        let sample =
            MonitoringSample::build(header, &cells, self.last_temp, start.as_secs() as u32);
        let record = if self.config.security {
            self.clock.charge(Phase::DataProcessing);
            let padded = pad(&sample.to_bytes())?;
            self.clock.charge(Phase::SecurityOps);
            let rec = self.logger.encrypt_record(&padded, self.sequence)?;
            if let Some(store) = self.store.as_mut() {
                store.append(&rec)?;
            }
            self.records.push(rec.clone());
            Some(rec)
        } else {
            None
        };
        let report = CycleReport {
            sequence: self.sequence,
            start,
            elapsed: self.clock.now() - start,
            sample,
            record,
        };
        self.sequence += 1;
        Ok(report)
    }
}

fn step(name: &'static str, d: SimTime) -> StepReport {
    StepReport {
        step: name,
        duration_ms: d.as_ms(),
    }
}

fn round_ns(ms: f64) -> f64 {
    (ms * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::BatteryModule;
    use crate::channel::{ChannelConfig, FieldModel, ReaderOrigin};
    use crate::ecc::SigningKey;
    use crate::frame::Uid;
    use crate::ntag::NtagDevice;

    const UID: Uid = Uid([0x04, 0xA1, 0xB2, 0xC3, 0xD4, 0xE5, 0xF6, 0x07]);

    fn rig(cached: bool, policy: AuthPolicy, signer: u128) -> (Ccb, BatteryNode) {
        let provisioner = SigningKey::new(0xBEEF).unwrap();
        let sig = SigningKey::new(signer).unwrap().sign(&UID.0).to_bytes();
        let tag = NtagDevice::provision(UID, &sig).unwrap();
        let mut node = BatteryNode::new(tag, BatteryModule::default(), 2.0);
        if cached {
            preconfigure(&mut node);
        }
        let mut cfg = CcbConfig::new([UID].into_iter().collect(), provisioner.verifying_key());
        cfg.cached_init = cached;
        cfg.policy = policy;
        let ch = NfcChannel::new(
            FieldModel::default(),
            ChannelConfig::default(),
            ReaderOrigin::Ccb,
        );
        (Ccb::new(1, cfg, ch, SimClock::default(), 9), node)
    }

    #[test]
    fn init_totals() {
        let (mut ccb, mut node) = rig(false, AuthPolicy::Shutdown, 0xBEEF);
        let r = ccb.run_init_phase(&mut node).unwrap();
        assert_eq!(r.total_ms, 534.2);
        assert_eq!(ccb.clock().now(), SimTime::from_ms(534.2).unwrap());
        assert_eq!(ccb.phase(), CcbPhase::Initialized);

        let (mut ccb, mut node) = rig(true, AuthPolicy::Shutdown, 0xBEEF);
        let r = ccb.run_init_phase(&mut node).unwrap();
        assert_eq!(r.total_ms, 388.94);
        assert_eq!(r.steps.len(), 2);
    }

    #[test]
    fn counterfeit_shuts_down() {
        let (mut ccb, mut node) = rig(false, AuthPolicy::Shutdown, 0xBAD);
        assert!(matches!(
            ccb.run_init_phase(&mut node),
            Err(CcbError::AuthFailed(AuthOutcome::RejectedSignature))
        ));
        assert_eq!(ccb.phase(), CcbPhase::Shutdown);
        let cmds: Vec<_> = ccb
            .channel()
            .transcript()
            .exchanges
            .iter()
            .filter_map(|e| e.command())
            .collect();
        assert_eq!(cmds, vec![Command::ReadSignature]);
        assert!(matches!(
            ccb.read_sensor_measurement(&mut node),
            Err(CcbError::Shutdown)
        ));
        assert!(matches!(
            ccb.run_init_phase(&mut node),
            Err(CcbError::Shutdown)
        ));
    }

    #[test]
    fn counterfeit_with_warn_stays_unconfigured() {
        let (mut ccb, mut node) = rig(false, AuthPolicy::Warn, 0xBAD);
        assert!(ccb.run_init_phase(&mut node).is_err());
        assert_eq!(ccb.phase(), CcbPhase::Unconfigured);
        assert_eq!(ccb.warnings().len(), 1);
        assert!(matches!(
            ccb.run_monitoring_cycle(&mut node),
            Err(CcbError::InvalidState { .. })
        ));
    }

    #[test]
    fn readout_returns_staged_temperature() {
        let (mut ccb, mut node) = rig(false, AuthPolicy::Shutdown, 0xBEEF);
        ccb.run_init_phase(&mut node).unwrap();
        let r = ccb.read_sensor_measurement(&mut node).unwrap();
        assert_eq!((r.temp_centi_c, r.payload_len), (2550, 8));
        assert_eq!(r.elapsed_ms, 29.2);
        node.module.set_temperature(-512).unwrap();
        assert_eq!(
            ccb.read_sensor_measurement(&mut node).unwrap().temp_centi_c,
            -512
        );
    }

    #[test]
    fn readout_out_of_range_marks_missing() {
        let (mut ccb, mut node) = rig(false, AuthPolicy::Shutdown, 0xBEEF);
        ccb.run_init_phase(&mut node).unwrap();
        ccb.read_sensor_measurement(&mut node).unwrap();
        node.distance_cm = 6.0;
        assert!(ccb.read_sensor_measurement(&mut node).is_err());
        ccb.insert_keys(SessionKeys::generate(1, 1)).unwrap();
        let c = ccb.run_monitoring_cycle(&mut node).unwrap();
        assert_eq!(c.sample.temperature(), None);
    }

    #[test]
    fn monitoring_cycle_timing_and_sequence() {
        let (mut ccb, mut node) = rig(true, AuthPolicy::Shutdown, 0xBEEF);
        ccb.run_init_phase(&mut node).unwrap();
        assert!(matches!(
            ccb.run_monitoring_cycle(&mut node),
            Err(CcbError::SecLog(SecLogError::NoSessionKey))
        ));
        ccb.insert_keys(SessionKeys::generate(3, 77)).unwrap();
        ccb.read_sensor_measurement(&mut node).unwrap();
        let a = ccb.run_monitoring_cycle(&mut node).unwrap();
        let b = ccb.run_monitoring_cycle(&mut node).unwrap();
        assert_eq!(a.elapsed, SimTime::from_ms(114.972).unwrap());
        assert_eq!(b.sequence, a.sequence + 1);
        assert_eq!(a.sample.header.session_id, 77);
        assert_eq!(a.sample.temperature(), Some(2550));
        assert_eq!(ccb.records().len(), 2);
    }

    #[test]
    fn security_disabled_cycle() {
        let (mut ccb, mut node) = rig(true, AuthPolicy::Shutdown, 0xBEEF);
        ccb.config.security = false;
        ccb.run_init_phase(&mut node).unwrap();
        let c = ccb.run_monitoring_cycle(&mut node).unwrap();
        assert_eq!(c.elapsed, SimTime::from_ms(112.98).unwrap());
        assert!(c.record.is_none());
    }

    #[test]
    fn full_sram_read() {
        let (mut ccb, mut node) = rig(true, AuthPolicy::Shutdown, 0xBEEF);
        ccb.run_init_phase(&mut node).unwrap();
        let t0 = ccb.clock().now();
        assert_eq!(ccb.read_full_sram(&mut node).unwrap().len(), 256);
        assert_eq!((ccb.clock().now() - t0).as_ms(), 82.28);
    }
}
