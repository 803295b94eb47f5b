//! Passive tag on the battery module: SRAM window, configuration, locked
//! originality signature, energy-harvesting gate and the I2C bridge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::I2cBus;
use crate::frame::{
    decode_request, encode_response, Command, ErrorCode, RequestFrame, ResponseFrame, Uid,
    BLOCK_SIZE, SRAM_BLOCKS,
};

pub const SRAM_LEN: usize = SRAM_BLOCKS as usize * BLOCK_SIZE;
pub const SIGNATURE_LEN: usize = 32;
/// Highest voltage the harvester can deliver.
pub const HARVEST_CEILING_MV: u16 = 3000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TagError {
    #[error("signature must be {SIGNATURE_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("signature storage is write protected")]
    WriteProtected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TagConfig {
    #[serde(rename = "eh_voltage_setpoint_mV")]
    pub eh_voltage_setpoint_mv: u16,
    pub i2c_master_enabled: bool,
    pub initialized: bool,
    /// First SRAM block that receives I2C read data.
    pub staging_block: u8,
}

impl Default for TagConfig {
    fn default() -> Self {
        TagConfig {
            eh_voltage_setpoint_mv: HARVEST_CEILING_MV,
            i2c_master_enabled: false,
            initialized: false,
            staging_block: 0,
        }
    }
}

impl TagConfig {
    /// Block image: setpoint (LE u16), flag bits, staging block.
    pub fn to_bytes(self) -> [u8; 4] {
        let sp = self.eh_voltage_setpoint_mv.to_le_bytes();
        let flags = (self.i2c_master_enabled as u8) | ((self.initialized as u8) << 1);
        [sp[0], sp[1], flags, self.staging_block]
    }

    pub fn from_bytes(b: [u8; 4]) -> Option<Self> {
        let cfg = TagConfig {
            eh_voltage_setpoint_mv: u16::from_le_bytes([b[0], b[1]]),
            i2c_master_enabled: b[2] & 0x01 != 0,
            initialized: b[2] & 0x02 != 0,
            staging_block: b[3],
        };
        cfg.is_valid().then_some(cfg)
    }

    pub fn is_valid(&self) -> bool {
        (1..=HARVEST_CEILING_MV).contains(&self.eh_voltage_setpoint_mv)
            && (self.staging_block as u16) < SRAM_BLOCKS
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyState {
    pub powered: bool,
    pub harvested_voltage_mv: u16,
}

impl EnergyState {
    pub fn to_bytes(self) -> [u8; 4] {
        let mv = self.harvested_voltage_mv.to_le_bytes();
        [self.powered as u8, mv[0], mv[1], 0]
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != 4 {
            return None;
        }
        Some(EnergyState {
            powered: b[0] != 0,
            harvested_voltage_mv: u16::from_le_bytes([b[1], b[2]]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NtagDevice {
    uid: Uid,
    sram: [u8; SRAM_LEN],
    signature: [u8; SIGNATURE_LEN],
    pub config: TagConfig,
    energy: EnergyState,
}

impl NtagDevice {
    /// Creates a freshly manufactured tag with a locked signature.
    pub fn provision(uid: Uid, signature: &[u8]) -> Result<Self, TagError> {
        let signature: [u8; SIGNATURE_LEN] = signature
            .try_into()
            .map_err(|_| TagError::BadLength(signature.len()))?;
        Ok(NtagDevice {
            uid,
            sram: [0; SRAM_LEN],
            signature,
            config: TagConfig::default(),
            energy: EnergyState::default(),
        })
    }

    pub fn uid(&self) -> Uid {
        self.uid
    }

    pub fn energy(&self) -> EnergyState {
        self.energy
    }

    pub fn sram(&self) -> &[u8; SRAM_LEN] {
        &self.sram
    }

    pub fn signature(&self) -> &[u8; SIGNATURE_LEN] {
        &self.signature
    }

    /// The signature area is locked at provisioning.
    pub fn write_signature(&mut self, _signature: &[u8]) -> Result<(), TagError> {
        Err(TagError::WriteProtected)
    }

    /// Updates the harvested voltage from the reader field and re-evaluates
    /// the power gate.
    pub fn energy_check(&mut self, field_mv: f64) -> EnergyState {
        let mv = if field_mv.is_finite() && field_mv > 0.0 {
            field_mv.min(HARVEST_CEILING_MV as f64).floor() as u16
        } else {
            0
        };
        self.energy.harvested_voltage_mv = mv;
        self.refresh_power();
        self.energy
    }

    fn refresh_power(&mut self) {
        self.energy.powered =
            self.energy.harvested_voltage_mv >= self.config.eh_voltage_setpoint_mv;
    }

    /// Byte-level entry point: decodes, dispatches and encodes. `None` means
    /// the tag stays silent (frame addressed to another UID).
    pub fn receive(&mut self, bytes: &[u8], bus: &mut dyn I2cBus) -> Option<Vec<u8>> {
        match decode_request(bytes) {
            Ok(req) => self.handle_command(&req, bus).map(|r| encode_response(&r)),
            Err(e) => Some(encode_response(&ResponseFrame::error(ErrorCode::from(&e)))),
        }
    }

    pub fn handle_command(
        &mut self,
        req: &RequestFrame,
        bus: &mut dyn I2cBus,
    ) -> Option<ResponseFrame> {
        if let Some(uid) = req.uid {
            if uid != self.uid {
                return None;
            }
        }
        Some(self.dispatch(req, bus).unwrap_or_else(ResponseFrame::error))
    }

    fn dispatch(
        &mut self,
        req: &RequestFrame,
        bus: &mut dyn I2cBus,
    ) -> Result<ResponseFrame, ErrorCode> {
        match req.command {
            Command::ReadSignature => return Ok(ResponseFrame::ok(self.signature.to_vec())),
            Command::EnergyStatus => return Ok(ResponseFrame::ok(self.energy.to_bytes().to_vec())),
            _ => {}
        }
        if !self.energy.powered {
            return Err(ErrorCode::NotPowered);
        }
        match req.command {
            Command::GetConfig => return Ok(ResponseFrame::ok(self.config.to_bytes().to_vec())),
            Command::SetConfig => {
                let raw: [u8; 4] = req
                    .payload
                    .as_slice()
                    .try_into()
                    .map_err(|_| ErrorCode::InvalidFrame)?;
                self.config = TagConfig::from_bytes(raw).ok_or(ErrorCode::InvalidFrame)?;
                self.refresh_power();
                return Ok(ResponseFrame::ok(Vec::new()));
            }
            _ => {}
        }
        if !self.config.initialized {
            return Err(ErrorCode::NotInitialized);
        }
        match req.command {
            Command::SramContentRead => {
                let (start, end) = block_range(req);
                Ok(ResponseFrame::ok(self.sram[start..end].to_vec()))
            }
            Command::SramWrite => {
                let (start, end) = block_range(req);
                self.sram[start..end].copy_from_slice(&req.payload);
                Ok(ResponseFrame::ok(Vec::new()))
            }
            Command::I2cWrite | Command::I2cRead => {
                if !self.config.i2c_master_enabled {
                    return Err(ErrorCode::I2cDisabled);
                }
                let read_len = req.block_count as usize;
                let staged_blocks = read_len.div_ceil(BLOCK_SIZE);
                let start = self.config.staging_block as usize * BLOCK_SIZE;
                if start + staged_blocks * BLOCK_SIZE > SRAM_LEN {
                    return Err(ErrorCode::InvalidFrame);
                }
                let data = bus
                    .transact(req.block_address as u8, &req.payload, read_len)
                    .map_err(|_| ErrorCode::I2cNack)?;
                let staged = &mut self.sram[start..start + staged_blocks * BLOCK_SIZE];
                staged.fill(0);
                staged[..data.len()].copy_from_slice(&data);
                Ok(ResponseFrame::ok(Vec::new()))
            }
            Command::ReadSignature
            | Command::EnergyStatus
            | Command::GetConfig
            | Command::SetConfig => {
                unreachable!("handled above")
            }
        }
    }
}

fn block_range(req: &RequestFrame) -> (usize, usize) {
    let start = req.block_address as usize * BLOCK_SIZE;
    (start, start + req.block_count as usize * BLOCK_SIZE)
}

/// On-disk tag provisioning record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagFile {
    pub uid: Uid,
    /// Hex of r||s.
    pub signature: String,
    #[serde(default)]
    pub config: TagConfig,
}

impl TagFile {
    pub fn from_device(tag: &NtagDevice) -> Self {
        TagFile {
            uid: tag.uid,
            signature: hex::encode_upper(tag.signature),
            config: tag.config,
        }
    }

    pub fn into_device(self) -> Result<NtagDevice, TagFileError> {
        let sig = hex::decode(&self.signature).map_err(|e| TagFileError::Hex(e.to_string()))?;
        let mut tag = NtagDevice::provision(self.uid, &sig)?;
        if !self.config.is_valid() {
            return Err(TagFileError::Config);
        }
        tag.config = self.config;
        Ok(tag)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TagFileError {
    #[error("bad signature hex: {0}")]
    Hex(String),
    #[error(transparent)]
    Tag(#[from] TagError),
    #[error("config out of range (setpoint 1..=3000 mV, staging block < 64)")]
    Config,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::{reg, BatteryModule, SENSOR_ADDRESS};

    const UID: Uid = Uid([0xE0, 4, 1, 2, 3, 4, 5, 6]);

    fn ready_tag() -> NtagDevice {
        let mut t = NtagDevice::provision(UID, &[0xAB; 32]).unwrap();
        t.energy_check(3000.0);
        t.config.initialized = true;
        t.config.i2c_master_enabled = true;
        t
    }

    fn req(cmd: Command, addr: u16, count: u8) -> RequestFrame {
        RequestFrame::new(cmd, None, addr, count)
    }

    #[test]
    fn provision_round_trips_signature() {
        let mut t = NtagDevice::provision(UID, &[7; 32]).unwrap();
        let mut bus = BatteryModule::default();
        let r = t
            .handle_command(&req(Command::ReadSignature, 0, 0), &mut bus)
            .unwrap();
        assert_eq!(r.payload, vec![7; 32]);
        assert_eq!(t.write_signature(&[0; 32]), Err(TagError::WriteProtected));
        assert_eq!(t.signature(), &[7; 32]);
    }

    #[test]
    fn provision_bad_length() {
        assert_eq!(
            NtagDevice::provision(UID, &[0; 31]),
            Err(TagError::BadLength(31))
        );
    }

    #[test]
    fn zeroed_sram_after_provision() {
        let mut t = ready_tag();
        let mut bus = BatteryModule::default();
        let r = t
            .handle_command(&req(Command::SramContentRead, 0, 1), &mut bus)
            .unwrap();
        assert_eq!(r, ResponseFrame::ok(vec![0; 4]));
    }

    #[test]
    fn uid_mismatch_is_silent() {
        let mut t = ready_tag();
        let mut bus = BatteryModule::default();
        let other = RequestFrame::new(Command::SramContentRead, Some(Uid([9; 8])), 0, 1);
        assert_eq!(t.handle_command(&other, &mut bus), None);
        let mine = RequestFrame::new(Command::SramContentRead, Some(UID), 0, 1);
        assert!(t.handle_command(&mine, &mut bus).is_some());
    }

    #[test]
    fn sram_write_unpowered() {
        let mut t = ready_tag();
        t.energy_check(0.0);
        let mut bus = BatteryModule::default();
        let w = req(Command::SramWrite, 0, 1).with_payload(vec![1, 2, 3, 4]);
        assert_eq!(
            t.handle_command(&w, &mut bus).unwrap().error_code(),
            Some(ErrorCode::NotPowered)
        );
    }

    #[test]
    fn energy_check_thresholds() {
        let mut t = NtagDevice::provision(UID, &[0; 32]).unwrap();
        assert!(t.energy_check(3000.0).powered);
        assert!(!t.energy_check(2999.0).powered);
        assert_eq!(t.energy_check(10_000.0).harvested_voltage_mv, 3000);
        assert_eq!(t.energy_check(10_000.0), t.energy_check(10_000.0));
    }

    #[test]
    fn set_config_works_before_initialization() {
        let mut t = NtagDevice::provision(UID, &[0; 32]).unwrap();
        t.energy_check(3000.0);
        let mut bus = BatteryModule::default();
        let cfg = TagConfig {
            initialized: true,
            i2c_master_enabled: true,
            ..TagConfig::default()
        };
        let r = t
            .handle_command(
                &req(Command::SetConfig, 0, 1).with_payload(cfg.to_bytes().to_vec()),
                &mut bus,
            )
            .unwrap();
        assert!(!r.error);
        assert_eq!(t.config, cfg);
        let r = t
            .handle_command(&req(Command::GetConfig, 0, 0), &mut bus)
            .unwrap();
        assert_eq!(r.payload, cfg.to_bytes().to_vec());
    }

    #[test]
    fn set_config_rejects_bad_setpoint() {
        let mut t = ready_tag();
        let mut bus = BatteryModule::default();
        let bad = TagConfig {
            eh_voltage_setpoint_mv: 3500,
            ..t.config
        };
        let r = t
            .handle_command(
                &req(Command::SetConfig, 0, 1).with_payload(bad.to_bytes().to_vec()),
                &mut bus,
            )
            .unwrap();
        assert_eq!(r.error_code(), Some(ErrorCode::InvalidFrame));
    }

    #[test]
    fn uninitialized_sram_read_rejected() {
        let mut t = NtagDevice::provision(UID, &[0; 32]).unwrap();
        t.energy_check(3000.0);
        let mut bus = BatteryModule::default();
        let r = t
            .handle_command(&req(Command::SramContentRead, 0, 1), &mut bus)
            .unwrap();
        assert_eq!(r.error_code(), Some(ErrorCode::NotInitialized));
    }

    #[test]
    fn i2c_trigger_stages_temperature() {
        let mut t = ready_tag();
        let mut bus = BatteryModule::default();
        let init = req(Command::I2cWrite, SENSOR_ADDRESS as u16, 0)
            .with_payload(vec![reg::CONTROL, reg::CMD_INIT]);
        assert!(!t.handle_command(&init, &mut bus).unwrap().error);
        let trig = req(Command::I2cWrite, SENSOR_ADDRESS as u16, 2)
            .with_payload(vec![reg::CONTROL, reg::CMD_START_TEMP]);
        assert!(!t.handle_command(&trig, &mut bus).unwrap().error);
        let r = t
            .handle_command(&req(Command::SramContentRead, 0, 2), &mut bus)
            .unwrap();
        assert_eq!(r.payload, vec![0x09, 0xF6, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn i2c_nack_surfaces() {
        let mut t = ready_tag();
        let mut bus = BatteryModule::default();
        let r = t
            .handle_command(&req(Command::I2cRead, 0x55, 2), &mut bus)
            .unwrap();
        assert_eq!(r.error_code(), Some(ErrorCode::I2cNack));
    }

    #[test]
    fn i2c_disabled() {
        let mut t = ready_tag();
        t.config.i2c_master_enabled = false;
        let mut bus = BatteryModule::default();
        let r = t
            .handle_command(&req(Command::I2cRead, 0x77, 2), &mut bus)
            .unwrap();
        assert_eq!(r.error_code(), Some(ErrorCode::I2cDisabled));
    }

    #[test]
    fn unknown_command_bytes_get_error_response() {
        let mut t = ready_tag();
        let mut bus = BatteryModule::default();
        let mut raw = vec![0x00, 0x42, 0, 0, 0];
        let crc = crate::frame::crc16(&raw);
        raw.extend_from_slice(&crc.to_le_bytes());
        let resp = crate::frame::decode_response(&t.receive(&raw, &mut bus).unwrap()).unwrap();
        assert_eq!(resp.error_code(), Some(ErrorCode::UnknownCommand));
    }

    #[test]
    fn tag_file_round_trip() {
        let t = NtagDevice::provision(UID, &[0x11; 32]).unwrap();
        let json = serde_json::to_string(&TagFile::from_device(&t)).unwrap();
        let back: TagFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_device().unwrap(), t);
    }
}
