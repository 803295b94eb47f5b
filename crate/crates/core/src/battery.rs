//! Battery module emulator: 14 cell voltages on the hardwired BCC path and
//! one temperature sensor on the module's I2C bus.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SimTime;

pub const CELL_COUNT: usize = 14;
pub const CELL_MIN_MV: u16 = 2000;
pub const CELL_MAX_MV: u16 = 4500;
pub const TEMP_MIN_CENTI_C: i16 = -4000;
pub const TEMP_MAX_CENTI_C: i16 = 12500;

/// Default 7-bit address of the temperature sensor.
pub const SENSOR_ADDRESS: u8 = 0x77;

/// Sensor register map.
pub mod reg {
    pub const CONTROL: u8 = 0x00;
    pub const TEMP_MSB: u8 = 0x01;
    pub const TEMP_LSB: u8 = 0x02;

    pub const CMD_RESET: u8 = 0x00;
    pub const CMD_INIT: u8 = 0x01;
    pub const CMD_START_TEMP: u8 = 0x2E;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum I2cError {
    #[error("no acknowledge from device {address:#04x}")]
    Nack { address: u8 },
}

/// Write-then-read transaction on an I2C bus.
pub trait I2cBus {
    fn transact(&mut self, address: u8, write: &[u8], read_len: usize)
        -> Result<Vec<u8>, I2cError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BatteryError {
    #[error("cell {cell} voltage {mv} mV outside {CELL_MIN_MV}..={CELL_MAX_MV}")]
    CellOutOfRange { cell: usize, mv: u16 },
    #[error("temperature {centi_c} centi-C outside {TEMP_MIN_CENTI_C}..={TEMP_MAX_CENTI_C}")]
    TempOutOfRange { centi_c: i16 },
    #[error("profile points must be sorted by t_ms (point {index})")]
    UnsortedProfile { index: usize },
    #[error("empty profile")]
    EmptyProfile,
}

pub fn encode_temperature(centi_c: i16) -> [u8; 2] {
    centi_c.to_be_bytes()
}

pub fn decode_temperature(bytes: [u8; 2]) -> i16 {
    i16::from_be_bytes(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorState {
    Standby,
    Initialized,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemperatureSensor {
    pub i2c_address: u8,
    pub temperature_centi_c: i16,
    pub state: SensorState,
    pointer: u8,
    conversions: u64,
}

impl TemperatureSensor {
    pub fn new(i2c_address: u8, temperature_centi_c: i16) -> Self {
        TemperatureSensor {
            i2c_address,
            temperature_centi_c,
            state: SensorState::Standby,
            pointer: reg::CONTROL,
            conversions: 0,
        }
    }

    /// Number of started temperature conversions.
    pub fn conversions(&self) -> u64 {
        self.conversions
    }

    fn nack(&self) -> I2cError {
        I2cError::Nack {
            address: self.i2c_address,
        }
    }

    fn write_register(&mut self, register: u8, value: u8) -> Result<(), I2cError> {
        if register != reg::CONTROL {
            return Err(self.nack());
        }
        match value {
            reg::CMD_RESET => self.state = SensorState::Standby,
            reg::CMD_INIT => self.state = SensorState::Initialized,
            reg::CMD_START_TEMP if self.state == SensorState::Initialized => self.conversions += 1,
            _ => return Err(self.nack()),
        }
        Ok(())
    }

    fn read_register(&self, register: u8) -> Result<u8, I2cError> {
        let raw = encode_temperature(self.temperature_centi_c);
        match (register, self.state) {
            (reg::CONTROL, SensorState::Standby) => Ok(0x00),
            (reg::CONTROL, SensorState::Initialized) => Ok(0x01),
            (reg::TEMP_MSB, SensorState::Initialized) => Ok(raw[0]),
            (reg::TEMP_LSB, SensorState::Initialized) => Ok(raw[1]),
            _ => Err(self.nack()),
        }
    }

    /// First written byte sets the register pointer; further bytes are
    /// written with auto-increment, and reads continue from the pointer.
    pub fn transact(&mut self, write: &[u8], read_len: usize) -> Result<Vec<u8>, I2cError> {
        if let Some((&pointer, data)) = write.split_first() {
            if pointer > reg::TEMP_LSB {
                return Err(self.nack());
            }
            self.pointer = pointer;
            for &b in data {
                self.write_register(self.pointer, b)?;
                self.pointer += 1;
            }
        }
        let mut out = Vec::with_capacity(read_len);
        for _ in 0..read_len {
            out.push(self.read_register(self.pointer)?);
            self.pointer += 1;
        }
        Ok(out)
    }
}

/// One step of a piecewise-constant profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t_ms: u64,
    #[serde(rename = "cell_mV")]
    pub cell_mv: [u16; CELL_COUNT],
    #[serde(rename = "temp_centiC")]
    pub temp_centi_c: i16,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile(pub Vec<ProfilePoint>);

impl Profile {
    pub fn constant(cell_mv: u16, temp_centi_c: i16) -> Self {
        Profile(vec![ProfilePoint {
            t_ms: 0,
            cell_mv: [cell_mv; CELL_COUNT],
            temp_centi_c,
        }])
    }

    /// Point in force at `t`; the first point also covers times before it.
    pub fn at(&self, t: SimTime) -> Option<&ProfilePoint> {
        let t_ms = t.0 / 1_000_000;
        let idx = self.0.partition_point(|p| p.t_ms <= t_ms);
        self.0.get(idx.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatteryModule {
    cells: [u16; CELL_COUNT],
    pub sensor: TemperatureSensor,
    profile: Option<Profile>,
}

impl Default for BatteryModule {
    fn default() -> Self {
        BatteryModule::new(3700, 2550)
    }
}

impl BatteryModule {
    pub fn new(cell_mv: u16, temp_centi_c: i16) -> Self {
        BatteryModule {
            cells: [cell_mv; CELL_COUNT],
            sensor: TemperatureSensor::new(SENSOR_ADDRESS, temp_centi_c),
            profile: None,
        }
    }

    pub fn cell_voltages(&self) -> [u16; CELL_COUNT] {
        self.cells
    }

    pub fn temperature_centi_c(&self) -> i16 {
        self.sensor.temperature_centi_c
    }

    /// Installs a profile. Out-of-range points are only accepted with
    /// `allow_faults`.
    pub fn set_profile(
        &mut self,
        profile: Profile,
        allow_faults: bool,
    ) -> Result<(), BatteryError> {
        if profile.0.is_empty() {
            return Err(BatteryError::EmptyProfile);
        }
        for (index, w) in profile.0.windows(2).enumerate() {
            if w[1].t_ms < w[0].t_ms {
                return Err(BatteryError::UnsortedProfile { index: index + 1 });
            }
        }
        if !allow_faults {
            for p in &profile.0 {
                check_point(p)?;
            }
        }
        self.profile = Some(profile);
        self.advance_to(SimTime::ZERO);
        Ok(())
    }

    /// Applies the profile point in force at `t`.
    pub fn advance_to(&mut self, t: SimTime) {
        if let Some(p) = self.profile.as_ref().and_then(|pr| pr.at(t)) {
            self.cells = p.cell_mv;
            self.sensor.temperature_centi_c = p.temp_centi_c;
        }
    }

    /// Fault-injection path: forces a cell to any voltage.
    pub fn inject_cell_voltage(&mut self, cell: usize, mv: u16) {
        self.cells[cell] = mv;
    }

    pub fn set_cell_voltage(&mut self, cell: usize, mv: u16) -> Result<(), BatteryError> {
        if !(CELL_MIN_MV..=CELL_MAX_MV).contains(&mv) {
            return Err(BatteryError::CellOutOfRange { cell, mv });
        }
        self.cells[cell] = mv;
        Ok(())
    }

    pub fn set_temperature(&mut self, centi_c: i16) -> Result<(), BatteryError> {
        if !(TEMP_MIN_CENTI_C..=TEMP_MAX_CENTI_C).contains(&centi_c) {
            return Err(BatteryError::TempOutOfRange { centi_c });
        }
        self.sensor.temperature_centi_c = centi_c;
        Ok(())
    }
}

fn check_point(p: &ProfilePoint) -> Result<(), BatteryError> {
    for (cell, &mv) in p.cell_mv.iter().enumerate() {
        if !(CELL_MIN_MV..=CELL_MAX_MV).contains(&mv) {
            return Err(BatteryError::CellOutOfRange { cell, mv });
        }
    }
    if !(TEMP_MIN_CENTI_C..=TEMP_MAX_CENTI_C).contains(&p.temp_centi_c) {
        return Err(BatteryError::TempOutOfRange {
            centi_c: p.temp_centi_c,
        });
    }
    Ok(())
}

impl I2cBus for BatteryModule {
    fn transact(
        &mut self,
        address: u8,
        write: &[u8],
        read_len: usize,
    ) -> Result<Vec<u8>, I2cError> {
        if address == self.sensor.i2c_address {
            self.sensor.transact(write, read_len)
        } else {
            Err(I2cError::Nack { address })
        }
    }
}
