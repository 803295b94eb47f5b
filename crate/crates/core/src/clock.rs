//! Simulated time, per-phase latency and power tables, and the energy ledger.
//!
//! Time is kept as integer nanoseconds so that compositions of the
//! millisecond table values add up exactly. Every charge appends one entry
//! for the CCB side and one for the battery-module sensor, so each
//! component's entries tile the whole simulated timeline.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClockError {
    #[error("negative or non-finite duration {0} ms for {1:?}")]
    NegativeDuration(f64, String),
    #[error("invalid table value {field} = {value}")]
    InvalidValue { field: &'static str, value: f64 },
    #[error(
        "data_sampling_total {total} ms does not match measurement_only + diagnostics = {sum} ms"
    )]
    InconsistentSampling { total: f64, sum: f64 },
}

/// Simulated instant or span, in nanoseconds.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: f64) -> Result<SimTime, ClockError> {
        if !ms.is_finite() || ms < 0.0 {
            return Err(ClockError::NegativeDuration(ms, String::new()));
        }
        Ok(SimTime((ms * 1e6).round() as u64))
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 1e9
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl std::iter::Sum for SimTime {
    fn sum<I: Iterator<Item = SimTime>>(iter: I) -> SimTime {
        SimTime(iter.map(|t| t.0).sum())
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.as_ms())
    }
}

/// Protocol steps with a table-driven duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Discovery,
    Authentication,
    EnergyHarvestCheck,
    NtagInit,
    SensorInit,
    SensorMeasurement,
    InterReadProcessing,
    MeasurementSampling,
    Diagnostics,
    DataProcessing,
    SecurityOps,
    KeyInsertion,
    FullSramRead,
}

impl Phase {
    pub const ALL: [Phase; 13] = [
        Phase::Discovery,
        Phase::Authentication,
        Phase::EnergyHarvestCheck,
        Phase::NtagInit,
        Phase::SensorInit,
        Phase::SensorMeasurement,
        Phase::InterReadProcessing,
        Phase::MeasurementSampling,
        Phase::Diagnostics,
        Phase::DataProcessing,
        Phase::SecurityOps,
        Phase::KeyInsertion,
        Phase::FullSramRead,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Phase::Discovery => "discovery",
            Phase::Authentication => "authentication",
            Phase::EnergyHarvestCheck => "eh_check",
            Phase::NtagInit => "ntag_init",
            Phase::SensorInit => "sensor_init",
            Phase::SensorMeasurement => "sensor_measurement",
            Phase::InterReadProcessing => "inter_read_processing",
            Phase::MeasurementSampling => "measurement_sampling",
            Phase::Diagnostics => "diagnostics",
            Phase::DataProcessing => "data_processing",
            Phase::SecurityOps => "security_ops",
            Phase::KeyInsertion => "key_insertion",
            Phase::FullSramRead => "full_sram_read",
        }
    }

    /// Half-width of the measured spread, used by the optional jitter mode.
    pub fn spread_ms(self) -> f64 {
        match self {
            Phase::Authentication => 0.37,
            Phase::EnergyHarvestCheck => 0.25,
            Phase::NtagInit => 2.44,
            Phase::SensorInit => 1.19,
            Phase::SensorMeasurement => 0.54,
            Phase::Diagnostics => 0.54,
            Phase::DataProcessing => 0.1,
            Phase::SecurityOps => 0.00875,
            _ => 0.0,
        }
    }

    fn activates_sensor(self) -> bool {
        matches!(self, Phase::SensorInit | Phase::SensorMeasurement)
    }
}

/// Per-phase durations in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyTable {
    /// Not measured; a placeholder so discovery is visible in the timeline.
    pub discovery: f64,
    pub authentication: f64,
    pub eh_check: f64,
    pub ntag_init: f64,
    pub sensor_init: f64,
    pub sensor_measurement: f64,
    pub inter_read_processing: f64,
    pub data_sampling_total: f64,
    pub measurement_only: f64,
    pub diagnostics: f64,
    pub data_processing: f64,
    pub security_ops: f64,
    pub key_insertion: f64,
    pub full_sram_read: f64,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable {
            discovery: 10.0,
            authentication: 369.30,
            eh_check: 19.64,
            ntag_init: 29.16,
            sensor_init: 116.1,
            sensor_measurement: 27.2,
            inter_read_processing: 2.0,
            data_sampling_total: 112.98,
            measurement_only: 3.5,
            diagnostics: 109.5,
            data_processing: 1.0,
            security_ops: 0.992,
            key_insertion: 20.0,
            full_sram_read: 82.28,
        }
    }
}

/// Allowed gap between `data_sampling_total` and its two parts.
pub const SAMPLING_SPLIT_TOLERANCE_MS: f64 = 0.05;

impl LatencyTable {
    pub fn validate(&self) -> Result<(), ClockError> {
        let fields: [(&'static str, f64); 14] = [
            ("discovery", self.discovery),
            ("authentication", self.authentication),
            ("eh_check", self.eh_check),
            ("ntag_init", self.ntag_init),
            ("sensor_init", self.sensor_init),
            ("sensor_measurement", self.sensor_measurement),
            ("inter_read_processing", self.inter_read_processing),
            ("data_sampling_total", self.data_sampling_total),
            ("measurement_only", self.measurement_only),
            ("diagnostics", self.diagnostics),
            ("data_processing", self.data_processing),
            ("security_ops", self.security_ops),
            ("key_insertion", self.key_insertion),
            ("full_sram_read", self.full_sram_read),
        ];
        for (field, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(ClockError::InvalidValue { field, value });
            }
        }
        let sum = self.measurement_only + self.diagnostics;
        if (self.data_sampling_total - sum).abs() > SAMPLING_SPLIT_TOLERANCE_MS
            || self.measurement_only > self.data_sampling_total
        {
            return Err(ClockError::InconsistentSampling {
                total: self.data_sampling_total,
                sum,
            });
        }
        Ok(())
    }

    /// Duration charged for `phase`. The diagnostics step takes whatever is
    /// left of `data_sampling_total` after the measurement step, so the
    /// sampling composite always equals the total.
    pub fn duration_ms(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Discovery => self.discovery,
            Phase::Authentication => self.authentication,
            Phase::EnergyHarvestCheck => self.eh_check,
            Phase::NtagInit => self.ntag_init,
            Phase::SensorInit => self.sensor_init,
            Phase::SensorMeasurement => self.sensor_measurement,
            Phase::InterReadProcessing => self.inter_read_processing,
            Phase::MeasurementSampling => self.measurement_only,
            Phase::Diagnostics => (self.data_sampling_total - self.measurement_only).max(0.0),
            Phase::DataProcessing => self.data_processing,
            Phase::SecurityOps => self.security_ops,
            Phase::KeyInsertion => self.key_insertion,
            Phase::FullSramRead => self.full_sram_read,
        }
    }
}

/// Power and energy figures. Units are in the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerTable {
    #[serde(rename = "ccb_active_W")]
    pub ccb_active_w: f64,
    #[serde(rename = "monitoring_iteration_mJ")]
    pub monitoring_iteration_mj: f64,
    #[serde(rename = "bms_controller_avg_mW")]
    pub bms_controller_avg_mw: f64,
    #[serde(rename = "bms_cycle_mJ")]
    pub bms_cycle_mj: f64,
    #[serde(rename = "security_per_sample_mJ")]
    pub security_per_sample_mj: f64,
    #[serde(rename = "key_insertion_mJ")]
    pub key_insertion_mj: f64,
    #[serde(rename = "sensor_standby_nA")]
    pub sensor_standby_na: f64,
    #[serde(rename = "sensor_peak_uA")]
    pub sensor_peak_ua: f64,
    #[serde(rename = "harvesting_extra_mA")]
    pub harvesting_extra_ma: f64,
    #[serde(rename = "reader_supply_V")]
    pub reader_supply_v: f64,
    #[serde(rename = "sensor_supply_V")]
    pub sensor_supply_v: f64,
}

impl Default for PowerTable {
    fn default() -> Self {
        PowerTable {
            ccb_active_w: 1.0,
            monitoring_iteration_mj: 25.82,
            bms_controller_avg_mw: 122.16,
            bms_cycle_mj: 13.80,
            security_per_sample_mj: 0.28,
            key_insertion_mj: 2.66,
            sensor_standby_na: 40.0,
            sensor_peak_ua: 22.0,
            harvesting_extra_ma: 5.0,
            reader_supply_v: 5.0,
            sensor_supply_v: 3.0,
        }
    }
}

impl PowerTable {
    pub fn validate(&self) -> Result<(), ClockError> {
        let fields: [(&'static str, f64); 11] = [
            ("ccb_active_W", self.ccb_active_w),
            ("monitoring_iteration_mJ", self.monitoring_iteration_mj),
            ("bms_controller_avg_mW", self.bms_controller_avg_mw),
            ("bms_cycle_mJ", self.bms_cycle_mj),
            ("security_per_sample_mJ", self.security_per_sample_mj),
            ("key_insertion_mJ", self.key_insertion_mj),
            ("sensor_standby_nA", self.sensor_standby_na),
            ("sensor_peak_uA", self.sensor_peak_ua),
            ("harvesting_extra_mA", self.harvesting_extra_ma),
            ("reader_supply_V", self.reader_supply_v),
            ("sensor_supply_V", self.sensor_supply_v),
        ];
        for (field, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(ClockError::InvalidValue { field, value });
            }
        }
        Ok(())
    }

    /// CCB draw while the reader field is up and the tag harvests from it.
    pub fn reader_active_w(&self) -> f64 {
        self.ccb_active_w + self.harvesting_extra_ma * 1e-3 * self.reader_supply_v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    Ccb,
    BatterySensor,
}

impl Component {
    pub fn label(self) -> &'static str {
        match self {
            Component::Ccb => "ccb",
            Component::BatterySensor => "battery_sensor",
        }
    }
}

/// How a span is converted to energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyCharge {
    /// Constant draw in watts over the span.
    Power(f64),
    /// A fixed figure in millijoules.
    Direct(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    pub component: Component,
    pub start: SimTime,
    pub duration: SimTime,
    pub energy_mj: f64,
    pub outcome: String,
}

impl LedgerEntry {
    pub fn end(&self) -> SimTime {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn push(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn total_energy_mj(&self) -> f64 {
        self.entries.iter().map(|e| e.energy_mj).sum()
    }

    pub fn total_time(&self, component: Component) -> SimTime {
        self.entries
            .iter()
            .filter(|e| e.component == component)
            .map(|e| e.duration)
            .sum()
    }

    /// `phase,component,start_ms,end_ms,energy_mJ,outcome`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,component,start_ms,end_ms,energy_mJ,outcome\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{}\n",
                e.label,
                e.component.label(),
                e.start,
                e.end(),
                e.energy_mj,
                e.outcome
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTotals {
    pub count: u64,
    pub duration_ms: f64,
    pub energy_mj: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    /// CCB-side totals keyed by phase label.
    pub phases: BTreeMap<String, PhaseTotals>,
    pub component_energy_mj: BTreeMap<String, f64>,
    pub total_ms: f64,
    pub total_energy_mj: f64,
    /// Share of secure-cycle time spent on processing + security ops.
    pub security_time_overhead_pct: f64,
    /// Share of secure-cycle energy spent on processing + security ops.
    pub security_energy_share_pct: f64,
}

pub fn report(ledger: &EnergyLedger) -> LedgerReport {
    let mut phases: BTreeMap<String, PhaseTotals> = BTreeMap::new();
    let mut component_energy_mj = BTreeMap::new();
    for e in ledger.entries() {
        *component_energy_mj
            .entry(e.component.label().to_string())
            .or_insert(0.0) += e.energy_mj;
        if e.component != Component::Ccb {
            continue;
        }
        let t = phases.entry(e.label.clone()).or_default();
        t.count += 1;
        t.duration_ms += e.duration.as_ms();
        t.energy_mj += e.energy_mj;
    }
    let get = |p: Phase| phases.get(p.label()).cloned().unwrap_or_default();
    let sampling = [Phase::MeasurementSampling, Phase::Diagnostics].map(get);
    let secure = [Phase::DataProcessing, Phase::SecurityOps].map(get);
    let sum_t = |v: &[PhaseTotals]| v.iter().map(|t| t.duration_ms).sum::<f64>();
    let sum_e = |v: &[PhaseTotals]| v.iter().map(|t| t.energy_mj).sum::<f64>();
    let pct = |part: f64, whole: f64| {
        if whole > 0.0 {
            100.0 * part / whole
        } else {
            0.0
        }
    };
    LedgerReport {
        security_time_overhead_pct: pct(sum_t(&secure), sum_t(&sampling) + sum_t(&secure)),
        security_energy_share_pct: pct(sum_e(&secure), sum_e(&sampling) + sum_e(&secure)),
        total_ms: ledger.total_time(Component::Ccb).as_ms(),
        total_energy_mj: ledger.total_energy_mj(),
        phases,
        component_energy_mj,
    }
}

#[derive(Debug, Clone)]
struct Jitter {
    rng: ChaCha8Rng,
}

/// Deterministic simulated clock that records every charge in its ledger.
#[derive(Debug, Clone)]
pub struct SimClock {
    now: SimTime,
    latency: LatencyTable,
    power: PowerTable,
    ledger: EnergyLedger,
    jitter: Option<Jitter>,
}

impl Default for SimClock {
    fn default() -> Self {
        SimClock::new(LatencyTable::default(), PowerTable::default())
    }
}

impl SimClock {
    pub fn new(latency: LatencyTable, power: PowerTable) -> Self {
        SimClock {
            now: SimTime::ZERO,
            latency,
            power,
            ledger: EnergyLedger::default(),
            jitter: None,
        }
    }

    /// Perturbs each table-driven charge uniformly within the phase's
    /// measured spread.
    pub fn with_jitter(mut self, seed: u64) -> Self {
        self.jitter = Some(Jitter {
            rng: ChaCha8Rng::seed_from_u64(seed),
        });
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn latency(&self) -> &LatencyTable {
        &self.latency
    }

    pub fn power(&self) -> &PowerTable {
        &self.power
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> EnergyLedger {
        self.ledger
    }

    /// Advances by an explicit span on the CCB side. The battery sensor is
    /// booked in standby for the same span.
    pub fn advance(
        &mut self,
        label: &str,
        duration_ms: f64,
        charge: EnergyCharge,
    ) -> Result<SimTime, ClockError> {
        let duration = SimTime::from_ms(duration_ms)
            .map_err(|_| ClockError::NegativeDuration(duration_ms, label.into()))?;
        self.record(label, duration, charge, false, "ok");
        Ok(self.now)
    }

    pub fn charge(&mut self, phase: Phase) -> SimTime {
        self.charge_with(phase, "ok")
    }

    /// Charges the table duration for `phase` and returns the charged span.
    pub fn charge_with(&mut self, phase: Phase, outcome: &str) -> SimTime {
        let mut ms = self.latency.duration_ms(phase);
        if let Some(j) = self.jitter.as_mut() {
            let spread = phase.spread_ms();
            if spread > 0.0 {
                ms = (ms + j.rng.gen_range(-spread..=spread)).max(0.0);
            }
        }
        let duration = SimTime::from_ms(ms).unwrap_or(SimTime::ZERO);
        let charge = self.energy_rule(phase, duration);
        self.record(
            phase.label(),
            duration,
            charge,
            phase.activates_sensor(),
            outcome,
        );
        duration
    }

    fn energy_rule(&self, phase: Phase, duration: SimTime) -> EnergyCharge {
        let lat = &self.latency;
        let pw = &self.power;
        let share = |part: SimTime, whole: f64| {
            if whole > 0.0 {
                part.as_ms() / whole
            } else {
                0.0
            }
        };
        match phase {
            Phase::SensorMeasurement => EnergyCharge::Direct(pw.monitoring_iteration_mj),
            Phase::MeasurementSampling | Phase::Diagnostics => {
                EnergyCharge::Direct(pw.bms_cycle_mj * share(duration, lat.data_sampling_total))
            }
            Phase::DataProcessing | Phase::SecurityOps => EnergyCharge::Direct(
                pw.security_per_sample_mj * share(duration, lat.data_processing + lat.security_ops),
            ),
            Phase::KeyInsertion => EnergyCharge::Direct(pw.key_insertion_mj),
            _ => EnergyCharge::Power(pw.reader_active_w()),
        }
    }

    fn record(
        &mut self,
        label: &str,
        duration: SimTime,
        charge: EnergyCharge,
        sensor_active: bool,
        outcome: &str,
    ) {
        let start = self.now;
        let energy_mj = match charge {
            EnergyCharge::Power(w) => w * duration.as_ms(),
            EnergyCharge::Direct(mj) => mj,
        };
        self.ledger.push(LedgerEntry {
            label: label.to_string(),
            component: Component::Ccb,
            start,
            duration,
            energy_mj,
            outcome: outcome.to_string(),
        });
        let sensor_amps = if sensor_active {
            self.power.sensor_peak_ua * 1e-6
        } else {
            self.power.sensor_standby_na * 1e-9
        };
        self.ledger.push(LedgerEntry {
            label: label.to_string(),
            component: Component::BatterySensor,
            start,
            duration,
            energy_mj: sensor_amps * self.power.sensor_supply_v * duration.as_ms(),
            outcome: if sensor_active { "active" } else { "standby" }.to_string(),
        });
        self.now = start + duration;
    }
}
