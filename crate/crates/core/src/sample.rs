//! Monitoring sample record, format v1: 162 bytes, little-endian.
//!
//! | section          | bytes | contents                                          |
//! |------------------|-------|---------------------------------------------------|
//! | header           | 20    | uid 8, session 4, timestamp_ms 4, sequence 4      |
//! | measurements     | 60    | 15 x {sensor_id 1, raw 2, status 1}               |
//! | cell diagnostics | 42    | 14 x {fault_flags 1, soc_pct 1, balance_duty 1}   |
//! | pack diagnostics | 40    | see [`PackDiagnostics`]                           |
//!
//! Sensor ids 1-14 carry cell voltages in mV, id 15 the temperature in
//! centi-degrees Celsius as a signed 16-bit value.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::CELL_COUNT;
use crate::frame::Uid;

pub const SAMPLE_LEN: usize = 162;
pub const MEASUREMENT_COUNT: usize = CELL_COUNT + 1;
pub const TEMP_SENSOR_ID: u8 = 15;

pub const FLAG_OV: u8 = 0x01;
pub const FLAG_UV: u8 = 0x02;
pub const FLAG_OT: u8 = 0x04;

pub const STATUS_OK: u8 = 0x00;
pub const STATUS_FAULT: u8 = 0x01;
pub const STATUS_MISSING: u8 = 0x80;

pub const OV_THRESHOLD_MV: u16 = 4300;
pub const UV_THRESHOLD_MV: u16 = 2800;
pub const OT_THRESHOLD_CENTI_C: i16 = 6000;
pub const SOC_EMPTY_MV: u16 = 3000;
pub const SOC_FULL_MV: u16 = 4200;
pub const SOH_PLACEHOLDER_PCT: u16 = 100;

pub const BCC_STATUS_FAULT: u16 = 0x0001;
pub const BCC_STATUS_TEMP_MISSING: u16 = 0x0002;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SampleError {
    #[error("sample must be {SAMPLE_LEN} bytes, got {0}")]
    BadLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Measurement {
    pub sensor_id: u8,
    pub raw_value: u16,
    pub status: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub fault_flags: u8,
    pub soc_pct: u8,
    pub balance_duty: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PackDiagnostics {
    pub pack_voltage_mv: u32,
    pub pack_current_ma: i32,
    pub pack_soc_pct: u16,
    pub pack_soh_pct: u16,
    pub min_cell_mv: u16,
    pub max_cell_mv: u16,
    pub avg_cell_mv: u16,
    pub min_temp_centi_c: i16,
    pub max_temp_centi_c: i16,
    pub fault_bitmap: u32,
    pub uptime_s: u32,
    pub bcc_status: u16,
    pub reserved: [u8; 8],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleHeader {
    pub module_uid: Uid,
    pub session_id: u32,
    pub timestamp_ms: u32,
    pub sequence: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitoringSample {
    pub header: SampleHeader,
    pub measurements: [Measurement; MEASUREMENT_COUNT],
    pub cells: [CellDiagnostics; CELL_COUNT],
    pub pack: PackDiagnostics,
}

/// Linear state of charge between the empty and full voltages, clamped and
/// rounded half-up.
pub fn soc_pct(cell_mv: u16) -> u8 {
    let span = (SOC_FULL_MV - SOC_EMPTY_MV) as u32;
    let above = cell_mv.clamp(SOC_EMPTY_MV, SOC_FULL_MV) as u32 - SOC_EMPTY_MV as u32;
    ((200 * above + span) / (2 * span)) as u8
}

/// Integer mean rounded half-up.
pub fn mean_round_half_up(values: &[u16]) -> u16 {
    if values.is_empty() {
        return 0;
    }
    let sum: u64 = values.iter().map(|&v| v as u64).sum();
    let n = values.len() as u64;
    ((2 * sum + n) / (2 * n)) as u16
}

/// Per-cell flags and pack statistics. `temp` is `None` when the NFC
/// readout failed.
pub fn derive_diagnostics(
    cells: &[u16; CELL_COUNT],
    temp: Option<i16>,
) -> ([CellDiagnostics; CELL_COUNT], PackDiagnostics) {
    let over_temp = temp.is_some_and(|t| t > OT_THRESHOLD_CENTI_C);
    let mut diags = [CellDiagnostics::default(); CELL_COUNT];
    let mut bitmap = 0u32;
    for (i, (&mv, d)) in cells.iter().zip(diags.iter_mut()).enumerate() {
        let mut flags = 0;
        if mv > OV_THRESHOLD_MV {
            flags |= FLAG_OV;
        }
        if mv < UV_THRESHOLD_MV {
            flags |= FLAG_UV;
        }
        if over_temp {
            flags |= FLAG_OT;
        }
        if flags != 0 {
            bitmap |= 1 << i;
        }
        *d = CellDiagnostics {
            fault_flags: flags,
            soc_pct: soc_pct(mv),
            balance_duty: 0,
        };
    }
    let avg = mean_round_half_up(cells);
    let t = temp.unwrap_or(0);
    let mut status = 0;
    if bitmap != 0 {
        status |= BCC_STATUS_FAULT;
    }
    if temp.is_none() {
        status |= BCC_STATUS_TEMP_MISSING;
    }
    let pack = PackDiagnostics {
        pack_voltage_mv: cells.iter().map(|&v| v as u32).sum(),
        pack_current_ma: 0,
        pack_soc_pct: soc_pct(avg) as u16,
        pack_soh_pct: SOH_PLACEHOLDER_PCT,
        min_cell_mv: *cells.iter().min().unwrap(),
        max_cell_mv: *cells.iter().max().unwrap(),
        avg_cell_mv: avg,
        min_temp_centi_c: t,
        max_temp_centi_c: t,
        fault_bitmap: bitmap,
        uptime_s: 0,
        bcc_status: status,
        reserved: [0; 8],
    };
    (diags, pack)
}

impl MonitoringSample {
    pub fn build(
        header: SampleHeader,
        cells: &[u16; CELL_COUNT],
        temp: Option<i16>,
        uptime_s: u32,
    ) -> Self {
        let (diags, mut pack) = derive_diagnostics(cells, temp);
        pack.uptime_s = uptime_s;
        let mut measurements = [Measurement::default(); MEASUREMENT_COUNT];
        for (i, (&mv, d)) in cells.iter().zip(diags.iter()).enumerate() {
            let fault = d.fault_flags & (FLAG_OV | FLAG_UV) != 0;
            measurements[i] = Measurement {
                sensor_id: i as u8 + 1,
                raw_value: mv,
                status: if fault { STATUS_FAULT } else { STATUS_OK },
            };
        }
        measurements[CELL_COUNT] = match temp {
            Some(t) => Measurement {
                sensor_id: TEMP_SENSOR_ID,
                raw_value: t as u16,
                status: if t > OT_THRESHOLD_CENTI_C {
                    STATUS_FAULT
                } else {
                    STATUS_OK
                },
            },
            None => Measurement {
                sensor_id: TEMP_SENSOR_ID,
                raw_value: 0,
                status: STATUS_MISSING,
            },
        };
        MonitoringSample {
            header,
            measurements,
            cells: diags,
            pack,
        }
    }

    pub fn temperature(&self) -> Option<i16> {
        let m = &self.measurements[CELL_COUNT];
        (m.status & STATUS_MISSING == 0).then_some(m.raw_value as i16)
    }

    pub fn cell_voltages(&self) -> [u16; CELL_COUNT] {
        std::array::from_fn(|i| self.measurements[i].raw_value)
    }

    pub fn to_bytes(&self) -> [u8; SAMPLE_LEN] {
        let mut out = Vec::with_capacity(SAMPLE_LEN);
        let h = &self.header;
        out.extend_from_slice(&h.module_uid.0);
        out.extend_from_slice(&h.session_id.to_le_bytes());
        out.extend_from_slice(&h.timestamp_ms.to_le_bytes());
        out.extend_from_slice(&h.sequence.to_le_bytes());
        for m in &self.measurements {
            out.push(m.sensor_id);
            out.extend_from_slice(&m.raw_value.to_le_bytes());
            out.push(m.status);
        }
        for c in &self.cells {
            out.extend_from_slice(&[c.fault_flags, c.soc_pct, c.balance_duty]);
        }
        let p = &self.pack;
        out.extend_from_slice(&p.pack_voltage_mv.to_le_bytes());
        out.extend_from_slice(&p.pack_current_ma.to_le_bytes());
        out.extend_from_slice(&p.pack_soc_pct.to_le_bytes());
        out.extend_from_slice(&p.pack_soh_pct.to_le_bytes());
        out.extend_from_slice(&p.min_cell_mv.to_le_bytes());
        out.extend_from_slice(&p.max_cell_mv.to_le_bytes());
        out.extend_from_slice(&p.avg_cell_mv.to_le_bytes());
        out.extend_from_slice(&p.min_temp_centi_c.to_le_bytes());
        out.extend_from_slice(&p.max_temp_centi_c.to_le_bytes());
        out.extend_from_slice(&p.fault_bitmap.to_le_bytes());
        out.extend_from_slice(&p.uptime_s.to_le_bytes());
        out.extend_from_slice(&p.bcc_status.to_le_bytes());
        out.extend_from_slice(&p.reserved);
        out.try_into().expect("layout sums to SAMPLE_LEN")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SampleError> {
        if bytes.len() != SAMPLE_LEN {
            return Err(SampleError::BadLength(bytes.len()));
        }
        let mut r = Reader { buf: bytes, pos: 0 };
        let header = SampleHeader {
            module_uid: Uid(r.take()),
            session_id: u32::from_le_bytes(r.take()),
            timestamp_ms: u32::from_le_bytes(r.take()),
            sequence: u32::from_le_bytes(r.take()),
        };
        let measurements = std::array::from_fn(|_| {
            let [id, lo, hi, status] = r.take::<4>();
            Measurement {
                sensor_id: id,
                raw_value: u16::from_le_bytes([lo, hi]),
                status,
            }
        });
        let cells = std::array::from_fn(|_| {
            let [f, s, b] = r.take::<3>();
            CellDiagnostics {
                fault_flags: f,
                soc_pct: s,
                balance_duty: b,
            }
        });
        let pack = PackDiagnostics {
            pack_voltage_mv: u32::from_le_bytes(r.take()),
            pack_current_ma: i32::from_le_bytes(r.take()),
            pack_soc_pct: u16::from_le_bytes(r.take()),
            pack_soh_pct: u16::from_le_bytes(r.take()),
            min_cell_mv: u16::from_le_bytes(r.take()),
            max_cell_mv: u16::from_le_bytes(r.take()),
            avg_cell_mv: u16::from_le_bytes(r.take()),
            min_temp_centi_c: i16::from_le_bytes(r.take()),
            max_temp_centi_c: i16::from_le_bytes(r.take()),
            fault_bitmap: u32::from_le_bytes(r.take()),
            uptime_s: u32::from_le_bytes(r.take()),
            bcc_status: u16::from_le_bytes(r.take()),
            reserved: r.take(),
        };
        Ok(MonitoringSample {
            header,
            measurements,
            cells,
            pack,
        })
    }

    /// One CSV row: header fields, 14 cells, temperature, pack stats.
    pub fn csv_header() -> String {
        let mut cols = vec!["uid", "session", "timestamp_ms", "sequence"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        cols.extend((1..=CELL_COUNT).map(|i| format!("cell{i}_mV")));
        cols.extend(
            [
                "temp_centiC",
                "pack_mV",
                "soc_pct",
                "min_mV",
                "max_mV",
                "avg_mV",
                "fault_bitmap",
                "bcc_status",
            ]
            .map(String::from),
        );
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let h = &self.header;
        let mut cols = vec![
            h.module_uid.to_string(),
            h.session_id.to_string(),
            h.timestamp_ms.to_string(),
            h.sequence.to_string(),
        ];
        cols.extend(self.cell_voltages().iter().map(|v| v.to_string()));
        cols.push(
            self.temperature()
                .map(|t| t.to_string())
                .unwrap_or_default(),
        );
        let p = &self.pack;
        cols.extend([
            p.pack_voltage_mv.to_string(),
            p.pack_soc_pct.to_string(),
            p.min_cell_mv.to_string(),
            p.max_cell_mv.to_string(),
            p.avg_cell_mv.to_string(),
            format!("{:#010x}", p.fault_bitmap),
            format!("{:#06x}", p.bcc_status),
        ]);
        cols.join(",")
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
}
