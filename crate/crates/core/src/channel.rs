//! Simulated contactless link between a reader and the tags in its field.
//!
//! Faults are applied to the encoded byte stream, so corruption is caught
//! (or not) by the frame CRC exactly as it would be on air.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::BatteryModule;
use crate::clock::{Phase, SimClock, SimTime};
use crate::frame::{
    decode_request, decode_response, encode_request, to_hex_dump, Command, ErrorCode, FrameError,
    RequestFrame, ResponseFrame, Uid,
};
use crate::ntag::{NtagDevice, HARVEST_CEILING_MV};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("no response from tag")]
    Timeout,
    #[error("response failed crc check")]
    CrcMismatch,
    #[error("tag reported {0:?}")]
    Tag(ErrorCode),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelConfigError {
    #[error("{field} must be within [0, 1], got {value}")]
    Probability { field: &'static str, value: f64 },
    #[error("{field} must be a finite non-negative distance, got {value}")]
    Distance { field: &'static str, value: f64 },
    #[error("max_range_cm must exceed nominal_distance_cm")]
    RangeOrder,
}

/// Reader field at a given tag distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldModel {
    pub distance_cm: f64,
    pub max_range_cm: f64,
    pub nominal_distance_cm: f64,
    pub reader_field_on: bool,
}

impl Default for FieldModel {
    fn default() -> Self {
        FieldModel {
            distance_cm: 2.0,
            max_range_cm: 5.4,
            nominal_distance_cm: 2.0,
            reader_field_on: true,
        }
    }
}

impl FieldModel {
    pub fn at(&self, distance_cm: f64) -> FieldModel {
        FieldModel {
            distance_cm,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), ChannelConfigError> {
        for (field, value) in [
            ("distance_cm", self.distance_cm),
            ("max_range_cm", self.max_range_cm),
            ("nominal_distance_cm", self.nominal_distance_cm),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(ChannelConfigError::Distance { field, value });
            }
        }
        if self.max_range_cm <= self.nominal_distance_cm {
            return Err(ChannelConfigError::RangeOrder);
        }
        Ok(())
    }
}

/// Full supply up to the nominal distance, linear down to zero at the
/// maximum range, nothing beyond it or with the field off.
pub fn field_voltage(model: &FieldModel) -> f64 {
    let d = model.distance_cm.max(0.0);
    if !model.reader_field_on || d >= model.max_range_cm {
        return 0.0;
    }
    let full = HARVEST_CEILING_MV as f64;
    if d <= model.nominal_distance_cm {
        return full;
    }
    full * (model.max_range_cm - d) / (model.max_range_cm - model.nominal_distance_cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub drop_probability: f64,
    pub corrupt_probability: f64,
    pub rng_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            drop_probability: 0.0,
            corrupt_probability: 0.0,
            rng_seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelConfigError> {
        for (field, value) in [
            ("drop_probability", self.drop_probability),
            ("corrupt_probability", self.corrupt_probability),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ChannelConfigError::Probability { field, value });
            }
        }
        Ok(())
    }
}

/// A tag mounted on its battery module at some distance from the reader.
#[derive(Debug, Clone)]
pub struct BatteryNode {
    pub tag: NtagDevice,
    pub module: BatteryModule,
    pub distance_cm: f64,
    /// Pack enclosure shields the tag from readers outside the chassis.
    pub sealed: bool,
}

impl BatteryNode {
    pub fn new(tag: NtagDevice, module: BatteryModule, distance_cm: f64) -> Self {
        BatteryNode {
            tag,
            module,
            distance_cm,
            sealed: true,
        }
    }

    pub fn uid(&self) -> Uid {
        self.tag.uid()
    }
}

/// Where a reader sits relative to the pack enclosure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReaderOrigin {
    /// The CCB's own reader.
    Ccb,
    /// A rogue reader inside the chassis.
    InChassis,
    /// A reader outside the chassis.
    External,
}

impl ReaderOrigin {
    fn label(self) -> &'static str {
        match self {
            ReaderOrigin::Ccb => "ccb",
            ReaderOrigin::InChassis => "in-chassis",
            ReaderOrigin::External => "external",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fate {
    Delivered,
    Dropped,
    Shielded,
    OutOfRange,
    Silent,
    RequestCorrupted { bit: usize },
    ResponseCorrupted { bit: usize },
}

/// One request and whatever came back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub t: SimTime,
    pub origin: ReaderOrigin,
    pub target: Uid,
    pub request: Vec<u8>,
    pub fate: Fate,
    pub response: Option<Vec<u8>>,
}

impl Exchange {
    /// Command of the request as emitted by the reader.
    pub fn command(&self) -> Option<Command> {
        decode_request(&self.request).ok().map(|r| r.command)
    }

    /// True when the reader received a CRC-valid, non-error response.
    pub fn accepted(&self) -> bool {
        self.response
            .as_deref()
            .and_then(|r| decode_response(r).ok())
            .is_some_and(|r| !r.error)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub exchanges: Vec<Exchange>,
    /// (time, UIDs found) for each discovery round.
    pub inventories: Vec<(SimTime, Vec<Uid>)>,
}

impl Transcript {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, uids) in &self.inventories {
            let list: Vec<String> = uids.iter().map(Uid::to_string).collect();
            let _ = writeln!(out, "{t} inventory [{}]", list.join(","));
        }
        for x in &self.exchanges {
            let _ = write!(
                out,
                "{} {} -> {} {:?} REQ {}",
                x.t,
                x.origin.label(),
                x.target,
                x.fate,
                to_hex_dump(&x.request)
            );
            if let Some(r) = &x.response {
                let _ = write!(out, " RSP {}", to_hex_dump(r));
            }
            out.push('\n');
        }
        out
    }
}

pub fn discover(field: &FieldModel, nodes: &[BatteryNode]) -> Vec<Uid> {
    discover_from(field, ReaderOrigin::Ccb, nodes)
}

fn reachable(field: &FieldModel, origin: ReaderOrigin, node: &BatteryNode) -> bool {
    !(origin == ReaderOrigin::External && node.sealed)
        && field_voltage(&field.at(node.distance_cm)) > 0.0
}

fn discover_from(field: &FieldModel, origin: ReaderOrigin, nodes: &[BatteryNode]) -> Vec<Uid> {
    let mut uids: Vec<Uid> = nodes
        .iter()
        .filter(|n| reachable(field, origin, n))
        .map(BatteryNode::uid)
        .collect();
    uids.sort();
    uids
}

/// One reader's view of the air interface.
#[derive(Debug, Clone)]
pub struct NfcChannel {
    field: FieldModel,
    config: ChannelConfig,
    origin: ReaderOrigin,
    rng: ChaCha8Rng,
    transcript: Transcript,
}

impl NfcChannel {
    pub fn new(field: FieldModel, config: ChannelConfig, origin: ReaderOrigin) -> Self {
        NfcChannel {
            field,
            config,
            origin,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            transcript: Transcript::default(),
        }
    }

    pub fn field(&self) -> &FieldModel {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut FieldModel {
        &mut self.field
    }

    pub fn origin(&self) -> ReaderOrigin {
        self.origin
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn discover(&mut self, nodes: &[BatteryNode], clock: &mut SimClock) -> Vec<Uid> {
        let uids = discover_from(&self.field, self.origin, nodes);
        clock.charge(Phase::Discovery);
        self.transcript
            .inventories
            .push((clock.now(), uids.clone()));
        uids
    }

    /// Exchanges one frame. Error responses come back as `Ok`; only lost or
    /// corrupted traffic is an `Err`.
    pub fn transceive_raw(
        &mut self,
        req: &RequestFrame,
        node: &mut BatteryNode,
        clock: &SimClock,
    ) -> Result<ResponseFrame, ChannelError> {
        let request = encode_request(req)?;
        let mut exchange = Exchange {
            t: clock.now(),
            origin: self.origin,
            target: node.uid(),
            request: request.clone(),
            fate: Fate::Delivered,
            response: None,
        };
        let result = self.deliver(request, node, &mut exchange);
        self.transcript.exchanges.push(exchange);
        result
    }

    fn deliver(
        &mut self,
        mut request: Vec<u8>,
        node: &mut BatteryNode,
        exchange: &mut Exchange,
    ) -> Result<ResponseFrame, ChannelError> {
        if self.origin == ReaderOrigin::External && node.sealed {
            exchange.fate = Fate::Shielded;
            return Err(ChannelError::Timeout);
        }
        let volts = field_voltage(&self.field.at(node.distance_cm));
        if volts <= 0.0 {
            exchange.fate = Fate::OutOfRange;
            return Err(ChannelError::Timeout);
        }
        let dropped = self.rng.gen_bool(self.config.drop_probability);
        let corrupted = self.rng.gen_bool(self.config.corrupt_probability);
        let corrupt_request = self.rng.gen_bool(0.5);
        let bit_draw: usize = self.rng.gen();
        if dropped {
            exchange.fate = Fate::Dropped;
            return Err(ChannelError::Timeout);
        }
        node.tag.energy_check(volts);
        if corrupted && corrupt_request {
            let bit = bit_draw % (request.len() * 8);
            request[bit / 8] ^= 1 << (bit % 8);
            exchange.fate = Fate::RequestCorrupted { bit };
        }
        let Some(mut response) = node.tag.receive(&request, &mut node.module) else {
            exchange.fate = Fate::Silent;
            return Err(ChannelError::Timeout);
        };
        if corrupted && !corrupt_request {
            let bit = bit_draw % (response.len() * 8);
            response[bit / 8] ^= 1 << (bit % 8);
            exchange.fate = Fate::ResponseCorrupted { bit };
        }
        exchange.response = Some(response.clone());
        decode_response(&response).map_err(|_| ChannelError::CrcMismatch)
    }

    /// Like [`transceive_raw`](Self::transceive_raw) but error responses
    /// become errors; a tag-side CRC rejection maps to `CrcMismatch`.
    pub fn transceive(
        &mut self,
        req: &RequestFrame,
        node: &mut BatteryNode,
        clock: &SimClock,
    ) -> Result<ResponseFrame, ChannelError> {
        let resp = self.transceive_raw(req, node, clock)?;
        if resp.error {
            return Err(match resp.error_code() {
                Some(ErrorCode::CrcMismatch) => ChannelError::CrcMismatch,
                Some(code) => ChannelError::Tag(code),
                None => ChannelError::Tag(ErrorCode::InvalidFrame),
            });
        }
        Ok(resp)
    }
}
