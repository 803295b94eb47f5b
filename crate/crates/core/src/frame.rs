//! Request/response frames exchanged between the reader and the tag.
//!
//! Request layout (little-endian multi-byte fields):
//!
//! ```text
//! addressed:     flags(1) cmd(1) uid(8) block_address(2) block_count(1) payload(..) crc(2)   header = 15
//! non-addressed: flags(1) cmd(1)        block_address(2) block_count(1) payload(..) crc(2)   header = 7
//! ```
//!
//! Response layout: `flags(1) payload(..) crc(2)`, header = 3. Bit 0 of the
//! response flags marks an error response, whose payload is a single error
//! code byte.
//!
//! The CRC is CRC-16/X-25 (reflected 0x1021, init 0xFFFF, xorout 0xFFFF) over
//! every preceding byte, stored little-endian.

use std::fmt;
use std::str::FromStr;

use crc::{Crc, CRC_16_IBM_SDLC};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of 4-byte blocks in the tag SRAM window.
pub const SRAM_BLOCKS: u16 = 64;
/// Bytes per SRAM block.
pub const BLOCK_SIZE: usize = 4;

pub const ADDRESSED_HEADER_LEN: usize = 15;
pub const UNADDRESSED_HEADER_LEN: usize = 7;
pub const RESPONSE_HEADER_LEN: usize = 3;
const CRC_LEN: usize = 2;

/// Residue left by [`crc16`] when run over a frame with its CRC appended.
pub const CRC_RESIDUE: u16 = 0x0F47;

const X25: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_SDLC);

/// CRC-16/X-25 of `data`.
pub fn crc16(data: &[u8]) -> u16 {
    X25.checksum(data)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("crc mismatch: stored {stored:#06x}, computed {computed:#06x}")]
    CrcMismatch { stored: u16, computed: u16 },
    #[error("truncated frame: need at least {needed} bytes, got {actual}")]
    Truncated { needed: usize, actual: usize },
    #[error("unknown command code {0:#04x}")]
    UnknownCommand(u8),
    #[error("malformed hex dump: {0}")]
    InvalidHex(String),
}

/// 8-byte tag identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Uid(pub [u8; 8]);

impl Uid {
    pub const fn new(bytes: [u8; 8]) -> Self {
        Uid(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 8] {
        &self.0
    }
}

impl fmt::Display for Uid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode_upper(self.0))
    }
}

impl FromStr for Uid {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim()).map_err(|e| FrameError::InvalidHex(e.to_string()))?;
        let arr: [u8; 8] = bytes.try_into().map_err(|v: Vec<u8>| {
            FrameError::InvalidHex(format!("uid must be 8 bytes, got {}", v.len()))
        })?;
        Ok(Uid(arr))
    }
}

impl Serialize for Uid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Uid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Command set understood by the tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    /// Write `payload` to the I2C device at `block_address`, then read back
    /// `block_count` bytes into SRAM.
    I2cWrite,
    /// Read `block_count` bytes from the I2C device at `block_address` into
    /// SRAM; an optional payload is written first (register pointer).
    I2cRead,
    SramContentRead,
    SramWrite,
    GetConfig,
    SetConfig,
    ReadSignature,
    EnergyStatus,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::I2cWrite,
        Command::I2cRead,
        Command::SramContentRead,
        Command::SramWrite,
        Command::GetConfig,
        Command::SetConfig,
        Command::ReadSignature,
        Command::EnergyStatus,
    ];

    pub const fn code(self) -> u8 {
        match self {
            Command::SramContentRead => 0xD2,
            Command::SramWrite => 0xD3,
            Command::I2cWrite => 0xD4,
            Command::I2cRead => 0xD5,
            Command::GetConfig => 0xC0,
            Command::SetConfig => 0xC1,
            Command::EnergyStatus => 0xC2,
            Command::ReadSignature => 0xBD,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, FrameError> {
        Command::ALL
            .into_iter()
            .find(|c| c.code() == code)
            .ok_or(FrameError::UnknownCommand(code))
    }

    pub fn is_sram(self) -> bool {
        matches!(self, Command::SramContentRead | Command::SramWrite)
    }

    pub fn is_i2c(self) -> bool {
        matches!(self, Command::I2cWrite | Command::I2cRead)
    }
}

/// Request flags byte. Only bit 0 (`addressed`) is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameFlags {
    pub addressed: bool,
    pub command_class: Command,
}

impl FrameFlags {
    pub fn to_byte(self) -> u8 {
        self.addressed as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestFrame {
    pub command: Command,
    /// Present iff the frame is addressed.
    pub uid: Option<Uid>,
    pub block_address: u16,
    pub block_count: u8,
    pub payload: Vec<u8>,
}

impl RequestFrame {
    pub fn new(command: Command, uid: Option<Uid>, block_address: u16, block_count: u8) -> Self {
        RequestFrame {
            command,
            uid,
            block_address,
            block_count,
            payload: Vec::new(),
        }
    }

    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self
    }

    pub fn flags(&self) -> FrameFlags {
        FrameFlags {
            addressed: self.uid.is_some(),
            command_class: self.command,
        }
    }

    pub fn header_len(&self) -> usize {
        if self.uid.is_some() {
            ADDRESSED_HEADER_LEN
        } else {
            UNADDRESSED_HEADER_LEN
        }
    }

    /// Checks the per-command layout rules shared by encode and decode.
    pub fn validate(&self) -> Result<(), FrameError> {
        let invalid = |msg: String| Err(FrameError::InvalidFrame(msg));
        match self.command {
            Command::SramContentRead | Command::SramWrite => {
                if self.block_count == 0 {
                    return invalid("SRAM command with zero block count".into());
                }
                let end = self.block_address as u32 + self.block_count as u32;
                if end > SRAM_BLOCKS as u32 {
                    return invalid(format!(
                        "blocks {}..{} exceed the {} block SRAM",
                        self.block_address, end, SRAM_BLOCKS
                    ));
                }
                if self.command == Command::SramWrite
                    && self.payload.len() != BLOCK_SIZE * self.block_count as usize
                {
                    return invalid(format!(
                        "SramWrite of {} blocks carries {} payload bytes",
                        self.block_count,
                        self.payload.len()
                    ));
                }
            }
            Command::I2cWrite | Command::I2cRead => {
                if self.block_address > 0x7F {
                    return invalid(format!(
                        "I2C address {:#x} is not 7-bit",
                        self.block_address
                    ));
                }
                if self.command == Command::I2cWrite && self.payload.is_empty() {
                    return invalid("I2cWrite without data".into());
                }
                if self.command == Command::I2cRead && self.block_count == 0 {
                    return invalid("I2cRead of zero bytes".into());
                }
            }
            Command::SetConfig => {
                if self.payload.len() != BLOCK_SIZE {
                    return invalid(format!("SetConfig payload must be {BLOCK_SIZE} bytes"));
                }
            }
            Command::GetConfig | Command::ReadSignature | Command::EnergyStatus => {}
        }
        Ok(())
    }
}

pub fn encode_request(frame: &RequestFrame) -> Result<Vec<u8>, FrameError> {
    frame.validate()?;
    let mut out = Vec::with_capacity(frame.header_len() + frame.payload.len());
    out.push(frame.flags().to_byte());
    out.push(frame.command.code());
    if let Some(uid) = frame.uid {
        out.extend_from_slice(uid.as_bytes());
    }
    out.extend_from_slice(&frame.block_address.to_le_bytes());
    out.push(frame.block_count);
    out.extend_from_slice(&frame.payload);
    let crc = crc16(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn check_crc(bytes: &[u8]) -> Result<&[u8], FrameError> {
    let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN);
    let stored = u16::from_le_bytes([tail[0], tail[1]]);
    let computed = crc16(body);
    if stored != computed {
        return Err(FrameError::CrcMismatch { stored, computed });
    }
    Ok(body)
}

pub fn decode_request(bytes: &[u8]) -> Result<RequestFrame, FrameError> {
    if bytes.len() < UNADDRESSED_HEADER_LEN {
        return Err(FrameError::Truncated {
            needed: UNADDRESSED_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let body = check_crc(bytes)?;
    let addressed = body[0] & 0x01 != 0;
    let header_len = if addressed {
        ADDRESSED_HEADER_LEN
    } else {
        UNADDRESSED_HEADER_LEN
    };
    if bytes.len() < header_len {
        return Err(FrameError::Truncated {
            needed: header_len,
            actual: bytes.len(),
        });
    }
    let command = Command::from_code(body[1])?;
    let mut pos = 2;
    let uid = if addressed {
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&body[pos..pos + 8]);
        pos += 8;
        Some(Uid(raw))
    } else {
        None
    };
    let block_address = u16::from_le_bytes([body[pos], body[pos + 1]]);
    let block_count = body[pos + 2];
    let payload = body[pos + 3..].to_vec();
    if command == Command::SramWrite {
        let needed = BLOCK_SIZE * block_count as usize;
        if payload.len() < needed {
            return Err(FrameError::Truncated {
                needed: header_len + needed,
                actual: bytes.len(),
            });
        }
    }
    let frame = RequestFrame {
        command,
        uid,
        block_address,
        block_count,
        payload,
    };
    frame.validate()?;
    Ok(frame)
}

/// Error codes carried by error responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ErrorCode {
    NotPowered = 0x01,
    NotInitialized = 0x02,
    I2cNack = 0x03,
    I2cDisabled = 0x04,
    WriteProtected = 0x05,
    UnknownCommand = 0x06,
    InvalidFrame = 0x07,
    CrcMismatch = 0x08,
    Truncated = 0x09,
}

impl ErrorCode {
    pub fn from_byte(b: u8) -> Option<Self> {
        use ErrorCode::*;
        [
            NotPowered,
            NotInitialized,
            I2cNack,
            I2cDisabled,
            WriteProtected,
            UnknownCommand,
            InvalidFrame,
            CrcMismatch,
            Truncated,
        ]
        .into_iter()
        .find(|c| *c as u8 == b)
    }
}

impl From<&FrameError> for ErrorCode {
    fn from(e: &FrameError) -> Self {
        match e {
            FrameError::InvalidFrame(_) | FrameError::InvalidHex(_) => ErrorCode::InvalidFrame,
            FrameError::CrcMismatch { .. } => ErrorCode::CrcMismatch,
            FrameError::Truncated { .. } => ErrorCode::Truncated,
            FrameError::UnknownCommand(_) => ErrorCode::UnknownCommand,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseFrame {
    pub error: bool,
    pub payload: Vec<u8>,
}

impl ResponseFrame {
    pub fn ok(payload: Vec<u8>) -> Self {
        ResponseFrame {
            error: false,
            payload,
        }
    }

    pub fn error(code: ErrorCode) -> Self {
        ResponseFrame {
            error: true,
            payload: vec![code as u8],
        }
    }

    /// Error code of an error response; `None` for success responses or an
    /// unrecognised code byte.
    pub fn error_code(&self) -> Option<ErrorCode> {
        if !self.error {
            return None;
        }
        self.payload.first().copied().and_then(ErrorCode::from_byte)
    }
}

pub fn encode_response(frame: &ResponseFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(RESPONSE_HEADER_LEN + frame.payload.len());
    out.push(frame.error as u8);
    out.extend_from_slice(&frame.payload);
    let crc = crc16(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_response(bytes: &[u8]) -> Result<ResponseFrame, FrameError> {
    if bytes.len() < RESPONSE_HEADER_LEN {
        return Err(FrameError::Truncated {
            needed: RESPONSE_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let body = check_crc(bytes)?;
    Ok(ResponseFrame {
        error: body[0] & 0x01 != 0,
        payload: body[1..].to_vec(),
    })
}

/// Renders bytes as uppercase, space separated hex pairs (`01 D2 0A`).
pub fn to_hex_dump(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 3);
    for (i, b) in bytes.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&format!("{b:02X}"));
    }
    s
}

/// Inverse of [`to_hex_dump`]; accepts any whitespace between pairs.
pub fn parse_hex_dump(text: &str) -> Result<Vec<u8>, FrameError> {
    text.split_whitespace()
        .map(|tok| {
            if tok.len() != 2 {
                return Err(FrameError::InvalidHex(format!(
                    "token {tok:?} is not a byte"
                )));
            }
            u8::from_str_radix(tok, 16)
                .map_err(|_| FrameError::InvalidHex(format!("token {tok:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const UID: Uid = Uid([1, 2, 3, 4, 5, 6, 7, 8]);

    #[test]
    fn crc_empty_and_check_string() {
        assert_eq!(crc16(&[]), 0x0000);
        assert_eq!(crc16(b"123456789"), 0x906E);
    }

    #[test]
    fn addressed_sram_read_is_fifteen_bytes() {
        let f = RequestFrame::new(Command::SramContentRead, Some(UID), 0, 2);
        let bytes = encode_request(&f).unwrap();
        assert_eq!(bytes.len(), 15);
        assert_eq!(
            to_hex_dump(&bytes),
            "01 D2 01 02 03 04 05 06 07 08 00 00 02 CC F7"
        );
    }

    #[test]
    fn unaddressed_sram_read_is_seven_bytes() {
        let f = RequestFrame::new(Command::SramContentRead, None, 0, 2);
        let bytes = encode_request(&f).unwrap();
        assert_eq!(to_hex_dump(&bytes), "00 D2 00 00 02 6B 2D");
    }

    #[test]
    fn sram_write_length_mismatch_rejected() {
        let f = RequestFrame::new(Command::SramWrite, None, 0, 1).with_payload(vec![1, 2, 3]);
        assert!(matches!(
            encode_request(&f),
            Err(FrameError::InvalidFrame(_))
        ));
    }

    #[test]
    fn sram_bounds_rejected() {
        let f = RequestFrame::new(Command::SramContentRead, None, 63, 2);
        assert!(matches!(
            encode_request(&f),
            Err(FrameError::InvalidFrame(_))
        ));
        let f = RequestFrame::new(Command::SramContentRead, None, 62, 2);
        assert!(encode_request(&f).is_ok());
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(
            decode_request(&[0x01, 0xD2]),
            Err(FrameError::Truncated { .. })
        ));
        let f = RequestFrame::new(Command::SramContentRead, Some(UID), 0, 2);
        let mut bytes = encode_request(&f).unwrap();
        *bytes.last_mut().unwrap() ^= 0x01;
        assert!(matches!(
            decode_request(&bytes),
            Err(FrameError::CrcMismatch { .. })
        ));

        let mut body = vec![0x00, 0x42, 0, 0, 1];
        let crc = crc16(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(decode_request(&body), Err(FrameError::UnknownCommand(0x42)));
    }

    #[test]
    fn addressed_flag_without_uid_bytes_is_truncated() {
        let mut body = vec![0x01, 0xD2, 0, 0, 1];
        let crc = crc16(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_request(&body),
            Err(FrameError::Truncated { needed: 15, .. })
        ));
    }

    #[test]
    fn upper_flag_bits_ignored_on_decode() {
        let mut body = vec![0xFE, 0xD2, 0, 0, 1];
        let crc = crc16(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        let f = decode_request(&body).unwrap();
        assert_eq!(f.uid, None);
    }

    #[test]
    fn response_lengths() {
        let r = ResponseFrame::ok(vec![0; 8]);
        assert_eq!(encode_response(&r).len(), 11);
        let r = ResponseFrame::ok(vec![]);
        let bytes = encode_response(&r);
        assert_eq!(bytes.len(), 3);
        assert_eq!(decode_response(&bytes).unwrap(), r);
    }

    #[test]
    fn response_corrupted_flags_rejected() {
        let mut bytes = encode_response(&ResponseFrame::ok(vec![9, 9]));
        bytes[0] ^= 0x01;
        assert!(matches!(
            decode_response(&bytes),
            Err(FrameError::CrcMismatch { .. })
        ));
    }

    #[test]
    fn error_response_carries_code() {
        let r = ResponseFrame::error(ErrorCode::NotPowered);
        let back = decode_response(&encode_response(&r)).unwrap();
        assert_eq!(back.error_code(), Some(ErrorCode::NotPowered));
    }

    #[test]
    fn hex_dump_round_trip() {
        let bytes = vec![0x00, 0xAB, 0xFF];
        assert_eq!(parse_hex_dump(&to_hex_dump(&bytes)).unwrap(), bytes);
        assert!(parse_hex_dump("0G").is_err());
        assert!(parse_hex_dump("ABC").is_err());
    }

    #[test]
    fn uid_parse() {
        let u: Uid = "0102030405060708".parse().unwrap();
        assert_eq!(u, UID);
        assert!("0102".parse::<Uid>().is_err());
    }
}
