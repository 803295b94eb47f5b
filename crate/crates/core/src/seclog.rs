//! Encrypt-then-MAC protection of monitoring samples and the on-disk log.
//!
//! Log file layout (all integers little-endian):
//!
//! ```text
//! file header  : magic "NTAGSLOG" (8) | version u16 = 1 | record_len u16 = 216
//! record (216) : session_id u32 | sequence u32 | iv (16) | ciphertext (176) | tag (16)
//! ```
//!
//! The tag is AES-CMAC under `mac_key` over `session_id | sequence | iv | ciphertext`.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use aes::Aes128;
use cbc::cipher::block_padding::NoPadding;
use cbc::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use cmac::{Cmac, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Phase, SimClock};
use crate::sample::SAMPLE_LEN;

pub const BLOCK_LEN: usize = 16;
pub const PADDED_LEN: usize = 176;
pub const TAG_LEN: usize = 16;
pub const RECORD_LEN: usize = 4 + 4 + BLOCK_LEN + PADDED_LEN + TAG_LEN;
pub const LOG_MAGIC: &[u8; 8] = b"NTAGSLOG";
pub const LOG_VERSION: u16 = 1;
pub const FILE_HEADER_LEN: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SecLogError {
    #[error("session keys already inserted")]
    AlreadyInserted,
    #[error("no session key inserted")]
    NoSessionKey,
    #[error("encryption and MAC keys must differ")]
    IdenticalKeys,
    #[error("expected {expected} bytes, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("record failed integrity check")]
    IntegrityFailure,
    #[error("padding invalid after decryption")]
    PaddingError,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("log storage full ({capacity} records)")]
    StorageFull { capacity: usize },
    #[error("corrupt log entry: {0}")]
    CorruptEntry(String),
}

mod hex16 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(k))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(text.trim()).map_err(serde::de::Error::custom)?;
        bytes.try_into().map_err(|b: Vec<u8>| {
            serde::de::Error::custom(format!("expected 16 bytes, got {}", b.len()))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionKeys {
    #[serde(with = "hex16")]
    pub enc_key: [u8; 16],
    #[serde(with = "hex16")]
    pub mac_key: [u8; 16],
    pub session_id: u32,
}

impl SessionKeys {
    pub fn validate(&self) -> Result<(), SecLogError> {
        if self.enc_key == self.mac_key {
            return Err(SecLogError::IdenticalKeys);
        }
        Ok(())
    }

    /// Fresh independent keys from a seeded generator.
    pub fn generate(seed: u64, session_id: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut enc_key = [0u8; 16];
            let mut mac_key = [0u8; 16];
            rng.fill_bytes(&mut enc_key);
            rng.fill_bytes(&mut mac_key);
            if enc_key != mac_key {
                return SessionKeys {
                    enc_key,
                    mac_key,
                    session_id,
                };
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedRecord {
    pub session_id: u32,
    pub sequence: u32,
    pub iv: [u8; BLOCK_LEN],
    pub ciphertext: [u8; PADDED_LEN],
    pub tag: [u8; TAG_LEN],
}

impl EncryptedRecord {
    pub fn to_bytes(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[..4].copy_from_slice(&self.session_id.to_le_bytes());
        out[4..8].copy_from_slice(&self.sequence.to_le_bytes());
        out[8..24].copy_from_slice(&self.iv);
        out[24..200].copy_from_slice(&self.ciphertext);
        out[200..].copy_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, SecLogError> {
        if b.len() != RECORD_LEN {
            return Err(SecLogError::BadLength {
                expected: RECORD_LEN,
                actual: b.len(),
            });
        }
        Ok(EncryptedRecord {
            session_id: u32::from_le_bytes(b[..4].try_into().unwrap()),
            sequence: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            iv: b[8..24].try_into().unwrap(),
            ciphertext: b[24..200].try_into().unwrap(),
            tag: b[200..].try_into().unwrap(),
        })
    }

    fn mac_input(&self) -> Vec<u8> {
        let bytes = self.to_bytes();
        bytes[..RECORD_LEN - TAG_LEN].to_vec()
    }
}

/// PKCS#7 from one 162-byte sample to 176 bytes.
pub fn pad(sample: &[u8]) -> Result<[u8; PADDED_LEN], SecLogError> {
    if sample.len() != SAMPLE_LEN {
        return Err(SecLogError::BadLength {
            expected: SAMPLE_LEN,
            actual: sample.len(),
        });
    }
    let fill = (PADDED_LEN - SAMPLE_LEN) as u8;
    let mut out = [fill; PADDED_LEN];
    out[..SAMPLE_LEN].copy_from_slice(sample);
    Ok(out)
}

pub fn unpad(padded: &[u8]) -> Result<Vec<u8>, SecLogError> {
    let n = *padded.last().ok_or(SecLogError::PaddingError)? as usize;
    if !padded.len().is_multiple_of(BLOCK_LEN) || n == 0 || n > BLOCK_LEN || n > padded.len() {
        return Err(SecLogError::PaddingError);
    }
    let (body, tail) = padded.split_at(padded.len() - n);
    if tail.iter().any(|&b| b as usize != n) {
        return Err(SecLogError::PaddingError);
    }
    Ok(body.to_vec())
}

pub fn cmac_tag(key: &[u8; 16], data: &[u8]) -> [u8; TAG_LEN] {
    let mut mac = <Cmac<Aes128> as Mac>::new_from_slice(key).expect("16-byte key");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

pub fn cbc_encrypt(key: &[u8; 16], iv: &[u8; 16], data: &mut [u8]) {
    let len = data.len();
    cbc::Encryptor::<Aes128>::new(key.into(), iv.into())
        .encrypt_padded_mut::<NoPadding>(data, len)
        .expect("block-aligned input");
}

pub fn cbc_decrypt(key: &[u8; 16], iv: &[u8; 16], data: &mut [u8]) {
    cbc::Decryptor::<Aes128>::new(key.into(), iv.into())
        .decrypt_padded_mut::<NoPadding>(data)
        .expect("block-aligned input");
}

/// Key slot plus IV generator for one CCB session.
#[derive(Debug, Clone)]
pub struct SecureLogger {
    keys: Option<SessionKeys>,
    iv_rng: ChaCha8Rng,
}

impl SecureLogger {
    pub fn new(iv_seed: u64) -> Self {
        SecureLogger {
            keys: None,
            iv_rng: ChaCha8Rng::seed_from_u64(iv_seed),
        }
    }

    pub fn keys(&self) -> Option<&SessionKeys> {
        self.keys.as_ref()
    }

    /// Loads the session keys; charges the key-insertion time and energy once.
    pub fn insert_keys(
        &mut self,
        keys: SessionKeys,
        clock: &mut SimClock,
    ) -> Result<(), SecLogError> {
        if self.keys.is_some() {
            return Err(SecLogError::AlreadyInserted);
        }
        keys.validate()?;
        self.keys = Some(keys);
        clock.charge(Phase::KeyInsertion);
        Ok(())
    }

    pub fn encrypt_record(
        &mut self,
        padded: &[u8; PADDED_LEN],
        sequence: u32,
    ) -> Result<EncryptedRecord, SecLogError> {
        let keys = self.keys.as_ref().ok_or(SecLogError::NoSessionKey)?;
        let mut iv = [0u8; BLOCK_LEN];
        self.iv_rng.fill_bytes(&mut iv);
        let mut ciphertext = *padded;
        cbc_encrypt(&keys.enc_key, &iv, &mut ciphertext);
        let mut rec = EncryptedRecord {
            session_id: keys.session_id,
            sequence,
            iv,
            ciphertext,
            tag: [0; TAG_LEN],
        };
        rec.tag = cmac_tag(&keys.mac_key, &rec.mac_input());
        Ok(rec)
    }

    pub fn verify_and_decrypt(&self, rec: &EncryptedRecord) -> Result<Vec<u8>, SecLogError> {
        verify_and_decrypt(self.keys.as_ref().ok_or(SecLogError::NoSessionKey)?, rec)
    }
}

/// Checks the tag first; only an authentic record is decrypted.
pub fn verify_and_decrypt(
    keys: &SessionKeys,
    rec: &EncryptedRecord,
) -> Result<Vec<u8>, SecLogError> {
    let mut mac = <Cmac<Aes128> as Mac>::new_from_slice(&keys.mac_key).expect("16-byte key");
    mac.update(&rec.mac_input());
    mac.verify_slice(&rec.tag)
        .map_err(|_| SecLogError::IntegrityFailure)?;
    let mut buf = rec.ciphertext;
    cbc_decrypt(&keys.enc_key, &rec.iv, &mut buf);
    let body = unpad(&buf)?;
    if body.len() != SAMPLE_LEN {
        return Err(SecLogError::PaddingError);
    }
    Ok(body)
}

/// Charges data processing and the security step for one record.
pub fn charge_protection(clock: &mut SimClock) {
    clock.charge(Phase::DataProcessing);
    clock.charge(Phase::SecurityOps);
}

fn file_header() -> [u8; FILE_HEADER_LEN] {
    let mut h = [0u8; FILE_HEADER_LEN];
    h[..8].copy_from_slice(LOG_MAGIC);
    h[8..10].copy_from_slice(&LOG_VERSION.to_le_bytes());
    h[10..].copy_from_slice(&(RECORD_LEN as u16).to_le_bytes());
    h
}

/// Complete log image (header plus records) held in memory.
pub fn encode_log(records: &[EncryptedRecord]) -> Vec<u8> {
    let mut out = file_header().to_vec();
    for r in records {
        out.extend_from_slice(&r.to_bytes());
    }
    out
}

/// Append-only record file with an optional record capacity.
#[derive(Debug)]
pub struct LogStore {
    path: PathBuf,
    file: File,
    records: usize,
    capacity: Option<usize>,
}

impl LogStore {
    /// Creates (truncating) a new log.
    pub fn create(path: &Path, capacity: Option<usize>) -> Result<Self, LogError> {
        let mut file = File::create(path)?;
        file.write_all(&file_header())?;
        Ok(LogStore {
            path: path.to_path_buf(),
            file,
            records: 0,
            capacity,
        })
    }

    /// Opens an existing log for appending.
    pub fn open(path: &Path, capacity: Option<usize>) -> Result<Self, LogError> {
        let raw = std::fs::read(path)?;
        check_header(&raw)?;
        let body = raw.len() - FILE_HEADER_LEN;
        if !body.is_multiple_of(RECORD_LEN) {
            return Err(LogError::CorruptEntry(format!(
                "{} trailing bytes after {} records",
                body % RECORD_LEN,
                body / RECORD_LEN
            )));
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(LogStore {
            path: path.to_path_buf(),
            file,
            records: body / RECORD_LEN,
            capacity,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records == 0
    }

    pub fn append(&mut self, rec: &EncryptedRecord) -> Result<(), LogError> {
        if let Some(cap) = self.capacity {
            if self.records >= cap {
                return Err(LogError::StorageFull { capacity: cap });
            }
        }
        self.file.write_all(&rec.to_bytes())?;
        self.records += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.file.flush()?;
        Ok(())
    }
}

fn check_header(raw: &[u8]) -> Result<(), LogError> {
    if raw.len() < FILE_HEADER_LEN || &raw[..8] != LOG_MAGIC {
        return Err(LogError::CorruptEntry("missing log header".into()));
    }
    let version = u16::from_le_bytes([raw[8], raw[9]]);
    let rec_len = u16::from_le_bytes([raw[10], raw[11]]) as usize;
    if version != LOG_VERSION || rec_len != RECORD_LEN {
        return Err(LogError::CorruptEntry(format!(
            "unsupported log version {version} / record length {rec_len}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordOutcome {
    Verified,
    IntegrityFailure,
    PaddingError,
    /// Partial record at the end of the file.
    CorruptEntry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScannedRecord {
    pub index: usize,
    pub record: Option<EncryptedRecord>,
    pub outcome: RecordOutcome,
    pub plaintext: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SequenceGap {
    /// Index of the first record after the gap.
    pub at_index: usize,
    pub expected: u32,
    pub found: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanReport {
    pub records: Vec<ScannedRecord>,
    pub gaps: Vec<SequenceGap>,
}

impl ScanReport {
    pub fn verified(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.outcome == RecordOutcome::Verified)
            .count()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ScannedRecord> {
        self.records
            .iter()
            .filter(|r| r.outcome != RecordOutcome::Verified)
    }

    pub fn is_clean(&self) -> bool {
        self.gaps.is_empty() && self.failures().next().is_none()
    }
}

/// Verifies every record of a log held in memory.
///
/// Sequence numbers start at 0. A record that fails verification still
/// advances the expected sequence by one, so a single edit yields a single
/// failure and no spurious gap.
pub fn scan_bytes(raw: &[u8], keys: &SessionKeys) -> Result<ScanReport, LogError> {
    check_header(raw)?;
    let body = &raw[FILE_HEADER_LEN..];
    let mut report = ScanReport::default();
    let mut expected = 0u32;
    for (index, chunk) in body.chunks(RECORD_LEN).enumerate() {
        let Ok(rec) = EncryptedRecord::from_bytes(chunk) else {
            report.records.push(ScannedRecord {
                index,
                record: None,
                outcome: RecordOutcome::CorruptEntry,
                plaintext: None,
            });
            break;
        };
        let (outcome, plaintext) = match verify_and_decrypt(keys, &rec) {
            Ok(p) => (RecordOutcome::Verified, Some(p)),
            Err(SecLogError::PaddingError) => (RecordOutcome::PaddingError, None),
            Err(_) => (RecordOutcome::IntegrityFailure, None),
        };
        if outcome == RecordOutcome::Verified {
            if rec.sequence != expected {
                report.gaps.push(SequenceGap {
                    at_index: index,
                    expected,
                    found: rec.sequence,
                });
            }
            expected = rec.sequence.wrapping_add(1);
        } else {
            expected = expected.wrapping_add(1);
        }
        report.records.push(ScannedRecord {
            index,
            record: Some(rec),
            outcome,
            plaintext,
        });
    }
    Ok(report)
}

pub fn scan_file(path: &Path, keys: &SessionKeys) -> Result<ScanReport, LogError> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    scan_bytes(&raw, keys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Component;

    fn keys() -> SessionKeys {
        SessionKeys::generate(42, 0x1234_5678)
    }

    fn logger() -> SecureLogger {
        let mut l = SecureLogger::new(7);
        l.insert_keys(keys(), &mut SimClock::default()).unwrap();
        l
    }

    fn sample(fill: u8) -> [u8; SAMPLE_LEN] {
        let mut s = [fill; SAMPLE_LEN];
        s[0] = 0x04;
        s
    }

    #[test]
    fn aes128_fips197_vector() {
        use aes::cipher::{BlockEncrypt, KeyInit};
        let key: [u8; 16] = hex::decode("000102030405060708090a0b0c0d0e0f")
            .unwrap()
            .try_into()
            .unwrap();
        let mut block =
            aes::Block::clone_from_slice(&hex::decode("00112233445566778899aabbccddeeff").unwrap());
        Aes128::new(&key.into()).encrypt_block(&mut block);
        assert_eq!(hex::encode(block), "69c4e0d86a7b0430d8cdb78070b4c55a");
    }

    #[test]
    fn cmac_sp800_38b_vectors() {
        let key: [u8; 16] = hex::decode("2b7e151628aed2a6abf7158809cf4f3c")
            .unwrap()
            .try_into()
            .unwrap();
        assert_eq!(
            hex::encode(cmac_tag(&key, &[])),
            "bb1d6929e95937287fa37d129b756746"
        );
        let m = hex::decode("6bc1bee22e409f96e93d7e117393172a").unwrap();
        assert_eq!(
            hex::encode(cmac_tag(&key, &m)),
            "070a16b46b4d4144f79bdd9dd04a287c"
        );
    }

    #[test]
    fn cbc_sp800_38a_vector() {
        let key: [u8; 16] = hex::decode("2b7e151628aed2a6abf7158809cf4f3c")
            .unwrap()
            .try_into()
            .unwrap();
        let iv: [u8; 16] = hex::decode("000102030405060708090a0b0c0d0e0f")
            .unwrap()
            .try_into()
            .unwrap();
        let mut data =
            hex::decode("6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e51")
                .unwrap();
        cbc_encrypt(&key, &iv, &mut data);
        assert_eq!(
            hex::encode(&data),
            "7649abac8119b246cee98e9b12e9197d5086cb9b507219ee95db113a917678b2"
        );
        cbc_decrypt(&key, &iv, &mut data);
        assert_eq!(hex::encode(&data[..16]), "6bc1bee22e409f96e93d7e117393172a");
    }

    #[test]
    fn pad_rules() {
        let p = pad(&sample(1)).unwrap();
        assert_eq!(p.len(), 176);
        assert!(p[162..].iter().all(|&b| b == 0x0E));
        assert_eq!(unpad(&p).unwrap(), sample(1).to_vec());
        assert_eq!(
            pad(&[0u8; 161]),
            Err(SecLogError::BadLength {
                expected: 162,
                actual: 161
            })
        );
        let mut bad = p;
        bad[170] = 0x0D;
        assert_eq!(unpad(&bad), Err(SecLogError::PaddingError));
    }

    #[test]
    fn key_insertion_rules() {
        let mut clock = SimClock::default();
        let mut l = SecureLogger::new(1);
        assert_eq!(
            l.encrypt_record(&pad(&sample(0)).unwrap(), 0),
            Err(SecLogError::NoSessionKey)
        );
        l.insert_keys(keys(), &mut clock).unwrap();
        assert_eq!(clock.now().as_ms(), 20.0);
        let ccb: Vec<_> = clock
            .ledger()
            .entries()
            .iter()
            .filter(|e| e.component == Component::Ccb)
            .collect();
        assert_eq!(
            (ccb.len(), ccb[0].label.as_str(), ccb[0].energy_mj),
            (1, "key_insertion", 2.66)
        );
        assert_eq!(
            l.insert_keys(keys(), &mut clock),
            Err(SecLogError::AlreadyInserted)
        );
        let mut same = keys();
        same.mac_key = same.enc_key;
        assert_eq!(
            SecureLogger::new(1).insert_keys(same, &mut clock),
            Err(SecLogError::IdenticalKeys)
        );
    }

    #[test]
    fn round_trip_and_fresh_iv() {
        let mut l = logger();
        let p = pad(&sample(9)).unwrap();
        let a = l.encrypt_record(&p, 0).unwrap();
        let b = l.encrypt_record(&p, 1).unwrap();
        assert_ne!(a.iv, b.iv);
        assert_ne!(a.ciphertext, b.ciphertext);
        assert_eq!(l.verify_and_decrypt(&a).unwrap(), sample(9).to_vec());
        assert_eq!(EncryptedRecord::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn tamper_and_wrong_key() {
        let mut l = logger();
        let rec = l.encrypt_record(&pad(&sample(3)).unwrap(), 5).unwrap();
        let mut t = rec.clone();
        t.ciphertext[100] ^= 0x10;
        assert_eq!(l.verify_and_decrypt(&t), Err(SecLogError::IntegrityFailure));
        let mut t = rec.clone();
        t.sequence = 6;
        assert_eq!(l.verify_and_decrypt(&t), Err(SecLogError::IntegrityFailure));
        let mut other = keys();
        other.mac_key[0] ^= 1;
        assert_eq!(
            verify_and_decrypt(&other, &rec),
            Err(SecLogError::IntegrityFailure)
        );
    }

    #[test]
    fn padding_error_is_distinct() {
        let k = keys();
        let mut ct = [0u8; PADDED_LEN];
        cbc_encrypt(&k.enc_key, &[0; 16], &mut ct);
        let mut rec = EncryptedRecord {
            session_id: k.session_id,
            sequence: 0,
            iv: [0; 16],
            ciphertext: ct,
            tag: [0; 16],
        };
        rec.tag = cmac_tag(&k.mac_key, &rec.mac_input());
        assert_eq!(verify_and_decrypt(&k, &rec), Err(SecLogError::PaddingError));
    }

    fn write_log(dir: &Path, n: u32) -> PathBuf {
        let path = dir.join("samples.log");
        let mut store = LogStore::create(&path, None).unwrap();
        let mut l = logger();
        for seq in 0..n {
            let rec = l
                .encrypt_record(&pad(&sample(seq as u8)).unwrap(), seq)
                .unwrap();
            store.append(&rec).unwrap();
        }
        store.flush().unwrap();
        path
    }

    #[test]
    fn scan_clean_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_log(dir.path(), 100);
        let r = scan_file(&path, &keys()).unwrap();
        assert_eq!(r.verified(), 100);
        assert!(r.is_clean());
    }

    #[test]
    fn scan_reports_deleted_record_as_gap() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_log(dir.path(), 100);
        let mut raw = std::fs::read(&path).unwrap();
        let start = FILE_HEADER_LEN + 50 * RECORD_LEN;
        raw.drain(start..start + RECORD_LEN);
        let r = scan_bytes(&raw, &keys()).unwrap();
        assert_eq!(r.verified(), 99);
        assert_eq!(
            r.gaps,
            vec![SequenceGap {
                at_index: 50,
                expected: 50,
                found: 51
            }]
        );
    }

    #[test]
    fn scan_flags_edited_record_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_log(dir.path(), 20);
        let mut raw = std::fs::read(&path).unwrap();
        raw[FILE_HEADER_LEN + 7 * RECORD_LEN + 60] ^= 0xFF;
        let r = scan_bytes(&raw, &keys()).unwrap();
        let bad: Vec<_> = r.failures().map(|f| (f.index, f.outcome)).collect();
        assert_eq!(bad, vec![(7, RecordOutcome::IntegrityFailure)]);
        assert!(r.gaps.is_empty());
    }

    #[test]
    fn truncated_tail_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_log(dir.path(), 3);
        let raw = std::fs::read(&path).unwrap();
        let r = scan_bytes(&raw[..raw.len() - 10], &keys()).unwrap();
        assert_eq!(
            r.records.last().unwrap().outcome,
            RecordOutcome::CorruptEntry
        );
        assert!(matches!(
            scan_bytes(b"garbage", &keys()),
            Err(LogError::CorruptEntry(_))
        ));
        assert!(matches!(LogStore::open(&path, None), Ok(s) if s.len() == 3));
    }

    #[test]
    fn in_memory_image_matches_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_log(dir.path(), 4);
        let raw = std::fs::read(&path).unwrap();
        let records: Vec<_> = raw[FILE_HEADER_LEN..]
            .chunks(RECORD_LEN)
            .map(|c| EncryptedRecord::from_bytes(c).unwrap())
            .collect();
        assert_eq!(encode_log(&records), raw);
    }

    #[test]
    fn storage_full() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = LogStore::create(&dir.path().join("x.log"), Some(1)).unwrap();
        let mut l = logger();
        let rec = l.encrypt_record(&pad(&sample(0)).unwrap(), 0).unwrap();
        store.append(&rec).unwrap();
        assert!(matches!(
            store.append(&rec),
            Err(LogError::StorageFull { capacity: 1 })
        ));
    }

    #[test]
    fn keys_json_round_trip() {
        let k = keys();
        let text = serde_json::to_string(&k).unwrap();
        assert_eq!(serde_json::from_str::<SessionKeys>(&text).unwrap(), k);
        assert!(serde_json::from_str::<SessionKeys>(
            r#"{"enc_key":"00","mac_key":"01","session_id":1}"#
        )
        .is_err());
    }
}
