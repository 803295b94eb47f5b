//! ECDSA over secp128r1 with SHA-256 truncated to 128 bits and RFC 6979 nonces.

use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::curve::{AffinePoint, Point, Scalar, SECP128R1};

type HmacSha256 = Hmac<Sha256>;

pub const SIGNATURE_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 33;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EcdsaError {
    #[error("private key must satisfy 1 <= d < n")]
    InvalidKey,
    #[error("public key is not a point on secp128r1")]
    OffCurvePoint,
    #[error("bad key encoding: {0}")]
    BadEncoding(String),
}

/// Fixed-width `r || s`, both big-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Signature {
    pub r: u128,
    pub s: u128,
}

impl Signature {
    pub fn to_bytes(&self) -> [u8; SIGNATURE_LEN] {
        let mut out = [0u8; SIGNATURE_LEN];
        out[..16].copy_from_slice(&self.r.to_be_bytes());
        out[16..].copy_from_slice(&self.s.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != SIGNATURE_LEN {
            return None;
        }
        Some(Signature {
            r: u128::from_be_bytes(bytes[..16].try_into().ok()?),
            s: u128::from_be_bytes(bytes[16..].try_into().ok()?),
        })
    }
}

/// Leftmost 128 bits of SHA-256(msg), as an integer (not reduced).
pub fn hash_to_int(msg: &[u8]) -> u128 {
    let digest = Sha256::digest(msg);
    u128::from_be_bytes(digest[..16].try_into().unwrap())
}

fn hmac(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

/// RFC 6979 section 3.2 nonce for qlen = 128, HMAC-SHA256.
pub fn rfc6979_nonce(d: u128, msg: &[u8]) -> u128 {
    let n = SECP128R1.n;
    let h1 = hash_to_int(msg);
    let h1 = if h1 >= n { h1 - n } else { h1 };
    let x = d.to_be_bytes();
    let h = h1.to_be_bytes();
    let mut v = [0x01u8; 32];
    let mut k = [0x00u8; 32];
    k = hmac(&k, &[&v, &[0x00], &x, &h]);
    v = hmac(&k, &[&v]);
    k = hmac(&k, &[&v, &[0x01], &x, &h]);
    v = hmac(&k, &[&v]);
    loop {
        v = hmac(&k, &[&v]);
        let candidate = u128::from_be_bytes(v[..16].try_into().unwrap());
        if candidate >= 1 && candidate < n {
            return candidate;
        }
        k = hmac(&k, &[&v, &[0x00]]);
        v = hmac(&k, &[&v]);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigningKey {
    d: u128,
    public: AffinePoint,
}

impl SigningKey {
    pub fn new(d: u128) -> Result<Self, EcdsaError> {
        if d == 0 || d >= SECP128R1.n {
            return Err(EcdsaError::InvalidKey);
        }
        let public = Point::generator()
            .mul(d)
            .to_affine()
            .ok_or(EcdsaError::InvalidKey)?;
        Ok(SigningKey { d, public })
    }

    pub fn random<R: RngCore>(rng: &mut R) -> Self {
        loop {
            let mut buf = [0u8; 16];
            rng.fill_bytes(&mut buf);
            if let Ok(k) = Self::new(u128::from_be_bytes(buf)) {
                return k;
            }
        }
    }

    pub fn scalar(&self) -> u128 {
        self.d
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey { q: self.public }
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        let e = hash_to_int(msg);
        let mut k = rfc6979_nonce(self.d, msg);
        loop {
            if let Some(sig) = self.sign_prehashed_with_nonce(e, k) {
                return sig;
            }
            // r or s came out zero; step to a fresh nonce deterministically
            k = rfc6979_nonce(self.d, &[msg, &k.to_be_bytes()].concat());
        }
    }

    /// Raw signing equation; `None` if `k` is out of range or r or s is zero.
    pub fn sign_prehashed_with_nonce(&self, e: u128, k: u128) -> Option<Signature> {
        if k == 0 || k >= SECP128R1.n {
            return None;
        }
        let kg = Point::generator().mul(k).to_affine()?;
        let r = Scalar::new(kg.x);
        if r.is_zero() {
            return None;
        }
        let s = Scalar::new(k).invert()? * (Scalar::new(e) + r * Scalar::new(self.d));
        if s.is_zero() {
            return None;
        }
        Some(Signature {
            r: r.to_u128(),
            s: s.to_u128(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyingKey {
    q: AffinePoint,
}

impl VerifyingKey {
    pub fn from_affine(q: AffinePoint) -> Result<Self, EcdsaError> {
        if q.is_on_curve() {
            Ok(VerifyingKey { q })
        } else {
            Err(EcdsaError::OffCurvePoint)
        }
    }

    pub fn from_sec1(bytes: &[u8]) -> Result<Self, EcdsaError> {
        let q = AffinePoint::from_sec1(bytes).ok_or_else(|| {
            EcdsaError::BadEncoding(format!(
                "expected {PUBLIC_KEY_LEN} bytes starting with 04, got {} bytes",
                bytes.len()
            ))
        })?;
        Self::from_affine(q)
    }

    pub fn to_sec1(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.q.to_sec1()
    }

    pub fn point(&self) -> AffinePoint {
        self.q
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        self.verify_prehashed(hash_to_int(msg), sig)
    }

    pub fn verify_prehashed(&self, e: u128, sig: &Signature) -> bool {
        let n = SECP128R1.n;
        if sig.r == 0 || sig.r >= n || sig.s == 0 || sig.s >= n {
            return false;
        }
        let w = match Scalar::new(sig.s).invert() {
            Some(w) => w,
            None => return false,
        };
        let u1 = (Scalar::new(e) * w).to_u128();
        let u2 = (Scalar::new(sig.r) * w).to_u128();
        match Point::double_mul(u1, u2, &Point::from(self.q)).to_affine() {
            Some(x) => Scalar::new(x.x).to_u128() == sig.r,
            None => false,
        }
    }
}

/// Verification against a raw point; off-curve keys are an error, not `false`.
pub fn verify(public: &AffinePoint, msg: &[u8], sig: &Signature) -> Result<bool, EcdsaError> {
    Ok(VerifyingKey::from_affine(*public)?.verify(msg, sig))
}

/// JSON key file: `private` is present only in provisioning material.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub private: Option<String>,
    pub public: String,
}

impl KeyFile {
    pub fn from_signing_key(key: &SigningKey) -> Self {
        KeyFile {
            private: Some(hex::encode(key.scalar().to_be_bytes())),
            public: hex::encode(key.verifying_key().to_sec1()),
        }
    }

    pub fn from_verifying_key(key: &VerifyingKey) -> Self {
        KeyFile {
            private: None,
            public: hex::encode(key.to_sec1()),
        }
    }

    pub fn verifying_key(&self) -> Result<VerifyingKey, EcdsaError> {
        let bytes = hex::decode(self.public.trim())
            .map_err(|e| EcdsaError::BadEncoding(format!("public: {e}")))?;
        VerifyingKey::from_sec1(&bytes)
    }

    /// The signing key, checked against the stored public point.
    pub fn signing_key(&self) -> Result<Option<SigningKey>, EcdsaError> {
        let Some(hex_d) = &self.private else {
            return Ok(None);
        };
        let bytes = hex::decode(hex_d.trim())
            .map_err(|e| EcdsaError::BadEncoding(format!("private: {e}")))?;
        if bytes.len() != 16 {
            return Err(EcdsaError::BadEncoding(format!(
                "private: expected 16 bytes, got {}",
                bytes.len()
            )));
        }
        let key = SigningKey::new(u128::from_be_bytes(bytes.try_into().unwrap()))?;
        if key.verifying_key() != self.verifying_key()? {
            return Err(EcdsaError::BadEncoding(
                "public key does not match private scalar".into(),
            ));
        }
        Ok(Some(key))
    }

    pub fn load(path: &Path) -> Result<Self, KeyFileError> {
        let text = std::fs::read_to_string(path)?;
        let kf: KeyFile = serde_json::from_str(&text)?;
        kf.verifying_key()?;
        kf.signing_key()?;
        Ok(kf)
    }

    pub fn save(&self, path: &Path) -> Result<(), KeyFileError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KeyFileError {
    #[error("key file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("key file JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("key file content: {0}")]
    Key(#[from] EcdsaError),
}
