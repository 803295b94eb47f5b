//! secp128r1 arithmetic and ECDSA.

pub mod curve;
pub mod ecdsa;
pub mod field;

pub use curve::{AffinePoint, CurveParams, Point, SECP128R1};
pub use ecdsa::{EcdsaError, KeyFile, KeyFileError, Signature, SigningKey, VerifyingKey};
