//! NFC battery-sensor readout: frame codec, tag emulation, channel model,
//! ECDSA authentication, secure logging and a simulated time/energy model.

pub mod auth;
pub mod battery;
pub mod ccb;
pub mod channel;
pub mod clock;
pub mod ecc;
pub mod frame;
pub mod ntag;
pub mod sample;
pub mod seclog;
pub mod sim;
pub mod threat;
