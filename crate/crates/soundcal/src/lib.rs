//! Sound calibration engine: impulse-response measurement with
//! nonsynchronous MLS playback, dynamic-range-compression fitting,
//! spectral correction filters, and a transducer profile library.

pub mod cli;
pub mod correction;
pub mod drc;
pub mod error;
pub mod export;
pub mod mls;
pub mod profiles;
pub mod session;
pub mod signals;
pub mod sim;
pub mod spectrum;
pub mod tone;

pub use error::{Error, Result};
