//! Joint RIS calibration and user positioning with an active RIS.
//!
//! The crate simulates uplink OFDM observations through a base station and an
//! active reconfigurable intelligent surface, estimates the channel parameters
//! with tensor-ESPRIT plus least-squares refinement, localizes the user and
//! the RIS with a shrinking 2D grid search, and evaluates Fisher-information
//! error bounds.

pub mod channel;
pub mod crlb;
pub mod error;
pub mod harness;
pub mod esprit;
pub mod geometry;
pub mod linalg;
pub mod localize;
pub mod refine;
pub mod scenario;
pub mod tensor;

pub use error::{Error, Result};
