//! Biomembrane memcapacitor simulator and reservoir-computing pipeline.
//!
//! The crate models a lipid-bilayer memcapacitor (coupled electrowetting /
//! electrocompression state equations), drives it with encoded voltage pulse
//! trains, extracts virtual-node features, trains linear / logistic readouts,
//! and runs the benchmark tasks: second-order nonlinear system
//! identification, spoken-digit classification on binary cochleograms,
//! EEG epilepsy detection, and IRIS classification, plus the device's
//! energy-per-spike analysis.

pub mod device;
pub mod encoding;
pub mod energy;
pub mod error;
pub mod readout;
pub mod reservoir;
pub mod rng;

mod io_util;

pub use error::{Error, Result};
