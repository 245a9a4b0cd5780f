//! Vehicle localization that fuses GPS, inertial velocity and roadside
//! infrastructure-node detections with a linear Kalman filter.
//!
//! Module overview:
//! - [`geo`]: ENU/map frames and lever-arm correction
//! - [`noise`]: measurement and process covariances
//! - [`ekf`]: prediction and sequential updates
//! - [`assoc`]: stream synchronization and gating
//! - [`sim`]: scenario simulator
//! - [`io`]: CSV logs and configuration files
//! - [`metrics`]: error statistics and reports
//! - [`pipeline`]: end-to-end fusion and evaluation
//! - [`cli`]: the `ixloc` command line tool

pub mod assoc;
pub mod cli;
pub mod ekf;
pub mod error;
pub mod geo;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
