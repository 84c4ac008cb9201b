//! Activity recognition from several body-worn IMUs: a shared convolutional
//! encoder per IMU feeds a capsule layer whose dynamic routing fuses the
//! sensor positions.

pub mod capsules;
pub mod datasets;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod loss_metrics;
pub mod model;
pub mod numerics;
pub mod selfcheck;
pub mod training;

pub use error::{Error, ErrorKind, Result};
