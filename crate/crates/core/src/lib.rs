//! Two-tier traffic monitoring: foreground detection, speed and congestion
//! detection, a bandwidth-limited backhaul model, tier selection and the
//! evaluation harness that ties them together.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod congestion;
pub mod error;
pub mod eval;
pub mod frame;
pub mod geometry;
pub mod pixel;
pub mod rawio;
pub mod scenario;
pub mod scene;
pub mod source;
pub mod speed;
pub mod tier;
pub mod weather;

pub use error::{Error, Result};
pub use frame::{resize, to_intensity, Frame, VideoSpec};
