//! Real-time classification of touch-screen gestures for an ensemble of
//! performers, with transition-matrix tracking of the group's gesture
//! dynamics and detection of "new idea" moments.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod dynamics;
mod error;
pub mod features;
pub mod forest;
pub mod gesture;
pub mod plot;
pub mod profile;
pub mod protocol;
pub mod replay;
pub mod rng;
pub mod scenario;
pub mod session;
pub mod session_log;
pub mod synth;
pub mod touch;

pub use error::{Error, Result};
pub use features::FeatureVector;
pub use gesture::GestureClass;
pub use touch::{TouchEvent, TouchPhase, TouchWindow};
