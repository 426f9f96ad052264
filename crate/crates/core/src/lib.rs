//! Wearable IMU body tracking over a channel-hopping 2.4 GHz polling
//! protocol.
//!
//! The orientation pipeline lives in [`quatmath`], [`skeleton`] and
//! [`pipeline`]; [`motion_synth`] provides synthetic bodies with exact
//! ground truth. [`radio`] and [`protocol`] form a deterministic
//! discrete-event simulator of the sensor network. [`scenario`] runs
//! complete experiments from a TOML description.

pub mod error;
pub mod motion_synth;
pub mod pipeline;
pub mod protocol;
pub mod quatmath;
pub mod radio;
pub mod scenario;
pub mod skeleton;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quaternions.md")]
    mod quaternions {}
    #[doc = include_str!("../../../book/src/skeleton.md")]
    mod skeleton {}
    #[doc = include_str!("../../../book/src/synthetic-motion.md")]
    mod synthetic_motion {}
    #[doc = include_str!("../../../book/src/radio.md")]
    mod radio {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
