//! Black-box fuzzing of CAN-connected control units.
//!
//! Fuzzing strategies (random, brute-force, mutation, replay, identify and
//! omission) drive a deterministic virtual CAN bus. Physical outputs of the
//! simulated targets are observed through a modeled colour-sensor harness
//! and turned into oracle events, which in turn steer minimization and
//! automated exploration.

pub mod bus;
pub mod campaign;
pub mod can_core;
pub mod harness;
pub mod oracles;
pub mod sim_ecu;
pub mod strategies;

/// Virtual time in microseconds since campaign start.
pub type Micros = u64;

/// Identifies a physical output / sensor channel.
pub type ChannelId = u16;

/// Exact classification over raw sensor counts.
pub type RgbCounts = oracles::Rgb<i64>;
pub type CountCalibration = oracles::CalibrationPair<i64>;
pub type CountThreshold = oracles::Threshold<i64>;
pub type CountClassifier = oracles::Classifier<i64>;

pub type RgbF64 = oracles::Rgb<f64>;
pub type RgbF32 = oracles::Rgb<f32>;
pub type F64Calibration = oracles::CalibrationPair<f64>;
