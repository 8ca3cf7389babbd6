//! Completion of partial point clouds by fitting a neural signed-distance
//! field under sensor-consistency losses and score-distillation guidance.

pub mod error;
pub mod evalx;
pub mod fields;
pub mod geometry;
pub mod guidance;
pub mod ingest;
pub mod linalg;
pub mod losses;
pub mod renderer;
pub mod scalar;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases for the common types.
pub type Vec3d = linalg::Vec3<f64>;
pub type Mat3d = linalg::Mat3<f64>;
pub type FieldParamsF64 = fields::FieldParams<f64>;
pub type SensorObservationF64 = ingest::SensorObservation<f64>;
pub type TrainerF64<'g> = trainer::Trainer<'g, f64>;
