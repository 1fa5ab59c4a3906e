//! Optimal control of a servicer spacecraft docking with a tumbling target.
//!
//! The relative translation follows the Clohessy-Wiltshire equations, both
//! attitudes are propagated with quaternions and Euler's rigid-body
//! equations, and the free-final-time problem is transcribed with the
//! trapezoidal rule into a sparse NLP solved by a built-in interior point
//! method.

pub mod constraints_cost;
pub mod dynamics;
pub mod error;
pub mod pipeline;
pub mod reference;
pub mod scenario;
pub mod solver;
pub mod trajectory;
pub mod transcription;
pub mod verify;

pub use error::{DockingError, Result};
