//! Oriented-point constellation matching: vicinity scoring, binary feature
//! vectors, second-order vicinities, missing-minutia analysis and a
//! spring-physics comparator.

pub mod assignment;
pub mod bench;
pub mod error;
pub mod geom;
pub mod missing;
pub mod second_order;
pub mod spring;
pub mod synth;
pub mod vicinity;

pub use error::{Error, Result};
pub use geom::{Constellation, Minutia, Point, RigidTransform, ScoreParams};
