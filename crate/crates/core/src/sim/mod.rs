//! Closed-loop exploration missions against a hidden ground-truth world.

pub mod mission;
pub mod worldgen;

pub use mission::*;
pub use worldgen::{generate_world, GeneratedWorld, WorldGenError, WorldSpec};
