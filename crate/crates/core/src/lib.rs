//! Exploration-RRT: sensor-aware goal sampling, multi-goal RRT*, NMPC-predicted
//! actuation and information-gain scoring for autonomous volumetric exploration,
//! plus a closed-loop simulator to evaluate it.

pub mod config;
pub mod cost;
pub mod dynamics;
pub mod goals;
pub mod nmpc;
pub mod output;
pub mod pipeline;
pub mod rrt;
pub mod seed;
pub mod sim;
pub mod sensor;
pub mod world;

pub use world::{BlockSet, Label, Point, VoxelIndex, VoxelRef, VoxelState, VoxelWorld};
