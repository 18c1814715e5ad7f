//! Deterministic gridworld standing in for a photorealistic simulator.

pub mod fixtures;
mod render;
mod scene;
mod truth;

pub use render::{black_ratio, move_agent, render, wall_between, DepthImage, Detection, Observation};
pub use scene::{CellKind, Question, QuestionKind, Room, Scene, SceneObject, Spawn, WALL_HEIGHT};
pub use truth::FrameTruth;
