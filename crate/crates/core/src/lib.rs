//! Hierarchical safe locomotion on a planar robot proxy.

pub mod controllers;
pub mod handoff;
pub mod harness;
pub mod layouts;
pub mod perception;
pub mod planner;
pub mod seeding;
pub mod shield;
pub mod sim;
pub mod state;
pub mod world;

pub use state::{Command, CommandBox, RobotState, Vec2};
