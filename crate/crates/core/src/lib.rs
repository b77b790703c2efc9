//! Vectorized boulder-excavation environment: a five-joint excavator arm,
//! a rigid rock on a support plane, an analytical soil-resistance model,
//! sparse virtual LiDAR perception and a PPO trainer.
//!
//! The kinematic, soil and network code is generic over the scalar type
//! ([`num::Real`]); the aliases below fix the precision used by the
//! environment (`f64`) and by training (`f32`).

pub mod arm;
pub mod env;
pub mod geometry;
pub mod learn;
pub mod num;
pub mod physics;
pub mod rockgen;
pub mod sensor;
pub mod soil;

pub use env::{Env, EnvConfig, EnvError, Shared, VecEnv};

/// Arm kinematics at simulation precision.
pub type Arm = arm::ArmModel<f64>;
/// Joint-space vector at simulation precision.
pub type Joints = arm::JointVector<f64>;
/// Command delay and deadband pipeline at simulation precision.
pub type Pipeline = arm::ActionPipeline<f64>;
/// Soil parameters at simulation precision.
pub type Soil = soil::SoilParams<f64>;
/// Actor-critic network at training precision.
pub type Policy = learn::policy::PolicyNet<f32>;
/// PPO trainer at training precision.
pub type Trainer = learn::train::Trainer<f32>;
