//! Critic PI2: path-integral planning over a learned dynamics model, with a
//! critic bootstrapping short imagined rollouts and an actor trained by
//! imitating the planner.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

pub mod actor_critic;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod nn;
pub mod planner;
pub mod replay;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp = nn::Mlp<f64>;
pub type GaussianPolicy = nn::GaussianPolicy<f64>;
pub type EnvSpec = env::EnvSpec<f64>;
pub type DynamicsModel = dynamics::DynamicsModel<f64>;
pub type Rollout = dynamics::Rollout<f64>;
pub type Critic = actor_critic::Critic<f64>;
pub type Ddpg = actor_critic::Ddpg<f64>;
pub type Transition = replay::Transition<f64>;
pub type ReplayBuffer = replay::ReplayBuffer<f64>;
pub type PlanResult = planner::PlanResult<f64>;
pub type Models = trainer::Models<f64>;
pub type Learner = trainer::Learner<f64>;
