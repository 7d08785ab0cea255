//! Stepwise SRM/LRM routing with rubric-guided process rewards.
//!
//! The pipeline has three stages. Stage 1 collects routing trajectories
//! from diverse policies and builds preference pairs from outcome, cost,
//! and process quality. Stage 2 trains a rubric generator ("rubricor") and
//! a trajectory scorer ("judge") by alternating optimization, filtering
//! candidate criteria through a statistical validation gate. Stage 3
//! freezes both and optimizes the router with group-relative policy
//! optimization, mixing outcome, cost, and process rewards.
//!
//! A synthetic reasoning world with closed-form outcome probabilities and a
//! brute-force routing oracle ([`synthworld`]) makes the whole pipeline
//! verifiable end-to-end at desk scale; remote chat-completions backends
//! plug in through [`backends`].

pub mod backends;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod flops;
pub mod gate;
pub mod grpo;
pub mod io;
pub mod parallel;
pub mod prefdata;
pub mod rng;
pub mod routing;
pub mod rubric;
pub mod synthworld;
pub mod types;

pub use error::{Error, Result};
pub use flops::FlopsModel;
pub use types::{
    split_steps, Origin, Producer, QueryRecord, ReasoningStep, RoutingAction, RoutingTrajectory,
    SignalKind, SignalValues,
};
