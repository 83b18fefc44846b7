//! Scenario-based model predictive control for linear systems with
//! chance constraints.
//!
//! The crate covers the whole pipeline: sample complexity of
//! sample-removal pairs ([`complexity`]), condensed scenario programs solved
//! as dense QPs ([`program`], [`qp`]), a-posteriori scenario removal
//! ([`removal`]), the receding-horizon controller ([`controller`]) and
//! closed-loop Monte Carlo ([`simulator`]).
//!
//! All numerical code is generic over [`Real`]; the `*64` aliases below fix
//! the scalar to `f64` and the `*32` ones to `f32`.

pub mod benchmark;
pub mod complexity;
pub mod controller;
pub mod error;
pub mod qp;
pub mod model;
pub mod program;
pub mod quadrature;
pub mod removal;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod special;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Polytope64 = model::Polytope<f64>;
pub type SystemModel64 = model::SystemModel<f64>;
pub type StageCost64 = model::StageCost<f64>;
pub type ChanceConstraintSpec64 = model::ChanceConstraintSpec<f64>;
pub type Scenario64 = model::Scenario<f64>;
pub type ScenarioProgram64 = program::ScenarioProgram<f64>;
pub type QpSolution64 = program::QpSolution<f64>;
pub type SampleRemovalPair64 = complexity::SampleRemovalPair<f64>;
pub type RemovalOutcome64 = removal::RemovalOutcome<f64>;
pub type ControllerConfig64 = controller::ControllerConfig<f64>;
pub type ScenarioController64 = controller::ScenarioController<f64>;
pub type ClosedLoopRecord64 = simulator::ClosedLoopRecord<f64>;

pub type Polytope32 = model::Polytope<f32>;
pub type SystemModel32 = model::SystemModel<f32>;
pub type ScenarioProgram32 = program::ScenarioProgram<f32>;
