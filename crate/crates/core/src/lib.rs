//! Reverse-ODE solvers for diffusion generalist restoration models.
//!
//! The crate provides the coefficient schedules and forward map, residual and
//! noise predictors (including analytic oracles), solvers of orders 1 to 3
//! with optional posterior guidance, a queue-based second-order sampler, a
//! dense reference integrator for convergence studies, and a binary wire
//! protocol for predictors hosted in another process.

pub mod error;
pub mod forward;
pub mod image_io;
pub mod metrics;
pub mod posterior;
pub mod predictors;
pub mod protocol;
pub mod schedule;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use forward::{diffuse, residual_of, sample_terminal};
pub use predictors::{Predictor, PredictorOutput, Query};
pub use schedule::{build_schedule, Coefficients, Rates, Schedule, ScheduleConfig, ScheduleFamily};
pub use solver::{solve, SolverConfig, Trajectory};
pub use tensor::{SeededRng, TensorField};
