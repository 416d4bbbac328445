//! Binary protocol for predictors hosted outside this process.
//!
//! A session starts with a `Hello` frame from the client, answered by a
//! `HelloAck` whose single payload byte advertises capabilities (bit 0: eps
//! head, bit 1: guidance gradient). Afterwards the client sends one
//! `PredictRequest` at a time and waits for its `PredictResponse`.

mod client;
mod conformance;
mod server;
pub mod wire;

pub use client::{spawn_external_predictor, Connection, ExternalPredictor, DEFAULT_TIMEOUT};
pub use conformance::{
    conformance_check, ConformanceOptions, ConformanceReport, FixtureResult, CONFORMANCE_TOLERANCE,
};
pub use server::{capabilities, handle_predict, serve, ServeStats};
pub use wire::{PredictRequest, PredictResponse, Status};
