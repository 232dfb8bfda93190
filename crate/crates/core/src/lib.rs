//! Cooperative perception scheduling for connected vehicles.

pub mod comms;
pub mod dataio;
pub mod engine;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod scheduling;
pub mod sensing;
pub mod world;
