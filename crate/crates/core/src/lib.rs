//! Behind-the-meter PV disaggregation from hourly net smart-meter readings.

pub mod disagg;
pub mod gmm;
pub mod ingest;
pub mod metrics;
pub mod rng;
pub mod series;
pub mod synth;
pub mod optim;
pub mod pipeline;
