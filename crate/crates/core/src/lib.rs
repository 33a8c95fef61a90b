pub mod agent;
pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod environment;
pub mod error;
pub mod filter;
pub mod frames;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod par;
pub mod planner;
pub mod replay;
pub mod rng;
pub mod tensor;
