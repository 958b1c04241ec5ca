//! Federated learning simulator with model-contrastive local training.
//!
//! A small reverse-mode autodiff core ([`tensor`]), an MLP with a
//! projection head ([`nn`]), the local objectives ([`losses`]), seeded
//! non-IID partitioning ([`data`]), the round engine with FedAvg, MOON,
//! FedProx, SCAFFOLD, FedAvgM and SOLO ([`fed`]), evaluation
//! ([`metrics`]) and a command-line harness ([`cli`]).

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod exec;
pub mod fed;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
