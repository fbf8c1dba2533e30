//! Modular world models built from competitively trained interaction
//! mechanisms.
//!
//! A bank of `M` small networks learns, by winner-takes-all competition
//! over every (mechanism, context object) pair, the interaction primitives
//! that recur across a mixture of environments. Adapting to a new
//! environment then only trains a per-pair classifier that decides which
//! frozen mechanism applies to which object and with which partner.
//!
//! Modules:
//! - [`nn`]: MLPs, gradients, Adam, checkpoint files
//! - [`envs`]: particle and lane-world simulators with ground-truth labels
//! - [`dataset`]: episode files, manifests, window sampling
//! - [`competition`]: mechanism bank and winner-takes-all training
//! - [`composition`]: confidence networks and pair selection
//! - [`baseline`]: monolithic message-passing transition model
//! - [`eval`]: rollouts, disentanglement matrices, adaptation curves
//! - [`config`] and [`cli`]: experiment configuration and command line

mod bytes;
mod error;

pub mod baseline;
pub mod cli;
pub mod competition;
pub mod composition;
pub mod config;
pub mod dataset;
pub mod envs;
pub mod eval;
pub mod nn;

pub use error::{Error, Result};
