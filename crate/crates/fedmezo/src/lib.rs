//! Deterministic desk-scale simulator for federated zeroth-order fine-tuning.
//!
//! The library provides:
//!
//! - seed-replayed two-point gradient estimation and the in-place update step
//!   that never materializes a parameter-sized temporary ([`zoo`]),
//! - a federated averaging protocol over trainable (adapter-only) vectors with
//!   IID / Dirichlet / meta data splitting and communication accounting
//!   ([`federation`]),
//! - adaptive per-client learning rates driven by heterogeneity signals
//!   ([`personalize`]),
//! - executable theory: constants, learning-rate ceilings, convergence-rate
//!   predictors, effective-rank measurement, and assumption-constant
//!   estimators ([`theory`]),
//! - an experiment harness with config files, ablation sweeps, metrics
//!   persistence, and a self-check report ([`harness`]).
//!
//! Every run is a pure function of its config and master seed: randomness is
//! derived counter-style from `(master seed, round, client, step)`, so client
//! execution order and parallelism cannot change any result.
//!
//! The `examples/` directory contains one runnable walkthrough per major
//! capability; `fedmezo --help` lists the experiment CLI.

pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod linalg;
pub mod objective;
pub mod params;
pub mod personalize;
pub mod rng;
pub mod theory;
pub mod track;
pub mod zoo;

pub use error::{Error, Result};
