//! Federated protocol: data splitting, per-client local training, server-side
//! averaging of trainable vectors, round orchestration, and communication
//! accounting.
//!
//! Clients average only their trainable (adapter) vectors. Because every
//! client starts a round from the same broadcast base weights, this equals
//! full-parameter averaging restricted to the trainable slots, which is the
//! identity that makes adapter-only transmission exact rather than an
//! approximation.

mod comm;
mod hetero;
mod round;
mod split;

pub use comm::{comm_cost, format_bytes, CommLedger};
pub use hetero::estimate_heterogeneity_constants;
pub use round::{
    aggregate, local_train, run_round, ClientState, FixedLr, LocalOutcome, LocalTrainOpts,
    LrAssigner, OptimizerKind, RoundRecord, ServerState, LOSS_HISTORY_WINDOW,
};
pub use split::{shard_assignment_json, split_dataset, SplitKind, SplitSpec};
