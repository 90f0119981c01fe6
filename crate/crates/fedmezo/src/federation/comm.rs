//! Communication-cost arithmetic for adapter-only transmission.
//!
//! Exact byte accounting only. Note on reference figures for the 3B-class
//! model: 42,598,400 adapter parameters at 2 bytes each is exactly
//! 85,196,800 bytes = 81.25 MiB; the sometimes-quoted "80.45 MB" for this
//! configuration does not match the arithmetic and is not reproduced here.

use serde::{Deserialize, Serialize};

/// Bytes for one upload or download of the trainable vector.
pub fn comm_cost(trainable_count: u64, bytes_per_param: u64) -> u64 {
    trainable_count * bytes_per_param
}

/// Human-readable binary units.
pub fn format_bytes(bytes: u64) -> String {
    const KIB: f64 = 1024.0;
    const MIB: f64 = 1024.0 * 1024.0;
    const GIB: f64 = 1024.0 * 1024.0 * 1024.0;
    let b = bytes as f64;
    if b >= GIB {
        format!("{:.2} GiB", b / GIB)
    } else if b >= MIB {
        format!("{:.2} MiB", b / MIB)
    } else if b >= KIB {
        format!("{:.2} KiB", b / KIB)
    } else {
        format!("{bytes} B")
    }
}

/// Cumulative transfer accounting across rounds: every round moves the
/// trainable vector down to each client and back up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub trainable_count: u64,
    pub bytes_per_param: u64,
    pub rounds_recorded: u64,
    pub cumulative_bytes: u64,
}

impl CommLedger {
    pub fn new(trainable_count: u64, bytes_per_param: u64) -> Self {
        Self {
            trainable_count,
            bytes_per_param,
            rounds_recorded: 0,
            cumulative_bytes: 0,
        }
    }

    /// Record one round over `n_clients`; returns `(bytes_up, bytes_down)`.
    pub fn record_round(&mut self, n_clients: u64) -> (u64, u64) {
        let each = comm_cost(self.trainable_count, self.bytes_per_param);
        let up = n_clients * each;
        let down = n_clients * each;
        self.rounds_recorded += 1;
        self.cumulative_bytes += up + down;
        (up, down)
    }

    /// Invariant: cumulative = rounds * N * 2 * count * bytes_per_param.
    pub fn consistent_with(&self, n_clients: u64) -> bool {
        self.cumulative_bytes
            == self.rounds_recorded * n_clients * 2 * self.trainable_count * self.bytes_per_param
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adapter_figures_exact() {
        // 42,598,400 params * 2 bytes = 85,196,800 bytes = 81.25 MiB.
        let bytes = comm_cost(42_598_400, 2);
        assert_eq!(bytes, 85_196_800);
        assert_eq!(format_bytes(bytes), "81.25 MiB");
    }

    #[test]
    fn full_model_figure() {
        // Back-derived 3B-class parameter count at fp16.
        let bytes = comm_cost(3_426_473_000, 2);
        assert_eq!(bytes, 6_852_946_000);
        let gib = bytes as f64 / (1024.0 * 1024.0 * 1024.0);
        assert!((gib - 6.39).abs() < 0.01 * 6.39, "gib = {gib}");
    }

    #[test]
    fn zero_params_zero_bytes() {
        assert_eq!(comm_cost(0, 2), 0);
    }

    #[test]
    fn ledger_invariant() {
        let mut ledger = CommLedger::new(120, 8);
        for _ in 0..7 {
            let (up, down) = ledger.record_round(4);
            assert_eq!(up, 4 * 120 * 8);
            assert_eq!(down, up);
        }
        assert!(ledger.consistent_with(4));
        assert_eq!(ledger.cumulative_bytes, 7 * 4 * 2 * 120 * 8);
    }
}
