//! Dataset splitters: uniform, Dirichlet label-distribution, and meta-by-task
//! partitions of the same dataset, plus the reproducibility export.
//!
//! ```bash
//! cargo run -p fedmezo --example data_splitting
//! ```

use fedmezo::data::Dataset;
use fedmezo::federation::{shard_assignment_json, split_dataset, SplitKind, SplitSpec};

fn label_histogram(ds: &Dataset, shard: &[usize], n_labels: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_labels];
    for &i in shard {
        counts[ds.label(i) as usize] += 1;
    }
    counts
}

fn main() -> fedmezo::Result<()> {
    // 300 samples, 3 labels, 3 task groups.
    let n = 300;
    let labels: Vec<i64> = (0..n).map(|i| (i % 3) as i64).collect();
    let tasks: Vec<i64> = (0..n).map(|i| ((i / 100) % 3) as i64).collect();
    let ds = Dataset::new(vec![0.0; n], 1, labels, Some(tasks))?;

    for (name, kind) in [
        ("iid", SplitKind::Iid),
        ("dirichlet(0.3)", SplitKind::Dirichlet { beta: 0.3 }),
        ("dirichlet(1e6)", SplitKind::Dirichlet { beta: 1e6 }),
        ("meta-by-task", SplitKind::MetaByTask { assignment: None }),
    ] {
        let spec = SplitSpec {
            kind,
            n_clients: 3,
            seed: 42,
        };
        let shards = split_dataset(&ds, &spec)?;
        println!("{name}:");
        for (client, shard) in shards.iter().enumerate() {
            println!(
                "  client {client}: {:>3} samples, label histogram {:?}",
                shard.len(),
                label_histogram(&ds, shard, 3)
            );
        }
    }

    let spec = SplitSpec {
        kind: SplitKind::Dirichlet { beta: 0.3 },
        n_clients: 3,
        seed: 42,
    };
    let shards = split_dataset(&ds, &spec)?;
    let json = shard_assignment_json(&shards);
    println!(
        "\nreproducibility export (client -> sample indices), first 120 chars:\n{}...",
        &json[..120.min(json.len())]
    );
    Ok(())
}
