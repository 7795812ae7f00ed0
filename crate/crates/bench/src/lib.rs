//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use trip_core::learner::{generate_partitions, train, BlobTask, DistributionSpec};
use trip_core::rng::Stream;
use trip_core::{Dataset, ExchangePacket, ModelParams, Result, TrainSettings};

/// A trained neighborhood of `size` clients with uniform weights and a
/// held-out test set.
pub fn neighborhood(size: usize, seed: u64) -> Result<(Vec<ExchangePacket>, BTreeMap<usize, f64>, Dataset)> {
    let task = BlobTask {
        seed,
        ..BlobTask::default()
    };
    let test = task.sample("test", 500, Stream::BlobTest)?;
    let base = task.sample("train", 100 * size, Stream::BlobTrain)?;
    let parts = generate_partitions(&DistributionSpec::iid(seed), &base, size)?;
    let settings = TrainSettings::default();
    let mut packets = Vec::with_capacity(size);
    for (j, data) in parts.iter().enumerate() {
        let pre = train(&ModelParams::zeros(task.shape()), data, &settings, seed + j as u64)?.params;
        let post = train(&pre, data, &settings, seed + 1000 + j as u64)?.params;
        packets.push(ExchangePacket {
            sender: j,
            post_model: post,
            pre_model: pre,
        });
    }
    let weights = (0..size).map(|j| (j, 1.0)).collect();
    Ok((packets, weights, test))
}
