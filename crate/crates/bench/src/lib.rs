//! Fixtures shared by the benchmarks.

use bulkalloc::channel::{generate_realization, ChannelRealization, SimConfig};
use bulkalloc::model::{init_weights, ModelDims, ModelWeights};
use bulkalloc::rng::{derive_stream, StreamPurpose};

/// One default-geometry system and a freshly initialized model.
pub fn fixture(seed: u64) -> (SimConfig, ChannelRealization, ModelWeights) {
    let sim = SimConfig {
        master_seed: seed,
        ..SimConfig::default()
    };
    let real = generate_realization(&sim, &mut derive_stream(StreamPurpose::Aux, seed, 0, 0, 0));
    let weights = init_weights(ModelDims::default(), seed, 0);
    (sim, real, weights)
}
