//! Fixtures shared by the benchmarks.

use grapes_core::synthetic::{homophilous_sbm, SbmConfig};
use grapes_core::{Dataset, Splits};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Four-class block graph with 16 features and roughly eight neighbors per node.
pub fn sbm_dataset(num_nodes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SbmConfig {
        num_nodes,
        num_classes: 4,
        p_in: 6.0 / (num_nodes as f64 / 4.0),
        p_out: 2.0 / num_nodes as f64,
        num_features: 16,
        feature_noise: 1.0,
    };
    let (graph, features, labels) = homophilous_sbm(&cfg, &mut rng).expect("valid block model");
    let splits = Splits::random(num_nodes, 0.6, 0.2, &mut rng);
    Dataset::new(graph, features, labels, splits).expect("consistent dataset")
}
