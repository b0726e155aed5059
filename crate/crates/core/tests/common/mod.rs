#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relocl_core::experiment::TrainingConfig;
use relocl_core::graphdomain::{EntityCatalog, IndexedGraph, Timestamp, TransitionPair};
use relocl_core::relocnet::{ModelConfig, RelocModel};
use relocl_core::routinesim::{simulate_suite, TaskDataset};

pub fn catalog() -> Arc<EntityCatalog> {
    Arc::new(
        EntityCatalog::from_names(
            &["mug", "plate", "spoon", "book", "keys"],
            &["house", "table", "sink", "cabinet", "shelf", "desk"],
        )
        .unwrap(),
    )
}

pub fn small_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        rounds: 2,
        hidden: 6,
        ..ModelConfig::default()
    }
}

/// A model whose zero-initialised heads are filled with random values so
/// every parameter influences the loss.
pub fn random_model(seed: u64) -> RelocModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = RelocModel::<f64>::init(small_config(), catalog(), &mut rng).unwrap();
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.6..0.6);
        }
    }
    model
}

/// Random transition in which objects `0..moved` change location.
pub fn random_pair(rng: &mut ChaCha8Rng, moved: usize) -> TransitionPair {
    let cat = catalog();
    let (n_obj, n_loc) = (cat.objects().len(), cat.locations().len());
    let parent: Vec<usize> = (0..n_obj).map(|_| rng.gen_range(1..n_loc)).collect();
    let mut target = parent.clone();
    for (i, t) in target.iter_mut().enumerate().take(moved) {
        *t = loop {
            let l = rng.gen_range(1..n_loc);
            if l != parent[i] {
                break l;
            }
        };
    }
    let t = Timestamp(rng.gen_range(0..7 * 1440));
    TransitionPair {
        input: IndexedGraph { t, parent },
        target: IndexedGraph {
            t: t.plus(10),
            parent: target,
        },
    }
}

/// Three tiny hourly-sampled households: 3 days each, 2 for training.
pub fn tiny_datasets(seed: u64) -> Vec<TaskDataset> {
    simulate_suite(3, 3, 2, 60, seed).unwrap()
}

pub fn tiny_training(seed: u64) -> TrainingConfig {
    TrainingConfig {
        epochs: 2,
        delta: 60,
        seed,
        ..TrainingConfig::default()
    }
}
