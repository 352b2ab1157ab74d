//! Random instances shared by the integration tests.
#![allow(dead_code)]

#[allow(unused_imports)]
pub use meshgnn::train::{random_graph, random_instance as random_sample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod laws;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
