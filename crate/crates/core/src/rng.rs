//! Deterministic random streams keyed by `(seed, case, operation)`.
//!
//! Every random draw in the crate comes from one of these streams, so results
//! depend only on the inputs and the seed, never on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Operation tag selecting an independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Op {
    Scene = 1,
    Perturb = 2,
    Rigid = 3,
    Crop = 4,
    Erase = 5,
    Init = 6,
}

pub fn stream(seed: u64, case: u64, op: Op) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&case.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(op as u64);
    rng
}
