//! Seeded random streams.
//!
//! Every chain draws from its own ChaCha stream selected by index, so the
//! values a chain sees depend only on `(seed, index)` and never on how chains
//! are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha8Rng;

/// Independent substream `stream` of the root `seed`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fills a fresh vector with i.i.d. `N(0, variance)` entries.
pub fn gaussian_vec<R: rand::Rng + ?Sized>(dim: usize, variance: f64, rng: &mut R) -> Vec<f64> {
    let sd = variance.sqrt();
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect()
}
