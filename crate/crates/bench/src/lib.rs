//! Seeded inputs shared by the benchmarks.

use cofft_core::attention::{softmax_grid, AttentionGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_grid(seed: u64, h: usize, w: usize) -> AttentionGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AttentionGrid::new(h, w, (0..h * w).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap()
}

/// A normalized map with most of its mass on one block.
pub fn peaked_map(seed: u64, h: usize, w: usize) -> AttentionGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r0, c0) = (rng.random_range(0..h - h / 4), rng.random_range(0..w - w / 4));
    let raw = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            let bump = if (r0..r0 + h / 4).contains(&r) && (c0..c0 + w / 4).contains(&c) { 4.0 } else { 0.0 };
            rng.random_range(0.0..1.0) + bump
        })
        .collect();
    softmax_grid(&AttentionGrid::new(h, w, raw).unwrap()).unwrap().into_inner()
}
