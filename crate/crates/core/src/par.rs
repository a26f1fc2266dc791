//! Execution policy and seed splitting for the Monte Carlo loops.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// How an embarrassingly parallel loop is executed.
///
/// Results never depend on the choice: work items get their own RNG stream
/// and reductions run in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
        }
    }
}

/// RNG for work item `index` of a run seeded with `seed`.
///
/// Streams of one ChaCha key are independent, so item `i` sees the same
/// numbers however the items are scheduled.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed from a parent seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    // splitmix64 finaliser applied along the path
    let mut z = seed;
    for &p in path {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Number of items per chunk when a long Monte Carlo run is split.
pub const CHUNK: usize = 4096;

/// Splits `total` items into chunk lengths of at most [`CHUNK`].
pub fn chunks(total: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(total / CHUNK + 1);
    let mut left = total;
    while left > 0 {
        let n = left.min(CHUNK);
        out.push(n);
        left -= n;
    }
    out
}
