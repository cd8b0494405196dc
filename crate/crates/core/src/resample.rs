//! Keyed random streams, the pairs bootstrap, and the order-statistic
//! conventions shared by every interval method.
//!
//! Randomness is never drawn from a shared generator. Each unit of work
//! derives its own stream from `(master_seed, path)`, so results do not
//! depend on scheduling or thread count.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::regress::Dataset;

/// Generator behind every derived stream.
pub type Stream = Xoshiro256PlusPlus;

const MAX_PATH: usize = 3;

/// Path contexts used across the crate.
pub mod context {
    /// First-level resample `j` is `[BOOTSTRAP, j]`, its second-level
    /// resample `k` is `[BOOTSTRAP, j, k]`.
    pub const BOOTSTRAP: u64 = 1;
    /// Simulated dataset for replication `r` of cell `c`: `[SIMULATION, c, r]`.
    pub const SIMULATION: u64 = 2;
    /// Subsample drawn in replication `r`: `[SUBSAMPLE, r]`.
    pub const SUBSAMPLE: u64 = 3;
    /// Bootstrap master seed for replication `r` of cell `c`: `[REPLICATION_SEED, c, r]`.
    pub const REPLICATION_SEED: u64 = 4;
    /// Stand-in population rows: `[STAND_IN]`.
    pub const STAND_IN: u64 = 5;
}

/// Address of a random stream: a master seed plus up to three path indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    master_seed: u64,
    path: [u64; MAX_PATH],
    depth: u8,
}

impl StreamKey {
    pub fn root(master_seed: u64) -> Self {
        Self { master_seed, path: [0; MAX_PATH], depth: 0 }
    }

    pub fn new(master_seed: u64, path: &[u64]) -> Self {
        assert!(path.len() <= MAX_PATH, "stream paths hold at most {MAX_PATH} indices");
        let mut key = Self::root(master_seed);
        for &p in path {
            key = key.child(p);
        }
        key
    }

    /// Extends the path by one index.
    pub fn child(self, index: u64) -> Self {
        assert!((self.depth as usize) < MAX_PATH, "stream path is full");
        let mut next = self;
        next.path[self.depth as usize] = index;
        next.depth += 1;
        next
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path[..self.depth as usize]
    }

    /// 64-bit digest of the key; also used to derive nested master seeds.
    pub fn digest(&self) -> u64 {
        let mut h = mix64(self.master_seed ^ 0x6a09_e667_f3bc_c908);
        h = mix64(h ^ (self.depth as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        for (level, &p) in self.path().iter().enumerate() {
            let salt = (level as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            h = mix64(h ^ mix64(p ^ salt));
        }
        h
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The stream addressed by `key`; identical keys give identical streams.
pub fn derive_stream(key: StreamKey) -> Stream {
    Stream::seed_from_u64(key.digest())
}

/// Uniform index in `0..n` (Lemire's multiply-and-reject; exactly uniform).
#[inline]
pub fn draw_index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    debug_assert!(n > 0);
    let range = n as u64;
    let mut m = (rng.next_u64() as u128) * (range as u128);
    let mut low = m as u64;
    if low < range {
        let threshold = range.wrapping_neg() % range;
        while low < threshold {
            m = (rng.next_u64() as u128) * (range as u128);
            low = m as u64;
        }
    }
    (m >> 64) as usize
}

/// Standard uniform on `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn draw_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `n` row indices drawn i.i.d. uniformly from `0..n`.
pub fn resample_indices<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| draw_index(rng, n)).collect()
}

/// Pairs bootstrap: `n` whole rows drawn with replacement.
pub fn pairs_resample<R: RngCore + ?Sized>(data: &Dataset, rng: &mut R) -> Dataset {
    let idx = resample_indices(data.n(), rng);
    data.select(&idx)
}

/// 1-based rank `ceil(q * len)`, clamped into `1..=len`.
///
/// Products that land within rounding of an integer are snapped to it so
/// that, e.g., `0.95 * 100` selects the 95th order statistic.
pub fn ceiling_rank(q: f64, len: usize) -> usize {
    let x = q * len as f64;
    let nearest = x.round();
    let rank = if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (rank.max(1.0) as usize).min(len)
}

fn check_probability(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(q))
    }
}

/// `x_(ceil(qB))` of the ascending order statistics.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    check_probability(q)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[ceiling_rank(q, sorted.len()) - 1])
}

/// Quantile of an already ascending sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    check_probability(q)?;
    Ok(sorted[ceiling_rank(q, sorted.len()) - 1])
}

/// Fraction of `values` that are `<= x`.
pub fn ecdf_position(values: &[f64], x: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let below = values.iter().filter(|&&v| v <= x).count();
    Ok(below as f64 / values.len() as f64)
}
