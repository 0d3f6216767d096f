//! Counter-based random streams.
//!
//! Every round of every simulation draws from its own stream, keyed by the
//! global seed and addressed by the round index. A round's randomness is
//! therefore a pure function of `(seed, round)`, which is what makes parallel
//! runs bit-identical to serial ones.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Derives independent per-round streams from one 64-bit seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFactory {
    seed: u64,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        StreamFactory { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The stream for round `index`. ChaCha keyed by the seed, with the round
    /// index as the stream id, so distinct rounds never share keystream.
    pub fn stream(&self, index: u64) -> RandomStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        RandomStream { rng }
    }

    /// A factory for an unrelated purpose (e.g. a second, independent phase of
    /// a run) derived from this one.
    pub fn fork(&self, tag: u64) -> StreamFactory {
        StreamFactory {
            seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One round's source of randomness.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Fair coin: `true` with probability 1/2.
    pub fn coin(&mut self) -> bool {
        self.rng.next_u32() & 1 == 1
    }

    /// Inverse-CDF draw over `weights` in index order. Weights need not be
    /// normalized but must be non-negative with a positive sum.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let u = self.uniform() * total;
        pick_index(weights, u)
    }
}

/// First index whose running sum strictly exceeds `u`. Zero-weight entries
/// are never returned; if rounding leaves `u` above the final sum the last
/// positive-weight index is returned.
pub(crate) fn pick_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if acc > u {
                return i;
            }
        }
    }
    last_positive
}

/// Outcome of [`collect_until_kept`].
pub(crate) struct Collected<T> {
    pub items: Vec<T>,
    pub kept: usize,
    pub trials: u64,
}

/// Runs trials `0, 1, 2, ...` in parallel batches until `n_kept` of them are
/// accepted, and returns the exact prefix of trials ending at the `n_kept`-th
/// acceptance. Each trial is a pure function of its index, so the prefix (and
/// everything derived from it) does not depend on batch sizes or thread count.
///
/// Discarded trials are retained in `items` only when `keep_discarded` is set.
/// Returns `Err(collected_so_far)` once `max_trials` is exhausted.
pub(crate) fn collect_until_kept<T, F>(
    n_kept: usize,
    max_trials: u64,
    keep_discarded: bool,
    trial: F,
) -> Result<Collected<T>, Collected<T>>
where
    T: Send,
    F: Fn(u64) -> (T, bool) + Sync,
{
    use rayon::prelude::*;

    let mut out = Collected { items: Vec::new(), kept: 0, trials: 0 };
    let mut next = 0u64;
    while out.kept < n_kept {
        if next >= max_trials {
            out.trials = next;
            return Err(out);
        }
        let remaining = (n_kept - out.kept) as f64;
        let rate = if next == 0 { 1.0 } else { (out.kept.max(1) as f64) / next as f64 };
        let want = (remaining / rate * 1.1).ceil() as u64;
        let batch = want.clamp(4096, 1 << 22).min(max_trials - next);
        let results: Vec<(T, bool)> = (next..next + batch).into_par_iter().map(&trial).collect();
        for (offset, (item, kept)) in results.into_iter().enumerate() {
            if kept {
                out.kept += 1;
                out.items.push(item);
                if out.kept == n_kept {
                    out.trials = next + offset as u64 + 1;
                    return Ok(out);
                }
            } else if keep_discarded {
                out.items.push(item);
            }
        }
        next += batch;
    }
    out.trials = next;
    Ok(out)
}
