//! Counter-based random numbers.
//!
//! Every random quantity in the crate is a pure function of a key
//! `(seed, stream, i, j)`, so values do not depend on traversal order or on
//! how work is split between threads.

/// Stream for the exponential clocks / LPP weights.
pub const STREAM_CLOCK: u64 = 0;
/// Stream for random initial configurations.
pub const STREAM_INIT: u64 = 1;
/// Stream used to derive per-replica seeds.
pub const STREAM_REPLICA: u64 = 2;
/// Stream for randomized search starts and test probes.
pub const STREAM_AUX: u64 = 3;

/// SplitMix64 finaliser.
#[inline(always)]
pub const fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of a full key. Each component passes through its own mixing round.
#[inline(always)]
pub fn hash_key(seed: u64, stream: u64, i: i64, j: i64) -> u64 {
    let mut h = mix64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    h = mix64(h ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03));
    h = mix64(h ^ (i as u64).wrapping_mul(0xa076_1d64_78bd_642f));
    mix64(h ^ (j as u64).wrapping_mul(0xe703_7ed1_a0b4_28db))
}

/// Uniform in `(0, 1)`: 53 random bits, with zero mapped to the smallest
/// positive value `2^-53`.
#[inline(always)]
pub fn unit_open(bits: u64) -> f64 {
    let m = bits >> 11;
    let m = if m == 0 { 1 } else { m };
    m as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Rate-one exponential by inversion.
#[inline(always)]
pub fn std_exponential(bits: u64) -> f64 {
    -libm::log(unit_open(bits))
}

/// Per-replica seed derived from a base seed.
pub fn replica_seed(seed: u64, replica: u64) -> u64 {
    hash_key(seed, STREAM_REPLICA, replica as i64, 0)
}

/// Sequential generator over a counter, for places where a plain stream of
/// numbers is enough (search restarts, test probes).
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { key: hash_key(seed, stream, 0, 0), counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key ^ mix64(self.counter))
    }

    /// Uniform in `(0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        unit_open(self.next_u64())
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_order_independent() {
        let a = hash_key(7, STREAM_CLOCK, 3, -4);
        let _ = hash_key(7, STREAM_CLOCK, 100, 100);
        assert_eq!(a, hash_key(7, STREAM_CLOCK, 3, -4));
        assert_ne!(a, hash_key(7, STREAM_CLOCK, -4, 3));
        assert_ne!(a, hash_key(8, STREAM_CLOCK, 3, -4));
        assert_ne!(a, hash_key(7, STREAM_INIT, 3, -4));
    }

    #[test]
    fn zero_bits_map_to_smallest_uniform() {
        assert_eq!(unit_open(0), 1.0 / (1u64 << 53) as f64);
        assert!(std_exponential(0).is_finite());
        assert!(std_exponential(u64::MAX) > 0.0);
    }

    #[test]
    fn uniform_moments() {
        let mut rng = CounterRng::new(1, STREAM_AUX);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let u = rng.uniform();
            s += u;
            s2 += u * u;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 0.003);
        assert!((var - 1.0 / 12.0).abs() < 0.002);
    }
}
