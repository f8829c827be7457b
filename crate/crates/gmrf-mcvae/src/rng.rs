//! Counter-based deterministic randomness.
//!
//! Every stream is a pure function of (key, counter), so any point in a run
//! can be reproduced by re-deriving the stream; nothing needs to be
//! serialized for bitwise-identical resume. Streams are named: a key is
//! derived from the user seed, a label, and an index, which keeps dataset
//! generation, weight init, per-epoch shuffles, and evaluation sampling
//! independent of each other.

const PHI: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function. Full-avalanche mix of a 64-bit word.
#[inline]
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// FNV-1a over the label bytes; feeds the stream key derivation.
fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Key for a named substream of `seed`. Same (seed, label, index) always
/// yields the same stream on every platform.
pub fn derive_key(seed: u64, label: &str, index: u64) -> u64 {
    let mut k = mix(seed.wrapping_add(PHI));
    k = mix(k ^ hash_label(label));
    mix(k ^ index.wrapping_mul(PHI))
}

/// Deterministic counter-mode generator: output i is mix(key + i * PHI).
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        CounterRng {
            key,
            counter: 0,
            spare_normal: None,
        }
    }

    /// Stream for (seed, label, index); see `derive_key`.
    pub fn for_stream(seed: u64, label: &str, index: u64) -> Self {
        CounterRng::new(derive_key(seed, label, index))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.key.wrapping_add(self.counter.wrapping_mul(PHI)));
        self.counter += 1;
        out
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe as a log argument.
    #[inline]
    fn next_f64_open_zero(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Rejection-free via 128-bit multiply; the
    /// tiny modulo bias (< 2^-64) is irrelevant at our stream lengths.
    #[inline]
    pub fn next_range(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal via Box-Muller; caches the second value of each pair.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_f64_open_zero();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_normal();
        }
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill_normal(&mut v);
        v
    }

    /// Fisher-Yates shuffle of index order.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_range(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_stream() {
        let mut a = CounterRng::new(42);
        let mut b = CounterRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn labels_give_distinct_streams() {
        let mut a = CounterRng::for_stream(7, "data", 0);
        let mut b = CounterRng::for_stream(7, "init", 0);
        let mut c = CounterRng::for_stream(7, "data", 1);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_ne!(y, z);
    }

    #[test]
    fn normals_have_unit_moments() {
        let mut rng = CounterRng::for_stream(0, "test-moments", 0);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = rng.next_normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = CounterRng::new(3);
        for _ in 0..1000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = CounterRng::for_stream(1, "shuffle", 0);
        let mut v: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, (0..100).collect::<Vec<_>>());
    }
}
