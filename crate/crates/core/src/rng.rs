//! Seed plumbing. One user-visible seed fans out into named substreams so that
//! adding randomness in one stage never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the named substream of `master`.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h))
}

pub fn substream(master: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, name))
}

/// Hash an arbitrary key tuple into 64 well-mixed bits.
pub fn hash_key(key: &[u64]) -> u64 {
    key.iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Uniform in the open interval (0, 1).
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard normal variate addressed by `key` rather than drawn from a stream,
/// so any cell of a long trace can be regenerated independently.
pub fn keyed_normal(key: &[u64]) -> f64 {
    let h = hash_key(key);
    let u1 = unit_open(h);
    let u2 = unit_open(splitmix64(h));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard normal variate drawn from `rng`.
pub fn standard_normal(rng: &mut impl rand::Rng) -> f64 {
    keyed_normal(&[rng.gen()])
}
