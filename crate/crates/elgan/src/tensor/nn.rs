//! Weight initialization and seeded sampling helpers.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Name of the pseudo-random generator scheme used everywhere. Recorded in
/// dataset manifests so regenerated artifacts can be trusted byte-for-byte.
pub const RNG_SCHEME: &str = "chacha12/v1";

/// Derive an independent stream seed from a master seed and a purpose tag.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn rng_for(master: u64, tag: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, tag))
}

/// Standard-normal sample via Box-Muller (keeps us independent of any
/// distribution crate's internals for reproducibility).
pub fn sample_standard_normal(rng: &mut impl Rng) -> f32 {
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

pub fn randn(shape: &[usize], std: f32, rng: &mut impl Rng) -> ArrayD<f32> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || sample_standard_normal(rng) * std)
}

pub fn zeros(shape: &[usize]) -> ArrayD<f32> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones(shape: &[usize]) -> ArrayD<f32> {
    ArrayD::from_elem(IxDyn(shape), 1.0)
}

/// He-style fan-in scaled normal init for conv and dense weights.
pub fn init_weight(shape: &[usize], rng: &mut impl Rng) -> ArrayD<f32> {
    let fan_in: usize = match shape.len() {
        2 => shape[0],
        4 => shape[1] * shape[2] * shape[3],
        _ => shape.iter().product::<usize>().max(1),
    };
    let std = (2.0 / fan_in as f32).sqrt();
    randn(shape, std, rng)
}
