//! Counter-based uniform noise.
//!
//! Noise values are addressed by (seed, segment, component) through the
//! splitmix64 finalizer, so any take of any segment is reproducible on any
//! platform without sequential generator state.

/// Golden-ratio increment from splitmix64.
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer (Steele, Lea & Flood / Stafford mix 13 constants).
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for a named stream (take index, init, ...).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(GOLDEN)))
}

/// Uniform value in [-1, 1) addressed by (seed, segment, component).
pub fn uniform_signed(seed: u64, segment: u64, component: u64) -> f64 {
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    h = mix64(h ^ segment.wrapping_add(GOLDEN));
    h = mix64(h ^ component.wrapping_add(GOLDEN));
    // top 53 bits -> [0, 2^53) -> [-1, 1)
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Default prior-noise dimensionality.
pub const NOISE_DIM: usize = 10;

/// Per-segment prior noise vector, each component in [-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(pub Vec<f64>);

impl NoiseVector {
    pub fn generate(seed: u64, segment: usize, dim: usize) -> Self {
        NoiseVector(
            (0..dim)
                .map(|d| uniform_signed(seed, segment as u64, d as u64))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}
