//! Shared fixture builders for the benches: deterministic tensors and
//! phantom label volumes at the sizes the benches exercise.

use volfuse_core::data::generate_phantom;
use volfuse_core::{LabelVolume, PhantomSpec, Tensor};

/// Deterministic pseudo-random fill in [-1, 1] without dragging an RNG
/// crate into the fixture path. splitmix64 is plenty for bench inputs.
pub fn filled_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let numel: usize = shape.iter().product();
    let mut state = seed.wrapping_add(0x9E3779B97F4A7C15);
    let data = (0..numel)
        .map(|_| {
            let mut z = state;
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^= z >> 31;
            (z >> 40) as f32 / (1u64 << 23) as f32 * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape, data).expect("fixture shape is valid")
}

/// A phantom image/label pair for the metrics and model benches.
pub fn phantom(seed: u64) -> (Tensor<f32>, LabelVolume) {
    let spec = PhantomSpec { seed, ..PhantomSpec::default() };
    let sample = generate_phantom(&spec).expect("default phantom spec is valid");
    (sample.image.expect("phantoms carry an image"), sample.labels)
}
