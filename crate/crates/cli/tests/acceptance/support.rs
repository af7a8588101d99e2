//! Harness pieces shared by the acceptance checks: seeded generators, the
//! central-difference gradient checker, and a CLI runner.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volfuse_core::{LabelVolume, Tape, Tensor, TensorId};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_f32(r: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| r.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("valid shape")
}

pub fn rand_f64(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| r.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("valid shape")
}

/// Uniform values pushed at least `margin` away from zero, for inputs that
/// will meet a kinked op (relu and friends).
pub fn rand_f64_kink_free(r: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let v: f64 = r.gen_range(margin..1.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("valid shape")
}

/// Small noise on an alternating ±0.25 offset, so every normalization
/// instance has healthy variance. Comparing a 32-bit kernel against a 64-bit
/// reference at a 1e-6 tolerance needs the standardization denominator well
/// away from sqrt(eps), where rounding in the mean gets amplified.
pub fn rand_f32_spread(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|i| {
            let offset = if i % 2 == 0 { 0.25 } else { -0.25 };
            r.gen_range(-0.05..0.05f32) + offset
        })
        .collect();
    Tensor::new(shape, data).expect("valid shape")
}

/// Values made pairwise-distinct inside each 2x2x2 pooling window (gap at
/// least ~0.03), so a finite-difference nudge cannot flip a max.
pub fn rand_f64_pool_safe(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let [b, c, w, h, z]: [usize; 5] = shape.try_into().unwrap();
    let mut t = Tensor::zeros(shape).unwrap();
    let data = t.data_mut();
    for bi in 0..b * c {
        for wi in 0..w {
            for hi in 0..h {
                for zi in 0..z {
                    let slot = (wi % 2) * 4 + (hi % 2) * 2 + zi % 2;
                    let base: f64 = r.gen_range(-0.05..0.05);
                    data[((bi * w + wi) * h + hi) * z + zi] = base + slot as f64 * 0.13;
                }
            }
        }
    }
    t
}

pub fn rand_labels(r: &mut ChaCha8Rng, extents: [usize; 3], classes: u8) -> LabelVolume {
    let numel = extents[0] * extents[1] * extents[2];
    let data = (0..numel).map(|_| r.gen_range(0..classes)).collect();
    LabelVolume::new(extents, data).expect("valid extents")
}

/// Central-difference check of the tape's reverse sweep. `build` must
/// construct the same graph every call from the given leaves and return a
/// rank-0 node. Up to `samples` elements per input are probed; returns the
/// worst relative error seen.
pub fn fd_check(
    name: &str,
    inputs: &[Tensor<f64>],
    samples: usize,
    seed: u64,
    build: &dyn Fn(&mut Tape<f64>, &[TensorId]) -> TensorId,
) -> f64 {
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        let v = tape.value(loss);
        assert_eq!(v.numel(), 1, "{name}: objective must be scalar");
        v.data()[0]
    };

    // analytic gradients
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.set_requires_grad(true);
            tape.leaf(t)
        })
        .collect();
    let loss = build(&mut tape, &ids);
    let mut grads = tape.backward(loss).expect("backward sweep");

    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let grad = grads
            .take(ids[i])
            .unwrap_or_else(|| panic!("{name}: missing gradient for input {i}"));
        assert_eq!(grad.shape(), input.shape(), "{name}: gradient shape");
        let numel = input.numel();
        let picks: Vec<usize> = if numel <= samples {
            (0..numel).collect()
        } else {
            (0..samples).map(|_| r.gen_range(0..numel)).collect()
        };
        for j in picks {
            let x = input.data()[j];
            let h = 5e-6 * x.abs().max(1.0);
            work[i].data_mut()[j] = x + h;
            let up = eval(&work);
            work[i].data_mut()[j] = x - h;
            let down = eval(&work);
            work[i].data_mut()[j] = x;
            let fd = (up - down) / (2.0 * h);
            let an = grad.data()[j];
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-4);
            if rel > worst {
                worst = rel;
            }
            assert!(
                rel < 1e-3,
                "{name}: input {i} element {j}: analytic {an} vs central difference {fd} (rel {rel:.2e})"
            );
        }
    }
    worst
}

/// Scalar objective: deterministic pseudo-random weights dotted with the
/// node, so every output element influences the loss differently.
pub fn weighted_sum(tape: &mut Tape<f64>, node: TensorId, salt: u64) -> TensorId {
    let shape = tape.value(node).shape().to_vec();
    let weights = Tensor::from_fn(&shape, |i| {
        let mut z = (i as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(salt);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        (z >> 40) as f64 / (1u64 << 24) as f64 - 0.5
    })
    .unwrap();
    let w = tape.leaf(weights);
    let prod = tape.mul_broadcast(node, w).unwrap();
    tape.sum_all(prod).unwrap()
}

pub fn run_cli(args: &[&str]) -> i32 {
    let mut argv = vec!["volfuse"];
    argv.extend_from_slice(args);
    volfuse_cli::run_from(argv)
}

pub fn max_abs_diff(prod: &[f32], reference: &[f64]) -> f64 {
    assert_eq!(prod.len(), reference.len(), "output sizes differ");
    prod.iter()
        .zip(reference)
        .map(|(&p, &r)| (p as f64 - r).abs())
        .fold(0.0, f64::max)
}
