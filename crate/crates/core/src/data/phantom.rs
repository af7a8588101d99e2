//! Ellipsoid phantom generator. Each foreground class is one axis-aligned
//! ellipsoid with a distinct mean intensity; labels come straight from the
//! ellipsoid inequality, so a test can re-derive them analytically.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{LabelVolume, Tensor};

use super::VolumeSample;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub extents: [usize; 3],
    pub num_classes: usize,
    /// Per-axis ellipsoid radii are drawn uniformly from this range (voxels).
    pub radius_min: f64,
    pub radius_max: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            extents: [32, 32, 32],
            num_classes: 6,
            radius_min: 4.0,
            radius_max: 8.0,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::config(format!(
                "phantom class count {} out of range 2..=256",
                self.num_classes
            )));
        }
        if self.extents.iter().any(|&e| e == 0 || e % 16 != 0) {
            return Err(Error::config(format!(
                "phantom extents {:?} must be positive multiples of 16",
                self.extents
            )));
        }
        if !(self.radius_min > 0.0 && self.radius_max >= self.radius_min) {
            return Err(Error::config(format!(
                "radius range [{}, {}] is not a positive interval",
                self.radius_min, self.radius_max
            )));
        }
        let min_extent = *self.extents.iter().min().expect("three extents") as f64;
        if 2.0 * self.radius_max >= min_extent {
            return Err(Error::config(format!(
                "radius {} cannot fit inside extents {:?}",
                self.radius_max, self.extents
            )));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::config(format!("noise std {} must be ≥ 0", self.noise_std)));
        }
        Ok(())
    }

    /// Flat `key value` text, `#` comments allowed. Missing keys keep their
    /// defaults; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = PhantomSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| {
                Error::config(format!("line {}: expected `key value`, got `{line}`", lineno + 1))
            })?;
            let value = value.trim();
            let bad = |what: &str| {
                Error::config(format!("line {}: bad {what} `{value}`", lineno + 1))
            };
            match key {
                "extents" => {
                    let parts: Vec<usize> = value
                        .split_whitespace()
                        .map(|p| p.parse().map_err(|_| bad("extent")))
                        .collect::<Result<_>>()?;
                    if parts.len() != 3 {
                        return Err(bad("extents (need three numbers)"));
                    }
                    spec.extents = [parts[0], parts[1], parts[2]];
                }
                "classes" => spec.num_classes = value.parse().map_err(|_| bad("class count"))?,
                "radius.min" => spec.radius_min = value.parse().map_err(|_| bad("radius"))?,
                "radius.max" => spec.radius_max = value.parse().map_err(|_| bad("radius"))?,
                "noise.std" => spec.noise_std = value.parse().map_err(|_| bad("noise std"))?,
                "seed" => spec.seed = value.parse().map_err(|_| bad("seed"))?,
                _ => {
                    return Err(Error::config(format!("line {}: unknown key `{key}`", lineno + 1)))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Spec for the `index`-th sample of a set: same geometry, decorrelated
    /// seed. The multiplier is the splitmix64 increment, so consecutive
    /// indices land far apart in seed space.
    pub fn for_sample(&self, index: u64) -> PhantomSpec {
        let mut spec = self.clone();
        spec.seed = self.seed ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        spec
    }
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [usize; 3]) -> bool {
        let mut q = 0.0;
        for a in 0..3 {
            let d = (p[a] as f64 - self.center[a]) / self.radii[a];
            q += d * d;
        }
        q <= 1.0
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<VolumeSample> {
    spec.validate()?;
    let [w, h, z] = spec.extents;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // one ellipsoid per foreground class, drawn in ascending class order so
    // overlaps deterministically resolve to the higher id
    let mut shapes = Vec::with_capacity(spec.num_classes - 1);
    for _ in 1..spec.num_classes {
        let mut radii = [0.0; 3];
        let mut center = [0.0; 3];
        for a in 0..3 {
            radii[a] = rng.gen_range(spec.radius_min..=spec.radius_max);
            let lo = radii[a];
            let hi = spec.extents[a] as f64 - 1.0 - radii[a];
            center[a] = rng.gen_range(lo..=hi);
        }
        shapes.push(Ellipsoid { center, radii });
    }

    let mut labels = LabelVolume::zeros([w, h, z])?;
    for x in 0..w {
        for y in 0..h {
            for c in 0..z {
                for (k, shape) in shapes.iter().enumerate() {
                    if shape.contains([x, y, c]) {
                        labels.data_mut()[(x * h + y) * z + c] = (k + 1) as u8;
                    }
                }
            }
        }
    }

    // intensity = class / (classes - 1), plus optional Gaussian noise drawn
    // in label scan order so the image is a pure function of the seed
    let levels: Vec<f32> = (0..spec.num_classes)
        .map(|k| k as f32 / (spec.num_classes - 1) as f32)
        .collect();
    let mut image: Vec<f32> =
        labels.data().iter().map(|&l| levels[l as usize]).collect();
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0f64, spec.noise_std)
            .map_err(|e| Error::numeric(format!("noise distribution: {e}")))?;
        for v in &mut image {
            *v += noise.sample(&mut rng) as f32;
        }
    }

    let sample = VolumeSample {
        id: format!("phantom-{:016x}", spec.seed),
        image: Some(Tensor::new(&[1, w, h, z], image)?),
        labels,
        spacing: [1.0, 1.0, 1.0],
        num_classes: spec.num_classes,
    };
    sample.check_for_model()?;
    Ok(sample)
}

/// `count` samples with per-index derived seeds and ids `phantom-000`,
/// `phantom-001`, …
pub fn generate_phantom_set(spec: &PhantomSpec, count: usize) -> Result<Vec<VolumeSample>> {
    (0..count)
        .map(|i| {
            let mut sample = generate_phantom(&spec.for_sample(i as u64))?;
            sample.id = format!("phantom-{i:03}");
            Ok(sample)
        })
        .collect()
}
