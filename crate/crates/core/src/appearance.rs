//! Appearance feature providers standing in for a CNN backbone.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, validation, Error, Result};
use crate::geometry::Detection;
use crate::numeric;

/// Source of appearance features for a frame's detections.
pub trait FeatureProvider {
    /// One feature per detection, in detection order.
    fn features_for(&self, frame: u32, detections: &[Detection]) -> Result<Vec<Vec<f64>>>;
}

/// Features keyed by `(frame, detection index within frame)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    dim: usize,
    records: BTreeMap<(u32, usize), Vec<f64>>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("feature dim must be positive"));
        }
        Ok(FeatureTable { dim, records: BTreeMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, frame: u32, index: usize, feature: Vec<f64>) -> Result<()> {
        if feature.len() != self.dim {
            return Err(validation(format!(
                "feature ({frame}, {index}) has {} values, expected {}",
                feature.len(),
                self.dim
            )));
        }
        if !numeric::all_finite(&feature) {
            return Err(validation(format!("feature ({frame}, {index}) is not finite")));
        }
        if self.records.contains_key(&(frame, index)) {
            return Err(validation(format!("duplicate feature key ({frame}, {index})")));
        }
        self.records.insert((frame, index), feature);
        Ok(())
    }

    pub fn get(&self, frame: u32, index: usize) -> Option<&[f64]> {
        self.records.get(&(frame, index)).map(Vec::as_slice)
    }

    /// Records in `(frame, index)` order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, usize, &[f64])> + '_ {
        self.records.iter().map(|((f, i), v)| (*f, *i, v.as_slice()))
    }
}

impl FeatureProvider for FeatureTable {
    fn features_for(&self, frame: u32, detections: &[Detection]) -> Result<Vec<Vec<f64>>> {
        (0..detections.len())
            .map(|index| self.get(frame, index).map(<[f64]>::to_vec).ok_or(Error::ProviderMiss { frame, index }))
            .collect()
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = numeric::norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// A uniformly random unit vector.
pub fn random_unit_feature(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5EED_F00D));
    loop {
        let v = gaussian_vec(&mut rng, dim, 1.0);
        if numeric::norm(&v) > 1e-6 {
            return normalized(v);
        }
    }
}

/// Deterministic unit base vector for an identity.
pub fn identity_base(identity: u64, seed: u64, dim: usize) -> Vec<f64> {
    random_unit_feature(mix(seed, identity), dim)
}

/// Unit feature for one sighting of `identity`: the identity's base vector
/// plus isotropic Gaussian noise of total scale `sigma`, renormalized.
/// Per-dimension noise is `sigma / sqrt(dim)`.
pub fn synthesize_identity_feature(identity: u64, seed: u64, sigma: f64, noise_seed: u64, dim: usize) -> Result<Vec<f64>> {
    noisy_unit(identity_base(identity, seed, dim), sigma, noise_seed)
}

/// Adds noise of total scale `sigma` to `base` and renormalizes.
pub fn noisy_unit(base: Vec<f64>, sigma: f64, noise_seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("feature noise must be >= 0, got {sigma}")));
    }
    if base.is_empty() {
        return Err(invalid("feature dim must be positive"));
    }
    if sigma == 0.0 {
        return Ok(normalized(base));
    }
    let dim = base.len();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(noise_seed, 0xA11CE));
    let per_dim = sigma / libm::sqrt(dim as f64);
    loop {
        let noise = gaussian_vec(&mut rng, dim, per_dim);
        let v: Vec<f64> = base.iter().zip(&noise).map(|(b, n)| b + n).collect();
        if numeric::norm(&v) > 1e-6 {
            return Ok(normalized(v));
        }
    }
}
