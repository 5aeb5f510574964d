//! Seeded weight and score initialization.
//!
//! Every tensor is drawn from its own ChaCha20 stream keyed by a 64-bit seed,
//! so a frozen weight matrix can be thrown away and regenerated bit-for-bit
//! from `(InitSpec, rows, cols)`. That is what lets a packed model store seeds
//! instead of weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{input_err, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InitMethod {
    /// `±δ·s` with fair random signs.
    SignedKaimingConstant,
    /// `N(0, (δ·s)²)`.
    KaimingNormal,
}

impl InitMethod {
    pub fn tag(self) -> u8 {
        match self {
            InitMethod::SignedKaimingConstant => 0,
            InitMethod::KaimingNormal => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(InitMethod::SignedKaimingConstant),
            1 => Some(InitMethod::KaimingNormal),
            _ => None,
        }
    }
}

/// Everything needed to regenerate one frozen weight tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitSpec {
    pub method: InitMethod,
    pub fan_in: usize,
    /// First-coat sparsity `k₁`; weights are scaled by `√(1/(1−k₁))`.
    pub base_sparsity: f64,
    pub seed: u64,
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fan_in == 0 {
            return input_err("fan_in must be at least 1");
        }
        if !(0.0..1.0).contains(&self.base_sparsity) {
            return input_err(format!("k1 = {} outside [0, 1)", self.base_sparsity));
        }
        Ok(())
    }

    /// Kaiming-normal standard deviation `δ = √(2/fan_in)` (ReLU gain).
    pub fn kaiming_std(&self) -> f64 {
        (2.0 / self.fan_in as f64).sqrt()
    }

    pub fn sparsity_scale(&self) -> f64 {
        (1.0 / (1.0 - self.base_sparsity)).sqrt()
    }

    pub fn generate<T: Scalar>(&self, rows: usize, cols: usize) -> Result<DenseMatrix<T>> {
        match self.method {
            InitMethod::SignedKaimingConstant => signed_kaiming_constant(self, rows, cols),
            InitMethod::KaimingNormal => kaiming_normal(self, rows, cols),
        }
    }
}

fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn signed_kaiming_constant<T: Scalar>(
    spec: &InitSpec,
    rows: usize,
    cols: usize,
) -> Result<DenseMatrix<T>> {
    spec.validate()?;
    if spec.method != InitMethod::SignedKaimingConstant {
        return input_err("signed_kaiming_constant called with a different init method");
    }
    let magnitude = T::lit(spec.kaiming_std() * spec.sparsity_scale());
    let mut rng = rng_for(spec.seed);
    Ok(DenseMatrix::from_fn(rows, cols, |_, _| {
        if rng.random::<bool>() {
            magnitude
        } else {
            -magnitude
        }
    }))
}

pub fn kaiming_normal<T: Scalar>(spec: &InitSpec, rows: usize, cols: usize) -> Result<DenseMatrix<T>> {
    spec.validate()?;
    if spec.method != InitMethod::KaimingNormal {
        return input_err("kaiming_normal called with a different init method");
    }
    let normal = Normal::new(0.0, spec.kaiming_std() * spec.sparsity_scale())
        .map_err(|e| crate::Error::Input(e.to_string()))?;
    let mut rng = rng_for(spec.seed);
    Ok(DenseMatrix::from_fn(rows, cols, |_, _| T::lit(normal.sample(&mut rng))))
}

/// Scores drawn i.i.d. from `U[−√(6/fan_in), +√(6/fan_in)]`.
pub fn kaiming_uniform_scores<T: Scalar>(
    seed: u64,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> Result<DenseMatrix<T>> {
    if fan_in == 0 {
        return input_err("fan_in must be at least 1");
    }
    let bound = (6.0 / fan_in as f64).sqrt();
    let uniform = Uniform::new_inclusive(-bound, bound).map_err(|e| crate::Error::Input(e.to_string()))?;
    let mut rng = rng_for(seed);
    Ok(DenseMatrix::from_fn(rows, cols, |_, _| T::lit(uniform.sample(&mut rng))))
}

/// First eight bytes (little-endian) of the SHA-256 digest of `metadata`.
pub fn seed_from_hash(metadata: &[u8]) -> u64 {
    let digest = Sha256::digest(metadata);
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// What a derived seed is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedRole {
    Weight,
    Score,
}

impl SeedRole {
    fn tag(self) -> &'static [u8] {
        match self {
            SeedRole::Weight => b"weight",
            SeedRole::Score => b"score",
        }
    }
}

/// `seed_from_hash(global ‖ index ‖ role)`, so each tensor has an
/// independent, individually regenerable stream.
pub fn derive_seed(global: u64, index: usize, role: SeedRole) -> u64 {
    let mut bytes = Vec::with_capacity(24);
    bytes.extend_from_slice(&global.to_le_bytes());
    bytes.extend_from_slice(&(index as u64).to_le_bytes());
    bytes.extend_from_slice(role.tag());
    seed_from_hash(&bytes)
}
