//! Laplace mechanism primitives.
//!
//! A released value is `f(D) + η` with `η ~ Laplace(0, λ)`, `λ = Δ(f)/ε`,
//! where `Δ(f)` is the global L1 sensitivity of `f` over neighboring
//! databases. Sampling uses the inverse CDF `x = -λ·sign(u)·ln(1-2|u|)` with
//! `u` uniform on (-1/2, 1/2).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("sensitivity must be nonnegative, got {0}")]
    BadSensitivity(f64),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
}

/// Noise calibration for one release: scale is always sensitivity/epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceSpec {
    sensitivity: f64,
    epsilon: f64,
    scale: f64,
}

impl LaplaceSpec {
    pub fn new(sensitivity: f64, epsilon: f64) -> Result<Self, DpError> {
        if sensitivity.is_nan() || sensitivity < 0.0 {
            return Err(DpError::BadSensitivity(sensitivity));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(DpError::BadEpsilon(epsilon));
        }
        Ok(LaplaceSpec {
            sensitivity,
            epsilon,
            scale: sensitivity / epsilon,
        })
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Inverse CDF of the centered Laplace with the given scale,
/// defined for u in (-1/2, 1/2).
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// One centered Laplace draw.
pub fn laplace_sample<R: Rng + ?Sized>(spec: &LaplaceSpec, rng: &mut R) -> f64 {
    sample_scale(spec.scale, rng)
}

fn sample_scale<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    // gen::<f64>() is [0,1); reject 0 so u stays inside the open interval.
    let mut v: f64 = rng.gen();
    while v == 0.0 {
        v = rng.gen();
    }
    laplace_inverse_cdf(v - 0.5, scale)
}

/// Log density of Laplace(center, scale) at x: -ln(2λ) - |x-center|/λ.
pub fn laplace_logpdf(x: f64, center: f64, scale: f64) -> f64 {
    -(2.0 * scale).ln() - (x - center).abs() / scale
}

/// Source of Laplace noise for releases.
///
/// `Noiseless` exists for in-process tests and sandbox calibration runs; the
/// server can only select it through its configuration file, never from a
/// wire parameter.
#[derive(Debug, Clone)]
pub enum NoiseSource {
    Seeded(ChaCha8Rng),
    Noiseless,
}

impl NoiseSource {
    pub fn from_seed(seed: u64) -> Self {
        NoiseSource::Seeded(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_key(key: [u8; 32]) -> Self {
        NoiseSource::Seeded(ChaCha8Rng::from_seed(key))
    }

    pub fn noiseless() -> Self {
        NoiseSource::Noiseless
    }

    pub fn laplace(&mut self, scale: f64) -> f64 {
        match self {
            NoiseSource::Seeded(rng) => sample_scale(scale, rng),
            NoiseSource::Noiseless => 0.0,
        }
    }
}

/// Maps a ledger entry id to the noise source for that release, so no draw is
/// ever reused across queries.
pub trait NoiseProvider: Sync {
    fn for_release(&self, entry_id: u64) -> NoiseSource;
}

/// Production provider: stream keyed by (server secret, ledger entry id).
pub struct KeyedNoise {
    secret: Vec<u8>,
}

impl KeyedNoise {
    pub fn new(secret: impl Into<Vec<u8>>) -> Self {
        KeyedNoise {
            secret: secret.into(),
        }
    }
}

impl NoiseProvider for KeyedNoise {
    fn for_release(&self, entry_id: u64) -> NoiseSource {
        let mut h = Sha256::new();
        h.update(&self.secret);
        h.update(entry_id.to_le_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        NoiseSource::from_key(key)
    }
}

/// Test/sandbox provider: same fixed seed (or no noise) for every release.
pub struct FixedNoise {
    pub seed: Option<u64>,
}

impl FixedNoise {
    pub fn seeded(seed: u64) -> Self {
        FixedNoise { seed: Some(seed) }
    }

    pub fn noiseless() -> Self {
        FixedNoise { seed: None }
    }
}

impl NoiseProvider for FixedNoise {
    fn for_release(&self, entry_id: u64) -> NoiseSource {
        match self.seed {
            // fold the entry id in so multi-release queries stay independent
            Some(s) => NoiseSource::from_seed(s ^ entry_id.wrapping_mul(0x9e3779b97f4a7c15)),
            None => NoiseSource::Noiseless,
        }
    }
}
