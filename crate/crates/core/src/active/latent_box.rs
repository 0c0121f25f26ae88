use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ActiveError;

/// Axis-aligned box in latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LatentBox {
    /// Componentwise bounds of the given codes.
    pub fn from_codes(codes: &[Vec<f64>]) -> Result<Self, ActiveError> {
        let first = codes.first().ok_or(ActiveError::EmptyInput("latent box"))?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for c in &codes[1..] {
            if c.len() != lo.len() {
                return Err(ActiveError::LatentDim {
                    got: c.len(),
                    expected: lo.len(),
                });
            }
            for (j, &v) in c.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Ok(LatentBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim() && z.iter().enumerate().all(|(j, &v)| self.lo[j] <= v && v <= self.hi[j])
    }

    pub fn clamp(&self, z: &mut [f64]) {
        for (j, v) in z.iter_mut().enumerate() {
            *v = v.clamp(self.lo[j], self.hi[j]);
        }
    }

    /// `n` independent uniform draws; a degenerate axis yields its bound.
    pub fn sample_uniform(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                self.lo
                    .iter()
                    .zip(&self.hi)
                    .map(|(&a, &b)| if a < b { rng.random_range(a..=b) } else { a })
                    .collect()
            })
            .collect()
    }
}
