use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One draw of the band values `X_j ~ U[−1, 1]`, `j = 0..=⌊1/ε⌋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomRealization {
    pub seed: u64,
    pub values: Vec<f64>,
}

/// Number of bands `⌊1/ε⌋ + 1`, robust to `1/ε` landing just below an integer.
pub fn band_count(eps: f64) -> usize {
    (1.0 / eps * (1.0 + 1e-12)).floor() as usize + 1
}

/// Seeded draw of the band values.
pub fn sample_random(eps: f64, seed: u64) -> Result<RandomRealization> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::arg(format!("ε = {eps} must be positive")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let values = (0..band_count(eps)).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Ok(RandomRealization { seed, values })
}

impl RandomRealization {
    /// Value on band `j`; indices outside `0..len` wrap around.
    pub fn band(&self, j: i64) -> f64 {
        let n = self.values.len() as i64;
        self.values[j.rem_euclid(n) as usize]
    }

    pub fn all_zero(len: usize) -> Self {
        Self { seed: 0, values: vec![0.0; len] }
    }
}
