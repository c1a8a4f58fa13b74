use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Inverted-dropout mask: each entry is 0 with probability `drop_rate`,
/// otherwise `1 / (1 - drop_rate)`.
pub fn dropout_mask(rows: usize, cols: usize, drop_rate: f64, seed: u64) -> Result<Matrix> {
    check_rate(drop_rate)?;
    let keep = 1.0 / (1.0 - drop_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < drop_rate { 0.0 } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn check_rate(drop_rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::invalid(format!(
            "dropout rate must be in [0, 1), got {drop_rate}"
        )));
    }
    Ok(())
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
