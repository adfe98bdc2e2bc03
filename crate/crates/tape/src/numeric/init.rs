//! Seeded weight initializers. ChaCha8 keeps the streams identical across
//! platforms and runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DenseMatrix;

/// Glorot/Xavier uniform: entries in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| ((rng.gen::<f64>() * 2.0 - 1.0) * limit) as f32)
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("finite by construction")
}

/// I.i.d. N(0, std^2) entries via Box-Muller.
pub fn gaussian(rows: usize, cols: usize, std: f64, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows * cols;
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        // gen::<f64>() is in [0, 1); flip to (0, 1] so ln() stays finite.
        let u1 = 1.0 - rng.gen::<f64>();
        let u2 = rng.gen::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        data.push((radius * theta.cos() * std) as f32);
        if data.len() < n {
            data.push((radius * theta.sin() * std) as f32);
        }
    }
    DenseMatrix::from_vec(rows, cols, data).expect("finite by construction")
}
