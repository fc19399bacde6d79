//! Seeded synthetic regression problems.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};

/// Boundary between the two regimes of [`gen_piecewise`].
pub const PIECEWISE_BREAK: f64 = 30.0;
pub const PIECEWISE_NOISE: f64 = 0.37;

/// Latent function of [`gen_piecewise`]: a line through the origin on
/// `[0, 30)` and a sinusoid of period 10 around −3 on `[30, 60]`.
pub fn piecewise_f(x: f64) -> f64 {
    if x < PIECEWISE_BREAK {
        0.2 * x
    } else {
        -3.0 + 2.0 * (2.0 * PI * (x - PIECEWISE_BREAK) / 10.0).sin()
    }
}

pub fn piecewise_noise_std(x: f64) -> f64 {
    if x < PIECEWISE_BREAK {
        PIECEWISE_NOISE
    } else {
        1.5 * PIECEWISE_NOISE
    }
}

fn jittered_grid(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * (i as f64 + rng.random::<f64>()) / n as f64)
        .collect()
}

fn one_d(xs: Vec<f64>, ys: Vec<f64>) -> Result<Dataset> {
    let n = xs.len();
    Dataset::new(
        DMatrix::from_vec(n, 1, xs),
        DMatrix::from_vec(n, 1, ys),
        vec!["x".into()],
        vec!["y".into()],
    )
}

/// 1-D series on `[0, 60]` with a linear and an oscillatory regime.
pub fn gen_piecewise(seed: u64, n: usize) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::arg("need at least 10 points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = jittered_grid(&mut rng, n, 0.0, 60.0);
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let ys = xs
        .iter()
        .map(|x| piecewise_f(*x) + piecewise_noise_std(*x) * z.sample(&mut rng))
        .collect();
    one_d(xs, ys)
}

pub const HETERO_DOMAIN: (f64, f64) = (0.0, 10.0);
pub const HETERO_PEAK: f64 = 6.5;

pub fn hetero_f(x: f64) -> f64 {
    (0.8 * x).sin() + 0.4 * (1.7 * x + 0.3).cos()
}

/// Noise standard deviation: a floor of 0.08 plus a bump of height 0.42
/// centred at 6.5. On `[0, 10]` it peaks at 6.5 (0.5) and is smallest at 0.
pub fn hetero_noise_std(x: f64) -> f64 {
    let u = (x - HETERO_PEAK) / 2.0;
    0.08 + 0.42 * (-u * u).exp()
}

/// Smooth function with input-dependent noise, plus the true noise standard
/// deviation at every generated input.
pub fn gen_heteroscedastic(seed: u64, n: usize) -> Result<(Dataset, Vec<f64>)> {
    if n < 10 {
        return Err(Error::arg("need at least 10 points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = jittered_grid(&mut rng, n, HETERO_DOMAIN.0, HETERO_DOMAIN.1);
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let noise: Vec<f64> = xs.iter().map(|x| hetero_noise_std(*x)).collect();
    let ys = xs
        .iter()
        .zip(&noise)
        .map(|(x, s)| hetero_f(*x) + s * z.sample(&mut rng))
        .collect();
    Ok((one_d(xs, ys)?, noise))
}

pub const SMOOTH_NOISE: f64 = 0.1;

/// Smooth latent function on `[0, 1]^D`.
pub fn smooth_f(x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(d, v)| (2.0 * PI * v + d as f64).sin() / (1.0 + d as f64))
        .sum::<f64>()
        + 0.5 * x.iter().product::<f64>()
}

/// Uniform inputs on `[0, 1]^dim` with [`smooth_f`] plus Gaussian noise.
pub fn gen_smooth(seed: u64, n: usize, dim: usize) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(Error::arg("need at least one point and one input"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, SMOOTH_NOISE).expect("valid normal");
    let mut xs = Vec::with_capacity(n * dim);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        ys.push(smooth_f(&x) + z.sample(&mut rng));
        xs.extend(x);
    }
    Dataset::new(
        DMatrix::from_row_slice(n, dim, &xs),
        DMatrix::from_vec(n, 1, ys),
        (0..dim).map(|d| format!("x{d}")).collect(),
        vec!["y".into()],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_function_extremes() {
        assert_eq!(hetero_noise_std(HETERO_PEAK), 0.5);
        let lo = hetero_noise_std(0.0);
        assert!((lo - (0.08 + 0.42 * (-(3.25f64).powi(2)).exp())).abs() < 1e-15);
        for i in 0..=100 {
            assert!(hetero_noise_std(i as f64 / 10.0) >= lo);
        }
    }

    #[test]
    fn piecewise_shape() {
        let d = gen_piecewise(0, 600).unwrap();
        assert_eq!(d.x.shape(), (600, 1));
        assert!(d.x.min() >= 0.0 && d.x.max() <= 60.0);
        assert!(d.y.mean().abs() < 0.2);
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(gen_smooth(4, 50, 2).unwrap(), gen_smooth(4, 50, 2).unwrap());
        assert_ne!(gen_smooth(4, 50, 2).unwrap().fingerprint, gen_smooth(5, 50, 2).unwrap().fingerprint);
    }
}
