#![allow(dead_code)]

use care_core::{DMatrix, DVector, LtiModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `L L' + floor I` for a Gaussian `L`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = gaussian_matrix(rng, n, n);
    &l * l.transpose() + DMatrix::identity(n, n) * floor
}

/// Random model with `n` states, `p` attack channels and `l` outputs.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, p: usize, l: usize) -> LtiModel {
    LtiModel {
        a: gaussian_matrix(rng, n, n) * 0.5,
        b: gaussian_matrix(rng, n, 1),
        c: gaussian_matrix(rng, l, n),
        g: gaussian_matrix(rng, n, p),
        q: random_spd(rng, n, 0.01) * 0.1,
        r: random_spd(rng, l, 0.05) * 0.1,
    }
}

pub fn random_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    let n = rng.random_range(2..=5);
    let p = rng.random_range(1..n);
    let l = rng.random_range(p..=n);
    (n, p, l)
}

/// Lower Cholesky factor by the textbook recurrence.
pub fn cholesky(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            if i == j {
                l[(i, i)] = (m[(i, i)] - s).sqrt();
            } else {
                l[(i, j)] = (m[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    l
}
