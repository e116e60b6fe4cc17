//! Small dense helpers shared by the filter, the projection and the detector.

use nalgebra::{DMatrix, DVector, Dyn, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number above which a matrix is treated as singular.
pub const COND_LIMIT: f64 = 1e12;

/// Convergence thresholds tried in turn by [`symmetric_eigen`] and
/// [`spectral_radius`]. Results are verified by reconstruction.
const DECOMPOSITION_EPS: [f64; 4] = [f64::EPSILON, 1e-14, 1e-12, 1e-10];
const DECOMPOSITION_MAX_ITER: usize = 100_000;

fn reconstructs(m: &DMatrix<f64>, approx: &DMatrix<f64>) -> bool {
    (m - approx).amax() <= 1e-9 * m.amax().max(f64::MIN_POSITIVE)
}

/// Eigendecomposition of `[[0, M], [M', 0]]`, whose eigenvalues are `±σᵢ`
/// (plus `|r - c|` zeros) with eigenvectors `[u; ±v] / √2`.
///
/// nalgebra's bidiagonal SVD loses relative accuracy on small singular values
/// and can return wrong factors for rank-deficient input; the symmetric
/// eigensolver does not.
fn embedded_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    let (r, c) = m.shape();
    let mut j = DMatrix::zeros(r + c, r + c);
    j.view_mut((0, r), (r, c)).copy_from(m);
    j.view_mut((r, 0), (c, r)).copy_from(&m.transpose());
    symmetric_eigen(&j)
}

// Symmetric up to roundoff; such matrices are decomposed directly.
fn nearly_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-13 * m.amax()
}

/// Singular values in descending order, `min(r, c)` of them.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return DVector::zeros(0);
    }
    if nearly_symmetric(m) {
        let mut ev: Vec<f64> = symmetric_eigen(m)
            .eigenvalues
            .iter()
            .map(|l| l.abs())
            .collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        return DVector::from_vec(ev);
    }
    let mut ev: Vec<f64> = embedded_eigen(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    DVector::from_iterator(k, ev.into_iter().take(k).map(|v| v.max(0.0)))
}

/// Eigendecomposition of the symmetric part of `p`, checked by
/// reconstruction.
///
/// # Panics
/// If no threshold yields a valid decomposition (non-finite input).
pub fn symmetric_eigen(p: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    let sym = symmetrize(p);
    for eps in DECOMPOSITION_EPS {
        if let Some(e) = SymmetricEigen::try_new(sym.clone(), eps, DECOMPOSITION_MAX_ITER) {
            if reconstructs(&sym, &e.recompose()) {
                return e;
            }
        }
    }
    panic!(
        "symmetric eigendecomposition did not converge for a {}x{} matrix",
        p.nrows(),
        p.ncols()
    );
}

/// `(P + P')/2`.
pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `p`.
pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    symmetric_eigen(p)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of the symmetric part of `p`.
pub fn max_eigenvalue(p: &DMatrix<f64>) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    symmetric_eigen(p)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// PSD test with the roundoff floor `-1e-10 (1 + ||P||)`.
pub fn is_psd(p: &DMatrix<f64>) -> bool {
    let sym_err = (p - p.transpose()).abs().max();
    let norm = p.norm();
    sym_err <= 1e-9 * (1.0 + norm) && min_eigenvalue(p) >= -1e-10 * (1.0 + norm)
}

/// Positive definiteness via Cholesky of the symmetrized matrix.
pub fn is_pd(p: &DMatrix<f64>) -> bool {
    p.is_square() && p.nrows() > 0 && symmetrize(p).cholesky().is_some()
}

/// 2-norm condition number from singular values; `inf` for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = singular_values(m);
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Numerical rank with cutoff `max(r, c) * sigma_max * 1e-12`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = singular_values(m);
    let tol = pinv_tolerance(m.nrows(), m.ncols(), sv.max());
    sv.iter().filter(|&&s| s > tol).count()
}

fn pinv_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * 1e-12
}

/// Moore-Penrose pseudoinverse. Singular values below
/// `max(r, c) * sigma_max * 1e-12` are treated as zero.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    pinv_relative_to(m, 0.0)
}

/// Pseudoinverse with the cutoff measured against `max(sigma_max, scale)`.
///
/// For a matrix formed as a difference of larger terms, `scale` should be the
/// size of those terms; otherwise cancellation noise in a matrix that is zero
/// in exact arithmetic gets inverted.
pub fn pinv_relative_to(m: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if m.is_empty() {
        return DMatrix::zeros(c, r);
    }
    if nearly_symmetric(m) {
        let eig = symmetric_eigen(m);
        let tol = pinv_tolerance(r, c, eig.eigenvalues.amax().max(scale)).max(f64::MIN_POSITIVE);
        let mut out = DMatrix::zeros(r, r);
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda.abs() > tol {
                let v = eig.eigenvectors.column(i);
                out += (v * v.transpose()) / lambda;
            }
        }
        return out;
    }
    let eig = embedded_eigen(m);
    let sigma_max = eig.eigenvalues.max().max(scale);
    let tol = pinv_tolerance(r, c, sigma_max).max(f64::MIN_POSITIVE);
    let mut out = DMatrix::zeros(c, r);
    for (i, &sigma) in eig.eigenvalues.iter().enumerate() {
        if sigma > tol {
            let w = eig.eigenvectors.column(i);
            let u = w.rows(0, r);
            let v = w.rows(r, c);
            out += (v * u.transpose()) * (2.0 / sigma);
        }
    }
    out
}

/// Inverse of a symmetric positive definite matrix via Cholesky, refusing
/// matrices whose condition number exceeds [`COND_LIMIT`].
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let cond = condition_number(m);
    if !cond.is_finite() || cond > COND_LIMIT {
        return None;
    }
    let chol = symmetrize(m).cholesky()?;
    Some((symmetrize(&chol.inverse()), cond))
}

/// Weight matrix for a covariance: the inverse when it exists, otherwise the
/// pseudoinverse plus a `1e-10` ridge.
pub fn weight_from_covariance(p: &DMatrix<f64>) -> DMatrix<f64> {
    match spd_inverse(p) {
        Some((w, _)) => w,
        None => {
            let n = p.nrows();
            symmetrize(&pinv(p)) + DMatrix::identity(n, n) * 1e-10
        }
    }
}

/// Symmetric square root factor `S` with `S S' = P`, clamping negative
/// eigenvalues to zero. Used for sampling from possibly singular covariances.
pub fn sqrt_factor(p: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = symmetrize(p).cholesky() {
        return chol.l();
    }
    let eig = symmetric_eigen(p);
    let scales = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&scales)
}

/// Spectral radius of a general square matrix.
///
/// Eigenvalues come from a bounded, verified real Schur iteration; if that
/// does not converge the radius is estimated as `‖M^(2^j)‖^(1/2^j)` by repeated
/// squaring.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    for eps in DECOMPOSITION_EPS {
        let Some(schur) = Schur::try_new(m.clone(), eps, 10_000) else {
            continue;
        };
        let eigenvalues = schur.complex_eigenvalues();
        let (q, t) = schur.unpack();
        if reconstructs(m, &(&q * t * q.transpose())) {
            return eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
        }
    }
    gelfand_radius(m)
}

fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
    let mut power = m.clone();
    // ln of the scale factored out of `power` so far
    let mut log_scale = 0.0;
    let mut exponent = 1.0;
    for _ in 0..40 {
        let norm = power.norm();
        if norm == 0.0 {
            return 0.0;
        }
        power /= norm;
        log_scale += norm.ln();
        power = &power * &power;
        log_scale *= 2.0;
        exponent *= 2.0;
    }
    let norm = power.norm();
    if norm == 0.0 {
        return 0.0;
    }
    ((log_scale + norm.ln()) / exponent).exp()
}

pub(crate) fn check_shape(what: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn check_len(what: &str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension(format!(
            "{what} has length {}, expected {len}",
            v.len()
        )));
    }
    Ok(())
}
