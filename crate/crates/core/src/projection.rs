//! Weighted least-squares projection of an estimate onto `{z : A z <= b}`.
//!
//! The active set is identified with a dual active-set iteration in the
//! style of Goldfarb and Idnani: start at the unconstrained point, add the
//! most violated row, move along the null space of the active rows and drop
//! a row as soon as its multiplier would turn negative. Once the active rows
//! `Ā, b̄` are known the projection has the closed form
//!
//! ```text
//! γ  = P Ā' (Ā P Ā')⁻¹          P = W⁻¹
//! z  = e - γ (Ā e - b̄)
//! P⁺ = (I - γ Ā) P (I - γ Ā)'
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, COND_LIMIT};
use crate::model::Halfspaces;

/// Relative tolerance used to declare a row dependent on the active rows.
const DEPENDENCE_TOL: f64 = 1e-12;
/// Column-pivoted QR cutoff for pruning redundant active rows.
const RRQR_TOL: f64 = 1e-10;

/// Projected estimate with its active set and projected covariance.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub estimate: DVector<f64>,
    /// Indices of the active rows, ascending.
    pub active: Vec<usize>,
    /// One nonnegative multiplier per active row.
    pub multipliers: DVector<f64>,
    /// `γ = P Ā' (Ā P Ā')⁻¹`, `n x |active|`.
    pub gain: DMatrix<f64>,
    /// `I - γ Ā`.
    pub complement: DMatrix<f64>,
    /// `(I - γ Ā) P (I - γ Ā)'`, symmetrized.
    pub covariance: DMatrix<f64>,
    /// Max-abs gap between `(I - γ Ā) P` and the symmetric form above.
    pub short_form_residual: f64,
    pub iterations: usize,
}

impl ProjectionResult {
    pub fn is_active(&self) -> bool {
        !self.active.is_empty()
    }

    /// Rows `Ā` of `a` selected by the active set.
    pub fn active_rows(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        select_rows(a, &self.active)
    }
}

/// Minimizes `(z - e)' W (z - e)` subject to `a z <= b`.
pub fn project(
    estimate: &DVector<f64>,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<ProjectionResult> {
    let n = estimate.len();
    linalg::check_shape("weight", w, n, n)?;
    let p = match linalg::spd_inverse(w) {
        Some((p, _)) => p,
        None => {
            return Err(Error::InvalidArgument(
                "projection weight must be symmetric positive definite".into(),
            ))
        }
    };
    project_with_covariance(estimate, &p, w, a, b)
}

/// [`project`] for callers that already hold both `P` and `W = P⁻¹`.
pub(crate) fn project_with_covariance(
    estimate: &DVector<f64>,
    p: &DMatrix<f64>,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<ProjectionResult> {
    let n = estimate.len();
    let q = a.nrows();
    linalg::check_shape("constraint matrix", a, q, n)?;
    linalg::check_len("constraint bound", b, q)?;

    let (active, iterations) = identify_active_set(estimate, p, a, b)?;
    let active = prune_dependent(p, a, active);
    let mut result = closed_form(estimate, p, a, b, &active)?;
    result.iterations = iterations;
    debug_assert!(
        (w * p - DMatrix::identity(n, n)).abs().max() < 1e-6 * (1.0 + w.norm() * p.norm()),
        "P must be the inverse of W"
    );
    Ok(result)
}

fn violation_tol(row_norm: f64, bound: f64) -> f64 {
    1e-12 * (1.0 + bound.abs() / row_norm.max(f64::MIN_POSITIVE))
}

fn identify_active_set(
    e: &DVector<f64>,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(Vec<usize>, usize)> {
    let q = a.nrows();
    let limit = 10 * (q + 1);
    let norms: Vec<f64> = (0..q).map(|i| a.row(i).norm()).collect();

    for i in 0..q {
        if norms[i] == 0.0 && b[i] < 0.0 {
            return Err(Error::Infeasible);
        }
    }

    let mut z = e.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let mut iterations = 0;

    loop {
        // Most violated inactive row by normalized violation; ties to lowest index.
        let mut add: Option<(usize, f64)> = None;
        for i in 0..q {
            if norms[i] == 0.0 || active.contains(&i) {
                continue;
            }
            let s = (a.row(i) * &z)[0] - b[i];
            let normalized = s / norms[i];
            if normalized > violation_tol(norms[i], b[i])
                && add.is_none_or(|(_, best)| normalized > best)
            {
                add = Some((i, normalized));
            }
        }
        let Some((p_row, _)) = add else {
            return Ok((active, iterations));
        };

        let a_p = a.row(p_row).transpose();
        let mut lambda_p = 0.0;
        loop {
            iterations += 1;
            if iterations > limit {
                let violation = max_normalized_violation(&z, a, b, &norms);
                return Err(Error::IterationLimit {
                    limit,
                    active,
                    violation,
                });
            }

            let pa = p * &a_p;
            let r = if active.is_empty() {
                DVector::zeros(0)
            } else {
                let aa = select_rows(a, &active);
                let gram = &aa * p * aa.transpose();
                gram.lu().solve(&(&aa * &pa)).ok_or_else(|| {
                    Error::InvalidArgument("singular active-set Gram matrix".into())
                })?
            };
            let dz = if active.is_empty() {
                -&pa
            } else {
                let aa = select_rows(a, &active);
                -(p * (&a_p - aa.transpose() * &r))
            };
            // Curvature a_p' P_N a_p along the new row, >= 0.
            let curvature = -(a_p.dot(&dz));
            let dependent = curvature <= DEPENDENCE_TOL * a_p.dot(&pa).max(f64::MIN_POSITIVE);

            // Partial (dual) step: first active multiplier to reach zero.
            let mut blocking: Option<(usize, f64)> = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 0.0 {
                    let t = lambda[j] / rj;
                    if blocking.is_none_or(|(_, best)| t < best) {
                        blocking = Some((j, t));
                    }
                }
            }

            let slack = (a_p.transpose() * &z)[0] - b[p_row];
            if dependent {
                let Some((j, t)) = blocking else {
                    return Err(Error::Infeasible);
                };
                for (lj, rj) in lambda.iter_mut().zip(r.iter()) {
                    *lj -= t * rj;
                }
                lambda_p += t;
                active.remove(j);
                lambda.remove(j);
                continue;
            }

            let full = slack / curvature;
            match blocking {
                Some((j, t)) if t < full => {
                    z += &dz * t;
                    for (lj, rj) in lambda.iter_mut().zip(r.iter()) {
                        *lj -= t * rj;
                    }
                    lambda_p += t;
                    active.remove(j);
                    lambda.remove(j);
                }
                _ => {
                    z += &dz * full;
                    for (lj, rj) in lambda.iter_mut().zip(r.iter()) {
                        *lj -= full * rj;
                    }
                    lambda_p += full;
                    active.push(p_row);
                    lambda.push(lambda_p);
                    break;
                }
            }
        }
    }
}

fn max_normalized_violation(
    z: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    norms: &[f64],
) -> f64 {
    (0..a.nrows())
        .filter(|&i| norms[i] > 0.0)
        .map(|i| ((a.row(i) * z)[0] - b[i]) / norms[i])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Drops linearly dependent rows from the active set when `Ā P Ā'` is
/// ill-conditioned.
fn prune_dependent(p: &DMatrix<f64>, a: &DMatrix<f64>, mut active: Vec<usize>) -> Vec<usize> {
    active.sort_unstable();
    if active.len() < 2 {
        return active;
    }
    let rows = select_rows(a, &active);
    let gram = &rows * p * rows.transpose();
    if linalg::condition_number(&gram) <= COND_LIMIT {
        return active;
    }
    let qr = rows.transpose().col_piv_qr();
    let r = qr.r();
    let perm = qr.p();
    // Column order chosen by the pivoting.
    let mut idx = DMatrix::from_fn(1, active.len(), |_, j| j as f64);
    perm.permute_columns(&mut idx);
    let order: Vec<usize> = idx.iter().map(|&v| v as usize).collect();
    let lead = r[(0, 0)].abs();
    let keep = (0..r.nrows().min(r.ncols()))
        .take_while(|&i| r[(i, i)].abs() > RRQR_TOL * lead)
        .count();
    let mut kept: Vec<usize> = order[..keep].iter().map(|&j| active[j]).collect();
    kept.sort_unstable();
    kept
}

fn closed_form(
    e: &DVector<f64>,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    active: &[usize],
) -> Result<ProjectionResult> {
    let n = e.len();
    if active.is_empty() {
        return Ok(ProjectionResult {
            estimate: e.clone(),
            active: Vec::new(),
            multipliers: DVector::zeros(0),
            gain: DMatrix::zeros(n, 0),
            complement: DMatrix::identity(n, n),
            covariance: p.clone(),
            short_form_residual: 0.0,
            iterations: 0,
        });
    }
    let a_bar = select_rows(a, active);
    let b_bar = DVector::from_iterator(active.len(), active.iter().map(|&i| b[i]));
    let pat = p * a_bar.transpose();
    let gram = &a_bar * &pat;
    let gram_inv = gram
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular active-set Gram matrix".into()))?;
    let gain = &pat * &gram_inv;
    let excess = &a_bar * e - &b_bar;
    let multipliers = &gram_inv * &excess;
    let estimate = e - &gain * &excess;
    let complement = DMatrix::identity(n, n) - &gain * &a_bar;
    let short = &complement * p;
    let covariance = linalg::symmetrize(&(&short * complement.transpose()));
    let short_form_residual = (&short - &covariance).abs().max();
    Ok(ProjectionResult {
        estimate,
        active: active.to_vec(),
        multipliers,
        gain,
        complement,
        covariance,
        short_form_residual,
        iterations: 0,
    })
}

pub(crate) fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

/// Projects the unconstrained attack estimate with `W = (P^{d,u})⁻¹`.
/// Returns `(d̂, Pᵈ, result)`.
pub fn project_attack(
    estimate: &DVector<f64>,
    covariance: &DMatrix<f64>,
    constraints: &Halfspaces,
) -> Result<(DVector<f64>, DMatrix<f64>, ProjectionResult)> {
    project_covariance_weighted(estimate, covariance, constraints)
}

/// Projects the unconstrained state estimate with `W = (P^{x,u})⁻¹`.
/// Returns `(x̂, Pˣ, result)`; `result.complement` is `Γ̄ = I - γˣ ℬ̄`.
pub fn project_state(
    estimate: &DVector<f64>,
    covariance: &DMatrix<f64>,
    constraints: &Halfspaces,
) -> Result<(DVector<f64>, DMatrix<f64>, ProjectionResult)> {
    project_covariance_weighted(estimate, covariance, constraints)
}

fn project_covariance_weighted(
    estimate: &DVector<f64>,
    covariance: &DMatrix<f64>,
    constraints: &Halfspaces,
) -> Result<(DVector<f64>, DMatrix<f64>, ProjectionResult)> {
    let n = estimate.len();
    linalg::check_shape("covariance", covariance, n, n)?;
    if constraints.is_empty() {
        let res = closed_form(
            estimate,
            covariance,
            &constraints.matrix,
            &constraints.bound,
            &[],
        )?;
        return Ok((res.estimate.clone(), res.covariance.clone(), res));
    }
    let w = linalg::weight_from_covariance(covariance);
    // With a singular covariance the metric is the ridge-regularized pseudoinverse,
    // so the gain must use that metric's inverse as well.
    let p = match linalg::spd_inverse(covariance) {
        Some(_) => covariance.clone(),
        None => linalg::symmetrize(&w.clone().try_inverse().ok_or(Error::InvalidArgument(
            "regularized projection weight is singular".into(),
        ))?),
    };
    let res = project_with_covariance(estimate, &p, &w, &constraints.matrix, &constraints.bound)?;
    Ok((res.estimate.clone(), res.covariance.clone(), res))
}

/// Exhaustive reference solver: tries every subset of rows as the active set
/// and keeps the best primal- and dual-feasible candidate. Exponential in
/// the number of rows, so limited to 20.
pub fn qp_oracle(
    estimate: &DVector<f64>,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let q = a.nrows();
    if q > 20 {
        return Err(Error::InvalidArgument(format!(
            "oracle limited to 20 rows, got {q}"
        )));
    }
    let p = w
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("weight not invertible".into()))?;
    let tol = 1e-9;
    let objective = |z: &DVector<f64>| {
        let d = z - estimate;
        (d.transpose() * w * &d)[0]
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << q) {
        let rows: Vec<usize> = (0..q).filter(|i| mask & (1 << i) != 0).collect();
        let z = if rows.is_empty() {
            estimate.clone()
        } else {
            let a_s = select_rows(a, &rows);
            let b_s = DVector::from_iterator(rows.len(), rows.iter().map(|&i| b[i]));
            let gram = &a_s * &p * a_s.transpose();
            if linalg::condition_number(&gram) > COND_LIMIT {
                continue;
            }
            let Some(lambda) = gram.lu().solve(&(&a_s * estimate - &b_s)) else {
                continue;
            };
            if lambda.iter().any(|&l| l < -tol) {
                continue;
            }
            estimate - &p * a_s.transpose() * lambda
        };
        let slack = a * &z - b;
        if slack.iter().any(|&s| s > tol * (1.0 + b.amax())) {
            continue;
        }
        let f = objective(&z);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, z));
        }
    }
    best.map(|(_, z)| z).ok_or(Error::Infeasible)
}
