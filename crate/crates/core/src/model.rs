//! Linear time-varying system, inequality constraints and noise sources.
//!
//! Matrices are supplied by providers indexed by the time step so that
//! frozen linearizations (see [`crate::harness`]) and constant systems share
//! one interface.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg;
use crate::projection;

/// State, control, attack and output dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub input: usize,
    pub attack: usize,
    pub output: usize,
}

/// Provider of the system matrices
///
/// ```text
/// x[k+1] = A(k) x[k] + B(k) u[k] + G(k) d[k] + w[k],   w ~ N(0, Q(k))
/// y[k]   = C(k) x[k] + v[k],                           v ~ N(0, R(k))
/// ```
///
/// Implementations must be pure in `k`.
pub trait SystemModel {
    fn dims(&self) -> Dims;
    fn a(&self, k: usize) -> DMatrix<f64>;
    fn b(&self, k: usize) -> DMatrix<f64>;
    fn c(&self, k: usize) -> DMatrix<f64>;
    fn g(&self, k: usize) -> DMatrix<f64>;
    fn q(&self, k: usize) -> DMatrix<f64>;
    fn r(&self, k: usize) -> DMatrix<f64>;
}

/// Time-invariant model.
#[derive(Debug, Clone)]
pub struct LtiModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl SystemModel for LtiModel {
    fn dims(&self) -> Dims {
        Dims {
            state: self.a.nrows(),
            input: self.b.ncols(),
            attack: self.g.ncols(),
            output: self.c.nrows(),
        }
    }
    fn a(&self, _k: usize) -> DMatrix<f64> {
        self.a.clone()
    }
    fn b(&self, _k: usize) -> DMatrix<f64> {
        self.b.clone()
    }
    fn c(&self, _k: usize) -> DMatrix<f64> {
        self.c.clone()
    }
    fn g(&self, _k: usize) -> DMatrix<f64> {
        self.g.clone()
    }
    fn q(&self, _k: usize) -> DMatrix<f64> {
        self.q.clone()
    }
    fn r(&self, _k: usize) -> DMatrix<f64> {
        self.r.clone()
    }
}

/// A block of inequality rows `matrix * z <= bound`. May have zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspaces {
    pub matrix: DMatrix<f64>,
    pub bound: DVector<f64>,
}

impl Halfspaces {
    pub fn new(matrix: DMatrix<f64>, bound: DVector<f64>) -> Self {
        assert_eq!(matrix.nrows(), bound.len(), "one bound per constraint row");
        Self { matrix, bound }
    }

    /// No constraints on a `dim`-vector.
    pub fn none(dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(0, dim),
            bound: DVector::zeros(0),
        }
    }

    /// Box `lo <= z[i] <= hi` for each `(i, lo, hi)`.
    pub fn boxed(dim: usize, bounds: &[(usize, f64, f64)]) -> Self {
        let mut matrix = DMatrix::zeros(2 * bounds.len(), dim);
        let mut bound = DVector::zeros(2 * bounds.len());
        for (row, &(i, lo, hi)) in bounds.iter().enumerate() {
            matrix[(2 * row, i)] = 1.0;
            bound[2 * row] = hi;
            matrix[(2 * row + 1, i)] = -1.0;
            bound[2 * row + 1] = -lo;
        }
        Self { matrix, bound }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    /// Whether `z` satisfies every row within `tol`.
    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(z) <= tol
    }

    /// Largest `row * z - bound`, or `-inf` with no rows.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        (&self.matrix * z - &self.bound)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Provider of the attack constraints `𝒜(k) d <= b(k)` and state constraints
/// `ℬ(k) x <= c(k)`.
pub trait ConstraintSet {
    fn attack(&self, k: usize) -> Halfspaces;
    fn state(&self, k: usize) -> Halfspaces;
}

/// Constraints that do not depend on `k`.
#[derive(Debug, Clone)]
pub struct FixedConstraints {
    pub attack: Halfspaces,
    pub state: Halfspaces,
}

impl FixedConstraints {
    pub fn unconstrained(dims: Dims) -> Self {
        Self {
            attack: Halfspaces::none(dims.attack),
            state: Halfspaces::none(dims.state),
        }
    }
}

impl ConstraintSet for FixedConstraints {
    fn attack(&self, _k: usize) -> Halfspaces {
        self.attack.clone()
    }
    fn state(&self, _k: usize) -> Halfspaces {
        self.state.clone()
    }
}

/// Seeded Gaussian source for process and measurement noise.
///
/// Samples are `S z` with `S S' = Σ` (Cholesky, or a clamped eigen factor
/// when `Σ` is singular) and `z` standard normal from a ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    seed: u64,
    rng: ChaCha8Rng,
}

impl NoiseSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standard_normal(&mut self, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |_, _| StandardNormal.sample(&mut self.rng))
    }

    /// One draw from `N(0, cov)`.
    pub fn gaussian(&mut self, cov: &DMatrix<f64>) -> DVector<f64> {
        let z = self.standard_normal(cov.nrows());
        linalg::sqrt_factor(cov) * z
    }

    /// One draw from `N(0, cov)` with a precomputed factor.
    pub fn gaussian_with_factor(&mut self, factor: &DMatrix<f64>) -> DVector<f64> {
        let z = self.standard_normal(factor.ncols());
        factor * z
    }
}

/// A violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension {
        k: usize,
        what: String,
    },
    QNotPsd {
        k: usize,
    },
    RNotPd {
        k: usize,
    },
    AttackRankDeficient {
        k: usize,
        rank: usize,
        needed: usize,
    },
    StateConstraintRank {
        k: usize,
        rank: usize,
        state_dim: usize,
    },
    EmptyAttackSet {
        k: usize,
    },
    EmptyStateSet {
        k: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension { k, what } => write!(f, "k={k}: dimension mismatch in {what}"),
            Violation::QNotPsd { k } => write!(f, "k={k}: Q not positive semidefinite"),
            Violation::RNotPd { k } => write!(f, "k={k}: R not positive definite"),
            Violation::AttackRankDeficient { k, rank, needed } => {
                write!(f, "k={k}: rank(C G) = {rank} < {needed}")
            }
            Violation::StateConstraintRank { k, rank, state_dim } => {
                write!(f, "k={k}: rank(state constraints) = {rank} >= {state_dim}")
            }
            Violation::EmptyAttackSet { k } => write!(f, "k={k}: attack feasible set is empty"),
            Violation::EmptyStateSet { k } => write!(f, "k={k}: state feasible set is empty"),
        }
    }
}

/// Outcome of [`validate`]; empty means every check passed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every model and constraint invariant for `k` in `0..horizon`.
/// Failures are collected, never raised.
///
/// # Panics
/// If `horizon` is zero.
pub fn validate(
    model: &dyn SystemModel,
    constraints: &dyn ConstraintSet,
    horizon: usize,
) -> ValidationReport {
    assert!(horizon >= 1, "horizon must be at least 1");
    let dims = model.dims();
    let mut violations = Vec::new();

    for k in 0..horizon {
        let mut shapes_ok = true;
        let expected = [
            ("A", model.a(k), dims.state, dims.state),
            ("B", model.b(k), dims.state, dims.input),
            ("C", model.c(k), dims.output, dims.state),
            ("G", model.g(k), dims.state, dims.attack),
            ("Q", model.q(k), dims.state, dims.state),
            ("R", model.r(k), dims.output, dims.output),
        ];
        for (name, m, r, c) in &expected {
            if m.shape() != (*r, *c) {
                shapes_ok = false;
                violations.push(Violation::Dimension {
                    k,
                    what: format!("{name} is {}x{}, expected {r}x{c}", m.nrows(), m.ncols()),
                });
            }
        }
        let atk = constraints.attack(k);
        let st = constraints.state(k);
        if atk.dim() != dims.attack {
            shapes_ok = false;
            violations.push(Violation::Dimension {
                k,
                what: format!("attack constraints act on {} components", atk.dim()),
            });
        }
        if st.dim() != dims.state {
            shapes_ok = false;
            violations.push(Violation::Dimension {
                k,
                what: format!("state constraints act on {} components", st.dim()),
            });
        }
        if !shapes_ok {
            continue;
        }

        if !linalg::is_psd(&model.q(k)) {
            violations.push(Violation::QNotPsd { k });
        }
        if !linalg::is_pd(&model.r(k)) {
            violations.push(Violation::RNotPd { k });
        }
        if k >= 1 {
            let cg = model.c(k) * model.g(k - 1);
            let rank = linalg::rank(&cg);
            if rank < dims.attack {
                violations.push(Violation::AttackRankDeficient {
                    k,
                    rank,
                    needed: dims.attack,
                });
            }
        }
        if !st.is_empty() {
            let rank = linalg::rank(&st.matrix);
            if rank >= dims.state {
                violations.push(Violation::StateConstraintRank {
                    k,
                    rank,
                    state_dim: dims.state,
                });
            }
        }
        if !feasible(&atk) {
            violations.push(Violation::EmptyAttackSet { k });
        }
        if !feasible(&st) {
            violations.push(Violation::EmptyStateSet { k });
        }
    }
    ValidationReport { violations }
}

fn feasible(h: &Halfspaces) -> bool {
    if h.is_empty() {
        return true;
    }
    let n = h.dim();
    let origin = DVector::zeros(n);
    let w = DMatrix::identity(n, n);
    projection::project(&origin, &w, &h.matrix, &h.bound).is_ok()
}
