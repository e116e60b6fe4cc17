//! χ² attack test, false-negative bookkeeping and the CUSUM detector with
//! forgetting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..1000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    // Modified Lentz.
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// `P(X <= x)` for `X ~ χ²(df)`.
pub fn chi2_cdf(df: u32, x: f64) -> f64 {
    gamma_p(df as f64 / 2.0, x / 2.0)
}

/// `P(X > x)` for `X ~ χ²(df)`.
pub fn chi2_sf(df: u32, x: f64) -> f64 {
    gamma_q(df as f64 / 2.0, x / 2.0)
}

fn chi2_pdf(df: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = df as f64 / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * 2f64.ln() - ln_gamma(k)).exp()
}

/// Upper-tail quantile `χ²_df(α)`: the `q` with `P(X > q) = α`.
///
/// Safeguarded Newton on the survival function inside a bisection bracket,
/// absolute tolerance `1e-10`.
pub fn chi2_quantile(df: u32, alpha: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::InvalidArgument(
            "degrees of freedom must be positive".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let f = |q: f64| chi2_sf(df, q) - alpha;

    let mut lo = 0.0;
    let mut hi = (df as f64).max(1.0);
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fq = f(q);
        if fq > 0.0 {
            lo = q;
        } else {
            hi = q;
        }
        let slope = -chi2_pdf(df, q);
        let mut next = if slope != 0.0 {
            q - fq / slope
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - q).abs();
        q = next;
        if step < 1e-12 || hi - lo < 1e-12 {
            break;
        }
    }
    Ok(q)
}

/// How a singular covariance enters the χ² statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticMode {
    /// `d' P⁻¹ d` with eigenvalues of `P` floored at the rank cutoff. A
    /// component of `d` outside the support of `P` therefore produces a very
    /// large statistic (the limit of the exact inverse) rather than vanishing.
    #[default]
    Floored,
    /// `d' P⁺ d`: the statistic restricted to the row space of `P`.
    RowSpace,
}

/// Normalized statistic `d' P⁻¹ d`, always `>= 0`.
pub fn chi2_statistic(d: &DVector<f64>, p: &DMatrix<f64>, mode: StatisticMode) -> f64 {
    if d.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    match mode {
        StatisticMode::RowSpace => {
            let s = (d.transpose() * linalg::pinv(&linalg::symmetrize(p)) * d)[0];
            s.max(0.0)
        }
        StatisticMode::Floored => {
            let n = d.len();
            let eig = linalg::symmetric_eigen(p);
            let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
            if lmax <= 0.0 {
                return f64::INFINITY;
            }
            let floor = n as f64 * lmax * 1e-12;
            eig.eigenvalues
                .iter()
                .zip(eig.eigenvectors.column_iter())
                .map(|(&l, v)| {
                    let c = v.dot(d);
                    c * c / l.max(floor)
                })
                .sum()
        }
    }
}

/// Significance, degrees of freedom and forgetting rate with the derived
/// quantile and CUSUM threshold `χ²_df(α) / (1 - φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub df: u32,
    pub forgetting: f64,
    pub quantile: f64,
    pub threshold: f64,
}

impl DetectorConfig {
    pub fn new(alpha: f64, df: u32, forgetting: f64) -> Result<Self> {
        if !(forgetting > 0.0 && forgetting < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "forgetting rate must lie in (0, 1), got {forgetting}"
            )));
        }
        let quantile = chi2_quantile(df, alpha)?;
        Ok(Self {
            alpha,
            df,
            forgetting,
            quantile,
            threshold: quantile / (1.0 - forgetting),
        })
    }
}

/// CUSUM accumulator, `S[0] = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectorState {
    pub s: f64,
    pub steps: u64,
}

/// `S' = φ S + stat`; alarm when `S' > χ²_df(α) / (1 - φ)`.
pub fn cusum_update(
    state: DetectorState,
    stat: f64,
    config: &DetectorConfig,
) -> (DetectorState, bool) {
    debug_assert!(stat >= 0.0, "statistic must be nonnegative");
    let s = config.forgetting * state.s + stat.max(0.0);
    (
        DetectorState {
            s,
            steps: state.steps + 1,
        },
        s > config.threshold,
    )
}

/// Fraction of attacked steps (`d ≠ 0`) whose per-step statistic does not
/// exceed the quantile.
pub fn false_negative_rate(stats: &[f64], quantile: f64, truth: &[DVector<f64>]) -> Result<f64> {
    if stats.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} statistics for {} truth vectors",
            stats.len(),
            truth.len()
        )));
    }
    let mut attacked = 0usize;
    let mut missed = 0usize;
    for (&s, d) in stats.iter().zip(truth) {
        if d.iter().any(|&v| v != 0.0) {
            attacked += 1;
            if s <= quantile {
                missed += 1;
            }
        }
    }
    if attacked == 0 {
        return Err(Error::UndefinedRate);
    }
    Ok(missed as f64 / attacked as f64)
}
