//! t-tests, Stouffer's Z combination and least-squares correlation.

pub mod normal;
pub mod student;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normal::{normal_cdf, normal_cdf_inverse, normal_sf};
pub use student::{regularized_incomplete_beta, student_t_cdf, student_t_sf};

/// Stouffer inputs are clamped into `[P_CLAMP, 1 - P_CLAMP]`.
pub const P_CLAMP: f64 = 1e-15;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("probability {0} outside (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("x values have zero variance")]
    ZeroVariance,
    #[error("non-finite input")]
    NonFinite,
    #[error("no p-values to combine")]
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    #[default]
    Welch,
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    /// `P(T >= t)`: evidence that A exceeds B.
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Both samples constant with different means.
    pub infinite_t: bool,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn finish(t: f64, df: f64, mean_a: f64, mean_b: f64) -> TTestResult {
    let p_one = student_t_sf(t, df);
    TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_one_sided: p_one,
        p_two_sided: (2.0 * p_one.min(1.0 - p_one)).min(1.0),
        mean_a,
        mean_b,
        infinite_t: false,
    }
}

fn constant_samples(mean_a: f64, mean_b: f64, df: f64) -> TTestResult {
    if mean_a == mean_b {
        TTestResult {
            t_statistic: 0.0,
            degrees_of_freedom: df,
            p_one_sided: 0.5,
            p_two_sided: 1.0,
            mean_a,
            mean_b,
            infinite_t: false,
        }
    } else {
        let up = mean_a > mean_b;
        TTestResult {
            t_statistic: if up { f64::INFINITY } else { f64::NEG_INFINITY },
            degrees_of_freedom: df,
            p_one_sided: if up { 0.0 } else { 1.0 },
            p_two_sided: 0.0,
            mean_a,
            mean_b,
            infinite_t: true,
        }
    }
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooFewSamples {
                needed: 2,
                got: s.len(),
            });
        }
        check_finite(s)?;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let (qa, qb) = (var_a / na, var_b / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        return Ok(constant_samples(mean_a, mean_b, na + nb - 2.0));
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(finish(t, df, mean_a, mean_b))
}

/// Paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: a.len(),
        });
    }
    check_finite(a)?;
    check_finite(b)?;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let (mean_d, var_d) = mean_var(&diffs);
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    if var_d == 0.0 {
        let mut r = constant_samples(mean_d, 0.0, n - 1.0);
        r.mean_a = mean_a;
        r.mean_b = mean_b;
        return Ok(r);
    }
    let t = mean_d / (var_d / n).sqrt();
    Ok(finish(t, n - 1.0, mean_a, mean_b))
}

pub fn t_test(kind: TTestKind, a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    match kind {
        TTestKind::Welch => welch_t_test(a, b),
        TTestKind::Paired => paired_t_test(a, b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedTest {
    /// Component one-sided p-values after clamping.
    pub p_values: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub combined_z: f64,
    pub combined_p: f64,
    /// How many inputs were clamped away from 0 or 1.
    pub n_clamped: usize,
    pub method: String,
}

/// Stouffer's Z: `Z = sum(Φ⁻¹(1 - p_i)) / sqrt(k)`, `p = 1 - Φ(Z)`.
pub fn stouffer_combine(p_values: &[f64]) -> Result<CombinedTest, StatsError> {
    if p_values.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut n_clamped = 0;
    let mut ps = Vec::with_capacity(p_values.len());
    let mut zs = Vec::with_capacity(p_values.len());
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(StatsError::ProbabilityOutOfRange(p));
        }
        let clamped = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
        if clamped != p {
            n_clamped += 1;
            log::warn!("p-value {p} clamped to {clamped} for Stouffer combination");
        }
        ps.push(clamped);
        // Φ⁻¹(1 - p) = -Φ⁻¹(p), which avoids rounding 1 - p for tiny p
        zs.push(-normal_cdf_inverse(clamped)?);
    }
    let k = zs.len() as f64;
    let z = zs.iter().sum::<f64>() / k.sqrt();
    Ok(CombinedTest {
        p_values: ps,
        z_scores: zs,
        combined_z: z,
        combined_p: normal_sf(z),
        n_clamped,
        method: "stouffer".to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Ordinary least squares fit of `ys` on `xs` with Pearson correlation.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(StatsError::TooFewSamples {
            needed: 3,
            got: xs.len(),
        });
    }
    check_finite(xs)?;
    check_finite(ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let slope = sxy / sxx;
    let r = if syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    };
    Ok(CorrelationResult {
        slope,
        intercept: my - slope * mx,
        r,
        r_squared: r * r,
        n_points: xs.len(),
    })
}

/// `***` below 0.001, `*` below 0.05.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}
