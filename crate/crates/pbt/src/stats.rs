//! Welch's t-test and the Student-t tail probability it needs.
//!
//! The tail probability is computed through the regularized incomplete beta
//! function: for t ≥ 0, P(T > t) = I_x(ν/2, 1/2)/2 with x = ν/(ν + t²).
//! Accuracy target: absolute error ≤ 1e-10 for ν ∈ [1, 1e6], |t| ≤ 50, which
//! rules out the naive ln Γ(a)+ln Γ(b)−ln Γ(a+b) beta factor (catastrophic
//! cancellation at large ν); ln B(a,b) is assembled from Stirling-error terms
//! instead.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample too short: need at least 2 values, got {0}")]
    SampleTooShort(usize),
    #[error("non-finite sample value: {0}")]
    NonFiniteSample(f64),
    #[error("degrees of freedom must be positive, got {0}")]
    InvalidDf(f64),
}

/// Result of Welch's unequal-variance two-sample t-test comparing a
/// candidate sample `y` against a reference sample `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    /// (mean(y) − mean(x)) / sqrt(s²_x/n_x + s²_y/n_y)
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Upper-tail probability of Student-t(df) at t: small values mean the
    /// candidate's mean credibly exceeds the reference's.
    pub p_one_sided: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Welch's t-test of candidate `y` against reference `x`.
///
/// Degenerate zero-variance samples are resolved by decision rather than
/// formula: equal means give (t=0, p=0.5); differing means give p=0 with t
/// reported as ±∞ by the sign of the mean difference.
pub fn welch_t(x: &[f64], y: &[f64]) -> Result<WelchResult, StatsError> {
    for xs in [x, y] {
        if xs.len() < 2 {
            return Err(StatsError::SampleTooShort(xs.len()));
        }
        if let Some(&v) = xs.iter().find(|v| !v.is_finite()) {
            return Err(StatsError::NonFiniteSample(v));
        }
    }
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (mx, my) = (mean(x), mean(y));
    let (vx, vy) = (sample_variance(x, mx), sample_variance(y, my));
    let (ax, ay) = (vx / nx, vy / ny);
    let se2 = ax + ay;

    if se2 == 0.0 {
        let fallback_df = nx + ny - 2.0;
        return Ok(if my == mx {
            WelchResult { t: 0.0, df: fallback_df, p_one_sided: 0.5 }
        } else {
            WelchResult {
                t: if my > mx { f64::INFINITY } else { f64::NEG_INFINITY },
                df: fallback_df,
                p_one_sided: 0.0,
            }
        });
    }

    let t = (my - mx) / se2.sqrt();
    let df = se2 * se2 / (ax * ax / (nx - 1.0) + ay * ay / (ny - 1.0));
    let p_one_sided = student_t_upper_tail(t, df)?;
    Ok(WelchResult { t, df, p_one_sided })
}

/// P(T > t) for Student-t with `df` degrees of freedom.
pub fn student_t_upper_tail(t: f64, df: f64) -> Result<f64, StatsError> {
    if !df.is_finite() || df <= 0.0 {
        return Err(StatsError::InvalidDf(df));
    }
    if t == 0.0 {
        return Ok(0.5);
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 0.0 } else { 1.0 });
    }
    // x = ν/(ν+t²); its logs are taken from t² and ν directly because
    // a·ln(x) with a = ν/2 amplifies the rounding of x itself at large ν
    let t2 = t * t;
    let denom = df + t2;
    let x = df / denom;
    let one_minus_x = t2 / denom;
    let ln_x = -(t2 / df).ln_1p();
    let ln_1mx = t2.ln() - denom.ln();
    let tail = 0.5 * reg_inc_beta(0.5 * df, 0.5, x, one_minus_x, ln_x, ln_1mx);
    Ok(if t > 0.0 { tail } else { 1.0 - tail })
}

#[allow(clippy::excessive_precision)]
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

/// Lanczos approximation of ln Γ(z) for z > 0 (g = 7, 9 terms).
#[allow(clippy::excessive_precision)] // canonical published coefficients
fn ln_gamma(z: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(z > 0.0);
    let z = z - 1.0;
    let mut sum = 0.999_999_999_999_809_93;
    for (i, c) in COEF.iter().enumerate() {
        sum += c / (z + (i + 1) as f64);
    }
    let t = z + 7.5;
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + sum.ln()
}

/// Stirling error: ln Γ(z) − [ln √(2π) + (z − 1/2) ln z − z].
fn stirlerr(z: f64) -> f64 {
    if z < 16.0 {
        return ln_gamma(z) - (LN_SQRT_2PI + (z - 0.5) * z.ln() - z);
    }
    // asymptotic series; for z >= 16 the truncation error is < 1e-17
    let w = 1.0 / (z * z);
    (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - (1.0 / 1680.0 - w / 1188.0) * w) * w) * w) / z
}

/// ln B(a, b) without large-argument cancellation.
fn ln_beta(a: f64, b: f64) -> f64 {
    let s = a + b;
    stirlerr(a) + stirlerr(b) - stirlerr(s) + LN_SQRT_2PI - 0.5 * s.ln()
        + (a - 0.5) * (-b / s).ln_1p()
        + (b - 0.5) * (-a / s).ln_1p()
}

/// Regularized incomplete beta I_x(a, b) via the continued fraction
/// (modified Lentz), switching to the symmetric form for fast convergence.
/// The caller supplies 1−x and both logs computed from unrounded quantities.
fn reg_inc_beta(a: f64, b: f64, x: f64, one_minus_x: f64, ln_x: f64, ln_1mx: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0 && (0.0..=1.0).contains(&x));
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front = a * ln_x + b * ln_1mx - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() / a) * beta_cont_frac(a, b, x)
    } else {
        1.0 - (ln_front.exp() / b) * beta_cont_frac(b, a, one_minus_x)
    }
}

fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
