//! Statistical primitives for benchmark construction: interpolated quantiles,
//! IQR outlier filtering and Welch's two-sided t-test.

use crate::builder::ClassStats;
use crate::error::{Error, Result};

/// Linear-interpolation quantile (the common "type 7" convention) on sorted
/// data. `p` in [0,1].
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Retains values inside [Q1 - 1.5*IQR, Q3 + 1.5*IQR]. Survivor order is the
/// input order.
pub fn iqr_filter(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Domain("iqr_filter on empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo = q1 - 1.5 * iqr;
    let hi = q3 + 1.5 * iqr;
    Ok(values
        .iter()
        .copied()
        .filter(|v| *v >= lo && *v <= hi)
        .collect())
}

/// Two-sided p-value for Welch's unequal-variance t-test with
/// Welch–Satterthwaite degrees of freedom.
///
/// Degenerate inputs: both variances zero with unequal means gives p = 0 by
/// convention; both zero with equal means is undefined.
pub fn welch_p_value(a: &ClassStats, b: &ClassStats) -> Result<f64> {
    if a.n < 2 || b.n < 2 {
        return Err(Error::UndefinedTest(format!(
            "welch test requires n >= 2 per class (got {} and {})",
            a.n, b.n
        )));
    }
    if a.variance == 0.0 && b.variance == 0.0 {
        if a.mean == b.mean {
            return Err(Error::UndefinedTest(
                "both variances zero with equal means".into(),
            ));
        }
        return Ok(0.0);
    }
    let va_n = a.variance / a.n as f64;
    let vb_n = b.variance / b.n as f64;
    let se2 = va_n + vb_n;
    let t2 = (a.mean - b.mean).powi(2) / se2;
    let df = se2 * se2
        / (va_n * va_n / (a.n as f64 - 1.0) + vb_n * vb_n / (b.n as f64 - 1.0));
    // P(|T_df| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    let x = df / (df + t2);
    Ok(incomplete_beta_reg(df / 2.0, 0.5, x))
}

/// ln Γ via the Lanczos approximation (g = 7, 9 terms). Valid for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        // reflection formula
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b) via Lentz's continued fraction.
pub fn incomplete_beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_gamma(a) - ln_gamma(b) + ln_gamma(a + b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - incomplete_beta_reg(b, a, 1.0 - x)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
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
