//! Two-sample t-tests with p-values from the regularized incomplete beta
//! function (Lentz continued fraction).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

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

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
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
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
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
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `x` in `[0, 1]`, `a, b > 0`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// Two-sided tail probability of Student's t distribution.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, 0.5 * df, 0.5).clamp(0.0, 1.0)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

fn check_sizes(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "t-test needs at least 2 samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn degenerate(mean_a: f64, mean_b: f64, df: f64) -> TTestResult {
    if mean_a == mean_b {
        TTestResult { t: 0.0, df, p: 1.0 }
    } else {
        let t = if mean_a > mean_b {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        TTestResult { t, df, p: 0.0 }
    }
}

/// Pooled-variance two-sample t-test of equal means.
pub fn t_test_equal_mean(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    check_sizes(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    if !(se > 0.0) {
        return Ok(degenerate(ma, mb, df));
    }
    let t = (ma - mb) / se;
    Ok(TTestResult {
        t,
        df,
        p: student_t_two_sided_p(t, df),
    })
}

/// Welch's unequal-variance t-test (Welch-Satterthwaite degrees of freedom).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    check_sizes(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    if !(se2 > 0.0) {
        return Ok(degenerate(ma, mb, na + nb - 2.0));
    }
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let t = (ma - mb) / se2.sqrt();
    Ok(TTestResult {
        t,
        df,
        p: student_t_two_sided_p(t, df),
    })
}

/// Engaged unless the equal-mean hypothesis is rejected (`p < alpha`).
pub fn cognitive_presence(result: &TTestResult, alpha: f64) -> bool {
    !(result.p < alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn identical_samples() {
        let r = t_test_equal_mean(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
        assert_eq!(r.df, 8.0);
    }

    #[test]
    fn zero_variance_rules() {
        let r = t_test_equal_mean(&[10.0; 3], &[20.0; 3]).unwrap();
        assert_eq!(r.p, 0.0);
        let r = t_test_equal_mean(&[10.0; 3], &[10.0; 4]).unwrap();
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn insufficient_samples() {
        assert!(matches!(
            t_test_equal_mean(&[1.0], &[1.0, 2.0]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn alpha_boundary_is_strict() {
        let at = |p| TTestResult { t: 0.0, df: 4.0, p };
        assert!(cognitive_presence(&at(1.0), 0.001));
        assert!(!cognitive_presence(&at(0.0005), 0.001));
        assert!(cognitive_presence(&at(0.001), 0.001));
    }

    #[test]
    fn welch_equals_student_for_equal_sizes_and_variances() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 3.0, 4.0, 5.0];
        let s = t_test_equal_mean(&a, &b).unwrap();
        let w = welch_t_test(&a, &b).unwrap();
        assert!((s.t - w.t).abs() < 1e-12);
        assert!((s.p - w.p).abs() < 1e-12);
    }

    #[test]
    fn symmetric_beta_identity() {
        for &(x, a, b) in &[(0.3, 2.0, 0.5), (0.9, 10.0, 0.5), (0.5, 3.0, 3.0)] {
            let lhs = regularized_incomplete_beta(x, a, b);
            let rhs = 1.0 - regularized_incomplete_beta(1.0 - x, b, a);
            assert!((lhs - rhs).abs() < 1e-13);
        }
    }
}
