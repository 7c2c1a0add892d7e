//! Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.

use crate::error::{contract, Result};
use std::f64::consts::PI;

const SERIES_TOL: f64 = 1e-12;
/// Below this λ the alternating series needs many terms; the equivalent
/// Jacobi-theta form converges in a handful.
const THETA_SWITCH: f64 = 1.18;

/// `sup |F₁ − F₂|` by a merged sweep over both sorted samples. Tied values
/// are consumed from both sides before the gap is measured.
pub fn ks_statistic(s1: &[f64], s2: &[f64]) -> Result<f64> {
    if s1.is_empty() || s2.is_empty() {
        return contract("ks_statistic needs two non-empty samples");
    }
    if s1.iter().chain(s2).any(|v| v.is_nan()) {
        return contract("ks_statistic input contains NaN");
    }
    let mut a = s1.to_vec();
    let mut b = s2.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    Ok(d)
}

/// Kolmogorov survival function `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} e^{−2j²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let q = if lambda < THETA_SWITCH {
        // 1 − (√(2π)/λ) Σ_{j≥1} exp(−(2j−1)²π² / (8λ²))
        let mut sum = 0.0;
        for j in 1.. {
            let k = (2 * j - 1) as f64;
            let term = (-k * k * PI * PI / (8.0 * lambda * lambda)).exp();
            sum += term;
            if term < SERIES_TOL * sum.max(f64::MIN_POSITIVE) || term == 0.0 {
                break;
            }
        }
        1.0 - (2.0 * PI).sqrt() / lambda * sum
    } else {
        let mut sum = 0.0f64;
        let mut sign = 1.0;
        for j in 1.. {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            if term == 0.0 || (j > 1 && term < SERIES_TOL * sum.abs()) {
                break;
            }
            sum += sign * term;
            sign = -sign;
        }
        2.0 * sum
    };
    q.clamp(0.0, 1.0)
}

/// Asymptotic two-sample p-value with the small-sample correction
/// `λ = d (√m + 0.12 + 0.11/√m)`, `m = n₁n₂/(n₁+n₂)`.
pub fn ks_pvalue(d: f64, n1: usize, n2: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&d) || n1 == 0 || n2 == 0 {
        return contract(format!("ks_pvalue needs d in [0, 1] and n1, n2 >= 1 (d={d}, n1={n1}, n2={n2})"));
    }
    if d == 0.0 {
        return Ok(1.0);
    }
    let m = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let sm = m.sqrt();
    Ok(kolmogorov_q(d * (sm + 0.12 + 0.11 / sm)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let s = [0.3, -1.0, 2.0, 2.0];
        assert_eq!(ks_statistic(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_supports() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), 1.0);
    }

    #[test]
    fn small_hand_case() {
        // ECDF gaps at 1, 2, 2.5, 3, 3.5: 1/3, 2/3, 1/6, 1/2, 0.
        let d = ks_statistic(&[1.0, 2.0, 3.0], &[2.5, 3.5]).unwrap();
        assert_eq!(d, 2.0 / 3.0);
    }

    #[test]
    fn ties_are_consumed_together() {
        assert_eq!(ks_statistic(&[1.0, 1.0], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(ks_statistic(&[], &[1.0]).is_err());
    }

    #[test]
    fn pvalue_edges() {
        assert_eq!(ks_pvalue(0.0, 5, 7).unwrap(), 1.0);
        assert!(ks_pvalue(1.0, 100, 100).unwrap() < 1e-12);
        assert!(ks_pvalue(1.5, 1, 1).is_err());
    }

    #[test]
    fn far_tail_is_not_flushed_to_zero() {
        let q = kolmogorov_q(5.0);
        let lead = 2.0 * (-50.0f64).exp();
        assert!(q > 0.0 && ((q - lead) / lead).abs() < 1e-12);
    }

    #[test]
    fn theta_and_alternating_forms_agree_at_switch() {
        let lam = THETA_SWITCH;
        let mut alt = 0.0;
        for j in 1..200 {
            let jf = j as f64;
            alt += if j % 2 == 1 { 2.0 } else { -2.0 } * (-2.0 * jf * jf * lam * lam).exp();
        }
        assert!((kolmogorov_q(lam - 1e-15) - alt).abs() < 1e-13);
        assert!((kolmogorov_q(lam) - alt).abs() < 1e-13);
    }
}
