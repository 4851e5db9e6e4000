//! Log-log rate fitting and the Kendall trend test.

/// Ordinary least squares fit `y ≈ a + b·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the residuals.
    pub residual_rms: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    Some(LinearFit {
        slope,
        intercept,
        residual_rms: (ss / nf).sqrt(),
    })
}

/// Fits `error ≈ C·ε^slope` by least squares on `(ln ε, ln error)`.
pub fn loglog_fit(eps: &[f64], err: &[f64]) -> Option<LinearFit> {
    if err.iter().chain(eps).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = eps.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    ols(&lx, &ly)
}

/// Result of the one-sided Kendall test for an increasing trend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KendallTrend {
    pub tau: f64,
    /// Probability, under exchangeability, of a concordance at least as large.
    pub p_value: f64,
}

/// Exact one-sided Kendall test of `H₁: values increase along the sequence`.
/// Ties count as half-discordant. Uses the exact permutation distribution of
/// the inversion count, so it is valid for the short sequences of an ε sweep.
pub fn kendall_increasing(values: &[f64]) -> KendallTrend {
    let n = values.len();
    if n < 2 {
        return KendallTrend { tau: 0.0, p_value: 1.0 };
    }
    let pairs = n * (n - 1) / 2;
    // Twice the discordance, to keep half-counted ties integral.
    let mut disc2 = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if values[i] > values[j] {
                disc2 += 2;
            } else if values[i] == values[j] {
                disc2 += 1;
            }
        }
    }
    let tau = 1.0 - disc2 as f64 / pairs as f64;
    // Number of permutations of n elements with k inversions.
    let mut counts = vec![1.0f64];
    for len in 2..=n {
        let mut next = vec![0.0; counts.len() + len - 1];
        for (k, &c) in counts.iter().enumerate() {
            for extra in 0..len {
                next[k + extra] += c;
            }
        }
        counts = next;
    }
    let total: f64 = counts.iter().sum();
    let kmax = disc2 / 2;
    let tail: f64 = counts.iter().take(kmax + 1).sum();
    KendallTrend {
        tau,
        p_value: tail / total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let half: Vec<f64> = eps.iter().map(|e: &f64| 3.0 * e.sqrt()).collect();
        let one: Vec<f64> = eps.iter().map(|e| 0.7 * e).collect();
        let f = loglog_fit(&eps, &half).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!(f.residual_rms < 1e-12);
        let f = loglog_fit(&eps, &one).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_errors_not_fitted() {
        assert!(loglog_fit(&[0.1, 0.2], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn kendall_perfect_increase_of_four() {
        let k = kendall_increasing(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(k.tau, 1.0);
        assert!((k.p_value - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn kendall_one_swap() {
        let k = kendall_increasing(&[1.0, 3.0, 2.0, 4.0]);
        assert!((k.tau - (1.0 - 2.0 / 6.0)).abs() < 1e-15);
        assert!((k.p_value - 4.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn kendall_decreasing_is_insignificant() {
        let k = kendall_increasing(&[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(k.tau, -1.0);
        assert_eq!(k.p_value, 1.0);
    }

    #[test]
    fn kendall_distribution_sums_to_one() {
        // Mahonian numbers for n = 5 sum to 5! = 120.
        let k = kendall_increasing(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(k.p_value, 1.0);
        let k = kendall_increasing(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((k.p_value - 1.0 / 120.0).abs() < 1e-15);
    }
}
