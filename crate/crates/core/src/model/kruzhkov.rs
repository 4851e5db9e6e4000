use super::spec::HamiltonianSpec;
use super::SystemHamiltonian;
use crate::error::{precondition, Result};

/// The time-dependent system
/// `H^λ_i(x, t, y, p, u) = λu_i + e^{−λt} H_i(x, y, e^{λt}p, e^{λt}u)`
/// satisfied by `v = e^{−λt}u`. For `λ > Θ` it is strictly monotone in `u`.
#[derive(Clone, Debug)]
pub struct KruzhkovSpec {
    base: HamiltonianSpec,
    lambda: f64,
}

/// Lower bound of `(H^λ_ℓ(u¹) − H^λ_ℓ(u²)) / (u¹_ℓ − u²_ℓ)` over sampled ordered
/// pairs whose largest difference sits at component ℓ.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicityCertificate {
    pub min_ratio: f64,
    pub required: f64,
    pub pairs: usize,
}

impl MonotonicityCertificate {
    pub fn holds(&self) -> bool {
        self.min_ratio >= self.required - 1e-9
    }
}

pub fn kruzhkov_transform(spec: &HamiltonianSpec, lambda: f64) -> Result<KruzhkovSpec> {
    if !(lambda > spec.theta()) {
        return precondition(format!(
            "monotonization needs lambda > theta (lambda = {lambda}, theta = {})",
            spec.theta()
        ));
    }
    Ok(KruzhkovSpec {
        base: spec.clone(),
        lambda,
    })
}

impl KruzhkovSpec {
    pub fn base(&self) -> &HamiltonianSpec {
        &self.base
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eval(&self, i: usize, x: &[f64], t: f64, y: &[f64], p: &[f64], u: &[f64]) -> f64 {
        let g = (self.lambda * t).exp();
        let mut ps = [0.0; 2];
        let mut us = [0.0; 8];
        for (k, &q) in p.iter().enumerate() {
            ps[k] = g * q;
        }
        let m = u.len();
        for (k, &c) in u.iter().enumerate() {
            us[k] = g * c;
        }
        self.lambda * u[i] + self.base.eval(i, x, y, &ps[..p.len()], &us[..m]) / g
    }

    /// Undoes the substitution: returns `H_i(x, y, p, u)` computed through `H^λ`.
    pub fn recover(&self, i: usize, x: &[f64], t: f64, y: &[f64], p: &[f64], u: &[f64]) -> f64 {
        let g = (self.lambda * t).exp();
        let pv: Vec<f64> = p.iter().map(|q| q / g).collect();
        let uv: Vec<f64> = u.iter().map(|c| c / g).collect();
        g * (self.eval(i, x, t, y, &pv, &uv) - self.lambda * uv[i])
    }

    /// Samples ordered pairs `u¹ ≥ u²` and records the smallest monotonicity ratio.
    pub fn monotonicity_certificate(&self, times: &[f64]) -> MonotonicityCertificate {
        let m = self.base.m();
        let n = self.base.n();
        let xs = [0.0, 0.37 * self.base.slow_period()];
        let ys = [0.0, 0.21, 0.5, 0.83];
        let ps = [-1.5, 0.0, 0.7];
        let bases = [-1.0, 0.0, 0.4];
        let mut min_ratio = f64::INFINITY;
        let mut pairs = 0;
        let mut d = vec![0.0; m];
        for &t in times {
            for ell in 0..m {
                for &a in &[0.05, 0.5, 1.5] {
                    // Other components move by 0, a/2 or a, never more than component ℓ.
                    let combos = 3usize.pow((m - 1) as u32);
                    for code in 0..combos {
                        let mut c = code;
                        for (j, dj) in d.iter_mut().enumerate() {
                            if j == ell {
                                *dj = a;
                            } else {
                                *dj = a * 0.5 * (c % 3) as f64;
                                c /= 3;
                            }
                        }
                        for &b in &bases {
                            let u2: Vec<f64> = (0..m).map(|j| b + 0.3 * j as f64).collect();
                            let u1: Vec<f64> = u2.iter().zip(&d).map(|(s, t)| s + t).collect();
                            for &xv in &xs {
                                for &yv in &ys {
                                    for &pv in &ps {
                                        let x = vec![xv; n];
                                        let y = vec![yv; n];
                                        let p = vec![pv; n];
                                        let dh = self.eval(ell, &x, t, &y, &p, &u1)
                                            - self.eval(ell, &x, t, &y, &p, &u2);
                                        min_ratio = min_ratio.min(dh / a);
                                        pairs += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        MonotonicityCertificate {
            min_ratio,
            required: self.lambda - self.base.theta(),
            pairs,
        }
    }
}

impl SystemHamiltonian for KruzhkovSpec {
    fn m(&self) -> usize {
        self.base.m()
    }
    fn n(&self) -> usize {
        self.base.n()
    }
    #[inline]
    fn value(&self, i: usize, x: &[f64], t: f64, y: &[f64], p: &[f64], u: &[f64]) -> f64 {
        self.eval(i, x, t, y, p, u)
    }
    fn coupling_lipschitz(&self) -> f64 {
        self.lambda + self.base.theta()
    }
    fn has_fast_variable(&self) -> bool {
        self.base.has_fast_variable()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::problems::{Problem, ProblemParams};

    #[test]
    fn quadratic_transform_matches_direct_substitution() {
        let spec = HamiltonianSpec::new("q", 1, 1, |_, _, _, p, _| 0.5 * p[0] * p[0]);
        let k = kruzhkov_transform(&spec, 1.0).unwrap();
        for &(t, p, u) in &[(0.0, 1.0, 0.5), (0.7, -2.0, 1.0), (2.0, 0.3, -4.0)] {
            let expect = u + 0.5 * f64::exp(t) * p * p;
            let got = k.eval(0, &[0.0], t, &[0.0], &[p], &[u]);
            assert!((got - expect).abs() < 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn lambda_at_theta_rejected() {
        let p = Problem::builtin("example11", &ProblemParams { theta: Some(0.5), ..Default::default() }).unwrap();
        assert!(kruzhkov_transform(&p.spec, 0.5).is_err());
        assert!(kruzhkov_transform(&p.spec, 0.5 + 1e-9).is_ok());
    }

    #[test]
    fn example11_monotonicity_slack() {
        let p = Problem::builtin("example11", &ProblemParams { coupling: Some(0.5), ..Default::default() }).unwrap();
        let lambda = 2.0 * p.spec.theta() + 1.0;
        let k = kruzhkov_transform(&p.spec, lambda).unwrap();
        let cert = k.monotonicity_certificate(&[0.0, 0.5, 1.0]);
        assert!(cert.holds(), "{cert:?}");
        assert!(cert.pairs > 100);
    }

    #[test]
    fn recover_inverts_transform() {
        let p = Problem::by_name("linear-coupling-2sys").unwrap();
        let k = kruzhkov_transform(&p.spec, 2.0).unwrap();
        let (x, y, q, u) = ([0.3], [0.77], [1.2], [0.4, -0.9]);
        for t in [0.0, 0.5, 1.0] {
            for i in 0..2 {
                let direct = p.spec.eval(i, &x, &y, &q, &u);
                let back = k.recover(i, &x, t, &y, &q, &u);
                assert!((direct - back).abs() < 1e-12, "{direct} {back}");
            }
        }
    }
}
