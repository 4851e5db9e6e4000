//! Sampling checks of the standing structural assumptions on a system.

use std::fmt;

use super::spec::{axis_samples, for_each_point, HamiltonianSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hypothesis {
    /// Finite, continuous and periodic in `y` (and in `x` with the slow period).
    H1,
    /// Coercive in `p`, consistent with the declared coercivity radius.
    H2,
    /// Convex in `p`.
    H3,
    /// Lipschitz in `x` with constant `lip_x`.
    H4,
    /// Lipschitz in `u` with constant `Θ` in the max norm.
    H5,
    /// Invariant under `u ↦ u + c𝟙`.
    H6,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 6] = [
        Hypothesis::H1,
        Hypothesis::H2,
        Hypothesis::H3,
        Hypothesis::H4,
        Hypothesis::H5,
        Hypothesis::H6,
    ];
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone)]
pub struct HypothesisCheck {
    pub hypothesis: Hypothesis,
    /// False when the check does not apply (H6 on specs that do not declare it).
    pub checked: bool,
    pub passed: bool,
    /// Largest sampled violation; 0 or negative means no violation.
    pub worst_violation: f64,
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub spec: String,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn get(&self, h: Hypothesis) -> &HypothesisCheck {
        self.checks.iter().find(|c| c.hypothesis == h).expect("every hypothesis is reported")
    }

    pub fn passed(&self, h: Hypothesis) -> bool {
        self.get(h).passed
    }

    /// True when every checked hypothesis in `hs` passed.
    pub fn all_passed(&self, hs: &[Hypothesis]) -> bool {
        hs.iter().all(|&h| {
            let c = self.get(h);
            !c.checked || c.passed
        })
    }
}

impl fmt::Display for HypothesisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = match (c.checked, c.passed) {
                (false, _) => "n/a ",
                (true, true) => "pass",
                (true, false) => "FAIL",
            };
            writeln!(f, "{}: {} {} (worst violation {:.3e})", self.spec, c.hypothesis, status, c.worst_violation)?;
        }
        Ok(())
    }
}

/// Sample grids for [`check_hypotheses`]. `x` and `y` hold per-axis coordinates
/// (tensorised in 2D), `p` per-axis momenta and `u` per-component coupling values.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub u: Vec<f64>,
    /// Levels at which the declared coercivity radius is tested.
    pub levels: Vec<f64>,
    pub tol: f64,
}

impl SamplePlan {
    pub fn for_spec(spec: &HamiltonianSpec) -> Self {
        let nx = if spec.is_x_dependent() { 8 } else { 2 };
        let ny = if spec.has_fast_variable() { 24 } else { 1 };
        SamplePlan {
            x: axis_samples(spec.slow_period(), nx),
            y: axis_samples(1.0, ny),
            p: (0..=16).map(|k| -3.0 + 6.0 * k as f64 / 16.0).collect(),
            u: (0..5).map(|k| -2.0 + k as f64).collect(),
            levels: vec![0.0, 1.0, 10.0],
            tol: 1e-9,
        }
    }

    /// Replaces the coupling samples with `count` points on `[−radius, radius]`.
    pub fn with_u_box(mut self, radius: f64, count: usize) -> Self {
        let count = count.max(2);
        self.u = (0..count)
            .map(|k| -radius + 2.0 * radius * k as f64 / (count - 1) as f64)
            .collect();
        self
    }

    fn u_points(&self, m: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![]];
        for _ in 0..m {
            out = out
                .into_iter()
                .flat_map(|v| {
                    self.u.iter().map(move |&c| {
                        let mut w = v.clone();
                        w.push(c);
                        w
                    })
                })
                .collect();
        }
        out
    }
}

fn periodic_distance(a: &[f64], b: &[f64], period: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(s, t)| {
            let d = (s - t).abs() % period;
            let d = d.min(period - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn points(n: usize, axis: &[f64]) -> Vec<Vec<f64>> {
    let mut v = Vec::new();
    for_each_point(n, axis, |p| v.push(p.to_vec()));
    v
}

/// Checks (H1)–(H6) on the sample plan. Each entry records the largest sampled
/// violation; (H6) is only checked when the spec declares shift invariance.
pub fn check_hypotheses(spec: &HamiltonianSpec, plan: &SamplePlan) -> HypothesisReport {
    let n = spec.n();
    let m = spec.m();
    let xs = points(n, &plan.x);
    let ys = points(n, &plan.y);
    let ps = points(n, &plan.p);
    let us = plan.u_points(m);
    let u_box = plan.u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let h = |i: usize, x: &[f64], y: &[f64], p: &[f64], u: &[f64]| spec.eval(i, x, y, p, u);
    let sparse_p: Vec<Vec<f64>> = ps.iter().step_by(4).cloned().collect();
    let sparse_y: Vec<Vec<f64>> = ys.iter().step_by(3).cloned().collect();

    // H1: finiteness and periodicity.
    let mut h1: f64 = 0.0;
    for i in 0..m {
        for x in &xs {
            for y in &ys {
                for p in &sparse_p {
                    for u in &us {
                        let v = h(i, x, y, p, u);
                        if !v.is_finite() {
                            h1 = f64::INFINITY;
                            continue;
                        }
                        let y1: Vec<f64> = y.iter().map(|c| c + 1.0).collect();
                        let x1: Vec<f64> = x.iter().map(|c| c + spec.slow_period()).collect();
                        h1 = h1.max((h(i, x, &y1, p, u) - v).abs());
                        h1 = h1.max((h(i, &x1, y, p, u) - v).abs());
                    }
                }
            }
        }
    }

    // H2: H > level outside the declared radius.
    let mut h2 = f64::NEG_INFINITY;
    let dirs: Vec<Vec<f64>> = if n == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        (0..8)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 4.0;
                vec![a.cos(), a.sin()]
            })
            .collect()
    };
    for i in 0..m {
        for &level in &plan.levels {
            let r = spec.coercivity_radius(i, level, u_box);
            if !r.is_finite() {
                h2 = f64::INFINITY;
                continue;
            }
            for scale in [1.0 + 1e-9, 1.5, 2.0, 4.0] {
                for d in &dirs {
                    let p: Vec<f64> = d.iter().map(|c| c * (r * scale).max(1e-12)).collect();
                    for x in &xs {
                        for y in &ys {
                            for u in &us {
                                h2 = h2.max(level - h(i, x, y, &p, u));
                            }
                        }
                    }
                }
            }
        }
    }

    // H3: midpoint convexity along axes (and the diagonal in 2D).
    let mut h3 = f64::NEG_INFINITY;
    let dp = (plan.p[1] - plan.p[0]).abs().max(1e-3);
    let steps: Vec<Vec<f64>> = if n == 1 {
        vec![vec![dp]]
    } else {
        vec![vec![dp, 0.0], vec![0.0, dp], vec![dp, dp], vec![dp, -dp]]
    };
    for i in 0..m {
        for x in &xs {
            for y in &ys {
                for u in us.iter().step_by(3) {
                    for p in &ps {
                        let c = h(i, x, y, p, u);
                        for s in &steps {
                            let pa: Vec<f64> = p.iter().zip(s).map(|(a, b)| a - b).collect();
                            let pb: Vec<f64> = p.iter().zip(s).map(|(a, b)| a + b).collect();
                            let slack = h(i, x, y, &pa, u) + h(i, x, y, &pb, u) - 2.0 * c;
                            h3 = h3.max(-slack);
                        }
                    }
                }
            }
        }
    }

    // H4: Lipschitz in x.
    let mut h4 = f64::NEG_INFINITY;
    for i in 0..m {
        for (a, xa) in xs.iter().enumerate() {
            for xb in xs.iter().skip(a + 1) {
                let d = periodic_distance(xa, xb, spec.slow_period());
                for y in &sparse_y {
                    for p in &sparse_p {
                        for u in us.iter().step_by(2) {
                            let diff = (h(i, xa, y, p, u) - h(i, xb, y, p, u)).abs();
                            h4 = h4.max(diff - spec.lip_x() * d);
                        }
                    }
                }
            }
        }
    }
    if xs.len() < 2 {
        h4 = 0.0;
    }

    // H5: Lipschitz in u (max norm).
    let mut h5 = f64::NEG_INFINITY;
    for i in 0..m {
        for x in xs.iter().step_by(2) {
            for y in &sparse_y {
                for p in &sparse_p {
                    let vals: Vec<f64> = us.iter().map(|u| h(i, x, y, p, u)).collect();
                    for a in 0..us.len() {
                        for b in (a + 1)..us.len() {
                            let du = us[a]
                                .iter()
                                .zip(&us[b])
                                .map(|(s, t)| (s - t).abs())
                                .fold(0.0f64, f64::max);
                            h5 = h5.max((vals[a] - vals[b]).abs() - spec.theta() * du);
                        }
                    }
                }
            }
        }
    }

    // H6: shift invariance.
    let mut h6 = f64::NEG_INFINITY;
    if spec.is_shift_invariant() {
        for i in 0..m {
            for x in xs.iter().step_by(2) {
                for y in &sparse_y {
                    for p in &sparse_p {
                        for u in &us {
                            let base = h(i, x, y, p, u);
                            for c in [-1.5, 0.25, 3.0] {
                                let us2: Vec<f64> = u.iter().map(|v| v + c).collect();
                                h6 = h6.max((h(i, x, y, p, &us2) - base).abs());
                            }
                        }
                    }
                }
            }
        }
    }

    let tol = plan.tol;
    let mk = |hyp, checked: bool, worst: f64| HypothesisCheck {
        hypothesis: hyp,
        checked,
        passed: !checked || worst <= tol,
        worst_violation: if checked { worst } else { 0.0 },
    };
    HypothesisReport {
        spec: spec.name().to_string(),
        checks: vec![
            mk(Hypothesis::H1, true, h1),
            mk(Hypothesis::H2, true, h2),
            mk(Hypothesis::H3, true, h3),
            mk(Hypothesis::H4, true, h4),
            mk(Hypothesis::H5, true, h5),
            mk(Hypothesis::H6, spec.is_shift_invariant(), h6),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::problems::{quadratic_coupling_counterexample, Problem, BUILTINS};

    const STANDING: [Hypothesis; 5] = [
        Hypothesis::H1,
        Hypothesis::H2,
        Hypothesis::H3,
        Hypothesis::H4,
        Hypothesis::H5,
    ];

    #[test]
    fn builtins_pass() {
        for id in BUILTINS {
            let p = Problem::by_name(id).unwrap();
            let plan = SamplePlan::for_spec(&p.spec).with_u_box(50.0, 5);
            let r = check_hypotheses(&p.spec, &plan);
            assert!(r.all_passed(&Hypothesis::ALL), "{r}");
        }
    }

    #[test]
    fn counterexample_fails_only_lipschitz_coupling() {
        let spec = quadratic_coupling_counterexample(1.0);
        let plan = SamplePlan::for_spec(&spec).with_u_box(1e3, 5);
        let r = check_hypotheses(&spec, &plan);
        assert!(r.passed(Hypothesis::H6), "{r}");
        assert!(!r.passed(Hypothesis::H5), "{r}");
        assert!(r.get(Hypothesis::H5).worst_violation > 1e5);
    }

    #[test]
    fn decoupled_spec_has_zero_coupling_slack() {
        let spec = crate::model::problems::mechanical(crate::model::problems::Potential::Tent, 1);
        let r = check_hypotheses(&spec, &SamplePlan::for_spec(&spec));
        assert!(r.all_passed(&STANDING));
        assert_eq!(r.get(Hypothesis::H5).worst_violation, 0.0);
        assert!(!r.get(Hypothesis::H6).checked);
    }

    #[test]
    fn understated_lipschitz_constant_fails() {
        let p = Problem::by_name("eikonal-1d").unwrap();
        let spec = p.spec.clone().with_slow(0.5, 1.0);
        let r = check_hypotheses(&spec, &SamplePlan::for_spec(&spec));
        assert!(!r.passed(Hypothesis::H4));
    }

    #[test]
    fn concave_hamiltonian_fails_convexity() {
        let spec = HamiltonianSpec::new("concave", 1, 1, |_, _, _, p, _| -0.5 * p[0] * p[0] + p[0].powi(4))
            .with_coercivity(|_, l, _| 2.0 + l.max(0.0).sqrt());
        let r = check_hypotheses(&spec, &SamplePlan::for_spec(&spec));
        assert!(!r.passed(Hypothesis::H3));
        assert!(r.passed(Hypothesis::H2));
    }
}
