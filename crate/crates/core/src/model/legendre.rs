use super::spec::HamiltonianSpec;
use crate::error::{precondition, Error, Result};
use crate::tolerances::TOL_LEGENDRE;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub(crate) fn golden_max(mut a: f64, mut b: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Maximizes a concave function over a box `[−r, r]^n` by a coarse grid search
/// followed by golden-section refinement along each axis. Returns the maximizer,
/// the maximum and whether the coarse argmax touched the box boundary.
pub(crate) fn concave_max(
    n: usize,
    radius: f64,
    samples: usize,
    mut f: impl FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64, bool) {
    let k = samples.max(5) | 1;
    let step = 2.0 * radius / (k - 1) as f64;
    let coord = |j: usize| -radius + step * j as f64;
    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![0usize; n];
    match n {
        1 => {
            for j in 0..k {
                let v = f(&[coord(j)]);
                if v > best {
                    best = v;
                    arg[0] = j;
                }
            }
        }
        _ => {
            for j1 in 0..k {
                for j0 in 0..k {
                    let v = f(&[coord(j0), coord(j1)]);
                    if v > best {
                        best = v;
                        arg = vec![j0, j1];
                    }
                }
            }
        }
    }
    let on_boundary = arg.iter().any(|&j| j == 0 || j == k - 1);
    let mut p: Vec<f64> = arg.iter().map(|&j| coord(j)).collect();
    let tol = 1e-10 * (1.0 + radius);
    if n == 1 {
        let (x, v) = golden_max(p[0] - step, p[0] + step, tol, |q| f(&[q]));
        if v > best {
            best = v;
            p[0] = x;
        }
        return (p, best, on_boundary);
    }
    // Coordinate ascent with shrinking brackets.
    let mut half = step;
    for _ in 0..60 {
        let before = best;
        for axis in 0..n {
            let centre = p[axis];
            let mut q = p.clone();
            let (x, v) = golden_max(centre - half, centre + half, tol, |s| {
                q[axis] = s;
                f(&q)
            });
            if v > best {
                best = v;
                p[axis] = x;
            }
        }
        if best - before <= 1e-15 * (1.0 + best.abs()) {
            half *= 0.5;
            if half < tol {
                break;
            }
        }
    }
    (p, best, on_boundary)
}

/// Numerical Legendre transform `L_i(x, y, v, u) = sup_p (p·v − H_i(x, y, p, u))`.
#[derive(Clone, Debug)]
pub struct LagrangianEvaluator {
    source: HamiltonianSpec,
    v_max: f64,
    p_search_radius: f64,
    p_samples: usize,
    prefer_closed_form: bool,
}

impl LagrangianEvaluator {
    /// The default search radius is the coercivity radius at level
    /// `sup|H(·,0,0)| + v_max²` and coupling bound `u_bound`, plus one.
    pub fn new(source: HamiltonianSpec, v_max: f64, u_bound: f64) -> Result<Self> {
        if !source.is_convex() {
            return precondition("Legendre transform needs a Hamiltonian convex in p");
        }
        if !(v_max > 0.0) {
            return precondition(format!("v_max must be positive, got {v_max}"));
        }
        let level = source.sup_at_rest(16) + v_max * v_max;
        let r = (0..source.m())
            .map(|i| source.coercivity_radius(i, level, u_bound))
            .fold(0.0f64, f64::max)
            + 1.0;
        if !r.is_finite() {
            return precondition("coercivity radius is not finite; supply a search radius");
        }
        let p_samples = if source.n() == 1 { 201 } else { 41 };
        Ok(LagrangianEvaluator {
            source,
            v_max,
            p_search_radius: r,
            p_samples,
            prefer_closed_form: true,
        })
    }

    pub fn with_radius(mut self, r: f64) -> Self {
        self.p_search_radius = r;
        self
    }

    pub fn with_samples(mut self, k: usize) -> Self {
        self.p_samples = k;
        self
    }

    /// Ignore any closed-form Lagrangian carried by the spec.
    pub fn numeric_only(mut self) -> Self {
        self.prefer_closed_form = false;
        self
    }

    pub fn source(&self) -> &HamiltonianSpec {
        &self.source
    }
    pub fn v_max(&self) -> f64 {
        self.v_max
    }
    pub fn p_search_radius(&self) -> f64 {
        self.p_search_radius
    }
    pub fn p_samples(&self) -> usize {
        self.p_samples
    }

    /// The conjugate computed numerically, regardless of any closed form.
    pub fn legendre_transform(&self, i: usize, x: &[f64], y: &[f64], v: &[f64], u: &[f64]) -> Result<f64> {
        let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if vn > self.v_max * (1.0 + 1e-12) {
            return precondition(format!("|v| = {vn} exceeds v_max = {}", self.v_max));
        }
        let (_, val, boundary) = concave_max(self.source.n(), self.p_search_radius, self.p_samples, |p| {
            let pv: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
            pv - self.source.eval(i, x, y, p, u)
        });
        if boundary {
            return Err(Error::Coercivity {
                component: i,
                v: v.to_vec(),
                radius: self.p_search_radius,
            });
        }
        Ok(val)
    }

    /// `L_i`, from the closed form when the spec carries one.
    #[inline]
    pub fn lagrangian(&self, i: usize, x: &[f64], y: &[f64], v: &[f64], u: &[f64]) -> Result<f64> {
        match (self.prefer_closed_form, self.source.closed_lagrangian()) {
            (true, Some(l)) => Ok(l(i, x, y, v, u)),
            _ => self.legendre_transform(i, x, y, v, u),
        }
    }

    /// `sup_v (p·v − L_i(x, y, v, u))` over `|v| ≤ v_max`, with `L` computed numerically.
    pub fn conjugate_back(&self, i: usize, x: &[f64], y: &[f64], p: &[f64], u: &[f64]) -> Result<f64> {
        let samples = if self.source.n() == 1 { 161 } else { 25 };
        let mut err = None;
        let r = self.v_max / (self.source.n() as f64).sqrt();
        let (_, val, _) = concave_max(self.source.n(), r, samples, |v| {
            match self.legendre_transform(i, x, y, v, u) {
                Ok(l) => p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - l,
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NEG_INFINITY
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(val),
        }
    }
}

/// Default accuracy target of [`LagrangianEvaluator::legendre_transform`].
pub const fn tol_legendre() -> f64 {
    TOL_LEGENDRE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::problems::{mechanical, Potential};

    fn quad(c: f64) -> HamiltonianSpec {
        HamiltonianSpec::new("quad", 1, 1, move |_, _, _, p, _| c * p[0] * p[0])
            .with_coercivity(move |_, l, _| (l.max(0.0) / c).sqrt())
    }

    #[test]
    fn conjugate_of_half_square() {
        let lag = LagrangianEvaluator::new(quad(0.5), 3.0, 0.0).unwrap();
        let l = lag.legendre_transform(0, &[0.0], &[0.3], &[2.0], &[0.0]).unwrap();
        assert!((l - 2.0).abs() < TOL_LEGENDRE, "{l}");
    }

    #[test]
    fn conjugate_of_square() {
        let lag = LagrangianEvaluator::new(quad(1.0), 3.0, 0.0).unwrap();
        let l = lag.legendre_transform(0, &[0.0], &[0.0], &[2.0], &[0.0]).unwrap();
        assert!((l - 1.0).abs() < TOL_LEGENDRE, "{l}");
    }

    #[test]
    fn conjugate_at_rest_is_potential() {
        let spec = mechanical(Potential::Tent, 1);
        let lag = LagrangianEvaluator::new(spec, 2.0, 0.0).unwrap().numeric_only();
        for y in [0.0, 0.2, 0.45, 0.5] {
            let l = lag.lagrangian(0, &[0.0], &[y], &[0.0], &[0.0]).unwrap();
            assert!((l - v_tent_ref(y)).abs() < TOL_LEGENDRE);
        }
    }

    fn v_tent_ref(y: f64) -> f64 {
        crate::model::problems::v_tent(y)
    }

    #[test]
    fn small_radius_is_a_coercivity_error() {
        let lag = LagrangianEvaluator::new(quad(0.5), 3.0, 0.0).unwrap().with_radius(1.0);
        let e = lag.legendre_transform(0, &[0.0], &[0.0], &[2.5], &[0.0]).unwrap_err();
        assert!(matches!(e, Error::Coercivity { .. }));
    }

    #[test]
    fn velocity_outside_box_rejected() {
        let lag = LagrangianEvaluator::new(quad(0.5), 1.0, 0.0).unwrap();
        assert!(lag.legendre_transform(0, &[0.0], &[0.0], &[1.5], &[0.0]).is_err());
    }

    #[test]
    fn two_dimensional_conjugate() {
        let spec = HamiltonianSpec::new("q2", 1, 2, |_, _, _, p, _| 0.5 * (p[0] * p[0] + 2.0 * p[1] * p[1]))
            .with_coercivity(|_, l, _| (2.0 * l.max(0.0)).sqrt());
        let lag = LagrangianEvaluator::new(spec, 2.0, 0.0).unwrap();
        let v = [1.0, -1.2];
        let l = lag.legendre_transform(0, &[0.0, 0.0], &[0.0, 0.0], &v, &[0.0]).unwrap();
        let exact = 0.5 * v[0] * v[0] + 0.25 * v[1] * v[1];
        assert!((l - exact).abs() < TOL_LEGENDRE, "{l} vs {exact}");
    }

    #[test]
    fn golden_section_finds_parabola_top() {
        let (x, v) = golden_max(-1.0, 3.0, 1e-12, |t| -(t - 0.7) * (t - 0.7) + 2.0);
        assert!((x - 0.7).abs() < 1e-6);
        assert!((v - 2.0).abs() < 1e-12);
    }
}
