use std::fmt;
use std::sync::Arc;

/// `(i, x, y, p, u) -> H_i`. Components are indexed from 0.
pub type HamFn = dyn Fn(usize, &[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync;
/// `(i, level, u_bound) -> r` such that `H_i > level` whenever `|p| > r` and `|u| ≤ u_bound`.
pub type RadiusFn = dyn Fn(usize, f64, f64) -> f64 + Send + Sync;
/// `(i, x, u) -> g_i` for Hamiltonians of the form `h_i(x, y, p) + g_i(x, u)`.
pub type CouplingFn = dyn Fn(usize, &[f64], &[f64]) -> f64 + Send + Sync;
/// `(i, x) -> φ_i(x)`.
pub type DataFn = dyn Fn(usize, &[f64]) -> f64 + Send + Sync;

/// An `m`-component Hamiltonian system `H_i(x, y, p, u)` with the metadata the
/// solvers rely on.
#[derive(Clone)]
pub struct HamiltonianSpec {
    name: String,
    m: usize,
    n: usize,
    evaluate: Arc<HamFn>,
    theta: f64,
    lip_x: f64,
    coercivity: Arc<RadiusFn>,
    slow_period: f64,
    x_dependent: bool,
    fast_variable: bool,
    convex: bool,
    shift_invariant: bool,
    lagrangian: Option<Arc<HamFn>>,
    coupling: Option<Arc<CouplingFn>>,
}

impl fmt::Debug for HamiltonianSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSpec")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("n", &self.n)
            .field("theta", &self.theta)
            .field("lip_x", &self.lip_x)
            .field("slow_period", &self.slow_period)
            .field("fast_variable", &self.fast_variable)
            .finish_non_exhaustive()
    }
}

impl HamiltonianSpec {
    /// A convex, x-independent, y-dependent system with no declared coupling.
    /// Use the builder methods to fill in metadata.
    pub fn new(
        name: impl Into<String>,
        m: usize,
        n: usize,
        evaluate: impl Fn(usize, &[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        assert!(m >= 1, "need at least one component");
        assert!(n == 1 || n == 2, "only n = 1, 2 are supported");
        HamiltonianSpec {
            name: name.into(),
            m,
            n,
            evaluate: Arc::new(evaluate),
            theta: 0.0,
            lip_x: 0.0,
            coercivity: Arc::new(|_, _, _| f64::INFINITY),
            slow_period: 1.0,
            x_dependent: false,
            fast_variable: true,
            convex: true,
            shift_invariant: false,
            lagrangian: None,
            coupling: None,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    /// Declares x-dependence with Lipschitz constant `lip_x` and period `period`.
    pub fn with_slow(mut self, lip_x: f64, period: f64) -> Self {
        self.lip_x = lip_x;
        self.slow_period = period;
        self.x_dependent = lip_x > 0.0;
        self
    }

    pub fn with_coercivity(
        mut self,
        radius: impl Fn(usize, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.coercivity = Arc::new(radius);
        self
    }

    pub fn with_convex(mut self, convex: bool) -> Self {
        self.convex = convex;
        self
    }

    /// Declares `H_i(x, y, p, u + c𝟙) = H_i(x, y, p, u)`.
    pub fn with_shift_invariance(mut self, on: bool) -> Self {
        self.shift_invariant = on;
        self
    }

    /// Closed-form Lagrangian `(i, x, y, v, u) -> L_i`.
    pub fn with_lagrangian(
        mut self,
        l: impl Fn(usize, &[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.lagrangian = Some(Arc::new(l));
        self
    }

    /// Declares the additive split `H_i = h_i(x, y, p) + g_i(x, u)`.
    pub fn with_additive_coupling(
        mut self,
        g: impl Fn(usize, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.coupling = Some(Arc::new(g));
        self
    }

    pub(crate) fn with_coupling_arc(mut self, g: Option<Arc<CouplingFn>>) -> Self {
        self.coupling = g;
        self
    }

    pub fn without_fast_variable(mut self) -> Self {
        self.fast_variable = false;
        self
    }

    /// The system with the slow variable frozen at `c`: `(i, x, y, p, u) ↦ H_i(c, y, p, u)`.
    pub fn frozen_slow(&self, c: &[f64]) -> HamiltonianSpec {
        let c = c.to_vec();
        let freeze = |f: Arc<HamFn>, c: Vec<f64>| -> Arc<HamFn> {
            Arc::new(move |i: usize, _x: &[f64], y: &[f64], p: &[f64], u: &[f64]| f(i, &c, y, p, u))
        };
        let coupling = self.coupling.clone().map(|g| {
            let c = c.clone();
            Arc::new(move |i: usize, _x: &[f64], u: &[f64]| g(i, &c, u)) as Arc<CouplingFn>
        });
        HamiltonianSpec {
            name: format!("{}@x={:?}", self.name, c),
            evaluate: freeze(self.evaluate.clone(), c.clone()),
            lip_x: 0.0,
            x_dependent: false,
            lagrangian: self.lagrangian.clone().map(|l| freeze(l, c.clone())),
            coupling,
            ..self.clone()
        }
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    #[inline]
    pub fn eval(&self, i: usize, x: &[f64], y: &[f64], p: &[f64], u: &[f64]) -> f64 {
        (self.evaluate)(i, x, y, p, u)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn lip_x(&self) -> f64 {
        self.lip_x
    }
    pub fn slow_period(&self) -> f64 {
        self.slow_period
    }
    pub fn is_x_dependent(&self) -> bool {
        self.x_dependent
    }
    pub fn has_fast_variable(&self) -> bool {
        self.fast_variable
    }
    pub fn is_convex(&self) -> bool {
        self.convex
    }
    pub fn is_shift_invariant(&self) -> bool {
        self.shift_invariant
    }

    pub fn coercivity_radius(&self, i: usize, level: f64, u_bound: f64) -> f64 {
        (self.coercivity)(i, level, u_bound)
    }

    pub fn closed_lagrangian(&self) -> Option<&Arc<HamFn>> {
        self.lagrangian.as_ref()
    }

    pub fn additive_coupling(&self) -> Option<&Arc<CouplingFn>> {
        self.coupling.as_ref()
    }

    /// The uncoupled part `h_i(x, y, p) = H_i(x, y, p, 0) − g_i(x, 0)` when an
    /// additive split is declared, otherwise `H_i(x, y, p, 0)`.
    pub fn uncoupled(&self, i: usize, x: &[f64], y: &[f64], p: &[f64]) -> f64 {
        let zero = [0.0; 8];
        let u0 = &zero[..self.m.min(8)];
        let base = self.eval(i, x, y, p, u0);
        match &self.coupling {
            Some(g) => base - g(i, x, u0),
            None => base,
        }
    }

    /// Sampled `sup |H_i(x, y, 0, 0)|` over a period cell in x and the unit cell in y.
    pub fn sup_at_rest(&self, samples: usize) -> f64 {
        let zero = vec![0.0; self.m];
        let p0 = vec![0.0; self.n];
        let xs = axis_samples(self.slow_period, if self.x_dependent { samples } else { 1 });
        let ys = axis_samples(1.0, if self.fast_variable { samples } else { 1 });
        let mut sup: f64 = 0.0;
        for_each_point(self.n, &xs, |x| {
            for_each_point(self.n, &ys, |y| {
                for i in 0..self.m {
                    sup = sup.max(self.eval(i, x, y, &p0, &zero).abs());
                }
            })
        });
        sup
    }
}

pub(crate) fn axis_samples(period: f64, count: usize) -> Vec<f64> {
    (0..count.max(1))
        .map(|k| period * k as f64 / count.max(1) as f64)
        .collect()
}

/// Calls `f` on every point of the tensor product of `axis` with itself `n` times.
pub(crate) fn for_each_point(n: usize, axis: &[f64], mut f: impl FnMut(&[f64])) {
    match n {
        1 => {
            for &a in axis {
                f(&[a]);
            }
        }
        2 => {
            for &b in axis {
                for &a in axis {
                    f(&[a, b]);
                }
            }
        }
        _ => unreachable!("dimension {n} not supported"),
    }
}

/// Initial data `φ_i(x)`, periodic in each axis.
#[derive(Clone)]
pub struct InitialData {
    m: usize,
    phi: Arc<DataFn>,
    lip_phi: f64,
    sup_phi: f64,
}

impl fmt::Debug for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialData")
            .field("m", &self.m)
            .field("lip_phi", &self.lip_phi)
            .field("sup_phi", &self.sup_phi)
            .finish_non_exhaustive()
    }
}

impl InitialData {
    pub fn new(
        m: usize,
        phi: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static,
        lip_phi: f64,
        sup_phi: f64,
    ) -> Self {
        InitialData {
            m,
            phi: Arc::new(phi),
            lip_phi,
            sup_phi,
        }
    }

    pub fn zero(m: usize) -> Self {
        Self::new(m, |_, _| 0.0, 0.0, 0.0)
    }

    pub fn constant(values: Vec<f64>) -> Self {
        let sup = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let m = values.len();
        Self::new(m, move |i, _| values[i], 0.0, sup)
    }

    #[inline]
    pub fn eval(&self, i: usize, x: &[f64]) -> f64 {
        (self.phi)(i, x)
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn lip_phi(&self) -> f64 {
        self.lip_phi
    }
    pub fn sup_phi(&self) -> f64 {
        self.sup_phi
    }

    /// Adds a constant to every component.
    pub fn shifted(&self, c: f64) -> Self {
        let phi = self.phi.clone();
        Self::new(
            self.m,
            move |i, x| phi(i, x) + c,
            self.lip_phi,
            self.sup_phi + c.abs(),
        )
    }
}
