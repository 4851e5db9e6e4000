//! Hamiltonian systems, initial data, Lagrangians and structural checks.

mod hypotheses;
mod kruzhkov;
mod legendre;
pub mod problems;
mod spec;

pub use hypotheses::{check_hypotheses, Hypothesis, HypothesisCheck, HypothesisReport, SamplePlan};
pub use kruzhkov::{kruzhkov_transform, KruzhkovSpec, MonotonicityCertificate};
pub use legendre::{tol_legendre, LagrangianEvaluator};
pub(crate) use legendre::golden_max;
pub use problems::{Potential, Problem, ProblemParams};
pub use spec::{CouplingFn, DataFn, HamFn, HamiltonianSpec, InitialData, RadiusFn};

/// What the finite-difference schemes need from a (possibly time-dependent) system.
pub trait SystemHamiltonian: Send + Sync {
    fn m(&self) -> usize;
    fn n(&self) -> usize;
    fn value(&self, i: usize, x: &[f64], t: f64, y: &[f64], p: &[f64], u: &[f64]) -> f64;
    /// Lipschitz constant in `u` entering the explicit step restriction.
    fn coupling_lipschitz(&self) -> f64;
    fn has_fast_variable(&self) -> bool;
}

impl SystemHamiltonian for HamiltonianSpec {
    fn m(&self) -> usize {
        HamiltonianSpec::m(self)
    }
    fn n(&self) -> usize {
        HamiltonianSpec::n(self)
    }
    #[inline]
    fn value(&self, i: usize, x: &[f64], _t: f64, y: &[f64], p: &[f64], u: &[f64]) -> f64 {
        self.eval(i, x, y, p, u)
    }
    fn coupling_lipschitz(&self) -> f64 {
        self.theta()
    }
    fn has_fast_variable(&self) -> bool {
        HamiltonianSpec::has_fast_variable(self)
    }
}
