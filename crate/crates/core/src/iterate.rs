//! Decoupling fixed-point iteration: each step solves the system with the
//! coupling argument frozen at the previous iterate.
//!
//! Cauchy version: `u¹` solves `∂t u_i + H_i(x, x/ε, Du_i, ū) = 0`, and
//! `u^{ℓ+1}` the same equation with `u^ℓ` in place of `ū`. Stationary version:
//! `λu^{ℓ+1} + H_i(x, x/ε, Du^{ℓ+1}_i, u^ℓ) = 0`.

use std::path::Path;
use std::sync::Arc;

use log::{debug, info};

use crate::error::{precondition, Error, Result};
use crate::fd_solver::{solve_cauchy, solve_stationary, CouplingMode, SchemeConfig, StationaryConfig};
use crate::grid::{Field, TorusGrid};
use crate::io::{num, write_table};
use crate::model::{HamiltonianSpec, InitialData};
use crate::oracle_dp::{discounted_value, value_function, DPConfig, DpCoupling, RunningCost};
use crate::stats::ols;
use crate::tolerances::{DIVERGENCE_RATIO, TOL_RATIO};

/// Solver used for each decoupled step.
#[derive(Clone)]
pub enum Backend {
    Fd(SchemeConfig),
    /// The dynamic-programming oracle on `grid`, storing `stamps` up to `t_end`
    /// (the horizon is ignored by stationary runs).
    Dp {
        lag: Arc<dyn RunningCost + Send>,
        grid: TorusGrid,
        t_end: f64,
        stamps: Vec<f64>,
        cfg: DPConfig,
    },
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Fd(c) => write!(f, "Fd(N = {}, T = {})", c.grid.points(), c.t_end),
            Backend::Dp { grid, t_end, cfg, .. } => {
                write!(f, "Dp(N = {}, T = {t_end}, dt = {})", grid.points(), cfg.dt)
            }
        }
    }
}

impl Backend {
    pub fn grid(&self) -> &TorusGrid {
        match self {
            Backend::Fd(c) => &c.grid,
            Backend::Dp { grid, .. } => grid,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Backend::Fd(_) => "fd",
            Backend::Dp { .. } => "dp",
        }
    }

    fn cauchy_step(&self, spec: &HamiltonianSpec, data: &InitialData, eps: Option<f64>, frozen: Arc<Field>) -> Result<Field> {
        match self {
            Backend::Fd(cfg) => {
                let c = cfg.clone().with_coupling(CouplingMode::Frozen(frozen));
                solve_cauchy(spec, data, eps, &c)
            }
            Backend::Dp {
                lag,
                grid,
                t_end,
                stamps,
                cfg,
            } => Ok(value_function(lag.as_ref(), data, &DpCoupling::Frozen(frozen), eps, grid, *t_end, stamps, cfg)?.field),
        }
    }

    fn stationary_step(&self, spec: &HamiltonianSpec, eps: Option<f64>, lambda: f64, frozen: Arc<Field>) -> Result<Field> {
        match self {
            Backend::Fd(cfg) => {
                let c = cfg.clone().with_coupling(CouplingMode::Frozen(frozen.clone()));
                let s = StationaryConfig::new(lambda).with_initial(frozen);
                Ok(solve_stationary(spec, eps, &s, &c)?.field)
            }
            Backend::Dp { lag, grid, cfg, .. } => Ok(discounted_value(lag.as_ref(), &frozen, eps, lambda, grid, cfg)?.field),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
}

/// Iterates `u¹, u², …` and their gaps on the stored stamps:
/// `gaps[0] = |u¹ − seed|`, `gaps[ℓ] = |u^{ℓ+1} − u^ℓ|` for `ℓ ≥ 1`.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub stamps: Vec<f64>,
    pub iterates: Vec<Field>,
    pub gaps: Vec<Vec<f64>>,
    pub stop_reason: StopReason,
    /// Contraction factor the theory predicts for one step (`Θ/λ` stationary,
    /// `Θ·t` scale for Cauchy runs).
    pub theta: f64,
}

impl IterationTrace {
    /// `sup_t gaps[ℓ](t)`.
    pub fn sup_gaps(&self) -> Vec<f64> {
        self.gaps.iter().map(|g| g.iter().fold(0.0, |a: f64, &b| a.max(b))).collect()
    }

    /// Gaps at the stored stamp closest to `t`.
    pub fn gaps_at(&self, t: f64) -> Vec<f64> {
        let k = self.stamp_near(t);
        self.gaps.iter().map(|g| g[k]).collect()
    }

    fn stamp_near(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &s) in self.stamps.iter().enumerate() {
            if (s - t).abs() < (self.stamps[best] - t).abs() {
                best = k;
            }
        }
        best
    }

    /// `gaps[ℓ+1](t) / gaps[ℓ](t)` for `ℓ = 0, 1, …`; `None` when the denominator vanishes.
    pub fn ratios_at(&self, t: f64) -> Vec<Option<f64>> {
        ratios(&self.gaps_at(t))
    }

    /// Ratios of the sup-in-time gaps.
    pub fn sup_ratios(&self) -> Vec<Option<f64>> {
        ratios(&self.sup_gaps())
    }

    pub fn limit(&self) -> &Field {
        self.iterates.last().expect("a trace holds at least one iterate")
    }

    /// Least-squares fit of `ln sup gap_ℓ` against `ℓ` over `ℓ ≥ 1`:
    /// `(geometric rate, gap₁)`. The second value is the surrogate for the
    /// constant in the gap bound.
    pub fn decay_fit(&self) -> Option<(f64, f64)> {
        let sup = self.sup_gaps();
        let pts: Vec<(f64, f64)> = sup
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &g)| g > 0.0)
            .map(|(l, &g)| (l as f64, g.ln()))
            .collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let fit = ols(&x, &y)?;
        Some((fit.slope.exp(), *sup.get(1)?))
    }

    /// Rows `(ℓ, t, gap)` followed by `summary, rate, gap₁`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut rows = Vec::new();
        for (l, g) in self.gaps.iter().enumerate() {
            for (k, &v) in g.iter().enumerate() {
                rows.push(vec![l.to_string(), num(self.stamps[k]), num(v)]);
            }
        }
        let (rate, c) = self.decay_fit().unwrap_or((f64::NAN, f64::NAN));
        rows.push(vec!["summary".into(), num(rate), num(c)]);
        write_table(path, &["iteration", "t", "gap"], &rows)
    }
}

fn ratios(g: &[f64]) -> Vec<Option<f64>> {
    g.windows(2)
        .map(|w| if w[0] > 0.0 { Some(w[1] / w[0]) } else { None })
        .collect()
}

/// Per-stamp sup distance between `a` and `b`, with `b` read at `a`'s stamps.
fn gap_per_stamp(a: &Field, b: &Field) -> Result<Vec<f64>> {
    let mut buf = vec![0.0; a.slice_len()];
    a.stamps()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            b.slice_at(t, &mut buf)?;
            Ok(a.slice(k).iter().zip(&buf).fold(0.0f64, |d, (x, y)| d.max((x - y).abs())))
        })
        .collect()
}

fn seed_on(seed: &Field, grid: &TorusGrid) -> Result<Field> {
    if seed.grid() == grid {
        Ok(seed.clone())
    } else {
        seed.resample_to(grid)
    }
}

/// The last slice of `f` stored at `t = 0`, the stamp stationary solves use.
fn stationary_slice(f: &Field) -> Field {
    let mut out = Field::empty(f.grid().clone(), f.m());
    out.push_slice(0.0, f.slice(f.stamps().len() - 1));
    out
}

fn check_params(tol: f64, max_iter: usize) -> Result<()> {
    if !(tol > 0.0) {
        return precondition(format!("iteration tolerance must be positive, got {tol}"));
    }
    if max_iter == 0 {
        return precondition("max_iter must be at least 1");
    }
    Ok(())
}

/// Counts consecutive steps whose sup-gap ratio exceeds `limit`; three in a row fail.
struct RatioWatch {
    limit: f64,
    floor: f64,
    streak: usize,
}

impl RatioWatch {
    fn observe(&mut self, prev: f64, next: f64, what: &str) -> Result<()> {
        if prev <= self.floor {
            self.streak = 0;
            return Ok(());
        }
        let r = next / prev;
        self.streak = if r > self.limit { self.streak + 1 } else { 0 };
        if self.streak >= 3 {
            return Err(Error::Divergence(format!(
                "{what}: gap ratio {r:.4} above {:.4} for 3 consecutive steps",
                self.limit
            )));
        }
        Ok(())
    }
}

fn run(
    seed: &Field,
    tol: f64,
    max_iter: usize,
    mut watch: RatioWatch,
    theta: f64,
    what: &str,
    mut step: impl FnMut(Arc<Field>) -> Result<Field>,
) -> Result<IterationTrace> {
    let mut prev = Arc::new(seed.clone());
    let mut iterates = Vec::new();
    let mut gaps: Vec<Vec<f64>> = Vec::new();
    let mut stamps = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    for l in 0..max_iter {
        let next = step(prev.clone())?;
        let g = gap_per_stamp(&next, &prev)?;
        if stamps.is_empty() {
            stamps = next.stamps().to_vec();
        } else if next.stamps() != stamps.as_slice() {
            return Err(Error::Grid("iterates stored at different stamps".into()));
        }
        let sup = g.iter().fold(0.0f64, |a, &b| a.max(b));
        debug!("{what}: iterate {} gap {sup:.3e}", l + 1);
        if let Some(last) = gaps.last() {
            let prev_sup = last.iter().fold(0.0f64, |a: f64, &b| a.max(b));
            watch.observe(prev_sup, sup, what)?;
        }
        gaps.push(g);
        prev = Arc::new(next);
        iterates.push((*prev).clone());
        if l >= 1 && sup < tol {
            stop_reason = StopReason::Converged;
            break;
        }
    }
    info!("{what}: {} iterates, stop {stop_reason:?}", iterates.len());
    Ok(IterationTrace {
        stamps,
        iterates,
        gaps,
        stop_reason,
        theta,
    })
}

/// Cauchy iteration seeded with `seed` (the effective solution `ū`). Stops
/// when a gap (beyond the first) drops below `tol` or after `max_iter` iterates.
pub fn iterate_cauchy(
    spec: &HamiltonianSpec,
    data: &InitialData,
    eps: Option<f64>,
    seed: &Field,
    backend: &Backend,
    tol: f64,
    max_iter: usize,
) -> Result<IterationTrace> {
    check_params(tol, max_iter)?;
    let seed = seed_on(seed, backend.grid())?;
    let watch = RatioWatch {
        limit: DIVERGENCE_RATIO,
        floor: 1e3 * f64::EPSILON * seed.sup_norm().max(1.0),
        streak: 0,
    };
    run(&seed, tol, max_iter, watch, spec.theta(), "cauchy iteration", |prev| {
        backend.cauchy_step(spec, data, eps, prev)
    })
}

/// Stationary iteration for `λ > Θ`, seeded with the effective stationary
/// solution. Fails when the gap ratio exceeds `Θ/λ + TOL_RATIO` three times in
/// a row while the gaps are still above `tol`.
pub fn iterate_stationary(
    spec: &HamiltonianSpec,
    eps: Option<f64>,
    lambda: f64,
    seed: &Field,
    backend: &Backend,
    tol: f64,
    max_iter: usize,
) -> Result<IterationTrace> {
    check_params(tol, max_iter)?;
    if !(lambda > spec.theta()) {
        return precondition(format!(
            "stationary iteration needs lambda > theta (lambda = {lambda}, theta = {})",
            spec.theta()
        ));
    }
    let seed = seed_on(&stationary_slice(seed), backend.grid())?;
    let q = spec.theta() / lambda;
    let watch = RatioWatch {
        limit: q + TOL_RATIO,
        floor: tol,
        streak: 0,
    };
    run(&seed, tol, max_iter, watch, q, "stationary iteration", |prev| {
        backend.stationary_step(spec, eps, lambda, prev)
    })
}

/// Which iteration map a residual is measured against.
#[derive(Debug, Clone, Copy)]
pub enum ResidualMode<'a> {
    Cauchy { data: &'a InitialData, backend: &'a Backend },
    Stationary { lambda: f64, backend: &'a Backend },
}

/// `sup |T(candidate) − candidate|` for one further iteration step `T` that
/// uses `candidate` as the frozen coupling.
pub fn fixed_point_residual(spec: &HamiltonianSpec, candidate: &Field, eps: Option<f64>, mode: ResidualMode<'_>) -> Result<f64> {
    let (backend, next) = match mode {
        ResidualMode::Cauchy { data, backend } => {
            let c = Arc::new(seed_on(candidate, backend.grid())?);
            (backend, backend.cauchy_step(spec, data, eps, c)?)
        }
        ResidualMode::Stationary { lambda, backend } => {
            let c = Arc::new(seed_on(&stationary_slice(candidate), backend.grid())?);
            (backend, backend.stationary_step(spec, eps, lambda, c)?)
        }
    };
    let cand = match mode {
        ResidualMode::Cauchy { .. } => seed_on(candidate, backend.grid())?,
        ResidualMode::Stationary { .. } => seed_on(&stationary_slice(candidate), backend.grid())?,
    };
    Ok(gap_per_stamp(&next, &cand)?.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd_solver::{Flux, OutputTimes};
    use crate::grid::sup_distance;
    use crate::model::problems::{Problem, ProblemParams};

    fn eik(coupling: f64) -> Problem {
        Problem::builtin(
            "eikonal-1d",
            &ProblemParams {
                coupling: Some(coupling),
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn fd(n: usize, t_end: f64) -> Backend {
        let g = TorusGrid::new(1, 1.0, n).unwrap();
        Backend::Fd(SchemeConfig::new(g, t_end).with_flux(Flux::Godunov).with_output(OutputTimes::Uniform {
            max_interval: 0.1,
            extra: vec![],
        }))
    }

    fn fd_every_step(n: usize, t_end: f64) -> Backend {
        let g = TorusGrid::new(1, 1.0, n).unwrap();
        Backend::Fd(SchemeConfig::new(g, t_end).with_flux(Flux::Godunov).with_output(OutputTimes::EveryStep))
    }

    fn zero_seed(backend: &Backend, m: usize, t_end: f64) -> Field {
        let mut f = Field::empty(backend.grid().clone(), m);
        let z = vec![0.0; m * backend.grid().len()];
        f.push_slice(0.0, &z);
        f.push_slice(t_end, &z);
        f
    }

    #[test]
    fn uncoupled_system_converges_in_one_step() {
        let p = eik(0.0);
        let b = fd(80, 0.5);
        let tr = iterate_cauchy(&p.spec, &p.data, Some(0.2), &zero_seed(&b, 2, 0.5), &b, 1e-12, 5).unwrap();
        assert_eq!(tr.stop_reason, StopReason::Converged);
        assert_eq!(tr.iterates.len(), 2);
        assert_eq!(tr.sup_gaps()[1], 0.0);
    }

    #[test]
    fn cauchy_gaps_follow_factorial_decay() {
        let p = eik(0.5);
        let b = fd(80, 1.0);
        let tr = iterate_cauchy(&p.spec, &p.data, Some(0.2), &zero_seed(&b, 2, 1.0), &b, 1e-10, 6).unwrap();
        let r = tr.ratios_at(1.0);
        for (l, q) in r.iter().enumerate().skip(1).take(4) {
            let q = q.unwrap();
            assert!(q <= p.spec.theta() / (l as f64 + 1.0) + TOL_RATIO, "ratio {l}: {q}");
        }
        assert!(tr.gaps.iter().all(|g| g.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn limit_does_not_depend_on_seed() {
        let p = eik(0.5);
        let b = fd(80, 0.5);
        let s0 = zero_seed(&b, 2, 0.5);
        let s1 = s0.map_values(|v| v + 0.3);
        let a = iterate_cauchy(&p.spec, &p.data, Some(0.2), &s0, &b, 1e-9, 20).unwrap();
        let c = iterate_cauchy(&p.spec, &p.data, Some(0.2), &s1, &b, 1e-9, 20).unwrap();
        let d = sup_distance(a.limit(), c.limit(), (0.0, 0.5)).unwrap();
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn limit_matches_direct_coupled_solve() {
        let p = eik(0.5);
        let b = fd_every_step(80, 0.5);
        let tr = iterate_cauchy(&p.spec, &p.data, Some(0.2), &zero_seed(&b, 2, 0.5), &b, 1e-10, 20).unwrap();
        let Backend::Fd(cfg) = &b else { unreachable!() };
        let direct = solve_cauchy(&p.spec, &p.data, Some(0.2), cfg).unwrap();
        // With every step stored, the frozen coupling is read at exactly the
        // level the explicit scheme uses, so the two discrete problems coincide.
        let d = sup_distance(tr.limit(), &direct, (0.0, 0.5)).unwrap();
        assert!(d < 1e-8, "{d}");
        let res = fixed_point_residual(&p.spec, &direct, Some(0.2), ResidualMode::Cauchy { data: &p.data, backend: &b }).unwrap();
        assert!(res < 1e-8, "{res}");
    }

    #[test]
    fn residual_rejects_non_solution() {
        let p = eik(0.5);
        let b = fd(80, 0.5);
        let g = b.grid().clone();
        let noise = crate::grid::sample(|i, x, t| ((7 * i + 3) as f64 * x[0]).sin() * (1.0 + t), &g, 2, &[0.0, 0.25, 0.5]).unwrap();
        let res = fixed_point_residual(&p.spec, &noise, Some(0.2), ResidualMode::Cauchy { data: &p.data, backend: &b }).unwrap();
        assert!(res > 1e-3, "{res}");
    }

    #[test]
    fn stationary_ratio_bounded_by_theta_over_lambda() {
        let p = Problem::by_name("linear-coupling-2sys").unwrap();
        let theta = p.spec.theta();
        let b = fd(80, 1.0);
        let seed = zero_seed(&b, 2, 1.0).last();
        let tr = iterate_stationary(&p.spec, Some(0.2), 2.0 * theta, &seed, &b, 1e-8, 8).unwrap();
        for q in tr.sup_ratios().into_iter().flatten().take(6) {
            assert!(q <= 0.5 + TOL_RATIO, "{q}");
        }
    }

    #[test]
    fn stationary_rejects_small_lambda() {
        let p = Problem::by_name("linear-coupling-2sys").unwrap();
        let b = fd(80, 1.0);
        let seed = zero_seed(&b, 2, 1.0);
        let e = iterate_stationary(&p.spec, Some(0.2), p.spec.theta(), &seed, &b, 1e-8, 8).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
    }

    #[test]
    fn divergence_is_detected() {
        let mut w = RatioWatch {
            limit: 1.2,
            floor: 0.0,
            streak: 0,
        };
        assert!(w.observe(1.0, 2.0, "t").is_ok());
        assert!(w.observe(2.0, 4.0, "t").is_ok());
        assert!(matches!(w.observe(4.0, 8.0, "t"), Err(Error::Divergence(_))));
    }

    #[test]
    fn synthetic_decay_fit() {
        let tr = IterationTrace {
            stamps: vec![1.0],
            iterates: vec![],
            gaps: (0..6).map(|l| vec![0.3 * 0.5f64.powi(l)]).collect(),
            stop_reason: StopReason::MaxIterations,
            theta: 0.5,
        };
        let (rate, c) = tr.decay_fit().unwrap();
        assert!((rate - 0.5).abs() < 1e-12);
        assert!((c - 0.15).abs() < 1e-12);
    }
}
