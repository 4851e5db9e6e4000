//! End-to-end experiments: homogenization-rate sweeps (Cauchy and
//! stationary), the sharpness example, point-to-point action gaps, the
//! decoupling-iteration study, the DP/FD cross-check, and their reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};

use crate::cell::{build_cache, effective_hamiltonian, effective_spec, CacheBoxes, CellConfig, EffectiveCache};
use crate::error::{precondition, Error, Result};
use crate::fd_solver::{
    gradient_box, scheme_error_estimate, solve_cauchy, solve_stationary, stationary_error_estimate, stored_times,
    CouplingMode, Flux, OutputTimes, RefinementEstimate, SchemeConfig, StationaryConfig,
};
use crate::grid::{sample, sup_distance, Field, TorusGrid};
use crate::io::{num, write_table};
use crate::iterate::{fixed_point_residual, iterate_cauchy, iterate_stationary, Backend, IterationTrace, ResidualMode};
use crate::model::problems::{mechanical, Potential, Problem, ProblemParams};
use crate::model::{HamiltonianSpec, InitialData, LagrangianEvaluator};
use crate::oracle_dp::{point_action, value_function, DPConfig, DpCoupling, EffectiveLagrangian};
use crate::parallel;
use crate::stats::{kendall_increasing, loglog_fit, KendallTrend, LinearFit};
use crate::tolerances::{BUDGET_FRACTION, MAX_FIT_RMS, TOL_RATIO, TREND_ALPHA};

/// Lattice of the effective-Hamiltonian cache.
#[derive(Debug, Clone)]
pub struct CacheSettings {
    pub x_points: usize,
    pub p_points: usize,
    pub cell_points: usize,
    /// Coupling-lattice points per component, used only for systems without an
    /// additive coupling.
    pub c_points: usize,
}

impl Default for CacheSettings {
    fn default() -> Self {
        CacheSettings {
            x_points: 64,
            p_points: 161,
            cell_points: 256,
            c_points: 9,
        }
    }
}

/// Grid ladders of the finite-difference solves.
#[derive(Debug, Clone)]
pub struct GridSettings {
    /// Fine grid points per ε (so `h = ε/per_eps`).
    pub per_eps: usize,
    /// Coarsest grid of the effective solve.
    pub effective: usize,
    /// Grids per refinement ladder, each twice as fine as the previous one.
    pub levels: usize,
    pub flux: Flux,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            per_eps: 16,
            effective: 256,
            levels: 3,
            flux: Flux::Godunov,
        }
    }
}

impl GridSettings {
    fn flux_for(&self, n: usize) -> Flux {
        if n == 1 {
            self.flux
        } else {
            Flux::LaxFriedrichs
        }
    }
}

/// A cache-backed effective system.
pub struct EffectiveModel {
    pub cache: Arc<EffectiveCache>,
    pub spec: HamiltonianSpec,
    /// Largest `|H̄_cache − H̄_cell|` at off-lattice check points.
    pub interpolation_error: f64,
    pub seconds: f64,
}

/// Builds the cache on `|p| ≤ p_radius` and measures its interpolation error
/// against direct cell solves at lattice midpoints.
pub fn build_effective(spec: &HamiltonianSpec, p_radius: f64, u_bound: f64, cs: &CacheSettings) -> Result<EffectiveModel> {
    let cell = CellConfig::for_dimension(spec.n()).with_points(cs.cell_points);
    let additive = spec.additive_coupling().is_some() || spec.theta() == 0.0;
    let boxes = CacheBoxes {
        x_points: cs.x_points,
        p: (-p_radius, p_radius),
        p_points: cs.p_points,
        c: if additive { None } else { Some((-u_bound, u_bound, cs.c_points)) },
    };
    let t0 = Instant::now();
    let cache = Arc::new(build_cache(spec, &boxes, &cell)?);
    let interpolation_error = midpoint_error(spec, &cache, &cell)?;
    let seconds = t0.elapsed().as_secs_f64();
    info!(
        "cache {}: {} values, interpolation error {interpolation_error:.2e}, {seconds:.1}s",
        cache.name(),
        cache.len()
    );
    let eff = effective_spec(cache.clone(), spec);
    Ok(EffectiveModel {
        cache,
        spec: eff,
        interpolation_error,
        seconds,
    })
}

fn pick(count: usize, want: usize) -> Vec<usize> {
    if count <= want {
        return (0..count).collect();
    }
    (0..want).map(|j| j * (count - 1) / (want - 1).max(1)).collect()
}

fn midpoint_error(spec: &HamiltonianSpec, cache: &EffectiveCache, cell: &CellConfig) -> Result<f64> {
    let xa = cache.x_axis();
    let pa = cache.p_axis();
    let xs: Vec<f64> = if xa.count <= 1 {
        vec![0.0]
    } else {
        pick(xa.count, 4).into_iter().map(|k| xa.coord(k) + 0.5 * xa.step).collect()
    };
    let ps: Vec<f64> = pick(pa.count - 1, 7).into_iter().map(|k| pa.coord(k) + 0.5 * pa.step).collect();
    let n = spec.n();
    let zero = vec![0.0; spec.m()];
    let mut points = Vec::new();
    for i in 0..spec.m() {
        for &x in &xs {
            for &p in &ps {
                points.push((i, x, p));
            }
        }
    }
    let diffs: Vec<Result<f64>> = parallel::map_slice(&points, |&(i, x, p)| {
        let xv = vec![x; n];
        let pv = vec![p; n];
        let direct = effective_hamiltonian(spec, i, &xv, &pv, &zero, cell)?.value;
        Ok((cache.query(i, &xv, &pv, &zero)? - direct).abs())
    });
    diffs.into_iter().try_fold(0.0f64, |a, d| Ok(a.max(d?)))
}

fn grid_points(period: f64, eps: f64, per_eps: usize) -> Result<usize> {
    let r = period / eps;
    if !(eps > 0.0) || (r - r.round()).abs() > 1e-9 * r || r.round() < 1.0 {
        return precondition(format!("period {period} is not an integer multiple of eps = {eps}"));
    }
    Ok(r.round() as usize * per_eps)
}

fn ladder(n: usize, period: f64, base: usize, levels: usize) -> Result<Vec<TorusGrid>> {
    (0..levels.max(2)).map(|k| TorusGrid::new(n, period, base << k)).collect()
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return precondition("empty eps list");
    }
    if eps_list.iter().any(|&e| !(e > 0.0)) {
        return precondition("eps values must be positive");
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return precondition("eps list must be strictly decreasing");
    }
    Ok(())
}

/// Stored times of a rate run: the uniform `√ε/4` partition plus `ε·2^k`
/// (`k ≥ −3`) below `√ε` for the small-time table.
pub fn rate_output(eps: f64) -> OutputTimes {
    let mut extra = Vec::new();
    let mut t = eps / 8.0;
    while t < eps.sqrt() {
        extra.push(t);
        t *= 2.0;
    }
    OutputTimes::Uniform {
        max_interval: eps.sqrt() / 4.0,
        extra,
    }
}

fn union_output(eps_list: &[f64], t_end: f64, more: &[f64]) -> OutputTimes {
    let mut extra: Vec<f64> = more.to_vec();
    let mut step = t_end;
    for &e in eps_list {
        let o = rate_output(e);
        extra.extend(stored_times(t_end, &o));
        step = step.min(e.sqrt() / 4.0);
    }
    OutputTimes::Uniform {
        max_interval: step,
        extra,
    }
}

fn slice_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |d, (x, y)| d.max((x - y).abs()))
}

/// Fits `error ≈ C·ε^slope` in log-log space.
pub fn fit_rate(eps: &[f64], errors: &[f64]) -> Option<LinearFit> {
    loglog_fit(eps, errors)
}

/// Error attribution of one sweep point.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    /// Richardson estimate of the fine solve.
    pub fine: f64,
    /// Richardson estimate of the effective solve.
    pub effective: f64,
    /// Effect of the cache interpolation error on the effective solution.
    pub cache: f64,
}

impl Budget {
    pub fn total(&self) -> f64 {
        self.fine + self.effective + self.cache
    }
}

#[derive(Debug, Clone)]
pub struct RateRow {
    pub eps: f64,
    /// Points of the grid whose solution is reported.
    pub points: usize,
    pub error: f64,
    pub budget: Budget,
    /// The ladder was refined once because the first budget was too large.
    pub refined: bool,
    /// Budget at most `BUDGET_FRACTION` of the error.
    pub trusted: bool,
    /// `max_{t<√ε} error(t)/min{t, ε}` (Cauchy runs).
    pub small_time_ratio: Option<f64>,
    /// `(sup |u^ε|, M/λ)` (stationary runs).
    pub bound: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct SmallTimeRow {
    pub eps: f64,
    pub t: f64,
    pub error: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateKind {
    Cauchy { t_end: f64 },
    Stationary { lambda: f64 },
}

#[derive(Debug, Clone)]
pub struct RateReport {
    pub problem: String,
    pub kind: RateKind,
    pub rows: Vec<RateRow>,
    pub small_time: Vec<SmallTimeRow>,
    pub fit: Option<LinearFit>,
    /// Kendall test for growth of the small-time ratio as ε decreases.
    pub small_time_trend: Option<KendallTrend>,
    pub effective_points: usize,
    pub cache_seconds: f64,
    pub cache_error: f64,
    pub seconds: f64,
}

impl RateReport {
    pub fn eps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eps).collect()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    /// Fitted slope, withheld unless the log residual RMS is below `MAX_FIT_RMS`.
    pub fn slope(&self) -> Option<f64> {
        self.fit.filter(|f| f.residual_rms < MAX_FIT_RMS).map(|f| f.slope)
    }

    pub fn trusted(&self) -> bool {
        self.rows.iter().all(|r| r.trusted)
    }

    /// No significant growth of the small-time ratio across the sweep.
    pub fn small_time_bounded(&self) -> Option<bool> {
        self.small_time_trend.map(|k| k.p_value > TREND_ALPHA)
    }

    pub fn bounds_hold(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.bound.map_or(true, |(s, b)| s <= b * (1.0 + 1e-9) + 1e-12))
    }

    /// Writes `rate.csv`, `rate_small_time.csv`, `rate_plot.dat` and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    num(r.eps),
                    r.points.to_string(),
                    num(r.error),
                    num(r.budget.fine),
                    num(r.budget.effective),
                    num(r.budget.cache),
                    r.refined.to_string(),
                    r.trusted.to_string(),
                    r.small_time_ratio.map_or(String::new(), num),
                    r.bound.map_or(String::new(), |b| num(b.0)),
                    r.bound.map_or(String::new(), |b| num(b.1)),
                ]
            })
            .collect();
        write_table(
            &dir.join("rate.csv"),
            &[
                "eps",
                "points",
                "error",
                "budget_fine",
                "budget_effective",
                "budget_cache",
                "refined",
                "trusted",
                "small_time_ratio",
                "sup_norm",
                "sup_bound",
            ],
            &rows,
        )?;
        let small: Vec<Vec<String>> = self
            .small_time
            .iter()
            .map(|s| vec![num(s.eps), num(s.t), num(s.error), num(s.ratio)])
            .collect();
        write_table(&dir.join("rate_small_time.csv"), &["eps", "t", "error", "ratio"], &small)?;
        let mut plot = String::new();
        for r in &self.rows {
            let _ = writeln!(plot, "{} {}", num(r.eps), num(r.error));
        }
        fs::write(dir.join("rate_plot.dat"), plot)?;
        fs::write(dir.join("summary.txt"), self.summary())?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let kind = match self.kind {
            RateKind::Cauchy { t_end } => format!("Cauchy, T = {t_end}"),
            RateKind::Stationary { lambda } => format!("stationary, lambda = {lambda}"),
        };
        let _ = writeln!(s, "rate experiment: {} ({kind})", self.problem);
        let _ = writeln!(
            s,
            "effective grid {} points; cache interpolation error {:.3e}",
            self.effective_points, self.cache_error
        );
        let _ = writeln!(s, "{:>10} {:>7} {:>12} {:>12} {:>8}", "eps", "points", "error", "budget", "trusted");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>10.5} {:>7} {:>12.5e} {:>12.5e} {:>8}",
                r.eps,
                r.points,
                r.error,
                r.budget.total(),
                r.trusted
            );
        }
        match (self.fit, self.slope()) {
            (Some(f), Some(sl)) => {
                let _ = writeln!(s, "slope {sl:.4} (intercept {:.4}, log residual RMS {:.4})", f.intercept, f.residual_rms);
            }
            (Some(f), None) => {
                let _ = writeln!(s, "slope withheld: log residual RMS {:.4} >= {MAX_FIT_RMS}", f.residual_rms);
            }
            _ => {
                let _ = writeln!(s, "slope unavailable");
            }
        }
        if let Some(k) = self.small_time_trend {
            let ratios: Vec<String> = self
                .rows
                .iter()
                .map(|r| r.small_time_ratio.map_or("-".into(), |v| format!("{v:.4}")))
                .collect();
            let _ = writeln!(
                s,
                "small-time max error/min(t, eps): [{}]; Kendall tau {:.3}, p {:.3}",
                ratios.join(", "),
                k.tau,
                k.p_value
            );
        }
        if matches!(self.kind, RateKind::Stationary { .. }) {
            let _ = writeln!(s, "sup-norm bound M/lambda holds: {}", self.bounds_hold());
        }
        let _ = writeln!(s, "all budgets within {:.0}%: {}", 100.0 * BUDGET_FRACTION, self.trusted());
        s
    }
}

#[derive(Debug, Clone)]
pub struct RateSettings {
    pub eps_list: Vec<f64>,
    pub t_end: f64,
    pub grid: GridSettings,
    pub cache: CacheSettings,
}

impl Default for RateSettings {
    fn default() -> Self {
        RateSettings {
            eps_list: vec![0.2, 0.1, 0.05, 0.025],
            t_end: 1.0,
            grid: GridSettings::default(),
            cache: CacheSettings::default(),
        }
    }
}

fn cache_gronwall(delta: f64, theta: f64, t: f64) -> f64 {
    if theta > 0.0 {
        delta * ((theta * t).exp() - 1.0) / theta
    } else {
        delta * t
    }
}

/// Homogenization error `sup |u^ε − ū|` over `t ∈ [√ε, T]` for each ε,
/// the small-time table for `t < √ε`, and the log-log slope.
pub fn run_rate_experiment(problem: &Problem, s: &RateSettings) -> Result<RateReport> {
    let started = Instant::now();
    check_eps_list(&s.eps_list)?;
    if !(s.t_end > 0.0) {
        return precondition("t_end must be positive");
    }
    let spec = &problem.spec;
    let period = spec.slow_period();
    let n = spec.n();
    for &e in &s.eps_list {
        grid_points(period, e, s.grid.per_eps)?;
    }
    let gb = gradient_box(spec, &problem.data, s.t_end);
    let eff = build_effective(spec, 1.25 * gb.radius, gb.u_bound, &s.cache)?;
    let flux = s.grid.flux_for(n);
    let out = union_output(&s.eps_list, s.t_end, &[]);
    let eff_cfg = SchemeConfig::new(TorusGrid::new(n, period, s.grid.effective)?, s.t_end)
        .with_output(out)
        .with_flux(flux);
    let eff_grids = ladder(n, period, s.grid.effective, s.grid.levels)?;
    let ue = scheme_error_estimate(&eff.spec, &problem.data, None, &eff_grids, &eff_cfg)?;
    if eff.cache.out_of_box_queries() > 0 {
        return Err(Error::OutOfBox(format!(
            "{} effective queries left the cache box",
            eff.cache.out_of_box_queries()
        )));
    }
    let ubar = ue.solutions.last().unwrap().clone();
    let eff_budget = ue.finest();
    let cache_budget = cache_gronwall(eff.interpolation_error, spec.theta(), s.t_end);
    info!("effective solution: budget {eff_budget:.2e}, cache budget {cache_budget:.2e}");
    let results: Vec<Result<(RateRow, Vec<SmallTimeRow>)>> = parallel::map_slice(&s.eps_list, |&eps| {
        cauchy_point(problem, eps, &ubar, eff_budget, cache_budget, s)
    });
    let mut rows = Vec::new();
    let mut small = Vec::new();
    for r in results {
        let (row, st) = r?;
        rows.push(row);
        small.extend(st);
    }
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.small_time_ratio).collect();
    Ok(RateReport {
        problem: problem.id.clone(),
        kind: RateKind::Cauchy { t_end: s.t_end },
        fit: fit_rate(&eps, &errors),
        small_time_trend: (ratios.len() == rows.len() && rows.len() >= 2).then(|| kendall_increasing(&ratios)),
        rows,
        small_time: small,
        effective_points: ubar.grid().points(),
        cache_seconds: eff.seconds,
        cache_error: eff.interpolation_error,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn cauchy_point(
    problem: &Problem,
    eps: f64,
    ubar: &Field,
    eff_budget: f64,
    cache_budget: f64,
    s: &RateSettings,
) -> Result<(RateRow, Vec<SmallTimeRow>)> {
    let spec = &problem.spec;
    let period = spec.slow_period();
    let n = spec.n();
    let base = grid_points(period, eps, s.grid.per_eps)?;
    let cfg = SchemeConfig::new(TorusGrid::new(n, period, base)?, s.t_end)
        .with_output(rate_output(eps))
        .with_flux(s.grid.flux_for(n));
    let mut factor = 1;
    loop {
        let grids = ladder(n, period, base * factor, s.grid.levels)?;
        let est = scheme_error_estimate(spec, &problem.data, Some(eps), &grids, &cfg)?;
        let fine = est.solutions.last().unwrap();
        let ub = ubar.resample_to(fine.grid())?;
        let error = sup_distance(fine, &ub, (eps.sqrt(), s.t_end))?;
        let budget = Budget {
            fine: est.finest(),
            effective: eff_budget,
            cache: cache_budget,
        };
        let trusted = budget.total() <= BUDGET_FRACTION * error;
        // Refining the fine grid cannot help when another budget term dominates.
        let fine_dominates = budget.fine >= budget.effective.max(budget.cache);
        if trusted || factor > 1 || !fine_dominates {
            if !trusted {
                warn!("eps {eps}: budget {:.3e} exceeds {BUDGET_FRACTION} of error {error:.3e}", budget.total());
            }
            let mut buf = vec![0.0; fine.slice_len()];
            let mut small = Vec::new();
            for (k, &t) in fine.stamps().iter().enumerate() {
                if t > 0.0 && t < eps.sqrt() {
                    ub.slice_at(t, &mut buf)?;
                    let e = slice_gap(fine.slice(k), &buf);
                    small.push(SmallTimeRow {
                        eps,
                        t,
                        error: e,
                        ratio: e / t.min(eps),
                    });
                }
            }
            let ratio = small.iter().map(|r| r.ratio).fold(f64::NAN, f64::max);
            info!("eps {eps}: error {error:.4e}, budget {:.2e}", budget.total());
            return Ok((
                RateRow {
                    eps,
                    points: fine.grid().points(),
                    error,
                    budget,
                    refined: factor > 1,
                    trusted,
                    small_time_ratio: (!small.is_empty()).then_some(ratio),
                    bound: None,
                },
                small,
            ));
        }
        warn!("eps {eps}: budget {:.3e} too large against {error:.3e}; refining once", budget.total());
        factor *= 2;
    }
}

#[derive(Debug, Clone)]
pub struct StationarySettings {
    pub eps_list: Vec<f64>,
    pub lambda: f64,
    pub grid: GridSettings,
    pub cache: CacheSettings,
}

/// `M = λ/(λ−Θ)·sup|H(x, y, 0, 0)|`, the level bounding `λ|u|`.
fn stationary_level(spec: &HamiltonianSpec, lambda: f64) -> f64 {
    lambda / (lambda - spec.theta()) * spec.sup_at_rest(64)
}

/// Stationary homogenization error `sup |u^ε − ū|` per ε with the a-priori
/// bound `‖u^ε‖ ≤ M/λ` checked at every ε.
pub fn run_stationary_rate(problem: &Problem, s: &StationarySettings) -> Result<RateReport> {
    let started = Instant::now();
    check_eps_list(&s.eps_list)?;
    let spec = &problem.spec;
    let lambda = s.lambda;
    if !(lambda > spec.theta()) {
        return precondition(format!("need lambda > theta (lambda = {lambda}, theta = {})", spec.theta()));
    }
    if let Some(&e) = s.eps_list.iter().find(|&&e| e >= 1.0 / (lambda * lambda)) {
        return precondition(format!("eps = {e} is not below 1/lambda^2 = {}", 1.0 / (lambda * lambda)));
    }
    let period = spec.slow_period();
    let n = spec.n();
    for &e in &s.eps_list {
        grid_points(period, e, s.grid.per_eps)?;
    }
    let big_m = stationary_level(spec, lambda);
    let ub = big_m / lambda;
    let level = big_m + spec.theta() * ub;
    let radius = (0..spec.m()).map(|i| spec.coercivity_radius(i, level, ub)).fold(0.0, f64::max);
    let eff = build_effective(spec, 1.25 * radius, ub, &s.cache)?;
    let flux = s.grid.flux_for(n);
    let scfg = StationaryConfig::new(lambda);
    let cfg = SchemeConfig::new(TorusGrid::new(n, period, s.grid.effective)?, 1.0).with_flux(flux);
    let (ue, _) = stationary_error_estimate(
        &eff.spec,
        None,
        &scfg,
        &ladder(n, period, s.grid.effective, s.grid.levels)?,
        &cfg,
    )?;
    if eff.cache.out_of_box_queries() > 0 {
        return Err(Error::OutOfBox(format!(
            "{} effective queries left the cache box",
            eff.cache.out_of_box_queries()
        )));
    }
    let ubar = ue.solutions.last().unwrap().clone();
    let eff_budget = ue.finest();
    let cache_budget = eff.interpolation_error / (lambda - spec.theta());
    let results: Vec<Result<RateRow>> = parallel::map_slice(&s.eps_list, |&eps| {
        let base = grid_points(period, eps, s.grid.per_eps)?;
        let grids = ladder(n, period, base, s.grid.levels)?;
        let (est, sols) = stationary_error_estimate(spec, Some(eps), &scfg, &grids, &cfg)?;
        let fine = est.solutions.last().unwrap();
        let error = sup_distance(fine, &ubar.resample_to(fine.grid())?, (0.0, 0.0))?;
        let budget = Budget {
            fine: est.finest(),
            effective: eff_budget,
            cache: cache_budget,
        };
        // The bound must hold on every grid of the ladder.
        let worst = sols
            .iter()
            .map(|s| (s.sup_norm, s.bound))
            .fold((0.0f64, f64::INFINITY), |a, b| (a.0.max(b.0), a.1.min(b.1)));
        info!("stationary eps {eps}: error {error:.4e}, budget {:.2e}", budget.total());
        Ok(RateRow {
            eps,
            points: fine.grid().points(),
            error,
            budget,
            refined: false,
            trusted: budget.total() <= BUDGET_FRACTION * error,
            small_time_ratio: None,
            bound: Some(worst),
        })
    });
    let rows: Vec<RateRow> = results.into_iter().collect::<Result<_>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(RateReport {
        problem: problem.id.clone(),
        kind: RateKind::Stationary { lambda },
        fit: fit_rate(&eps, &errors),
        small_time_trend: None,
        rows,
        small_time: Vec::new(),
        effective_points: ubar.grid().points(),
        cache_seconds: eff.seconds,
        cache_error: eff.interpolation_error,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct Example11Settings {
    pub eps_list: Vec<f64>,
    pub t_list: Vec<f64>,
    pub potential: Potential,
    /// Amplitude κ of `F(u₁, u₂) = κ sin(u₁ − u₂)`.
    pub coupling: f64,
    pub grid: GridSettings,
    pub cache: CacheSettings,
}

impl Default for Example11Settings {
    fn default() -> Self {
        Example11Settings {
            eps_list: vec![0.1, 0.05, 0.025],
            t_list: vec![0.005, 0.02, 0.1, 1.0],
            potential: Potential::Tent,
            coupling: 0.0,
            grid: GridSettings::default(),
            cache: CacheSettings {
                x_points: 1,
                ..CacheSettings::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example11Row {
    pub eps: f64,
    pub t: f64,
    /// `u₁^ε(0, t) − u₂^ε(0, t)`.
    pub difference: f64,
    /// `min{t, ε/3}`.
    pub lower_bound: f64,
    /// Richardson estimate of the error in `difference`.
    pub tol_scheme: f64,
    /// `sup_x |u^ε − ū|(t)`.
    pub sup_error: f64,
    /// `min{t/2, ε/6}`.
    pub sup_lower_bound: f64,
    pub sup_tol: f64,
}

impl Example11Row {
    pub fn holds(&self) -> bool {
        self.difference >= self.lower_bound - self.tol_scheme
    }
    pub fn sup_holds(&self) -> bool {
        self.sup_error >= self.sup_lower_bound - self.sup_tol
    }
    /// The scheme tolerance is at most `BUDGET_FRACTION` of the bound.
    pub fn budget_ok(&self) -> bool {
        self.tol_scheme <= BUDGET_FRACTION * self.lower_bound
    }
    pub fn margin(&self) -> f64 {
        self.difference - self.lower_bound
    }
}

#[derive(Debug, Clone)]
pub struct Example11Report {
    pub coupling: f64,
    pub potential: Potential,
    /// `‖ū‖∞` of the effective solve with zero data.
    pub ubar_sup: f64,
    pub rows: Vec<Example11Row>,
    pub seconds: f64,
}

impl Example11Report {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds() && r.sup_holds())
    }
    pub fn budgets_ok(&self) -> bool {
        self.rows.iter().all(|r| r.budget_ok())
    }

    /// Writes `example11.csv`, `example11_margin.dat` and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    num(r.eps),
                    num(r.t),
                    num(r.difference),
                    num(r.lower_bound),
                    num(r.tol_scheme),
                    num(r.sup_error),
                    num(r.sup_lower_bound),
                    num(r.sup_tol),
                    r.holds().to_string(),
                ]
            })
            .collect();
        write_table(
            &dir.join("example11.csv"),
            &[
                "eps",
                "t",
                "difference",
                "lower_bound",
                "tol_scheme",
                "sup_error",
                "sup_lower_bound",
                "sup_tol",
                "holds",
            ],
            &rows,
        )?;
        let mut plot = String::new();
        for r in &self.rows {
            let _ = writeln!(plot, "{} {} {}", num(r.eps), num(r.t), num(r.margin()));
        }
        fs::write(dir.join("example11_margin.dat"), plot)?;
        fs::write(dir.join("summary.txt"), self.summary())?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "example11: potential {}, F = {} sin(u1 - u2); |ubar| = {:.3e}",
            self.potential, self.coupling, self.ubar_sup
        );
        let _ = writeln!(
            s,
            "{:>8} {:>8} {:>12} {:>12} {:>10} {:>12} {:>6}",
            "eps", "t", "u1-u2 at 0", "min(t,e/3)", "tol", "sup|u-ubar|", "holds"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>8.4} {:>8.4} {:>12.5e} {:>12.5e} {:>10.2e} {:>12.5e} {:>6}",
                r.eps,
                r.t,
                r.difference,
                r.lower_bound,
                r.tol_scheme,
                r.sup_error,
                r.holds() && r.sup_holds()
            );
        }
        let _ = writeln!(s, "all bounds hold: {}; tolerances within {:.0}% of the bound: {}", self.all_hold(), 100.0 * BUDGET_FRACTION, self.budgets_ok());
        s
    }
}

/// The two-equation sharpness example: `u₁^ε(0, t) − u₂^ε(0, t) ≥ min{t, ε/3}`
/// while the effective solution vanishes.
pub fn run_example11(s: &Example11Settings) -> Result<Example11Report> {
    let started = Instant::now();
    check_eps_list(&s.eps_list)?;
    if s.t_list.is_empty() || s.t_list.iter().any(|&t| !(t > 0.0)) {
        return precondition("evaluation times must be positive");
    }
    let problem = Problem::builtin(
        "example11",
        &ProblemParams {
            coupling: Some(s.coupling),
            potential: Some(s.potential),
            ..Default::default()
        },
    )?;
    let spec = &problem.spec;
    let t_end = s.t_list.iter().copied().fold(0.0, f64::max);
    let gb = gradient_box(spec, &problem.data, t_end);
    let eff = build_effective(spec, 1.25 * gb.radius, gb.u_bound, &s.cache)?;
    let rows: Vec<Result<Vec<Example11Row>>> = parallel::map_slice(&s.eps_list, |&eps| {
        // x-independent: any period holding whole cells gives the same solution.
        let period = eps * (1.0 / eps).round().max(1.0);
        let base = grid_points(period, eps, s.grid.per_eps)?;
        let out = OutputTimes::Uniform {
            max_interval: eps.sqrt() / 4.0,
            extra: s.t_list.clone(),
        };
        let ecfg = SchemeConfig::new(TorusGrid::new(1, period, s.grid.effective)?, t_end)
            .with_output(out.clone())
            .with_flux(s.grid.flux);
        let ubar = solve_cauchy(&eff.spec, &problem.data, None, &ecfg)?;
        let ubar_sup = ubar.sup_norm();
        if !(ubar_sup <= 1e-3) {
            return Err(Error::Acceptance(format!(
                "effective solution is not zero (sup {ubar_sup:.3e}); H̄(x, 0, 0) must vanish"
            )));
        }
        let cfg = SchemeConfig::new(TorusGrid::new(1, period, base)?, t_end)
            .with_output(out)
            .with_flux(s.grid.flux);
        let grids = ladder(1, period, base, s.grid.levels)?;
        let est = scheme_error_estimate(spec, &problem.data, Some(eps), &grids, &cfg)?;
        let fine = est.solutions.last().unwrap();
        let ub = ubar.resample_to(fine.grid())?;
        let mut buf = vec![0.0; fine.slice_len()];
        let mut out_rows = Vec::new();
        for &t in &s.t_list {
            // u₁ − u₂ at x = 0 (grid index 0) on every grid of the ladder.
            let diffs: Vec<f64> = est
                .solutions
                .iter()
                .map(|f| {
                    let k = f.stamp_index(t).expect("evaluation time is stored");
                    f.value(0, k, 0) - f.value(1, k, 0)
                })
                .collect();
            let d: Vec<f64> = diffs.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
            // Floor at rounding level: on the plateau the difference is exactly t.
            let tol = RefinementEstimate::from_differences(est.points.clone(), d, 2, Vec::new()).finest().max(1e-12);
            let k = fine.stamp_index(t).expect("evaluation time is stored");
            ub.slice_at(t, &mut buf)?;
            out_rows.push(Example11Row {
                eps,
                t,
                difference: *diffs.last().unwrap(),
                lower_bound: t.min(eps / 3.0),
                tol_scheme: tol,
                sup_error: slice_gap(fine.slice(k), &buf),
                sup_lower_bound: (0.5 * t).min(eps / 6.0),
                sup_tol: est.finest() + ubar_sup,
            });
        }
        Ok(out_rows)
    });
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    // The effective solve is repeated per ε only for grid compatibility; report its size once.
    let ubar_sup = {
        let ecfg = SchemeConfig::new(TorusGrid::new(1, 1.0, s.grid.effective)?, t_end).with_flux(s.grid.flux);
        solve_cauchy(&eff.spec, &problem.data, None, &ecfg)?.sup_norm()
    };
    Ok(Example11Report {
        coupling: s.coupling,
        potential: s.potential,
        ubar_sup,
        rows: all,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct ActionSettings {
    pub eps_list: Vec<f64>,
    /// `(x, y, t)`: curves from `x` at time 0 to `y` at time `t`.
    pub endpoints: Vec<(f64, f64, f64)>,
    pub component: usize,
    /// Frozen slow variable `c`.
    pub slow: f64,
    /// Frozen coupling argument `d` (zeros when empty).
    pub coupling: Vec<f64>,
    /// DP time step is `ε / steps_per_eps`.
    pub steps_per_eps: f64,
    pub dv: f64,
    pub v_bound: f64,
    pub p_points: usize,
    pub cell_points: usize,
}

impl Default for ActionSettings {
    fn default() -> Self {
        ActionSettings {
            eps_list: vec![0.2, 0.1, 0.05, 0.025],
            endpoints: vec![(0.0, 0.0, 0.5), (0.0, 0.0, 1.0)],
            component: 0,
            slow: 0.0,
            coupling: Vec::new(),
            steps_per_eps: 8.0,
            dv: 0.05,
            v_bound: 1.75,
            p_points: 161,
            cell_points: 256,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ActionRow {
    pub eps: f64,
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub m_eps: f64,
    pub m_bar: f64,
    pub max_speed: f64,
}

impl ActionRow {
    pub fn gap(&self) -> f64 {
        (self.m_eps - self.m_bar).abs()
    }
    pub fn ratio(&self) -> f64 {
        self.gap() / self.eps
    }
}

#[derive(Debug, Clone)]
pub struct ActionGapReport {
    pub problem: String,
    pub rows: Vec<ActionRow>,
    /// Kendall test for growth of `gap/ε` as ε decreases, per endpoint pair.
    pub trends: Vec<((f64, f64, f64), KendallTrend)>,
    pub seconds: f64,
}

impl ActionGapReport {
    /// No endpoint pair shows a significant growth of `gap/ε`.
    pub fn bounded(&self) -> bool {
        self.trends.iter().all(|(_, k)| k.p_value > TREND_ALPHA)
    }

    /// `gap(ε_{k+1}) / gap(ε_k)` for consecutive sweep entries of each pair.
    pub fn halving_ratios(&self) -> Vec<((f64, f64, f64), f64, f64)> {
        let mut out = Vec::new();
        for &(e, _) in &self.trends {
            let rows: Vec<&ActionRow> = self.rows.iter().filter(|r| (r.x, r.y, r.t) == e).collect();
            for w in rows.windows(2) {
                if w[0].gap() > 0.0 {
                    out.push((e, w[1].eps, w[1].gap() / w[0].gap()));
                }
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    num(r.eps),
                    num(r.x),
                    num(r.y),
                    num(r.t),
                    num(r.m_eps),
                    num(r.m_bar),
                    num(r.gap()),
                    num(r.ratio()),
                    num(r.max_speed),
                ]
            })
            .collect();
        write_table(
            &dir.join("action_gap.csv"),
            &["eps", "x", "y", "t", "m_eps", "m_bar", "gap", "gap_over_eps", "max_speed"],
            &rows,
        )?;
        fs::write(dir.join("summary.txt"), self.summary())?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "action gap: {}", self.problem);
        let _ = writeln!(
            s,
            "{:>8} {:>16} {:>12} {:>12} {:>10} {:>10}",
            "eps", "(x, y, t)", "m_eps", "m_bar", "gap", "gap/eps"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>8.4} {:>16} {:>12.6} {:>12.6} {:>10.3e} {:>10.4}",
                r.eps,
                format!("({}, {}, {})", r.x, r.y, r.t),
                r.m_eps,
                r.m_bar,
                r.gap(),
                r.ratio()
            );
        }
        for (e, k) in &self.trends {
            let _ = writeln!(s, "{e:?}: Kendall tau {:.3}, p {:.3}", k.tau, k.p_value);
        }
        let _ = writeln!(s, "gap/eps bounded (no growth trend): {}", self.bounded());
        s
    }
}

/// `|m^ε − m̄|` for point-to-point actions with slow variable and coupling frozen.
pub fn run_action_gap(problem: &Problem, s: &ActionSettings) -> Result<ActionGapReport> {
    let started = Instant::now();
    check_eps_list(&s.eps_list)?;
    let spec = &problem.spec;
    if spec.n() != 1 {
        return precondition("point actions are one-dimensional");
    }
    if s.component >= spec.m() {
        return precondition(format!("component {} out of range", s.component));
    }
    let d = if s.coupling.is_empty() { vec![0.0; spec.m()] } else { s.coupling.clone() };
    if d.len() != spec.m() {
        return precondition("frozen coupling has the wrong number of components");
    }
    for &(x, y, t) in &s.endpoints {
        if !(t > 0.0) {
            return precondition("action horizon must be positive");
        }
        if (y - x).abs() > s.v_bound * t {
            return Err(Error::Unreachable {
                distance: (y - x).abs(),
                reach: s.v_bound * t,
            });
        }
    }
    let frozen = spec.frozen_slow(&[s.slow]);
    let ub = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let p_box = 2.0 * s.v_bound + (0..spec.m()).map(|i| spec.coercivity_radius(i, 0.0, ub)).fold(0.0, f64::max);
    let cell = CellConfig::for_dimension(1).with_points(s.cell_points);
    let cache = build_cache(
        &frozen,
        &CacheBoxes {
            x_points: 1,
            p: (-p_box, p_box),
            p_points: s.p_points,
            c: None,
        },
        &cell,
    )?;
    let bar = EffectiveLagrangian::new(Arc::new(cache))?;
    let lag = LagrangianEvaluator::new(spec.clone(), 1.05 * s.v_bound, ub)?;
    let mut jobs = Vec::new();
    for &e in &s.endpoints {
        for &eps in &s.eps_list {
            jobs.push((e, eps));
        }
    }
    let results: Vec<Result<ActionRow>> = jobs
        .iter()
        .map(|&((x, y, t), eps)| {
            let cfg = DPConfig::new(eps / s.steps_per_eps, s.v_bound).with_dv(s.dv);
            let me = point_action(&lag, s.component, 0.0, t, x, y, s.slow, &d, Some(eps), &cfg)?;
            let mb = point_action(&bar, s.component, 0.0, t, x, y, s.slow, &d, None, &cfg)?;
            info!("action eps {eps} ({x}, {y}, {t}): m_eps {:.6}, m_bar {:.6}", me.value, mb.value);
            Ok(ActionRow {
                eps,
                x,
                y,
                t,
                m_eps: me.value,
                m_bar: mb.value,
                max_speed: me.max_speed,
            })
        })
        .collect();
    let rows: Vec<ActionRow> = results.into_iter().collect::<Result<_>>()?;
    let trends = s
        .endpoints
        .iter()
        .map(|&e| {
            let ratios: Vec<f64> = rows.iter().filter(|r| (r.x, r.y, r.t) == e).map(|r| r.ratio()).collect();
            (e, kendall_increasing(&ratios))
        })
        .collect();
    Ok(ActionGapReport {
        problem: problem.id.clone(),
        rows,
        trends,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Fd,
    Dp,
}

#[derive(Debug, Clone)]
pub struct IterationSettings {
    pub eps: f64,
    pub t_end: f64,
    /// Stationary iteration with this discount when set.
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub backend: BackendKind,
    pub grid: GridSettings,
    pub cache: CacheSettings,
    /// DP time step per grid spacing and speed bound (DP backend only).
    pub dp_steps_per_h: f64,
    pub dp_v_bound: f64,
}

impl Default for IterationSettings {
    fn default() -> Self {
        IterationSettings {
            eps: 0.1,
            t_end: 1.0,
            lambda: None,
            tol: 1e-10,
            max_iter: 8,
            backend: BackendKind::Fd,
            grid: GridSettings::default(),
            cache: CacheSettings::default(),
            dp_steps_per_h: 8.0,
            dp_v_bound: 3.0,
        }
    }
}

/// One measured contraction ratio against its predicted limit.
#[derive(Debug, Clone, Copy)]
pub struct RatioCheck {
    pub l: usize,
    pub ratio: f64,
    pub limit: f64,
}

impl RatioCheck {
    pub fn ok(&self) -> bool {
        self.ratio <= self.limit
    }
}

#[derive(Debug, Clone)]
pub struct IterationReport {
    pub problem: String,
    pub eps: f64,
    pub lambda: Option<f64>,
    pub backend: BackendKind,
    pub trace: IterationTrace,
    /// `gap_{ℓ+1}/gap_ℓ` for `ℓ ≥ 1` against `Θt/(ℓ+1) + TOL_RATIO` (at `t = T`)
    /// or `Θ/λ + TOL_RATIO`.
    pub ratio_checks: Vec<RatioCheck>,
    /// Sup distance between the last iterate and the direct coupled solve.
    pub direct_distance: f64,
    /// Fixed-point residual of the direct coupled solve.
    pub direct_residual: f64,
    /// `3 ×` the Richardson budget of the direct solve.
    pub tol_cross: f64,
    pub seconds: f64,
}

impl IterationReport {
    pub fn contraction_ok(&self) -> bool {
        self.ratio_checks.iter().all(|c| c.ok())
    }
    pub fn limit_ok(&self) -> bool {
        self.direct_distance <= self.tol_cross
    }

    /// Writes `trace.csv` and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.trace.write_csv(&dir.join("trace.csv"))?;
        fs::write(dir.join("summary.txt"), self.summary())?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let kind = match self.lambda {
            Some(l) => format!("stationary, lambda = {l}"),
            None => "Cauchy".to_string(),
        };
        let _ = writeln!(
            s,
            "iteration: {} ({kind}), eps {}, backend {:?}, {} iterates, stop {:?}",
            self.problem,
            self.eps,
            self.backend,
            self.trace.iterates.len(),
            self.trace.stop_reason
        );
        let sup = self.trace.sup_gaps();
        let _ = writeln!(s, "sup gaps: {:?}", sup.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>());
        for c in &self.ratio_checks {
            let _ = writeln!(s, "ratio l = {}: {:.4} (limit {:.4}) {}", c.l, c.ratio, c.limit, if c.ok() { "ok" } else { "EXCEEDED" });
        }
        let _ = writeln!(
            s,
            "distance to direct coupled solve {:.3e} (tol_cross {:.3e}); residual of direct solve {:.3e}",
            self.direct_distance, self.tol_cross, self.direct_residual
        );
        if let Some((rate, c)) = self.trace.decay_fit() {
            let _ = writeln!(s, "fitted geometric rate {rate:.4}, gap_1 {c:.3e}");
        }
        s
    }
}

/// Seeds the decoupling iteration with the effective solution and compares
/// its limit with the direct coupled solve.
pub fn run_iteration(problem: &Problem, s: &IterationSettings) -> Result<IterationReport> {
    let started = Instant::now();
    let spec = &problem.spec;
    let n = spec.n();
    let period = spec.slow_period();
    let eps = s.eps;
    let base = grid_points(period, eps, s.grid.per_eps)?;
    let fine = TorusGrid::new(n, period, base)?;
    let flux = s.grid.flux_for(n);
    match s.lambda {
        None => {
            let gb = gradient_box(spec, &problem.data, s.t_end);
            let eff = build_effective(spec, 1.25 * gb.radius, gb.u_bound, &s.cache)?;
            let ecfg = SchemeConfig::new(TorusGrid::new(n, period, s.grid.effective)?, s.t_end)
                .with_output(OutputTimes::for_eps(eps))
                .with_flux(flux);
            let seed = solve_cauchy(&eff.spec, &problem.data, None, &ecfg)?;
            // Every step stored: the frozen coupling is then read exactly at the
            // level an explicit coupled step would use.
            let cfg = SchemeConfig::new(fine.clone(), s.t_end)
                .with_output(OutputTimes::EveryStep)
                .with_flux(flux);
            let backend = make_backend(problem, s, &cfg)?;
            let trace = iterate_cauchy(spec, &problem.data, Some(eps), &seed, &backend, s.tol, s.max_iter)?;
            let at_end = trace.ratios_at(s.t_end);
            let theta = spec.theta();
            let ratio_checks = at_end
                .iter()
                .enumerate()
                .skip(1)
                .take(4)
                .filter_map(|(l, r)| {
                    r.map(|ratio| RatioCheck {
                        l,
                        ratio,
                        limit: theta * s.t_end / (l as f64 + 1.0) + TOL_RATIO,
                    })
                })
                .collect();
            let ucfg = cfg.clone().with_output(OutputTimes::for_eps(eps));
            let est = scheme_error_estimate(spec, &problem.data, Some(eps), &ladder(n, period, base, s.grid.levels)?, &ucfg)?;
            let direct = solve_cauchy(spec, &problem.data, Some(eps), &cfg)?;
            let direct_distance = sup_distance(trace.limit(), &direct, (0.0, s.t_end))?;
            let direct_residual = fixed_point_residual(
                spec,
                &direct,
                Some(eps),
                ResidualMode::Cauchy {
                    data: &problem.data,
                    backend: &backend,
                },
            )?;
            Ok(IterationReport {
                problem: problem.id.clone(),
                eps,
                lambda: None,
                backend: s.backend,
                trace,
                ratio_checks,
                direct_distance,
                direct_residual,
                tol_cross: 3.0 * est.errors[0],
                seconds: started.elapsed().as_secs_f64(),
            })
        }
        Some(lambda) => {
            if !(lambda > spec.theta()) {
                return precondition(format!("need lambda > theta (lambda = {lambda}, theta = {})", spec.theta()));
            }
            let big_m = stationary_level(spec, lambda);
            let ub = big_m / lambda;
            let level = big_m + spec.theta() * ub;
            let radius = (0..spec.m()).map(|i| spec.coercivity_radius(i, level, ub)).fold(0.0, f64::max);
            let eff = build_effective(spec, 1.25 * radius, ub, &s.cache)?;
            let scfg = StationaryConfig::new(lambda);
            let ecfg = SchemeConfig::new(TorusGrid::new(n, period, s.grid.effective)?, 1.0).with_flux(flux);
            let seed = solve_stationary(&eff.spec, None, &scfg, &ecfg)?.field;
            let cfg = SchemeConfig::new(fine.clone(), 1.0).with_flux(flux);
            let backend = make_backend(problem, s, &cfg)?;
            let trace = iterate_stationary(spec, Some(eps), lambda, &seed, &backend, s.tol, s.max_iter)?;
            let q = spec.theta() / lambda;
            let ratio_checks = trace
                .sup_ratios()
                .iter()
                .enumerate()
                .skip(1)
                .take(6)
                .filter_map(|(l, r)| {
                    // Ratios below the solver's steady tolerance are noise.
                    let above = trace.sup_gaps()[l] > 1e3 * scfg.steady_tol;
                    r.filter(|_| above).map(|ratio| RatioCheck {
                        l,
                        ratio,
                        limit: q + TOL_RATIO,
                    })
                })
                .collect();
            let (est, sols) = stationary_error_estimate(spec, Some(eps), &scfg, &ladder(n, period, base, s.grid.levels)?, &cfg)?;
            let direct = &sols[0].field;
            let direct_distance = sup_distance(trace.limit(), direct, (0.0, 0.0))?;
            let direct_residual = fixed_point_residual(spec, direct, Some(eps), ResidualMode::Stationary { lambda, backend: &backend })?;
            Ok(IterationReport {
                problem: problem.id.clone(),
                eps,
                lambda: Some(lambda),
                backend: s.backend,
                trace,
                ratio_checks,
                direct_distance,
                direct_residual,
                tol_cross: 3.0 * est.errors[0],
                seconds: started.elapsed().as_secs_f64(),
            })
        }
    }
}

fn make_backend(problem: &Problem, s: &IterationSettings, cfg: &SchemeConfig) -> Result<Backend> {
    match s.backend {
        BackendKind::Fd => Ok(Backend::Fd(cfg.clone())),
        BackendKind::Dp => {
            let grid = cfg.grid.clone();
            let dt = s.dp_steps_per_h * grid.h();
            let steps = (cfg.t_end / dt).ceil().max(1.0);
            let dt = cfg.t_end / steps;
            let stamps: Vec<f64> = (0..=steps as usize).map(|k| k as f64 * dt).collect();
            let gb = gradient_box(&problem.spec, &problem.data, cfg.t_end);
            let lag = LagrangianEvaluator::new(problem.spec.clone(), 1.05 * s.dp_v_bound, gb.u_bound)?;
            Ok(Backend::Dp {
                lag: Arc::new(lag),
                grid,
                t_end: cfg.t_end,
                stamps,
                cfg: DPConfig::new(dt, s.dp_v_bound),
            })
        }
    }
}

/// One DP/FD comparison on a decoupled problem.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub name: String,
    pub distance: f64,
    pub fd_budget: f64,
    pub dp_budget: f64,
}

impl OracleCase {
    /// `3 × (FD Richardson budget + DP step budget)`.
    pub fn tol_cross(&self) -> f64 {
        3.0 * (self.fd_budget + self.dp_budget)
    }
    pub fn passed(&self) -> bool {
        self.distance <= self.tol_cross()
    }
}

#[derive(Debug, Clone)]
pub struct OracleSettings {
    pub eps: f64,
    pub t_end: f64,
    /// FD and DP grid points per ε.
    pub per_eps: usize,
    /// DP steps per unit ε of time.
    pub steps_per_eps: f64,
    pub v_bound: f64,
    pub flux: Flux,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            eps: 0.25,
            t_end: 0.5,
            per_eps: 64,
            steps_per_eps: 16.0,
            v_bound: 3.0,
            flux: Flux::Godunov,
        }
    }
}

/// A smooth frozen coupling field with stamps at every DP step.
fn frozen_field(grid: &TorusGrid, m: usize, stamps: &[f64]) -> Result<Field> {
    sample(
        |i, x, t| 0.2 * (std::f64::consts::TAU * x[0] + i as f64).sin() * (1.0 - 0.5 * t),
        grid,
        m,
        stamps,
    )
}

fn oracle_case(name: &str, spec: &HamiltonianSpec, data: &InitialData, s: &OracleSettings) -> Result<OracleCase> {
    let period = spec.slow_period();
    let base = grid_points(period, s.eps, s.per_eps)?;
    let grid = TorusGrid::new(1, period, base)?;
    let fine = TorusGrid::new(1, period, 2 * base)?;
    let steps = (s.t_end * s.steps_per_eps / s.eps).round().max(1.0) as usize;
    let fine_stamps: Vec<f64> = (0..=2 * steps).map(|k| s.t_end * k as f64 / (2 * steps) as f64).collect();
    let frozen = Arc::new(frozen_field(&fine, spec.m(), &fine_stamps)?);
    let out = OutputTimes::Uniform {
        max_interval: s.t_end / 4.0,
        extra: Vec::new(),
    };
    let cfg = SchemeConfig::new(grid.clone(), s.t_end)
        .with_output(out.clone())
        .with_flux(s.flux)
        .with_coupling(CouplingMode::Frozen(frozen.clone()));
    let est = scheme_error_estimate(spec, data, Some(s.eps), &ladder(1, period, base, 3)?, &cfg)?;
    let fd = &est.solutions[0];
    let gb = gradient_box(spec, data, s.t_end);
    let lag = LagrangianEvaluator::new(spec.clone(), 1.05 * s.v_bound, gb.u_bound.max(frozen.sup_norm()))?;
    let report = stored_times(s.t_end, &out);
    let dp_dt = s.t_end / steps as f64;
    let dp = value_function(
        &lag,
        data,
        &DpCoupling::Frozen(frozen.clone()),
        Some(s.eps),
        &grid,
        s.t_end,
        &report,
        &DPConfig::new(dp_dt, s.v_bound),
    )?;
    // Halving both dt and h keeps the velocity lattice and refines the rest.
    let dp_fine = value_function(
        &lag,
        data,
        &DpCoupling::Frozen(frozen),
        Some(s.eps),
        &fine,
        s.t_end,
        &report,
        &DPConfig::new(0.5 * dp_dt, s.v_bound),
    )?;
    let dp_budget = sup_distance(&dp.field, &dp_fine.field.restrict_to_coarser(&grid)?, (0.0, s.t_end))?;
    let distance = sup_distance(fd, &dp.field, (0.0, s.t_end))?;
    info!("oracle {name}: distance {distance:.3e}, fd budget {:.3e}, dp budget {dp_budget:.3e}", est.errors[0]);
    Ok(OracleCase {
        name: name.to_string(),
        distance,
        fd_budget: est.errors[0],
        dp_budget,
    })
}

/// DP value function against the FD solver on three decoupled problems with a
/// frozen coupling field: the tent cell equation and both built-in systems.
pub fn run_oracle_check(s: &OracleSettings) -> Result<Vec<OracleCase>> {
    let cos_data = InitialData::new(1, |_, x| 0.2 * (std::f64::consts::TAU * x[0]).cos(), 0.2 * std::f64::consts::TAU, 0.2);
    let tent = mechanical(Potential::Tent, 1);
    let eik = Problem::by_name("eikonal-1d")?;
    let lin = Problem::by_name("linear-coupling-2sys")?;
    Ok(vec![
        oracle_case("mechanical-tent", &tent, &cos_data, s)?,
        oracle_case("eikonal-1d", &eik.spec, &eik.data, s)?,
        oracle_case("linear-coupling-2sys", &lin.spec, &lin.data, s)?,
    ])
}

/// Writes `oracle.csv`.
pub fn write_oracle_cases(cases: &[OracleCase], path: &Path) -> Result<()> {
    let rows: Vec<Vec<String>> = cases
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                num(c.distance),
                num(c.fd_budget),
                num(c.dp_budget),
                num(c.tol_cross()),
                c.passed().to_string(),
            ]
        })
        .collect();
    write_table(path, &["case", "distance", "fd_budget", "dp_budget", "tol_cross", "passed"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_power_laws_fit_exactly() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let half: Vec<f64> = eps.iter().map(|e: &f64| 0.7 * e.sqrt()).collect();
        let one: Vec<f64> = eps.iter().map(|e| 1.3 * e).collect();
        assert!((fit_rate(&eps, &half).unwrap().slope - 0.5).abs() < 1e-12);
        assert!((fit_rate(&eps, &one).unwrap().slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_output_splits_regimes() {
        let eps = 0.04;
        let t = stored_times(1.0, &rate_output(eps));
        let small: Vec<f64> = t.iter().copied().filter(|&s| s > 0.0 && s < eps.sqrt()).collect();
        assert!(small.contains(&0.005) && small.contains(&0.04) && small.contains(&0.16));
        assert!(t.windows(2).all(|w| w[1] - w[0] <= eps.sqrt() / 4.0 + 1e-12));
        // Each stamp is in exactly one regime.
        let large = t.iter().filter(|&&s| s >= eps.sqrt()).count();
        assert_eq!(small.len() + large + 1, t.len());
    }

    #[test]
    fn eps_list_validation() {
        assert!(check_eps_list(&[0.1, 0.2]).is_err());
        assert!(check_eps_list(&[0.1, 0.1]).is_err());
        assert!(check_eps_list(&[]).is_err());
        assert!(check_eps_list(&[0.2, 0.1]).is_ok());
        assert!(grid_points(1.0, 0.03, 16).is_err());
        assert_eq!(grid_points(1.0, 0.05, 16).unwrap(), 320);
    }

    #[test]
    fn stationary_rate_rejects_large_eps() {
        let p = Problem::builtin("eikonal-1d", &ProblemParams { theta: Some(0.5), ..Default::default() }).unwrap();
        let s = StationarySettings {
            eps_list: vec![0.2],
            lambda: 3.0,
            grid: GridSettings::default(),
            cache: CacheSettings::default(),
        };
        assert!(matches!(run_stationary_rate(&p, &s), Err(Error::Precondition(_))));
        let s = StationarySettings { lambda: 0.5, ..s };
        assert!(matches!(run_stationary_rate(&p, &s), Err(Error::Precondition(_))));
    }

    #[test]
    fn flat_potential_has_no_action_gap() {
        let p = Problem::builtin(
            "eikonal-1d",
            &ProblemParams {
                potential: Some(Potential::Zero),
                ..Default::default()
            },
        )
        .unwrap();
        // Component 0 with V ≡ 0 is x- and y-independent once c is frozen.
        let s = ActionSettings {
            eps_list: vec![0.2, 0.1],
            endpoints: vec![(0.0, 0.3, 0.6)],
            p_points: 81,
            cell_points: 64,
            ..Default::default()
        };
        let r = run_action_gap(&p, &s).unwrap();
        for row in &r.rows {
            assert!(row.gap() < 1e-3, "{row:?}");
        }
    }

    #[test]
    fn unreachable_action_rejected() {
        let p = Problem::by_name("eikonal-1d").unwrap();
        let s = ActionSettings {
            endpoints: vec![(0.0, 0.9, 0.1)],
            ..Default::default()
        };
        assert!(matches!(run_action_gap(&p, &s), Err(Error::Unreachable { .. })));
    }
}
