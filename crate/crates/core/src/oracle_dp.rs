//! Dynamic-programming oracle for the variational (Lax–Oleinik) formulas in
//! one space dimension.
//!
//! Curves move between grid points: per step of length `dt` a velocity
//! `v = s·h/dt` with `|s| ≤ S = ⌊v_bound·dt/h⌋` is chosen, and the running cost
//! is evaluated at the midpoint of the step. The oracle shares no code with the
//! finite-difference solver.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::warn;

use crate::cell::EffectiveCache;
use crate::error::{precondition, Error, Result};
use crate::grid::{interpolate_periodic, Field, TorusGrid};
use crate::model::{CouplingFn, InitialData, LagrangianEvaluator};
use crate::parallel;
use crate::tolerances::{PIN_FRACTION, TRUNC_TOL};

/// A running cost `L_i(x, y, v, u)` in one space dimension.
pub trait RunningCost: Sync {
    fn m(&self) -> usize;
    fn has_fast_variable(&self) -> bool;
    fn cost(&self, i: usize, x: f64, y: f64, v: f64, u: &[f64]) -> Result<f64>;
    /// Coupling constant Θ of the underlying Hamiltonian.
    fn theta(&self) -> f64;
    /// `sup |H_i(x, y, 0, 0)|`.
    fn sup_at_rest(&self) -> f64;
}

impl RunningCost for LagrangianEvaluator {
    fn m(&self) -> usize {
        self.source().m()
    }
    fn has_fast_variable(&self) -> bool {
        self.source().has_fast_variable()
    }
    fn cost(&self, i: usize, x: f64, y: f64, v: f64, u: &[f64]) -> Result<f64> {
        self.lagrangian(i, &[x], &[y], &[v], u)
    }
    fn theta(&self) -> f64 {
        self.source().theta()
    }
    fn sup_at_rest(&self) -> f64 {
        self.source().sup_at_rest(64)
    }
}

/// `L̄_i(x, v, u) = l̄_i(x, v) − g_i(x, u)` from a one-dimensional cache without
/// a coupling lattice. `l̄_i(x_k, ·)` is the exact conjugate of the piecewise
/// linear interpolant of the stored p-line, and is interpolated linearly in x.
pub struct EffectiveLagrangian {
    cache: Arc<EffectiveCache>,
    lines: Vec<Vec<Vec<f64>>>,
    p: Vec<f64>,
    coupling: Option<Arc<CouplingFn>>,
    rest: f64,
}

impl EffectiveLagrangian {
    pub fn new(cache: Arc<EffectiveCache>) -> Result<Self> {
        let xa = cache.x_axis();
        let lines: Vec<Vec<Vec<f64>>> = (0..cache.m())
            .map(|i| (0..xa.count).map(|k| cache.p_line(i, k)).collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Precondition("effective Lagrangian needs a 1D cache without coupling lattice".into()))?;
        let pa = cache.p_axis();
        let p: Vec<f64> = (0..pa.count).map(|k| pa.coord(k)).collect();
        let coupling = cache.additive_coupling().cloned();
        let zero = vec![0.0; cache.m()];
        let mut rest: f64 = 0.0;
        for i in 0..cache.m() {
            for k in 0..xa.count {
                let x = [xa.coord(k)];
                rest = rest.max(cache.query(i, &x, &[0.0], &zero)?.abs());
            }
        }
        Ok(EffectiveLagrangian {
            cache,
            lines,
            p,
            coupling,
            rest,
        })
    }

    fn conjugate(&self, line: &[f64], v: f64) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (k, (&p, &h)) in self.p.iter().zip(line).enumerate() {
            let val = p * v - h;
            if val > best {
                best = val;
                arg = k;
            }
        }
        if arg == 0 || arg + 1 == self.p.len() {
            return Err(Error::OutOfBox(format!(
                "velocity {v} needs momenta beyond the cache p box [{}, {}]",
                self.p[0],
                self.p[self.p.len() - 1]
            )));
        }
        Ok(best)
    }
}

impl RunningCost for EffectiveLagrangian {
    fn m(&self) -> usize {
        self.cache.m()
    }
    fn has_fast_variable(&self) -> bool {
        false
    }
    fn cost(&self, i: usize, x: f64, _y: f64, v: f64, u: &[f64]) -> Result<f64> {
        let xa = self.cache.x_axis();
        let l = if xa.count == 1 {
            self.conjugate(&self.lines[i][0], v)?
        } else {
            let s = x / xa.step;
            let f = s.floor();
            let k = (f as i64).rem_euclid(xa.count as i64) as usize;
            let w = s - f;
            let a = self.conjugate(&self.lines[i][k], v)?;
            let b = self.conjugate(&self.lines[i][(k + 1) % xa.count], v)?;
            a + w * (b - a)
        };
        let g = self.coupling.as_ref().map_or(0.0, |g| g(i, &[x], u));
        Ok(l - g)
    }
    fn theta(&self) -> f64 {
        self.cache.theta()
    }
    fn sup_at_rest(&self) -> f64 {
        self.rest
    }
}

#[derive(Debug, Clone)]
pub struct DPConfig {
    pub dt: f64,
    /// Speed bound `M₀`; a step moves at most `v_bound·dt`.
    pub v_bound: f64,
    /// Velocity resolution for point actions (the spatial step is `dv·dt`).
    pub dv: f64,
    pub trunc_tol: f64,
    /// Largest admissible fraction of updates whose minimizer sits on the speed bound.
    pub pin_fraction: f64,
}

impl DPConfig {
    pub fn new(dt: f64, v_bound: f64) -> Self {
        DPConfig {
            dt,
            v_bound,
            dv: 0.05,
            trunc_tol: TRUNC_TOL,
            pin_fraction: PIN_FRACTION,
        }
    }

    pub fn with_dv(mut self, dv: f64) -> Self {
        self.dv = dv;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.v_bound > 0.0 && self.dv > 0.0) {
            return precondition("DP step, speed bound and velocity resolution must be positive");
        }
        if !(self.trunc_tol > 0.0) {
            return precondition("truncation tolerance must be positive");
        }
        Ok(())
    }

    /// Number of grid cells a step may cross.
    fn reach(&self, h: f64, dt: f64) -> Result<usize> {
        let s = (self.v_bound * dt / h + 1e-9).floor();
        if s < 1.0 {
            return precondition(format!(
                "v_bound·dt = {} is below the grid spacing {h}",
                self.v_bound * dt
            ));
        }
        Ok(s as usize)
    }
}

/// Where the coupling argument of `L_i` comes from.
#[derive(Debug, Clone)]
pub enum DpCoupling {
    /// A given field, interpolated linearly in space and time.
    Frozen(Arc<Field>),
    /// The value function itself at the previous time level.
    SelfCoupled,
}

/// Distribution of the discrete minimizers' speeds.
#[derive(Debug, Clone)]
pub struct SpeedAudit {
    pub v_bound: f64,
    /// `(speed, count)` for each admissible speed `s·h/dt`.
    pub histogram: Vec<(f64, usize)>,
    pub max_speed: f64,
    pub quantile_999: f64,
    pub pinned_fraction: f64,
}

impl SpeedAudit {
    fn from_counts(counts: &[usize], unit: f64, v_bound: f64) -> Self {
        let total: usize = counts.iter().sum();
        let histogram: Vec<(f64, usize)> = counts.iter().enumerate().map(|(s, &c)| (s as f64 * unit, c)).collect();
        let max_speed = histogram.iter().filter(|h| h.1 > 0).map(|h| h.0).fold(0.0, f64::max);
        let target = (0.999 * total as f64).ceil() as usize;
        let mut acc = 0;
        let mut q = 0.0;
        for &(v, c) in &histogram {
            acc += c;
            if acc >= target.max(1) {
                q = v;
                break;
            }
        }
        let pinned = counts.last().copied().unwrap_or(0);
        SpeedAudit {
            v_bound,
            histogram,
            max_speed,
            quantile_999: q,
            pinned_fraction: if total == 0 { 0.0 } else { pinned as f64 / total as f64 },
        }
    }

    /// The 99.9th percentile of speeds stays strictly below the bound.
    pub fn passed(&self) -> bool {
        self.quantile_999 < self.v_bound
    }
}

#[derive(Debug, Clone)]
pub struct DpSolution {
    pub field: Field,
    pub audit: SpeedAudit,
    pub steps: usize,
}

fn check_eps(period: f64, eps: Option<f64>, fast: bool) -> Result<()> {
    match eps {
        Some(e) if !fast => precondition(format!("eps = {e} given for a cost without fast variable")),
        Some(e) => {
            let r = period / e;
            if !(e > 0.0) || (r - r.round()).abs() > 1e-9 * r.max(1.0) || r.round() < 1.0 {
                return precondition(format!("period / eps must be a positive integer (eps = {e})"));
            }
            Ok(())
        }
        None if fast => precondition("cost has a fast variable; eps is required"),
        None => Ok(()),
    }
}

/// Velocity offsets in the order 0, 1, −1, 2, −2, … so that ties go to the slowest move.
fn offsets(s_max: usize) -> Vec<isize> {
    let mut out = vec![0isize];
    for s in 1..=s_max as isize {
        out.push(s);
        out.push(-s);
    }
    out
}

/// `u_i(x, t) = min over discrete curves ending at x of φ_i(γ(0)) + Σ dt·L_i(mid, mid/ε, v, u(mid, t_k))`.
/// `stamps` must be multiples of the (adjusted) step `t_end / ⌈t_end/dt⌉`.
pub fn value_function(
    lag: &dyn RunningCost,
    data: &InitialData,
    coupling: &DpCoupling,
    eps: Option<f64>,
    grid: &TorusGrid,
    t_end: f64,
    stamps: &[f64],
    cfg: &DPConfig,
) -> Result<DpSolution> {
    cfg.validate()?;
    if grid.n() != 1 {
        return precondition("the DP oracle is one-dimensional");
    }
    check_eps(grid.period(), eps, lag.has_fast_variable())?;
    if !(t_end > 0.0) {
        return precondition("t_end must be positive");
    }
    let m = lag.m();
    if data.m() != m {
        return precondition("data and cost have different component counts");
    }
    let steps = (t_end / cfg.dt - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let store: Vec<usize> = stamps
        .iter()
        .map(|&t| {
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 * t_end || k < 0.0 || k as usize > steps {
                precondition(format!("stamp {t} is not a multiple of the DP step {dt}"))
            } else {
                Ok(k as usize)
            }
        })
        .collect::<Result<_>>()?;
    let h = grid.h();
    let s_max = cfg.reach(h, dt)?;
    let offs = offsets(s_max);
    let len = grid.len();
    let mut cur = vec![0.0; m * len];
    for i in 0..m {
        for g in 0..len {
            cur[i * len + g] = data.eval(i, &grid.coords(g)[..1]);
        }
    }
    let mut field = Field::empty(grid.clone(), m);
    if store.contains(&0) {
        field.push_slice(0.0, &cur);
    }
    let mut counts = vec![0usize; s_max + 1];
    let mut frozen_buf = match coupling {
        DpCoupling::Frozen(f) => {
            if f.m() != m || f.grid().n() != 1 {
                return precondition("frozen coupling field does not match the cost");
            }
            vec![0.0; f.slice_len()]
        }
        DpCoupling::SelfCoupled => Vec::new(),
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        let (cgrid, cvals): (&TorusGrid, &[f64]) = match coupling {
            DpCoupling::Frozen(f) => {
                f.slice_at(t.min(*f.stamps().last().unwrap()), &mut frozen_buf)?;
                (f.grid(), &frozen_buf)
            }
            DpCoupling::SelfCoupled => (grid, &cur),
        };
        let clen = cgrid.len();
        let prev = &cur;
        let results: Vec<Result<(f64, usize)>> = parallel::map_range(m * len, |idx| {
            let i = idx / len;
            let j = idx % len;
            let xj = grid.coords(j)[0];
            let mut u = [0.0; 8];
            let mut best = f64::INFINITY;
            let mut arg = 0usize;
            for &s in &offs {
                let xm = xj - 0.5 * s as f64 * h;
                for (c, slot) in u.iter_mut().enumerate().take(m) {
                    *slot = interpolate_periodic(cgrid, &cvals[c * clen..(c + 1) * clen], &[xm]);
                }
                let y = eps.map_or(0.0, |e| xm / e);
                let v = s as f64 * h / dt;
                let l = lag.cost(i, xm, y, v, &u[..m])?;
                let src = grid.index(j as isize - s, 0);
                let cand = prev[i * len + src] + dt * l;
                if cand < best {
                    best = cand;
                    arg = s.unsigned_abs();
                }
            }
            Ok((best, arg))
        });
        let mut next = vec![0.0; m * len];
        for (slot, r) in next.iter_mut().zip(results) {
            let (v, s) = r?;
            if !v.is_finite() {
                return Err(Error::NonFinite { step: k + 1, t: t + dt });
            }
            *slot = v;
            counts[s] += 1;
        }
        cur = next;
        if store.contains(&(k + 1)) {
            field.push_slice((k + 1) as f64 * dt, &cur);
        }
    }
    let audit = SpeedAudit::from_counts(&counts, h / dt, cfg.v_bound);
    if audit.pinned_fraction > cfg.pin_fraction {
        return Err(Error::VelocityPinned {
            fraction: audit.pinned_fraction,
            v_bound: cfg.v_bound,
        });
    }
    Ok(DpSolution { field, audit, steps })
}

/// A discrete minimizer of a point-to-point action.
#[derive(Debug, Clone)]
pub struct ActionResult {
    pub value: f64,
    /// Positions at every step, endpoints included; empty for a zero-length interval.
    pub trajectory: Vec<f64>,
    /// Speed on each step.
    pub speeds: Vec<f64>,
    pub max_speed: f64,
    pub dt: f64,
    pub v_bound: f64,
}

/// `inf ∫_{t1}^{t2} L_i(c, γ/ε, γ', d) ds` over discrete curves from `x` to `y`,
/// with slow variable frozen at `c` and coupling frozen at `d`. Without `eps`
/// the cost is evaluated at `y = 0` (effective Lagrangians ignore it).
#[allow(clippy::too_many_arguments)]
pub fn point_action(
    lag: &dyn RunningCost,
    i: usize,
    t1: f64,
    t2: f64,
    x: f64,
    y: f64,
    c: f64,
    d: &[f64],
    eps: Option<f64>,
    cfg: &DPConfig,
) -> Result<ActionResult> {
    cfg.validate()?;
    let dist = (y - x).abs();
    let span = t2 - t1;
    if !(span >= 0.0) {
        return precondition("need t1 ≤ t2");
    }
    if dist > cfg.v_bound * span * (1.0 + 1e-12) {
        return Err(Error::Unreachable {
            distance: dist,
            reach: cfg.v_bound * span,
        });
    }
    if span == 0.0 {
        return Ok(ActionResult {
            value: 0.0,
            trajectory: Vec::new(),
            speeds: Vec::new(),
            max_speed: 0.0,
            dt: 0.0,
            v_bound: cfg.v_bound,
        });
    }
    if eps.is_some() != lag.has_fast_variable() {
        return precondition("eps must be given exactly when the cost has a fast variable");
    }
    let steps = (span / cfg.dt - 1e-9).ceil().max(1.0) as usize;
    let dt = span / steps as f64;
    let h = if dist > 0.0 {
        dist / (dist / (cfg.dv * dt)).round().max(1.0)
    } else {
        cfg.dv * dt
    };
    let s_max = cfg.reach(h, dt)?;
    let target = ((y - x) / h).round() as isize;
    if (target.unsigned_abs()) > s_max * steps {
        return Err(Error::Unreachable {
            distance: dist,
            reach: (s_max * steps) as f64 * h,
        });
    }
    let kmax = (s_max * steps) as isize;
    let width = (2 * kmax + 1) as usize;
    let offs = offsets(s_max);
    let mut cur = vec![f64::INFINITY; width];
    cur[kmax as usize] = 0.0;
    let mut choice: Vec<Vec<i32>> = Vec::with_capacity(steps);
    for n in 0..steps {
        // Positions reachable from x after n+1 steps that can still reach y.
        let from = (-(s_max as isize) * (n as isize + 1)).max(target - (s_max * (steps - n - 1)) as isize);
        let to = ((s_max as isize) * (n as isize + 1)).min(target + (s_max * (steps - n - 1)) as isize);
        let prev = &cur;
        let results: Vec<Result<(f64, i32)>> = parallel::map_range(width, |idx| {
            let k = idx as isize - kmax;
            if k < from || k > to {
                return Ok((f64::INFINITY, 0));
            }
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for &s in &offs {
                let src = k - s;
                if src < -kmax || src > kmax {
                    continue;
                }
                let base = prev[(src + kmax) as usize];
                if !base.is_finite() {
                    continue;
                }
                let xm = x + (k as f64 - 0.5 * s as f64) * h;
                let yy = eps.map_or(0.0, |e| xm / e);
                let l = lag.cost(i, c, yy, s as f64 * h / dt, d)?;
                let cand = base + dt * l;
                if cand < best {
                    best = cand;
                    arg = s as i32;
                }
            }
            Ok((best, arg))
        });
        let mut next = vec![f64::INFINITY; width];
        let mut ch = vec![0i32; width];
        for (idx, r) in results.into_iter().enumerate() {
            let (v, s) = r?;
            next[idx] = v;
            ch[idx] = s;
        }
        choice.push(ch);
        cur = next;
    }
    let value = cur[(target + kmax) as usize];
    if !value.is_finite() {
        return Err(Error::NonFinite { step: steps, t: t2 });
    }
    let mut k = target;
    let mut path = vec![x + k as f64 * h];
    let mut speeds = Vec::with_capacity(steps);
    for n in (0..steps).rev() {
        let s = choice[n][(k + kmax) as usize] as isize;
        speeds.push(s.unsigned_abs() as f64 * h / dt);
        k -= s;
        path.push(x + k as f64 * h);
    }
    path.reverse();
    speeds.reverse();
    let pinned = speeds.iter().filter(|&&v| v >= s_max as f64 * h / dt * (1.0 - 1e-12)).count();
    if pinned > 0 {
        return Err(Error::VelocityPinned {
            fraction: pinned as f64 / steps as f64,
            v_bound: cfg.v_bound,
        });
    }
    let max_speed = speeds.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(ActionResult {
        value,
        trajectory: path,
        speeds,
        max_speed,
        dt,
        v_bound: cfg.v_bound,
    })
}

/// Speed histogram of a point-action minimizer.
pub fn minimizer_speed_audit(result: &ActionResult) -> SpeedAudit {
    if result.speeds.is_empty() {
        return SpeedAudit::from_counts(&[], 0.0, result.v_bound);
    }
    let unit = result
        .speeds
        .iter()
        .cloned()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !unit.is_finite() {
        return SpeedAudit::from_counts(&[result.speeds.len()], 0.0, result.v_bound);
    }
    // Speeds are integer multiples of the smallest grid speed h/dt; recover it.
    let h_dt = result
        .trajectory
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min)
        / result.dt;
    let mut counts = Vec::new();
    for &v in &result.speeds {
        let s = (v / h_dt).round() as usize;
        if counts.len() <= s {
            counts.resize(s + 1, 0);
        }
        counts[s] += 1;
    }
    SpeedAudit::from_counts(&counts, h_dt, result.v_bound)
}

/// Writes `step,x,speed` rows of a minimizer.
pub fn write_trajectory(path: &Path, result: &ActionResult) -> Result<()> {
    let mut s = String::from("step,x,speed\n");
    for (k, x) in result.trajectory.iter().enumerate() {
        let v = if k == 0 { 0.0 } else { result.speeds[k - 1] };
        s.push_str(&format!("{k},{x:.16e},{v:.16e}\n"));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(s.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DiscountedSolution {
    /// The solution `u = u^M − M/λ` as a single-stamp field.
    pub field: Field,
    /// `M/λ` with `M = λ/(λ−Θ)·sup|H(x, y, 0, 0)|`.
    pub shift: f64,
    pub iterations: usize,
    /// Smallest shifted running cost `L + M` evaluated.
    pub min_shifted_cost: f64,
    pub audit: SpeedAudit,
}

/// Value iteration for `u(x) = min over moves of w·(L + M)(mid) + e^{−λ dt}·u(x − v dt)`
/// with `w = (1 − e^{−λ dt})/λ`, the exact discounted weight of a step. The
/// coupling is read from the last slice of `frozen`; the result is shifted back by `M/λ`.
pub fn discounted_value(
    lag: &dyn RunningCost,
    frozen: &Field,
    eps: Option<f64>,
    lambda: f64,
    grid: &TorusGrid,
    cfg: &DPConfig,
) -> Result<DiscountedSolution> {
    cfg.validate()?;
    if !(lambda > 0.0) {
        return precondition(format!("discount must be positive, got {lambda}"));
    }
    if grid.n() != 1 || frozen.grid().n() != 1 {
        return precondition("the DP oracle is one-dimensional");
    }
    check_eps(grid.period(), eps, lag.has_fast_variable())?;
    let m = lag.m();
    let theta = lag.theta();
    let big_m = if lambda > theta {
        lambda / (lambda - theta) * lag.sup_at_rest()
    } else {
        warn!("lambda {lambda} ≤ theta {theta}; shifting by sup|H(·, 0, 0)| only");
        lag.sup_at_rest()
    };
    let dt = cfg.dt;
    let gamma = (-lambda * dt).exp();
    let weight = (1.0 - gamma) / lambda;
    let h = grid.h();
    let s_max = cfg.reach(h, dt)?;
    let offs = offsets(s_max);
    let len = grid.len();
    let cgrid = frozen.grid();
    let clen = cgrid.len();
    let cvals = frozen.slice(frozen.stamps().len() - 1);
    // Costs do not depend on u here, so tabulate them once.
    let table: Vec<Result<Vec<f64>>> = parallel::map_range(m * len, |idx| {
        let i = idx / len;
        let xj = grid.coords(idx % len)[0];
        let mut u = [0.0; 8];
        offs.iter()
            .map(|&s| {
                let xm = xj - 0.5 * s as f64 * h;
                for (c, slot) in u.iter_mut().enumerate().take(m) {
                    *slot = interpolate_periodic(cgrid, &cvals[c * clen..(c + 1) * clen], &[xm]);
                }
                let y = eps.map_or(0.0, |e| xm / e);
                Ok(lag.cost(i, xm, y, s as f64 * h / dt, &u[..m])? + big_m)
            })
            .collect()
    });
    let table: Vec<Vec<f64>> = table.into_iter().collect::<Result<_>>()?;
    let min_shifted_cost = table.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
    if min_shifted_cost < -crate::model::tol_legendre() {
        warn!("shifted running cost is negative: {min_shifted_cost:.3e}");
    }
    let mut cur = vec![0.0; m * len];
    let mut last_diff = f64::INFINITY;
    let mut strikes = 0;
    let max_iter = ((cfg.trunc_tol.ln().abs() + 20.0) / (lambda * dt)).ceil() as usize * 4 + 100;
    let mut args = vec![0usize; m * len];
    for it in 1..=max_iter {
        let prev = &cur;
        let next: Vec<(f64, usize)> = parallel::map_range(m * len, |idx| {
            let i = idx / len;
            let j = idx % len;
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for (q, &s) in offs.iter().enumerate() {
                let src = grid.index(j as isize - s, 0);
                let cand = weight * table[idx][q] + gamma * prev[i * len + src];
                if cand < best {
                    best = cand;
                    arg = s.unsigned_abs();
                }
            }
            (best, arg)
        });
        let mut diff: f64 = 0.0;
        let mut sup: f64 = 0.0;
        for (k, (v, a)) in next.iter().enumerate() {
            diff = diff.max((v - cur[k]).abs());
            sup = sup.max(v.abs());
            cur[k] = *v;
            args[k] = *a;
        }
        if !diff.is_finite() {
            return Err(Error::NonFinite { step: it, t: 0.0 });
        }
        // The Bellman operator contracts by γ in the sup norm; allow for roundoff.
        if last_diff.is_finite() && diff > gamma * last_diff + 1e-12 * sup.max(1.0) {
            strikes += 1;
            if strikes >= 3 {
                return Err(Error::NonContraction(format!(
                    "update ratio {:.6} exceeds exp(-lambda dt) = {gamma:.6}",
                    diff / last_diff
                )));
            }
        } else {
            strikes = 0;
        }
        last_diff = diff;
        if diff * gamma / (1.0 - gamma) <= cfg.trunc_tol * sup.max(1.0) {
            let shift = big_m / lambda;
            let mut field = Field::empty(grid.clone(), m);
            let vals: Vec<f64> = cur.iter().map(|v| v - shift).collect();
            field.push_slice(0.0, &vals);
            let mut counts = vec![0usize; s_max + 1];
            for &a in &args {
                counts[a] += 1;
            }
            let audit = SpeedAudit::from_counts(&counts, h / dt, cfg.v_bound);
            if audit.pinned_fraction > cfg.pin_fraction {
                return Err(Error::VelocityPinned {
                    fraction: audit.pinned_fraction,
                    v_bound: cfg.v_bound,
                });
            }
            return Ok(DiscountedSolution {
                field,
                shift,
                iterations: it,
                min_shifted_cost,
                audit,
            });
        }
    }
    Err(Error::NonConvergence(format!(
        "discounted value iteration did not converge in {max_iter} sweeps"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HamiltonianSpec;

    fn half_square(k: f64) -> LagrangianEvaluator {
        let spec = HamiltonianSpec::new("q", 1, 1, move |_, _, _, p, _| 0.5 * p[0] * p[0] - k)
            .without_fast_variable()
            .with_coercivity(move |_, l, _| (2.0 * (l + k).max(0.0)).sqrt())
            .with_lagrangian(move |_, _, _, v, _| 0.5 * v[0] * v[0] + k);
        LagrangianEvaluator::new(spec, 4.0, 1.0).unwrap()
    }

    #[test]
    fn resting_curve_is_optimal() {
        let lag = half_square(0.0);
        let grid = TorusGrid::new(1, 1.0, 32).unwrap();
        let frozen = Arc::new(crate::grid::sample(|_, _, _| 0.0, &grid, 1, &[0.0]).unwrap());
        let r = value_function(
            &lag,
            &InitialData::zero(1),
            &DpCoupling::Frozen(frozen),
            None,
            &grid,
            1.0,
            &[0.0, 0.5, 1.0],
            &DPConfig::new(0.125, 1.0),
        )
        .unwrap();
        assert!(r.field.values().iter().all(|&v| v == 0.0));
        assert_eq!(r.audit.max_speed, 0.0);
    }

    #[test]
    fn straight_segment_action() {
        let lag = half_square(0.0);
        let cfg = DPConfig::new(0.05, 3.0).with_dv(0.05);
        let r = point_action(&lag, 0, 0.0, 1.0, 0.0, 0.7, 0.0, &[0.0], None, &cfg).unwrap();
        assert!((r.value - 0.245).abs() < 1e-12, "{}", r.value);
        assert_eq!(r.trajectory.len(), 21);
        assert!((r.trajectory[20] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_interval_has_zero_action() {
        let lag = half_square(0.0);
        let r = point_action(&lag, 0, 0.3, 0.3, 0.1, 0.1, 0.0, &[0.0], None, &DPConfig::new(0.1, 1.0)).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.trajectory.is_empty());
    }

    #[test]
    fn unreachable_endpoint() {
        let lag = half_square(0.0);
        let e = point_action(&lag, 0, 0.0, 0.1, 0.0, 1.0, 0.0, &[0.0], None, &DPConfig::new(0.01, 1.0)).unwrap_err();
        assert!(matches!(e, Error::Unreachable { .. }));
    }

    #[test]
    fn constant_cost_discounts_to_reciprocal() {
        // L = 1 + ½v²: resting is optimal and ∫ e^{s} ds over (−∞, 0] is 1.
        let spec = HamiltonianSpec::new("one", 1, 1, |_, _, _, p, _| 0.5 * p[0] * p[0] - 1.0)
            .without_fast_variable()
            .with_coercivity(|_, l, _| (2.0 * (l + 1.0).max(0.0)).sqrt())
            .with_lagrangian(|_, _, _, v, _| 1.0 + 0.5 * v[0] * v[0]);
        let lag = LagrangianEvaluator::new(spec, 2.0, 1.0).unwrap();
        let grid = TorusGrid::new(1, 1.0, 16).unwrap();
        let frozen = crate::grid::sample(|_, _, _| 0.0, &grid, 1, &[0.0]).unwrap();
        let r = discounted_value(&lag, &frozen, None, 1.0, &grid, &DPConfig::new(1.0 / 16.0, 1.0)).unwrap();
        for &v in r.field.values() {
            assert!((v - 1.0).abs() < 1e-7, "{v}");
        }
        assert!(r.min_shifted_cost >= 0.0);
    }

    #[test]
    fn pinned_minimizers_are_reported() {
        // Data with slope 4 pulls characteristics faster than v_bound = 1.
        let lag = half_square(0.0);
        let grid = TorusGrid::new(1, 1.0, 64).unwrap();
        let data = InitialData::new(1, |_, x| (2.0 * std::f64::consts::PI * x[0]).sin(), 6.3, 1.0);
        let e = value_function(
            &lag,
            &data,
            &DpCoupling::SelfCoupled,
            None,
            &grid,
            0.25,
            &[0.25],
            &DPConfig::new(1.0 / 64.0, 1.0),
        )
        .unwrap_err();
        assert!(matches!(e, Error::VelocityPinned { .. }), "{e}");
    }
}
