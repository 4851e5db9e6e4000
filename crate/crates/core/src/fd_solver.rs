//! Monotone Lax–Friedrichs solvers for coupled Cauchy problems, their
//! monotonized (Kruzhkov) form and discounted stationary systems.

use std::sync::Arc;

use log::{debug, warn};

use crate::error::{precondition, Error, Result};
use crate::grid::{sup_distance, Field, TorusGrid};
use crate::model::{golden_max, kruzhkov_transform, HamiltonianSpec, InitialData, SystemHamiltonian};
use crate::parallel;
use crate::tolerances::{COUPLING_STEP, CFL, RESOLUTION, SIGMA_INFLATION, STEADY_TOL, STEADY_WINDOW};

/// How the dissipation coefficient σ is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaMode {
    /// Max sampled `|∂H/∂p|` over the gradient box inflated by 10%.
    Sampled,
    Fixed(f64),
}

/// Numerical Hamiltonian used in the explicit update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Flux {
    /// Global Lax–Friedrichs with coefficient σ.
    #[default]
    LaxFriedrichs,
    /// Godunov flux for convex `H` in one dimension. Needs an additive
    /// coupling (or none) so the minimizer in `p` does not depend on `u`.
    Godunov,
}

/// Where the coupling argument `u` of `H_i(x, y, p, u)` comes from.
#[derive(Debug, Clone)]
pub enum CouplingMode {
    /// The unknown itself at the current time level.
    Explicit,
    /// A given field, read with linear interpolation in time.
    Frozen(Arc<Field>),
}

/// Which time levels are stored.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputTimes {
    /// A uniform partition of `[0, T]` with spacing at most `max_interval`, plus
    /// `extra` times. Steps are adjusted to land on every stored time exactly.
    Uniform { max_interval: f64, extra: Vec<f64> },
    /// Every time step.
    EveryStep,
}

impl OutputTimes {
    /// Stored spacing at most `√ε/4`, the default for homogenization runs.
    pub fn for_eps(eps: f64) -> Self {
        OutputTimes::Uniform {
            max_interval: eps.sqrt() / 4.0,
            extra: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub grid: TorusGrid,
    pub cfl: f64,
    pub sigma: SigmaMode,
    pub t_end: f64,
    pub output: OutputTimes,
    pub coupling: CouplingMode,
    /// Radius of the gradient box; derived from the data when `None`.
    pub p_radius: Option<f64>,
    /// Forces this time step (checked against the stability limits).
    pub dt: Option<f64>,
    pub flux: Flux,
}

impl SchemeConfig {
    pub fn new(grid: TorusGrid, t_end: f64) -> Self {
        SchemeConfig {
            grid,
            cfl: CFL,
            sigma: SigmaMode::Sampled,
            t_end,
            output: OutputTimes::Uniform {
                max_interval: t_end / 8.0,
                extra: Vec::new(),
            },
            coupling: CouplingMode::Explicit,
            p_radius: None,
            dt: None,
            flux: Flux::LaxFriedrichs,
        }
    }

    pub fn with_output(mut self, output: OutputTimes) -> Self {
        self.output = output;
        self
    }
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = SigmaMode::Fixed(sigma);
        self
    }
    pub fn with_coupling(mut self, coupling: CouplingMode) -> Self {
        self.coupling = coupling;
        self
    }
    pub fn with_p_radius(mut self, r: f64) -> Self {
        self.p_radius = Some(r);
        self
    }
    pub fn with_grid(mut self, grid: TorusGrid) -> Self {
        self.grid = grid;
        self
    }
    pub fn with_flux(mut self, flux: Flux) -> Self {
        self.flux = flux;
        self
    }
}

#[derive(Debug, Clone)]
pub struct StationaryConfig {
    pub lambda: f64,
    /// Tolerance on `sup|Δu| / (Δτ · max(1, sup|u|))`.
    pub steady_tol: f64,
    pub max_pseudo_time: f64,
    /// Starting guess of the pseudo-time march (zero when `None`); resampled
    /// to the solver grid if needed.
    pub initial: Option<Arc<Field>>,
}

impl StationaryConfig {
    pub fn new(lambda: f64) -> Self {
        StationaryConfig {
            lambda,
            steady_tol: STEADY_TOL,
            max_pseudo_time: 200.0 / lambda.max(1e-3),
            initial: None,
        }
    }

    pub fn with_initial(mut self, f: Arc<Field>) -> Self {
        self.initial = Some(f);
        self
    }
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub sigma: f64,
    /// Gradient box radius that σ covers (after inflation).
    pub box_radius: f64,
    pub dt_max: f64,
    pub steps: usize,
    pub max_gradient: f64,
    pub restarts: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: Field,
    pub stats: SolveStats,
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub field: Field,
    pub pseudo_time: f64,
    /// `M/λ` with `M = λ/(λ−Θ)·sup|H(x, y, 0, 0)|`.
    pub bound: f64,
    pub sup_norm: f64,
    pub stats: SolveStats,
}

impl StationarySolution {
    pub fn bound_holds(&self) -> bool {
        self.sup_norm <= self.bound * (1.0 + 1e-9) + 1e-12
    }
}

/// A-priori bounds derived from the data: a level for `|u_t|`, the coercivity
/// radius at that level and a bound on `|u|`.
#[derive(Debug, Clone, Copy)]
pub struct GradientBox {
    pub level: f64,
    pub radius: f64,
    pub u_bound: f64,
}

/// Measures `sup |H_i(x, y, Dφ_i, φ)|` on the data and turns it into a gradient
/// box via the coercivity radius. The level is inflated by `1 + Θ·T` to allow
/// for coupling growth; escapes are caught during the solve.
pub fn gradient_box(spec: &HamiltonianSpec, data: &InitialData, t_end: f64) -> GradientBox {
    let n = spec.n();
    let m = spec.m();
    let nx = 64;
    let ny = if spec.has_fast_variable() { 32 } else { 1 };
    let period = spec.slow_period();
    let d = 1e-6 * period;
    let mut sup_h: f64 = 0.0;
    let mut u = vec![0.0; m];
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut p = vec![0.0; n];
    let count = if n == 1 { nx } else { nx * nx };
    let ycount = if n == 1 { ny } else { ny * ny };
    for a in 0..count {
        x[0] = period * (a % nx) as f64 / nx as f64;
        if n == 2 {
            x[1] = period * (a / nx) as f64 / nx as f64;
        }
        for (k, uk) in u.iter_mut().enumerate() {
            *uk = data.eval(k, &x);
        }
        for i in 0..m {
            for ax in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[ax] += d;
                xm[ax] -= d;
                p[ax] = (data.eval(i, &xp) - data.eval(i, &xm)) / (2.0 * d);
            }
            for b in 0..ycount {
                y[0] = (b % ny) as f64 / ny as f64;
                if n == 2 {
                    y[1] = (b / ny) as f64 / ny as f64;
                }
                sup_h = sup_h.max(spec.eval(i, &x, &y, &p, &u).abs());
            }
        }
    }
    let level = sup_h * (1.0 + spec.theta() * t_end);
    let u_bound = data.sup_phi() + level * t_end;
    let radius = (0..m)
        .map(|i| spec.coercivity_radius(i, level, u_bound))
        .fold(data.lip_phi(), f64::max);
    GradientBox { level, radius, u_bound }
}

/// Max sampled `|∂H/∂p_a|` over `|p_a| ≤ radius`, `|u_j| ≤ u_bound`, sampled `x`, `y`, `t`.
pub fn estimate_sigma<H: SystemHamiltonian>(
    ham: &H,
    period: f64,
    radius: f64,
    u_bound: f64,
    times: &[f64],
) -> Result<f64> {
    let n = ham.n();
    let m = ham.m();
    let nx: usize = 12;
    let ny: usize = if ham.has_fast_variable() { 24 } else { 1 };
    let np: usize = if n == 1 { 41 } else { 15 };
    let eta = 1e-5 * (1.0 + radius);
    let ucorners: Vec<Vec<f64>> = {
        let vals = [-u_bound, 0.0, u_bound];
        let mut out = vec![vec![]];
        for _ in 0..m {
            out = out
                .into_iter()
                .flat_map(|v| {
                    vals.iter().map(move |&c| {
                        let mut w = v.clone();
                        w.push(c);
                        w
                    })
                })
                .collect();
        }
        out
    };
    let pax: Vec<f64> = (0..np).map(|k| -radius + 2.0 * radius * k as f64 / (np - 1) as f64).collect();
    let mut sigma: f64 = 0.0;
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut p = vec![0.0; n];
    let idx = |k: usize, base: usize, axis: usize| if axis == 0 { k % base } else { k / base };
    for &t in times {
        for a in 0..nx.pow(n as u32) {
            for ax in 0..n {
                x[ax] = period * idx(a, nx, ax) as f64 / nx as f64;
            }
            for b in 0..ny.pow(n as u32) {
                for ax in 0..n {
                    y[ax] = idx(b, ny, ax) as f64 / ny as f64;
                }
                for c in 0..np.pow(n as u32) {
                    for ax in 0..n {
                        p[ax] = pax[idx(c, np, ax)];
                    }
                    for u in &ucorners {
                        for i in 0..m {
                            for ax in 0..n {
                                let q = p[ax];
                                p[ax] = q + eta;
                                let hp = ham.value(i, &x, t, &y, &p, u);
                                p[ax] = q - eta;
                                let hm = ham.value(i, &x, t, &y, &p, u);
                                p[ax] = q;
                                let d = (hp - hm) / (2.0 * eta);
                                if !d.is_finite() {
                                    return precondition(format!(
                                        "Hamiltonian not finite on the sampling box (component {i}, p = {p:?}, u = {u:?})"
                                    ));
                                }
                                sigma = sigma.max(d.abs());
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(sigma)
}

fn check_eps(grid: &TorusGrid, eps: Option<f64>, fast: bool) -> Result<()> {
    match eps {
        Some(e) => {
            if !fast {
                return precondition("eps given for a system without fast variable");
            }
            if !(e > 0.0) {
                return precondition(format!("eps must be positive, got {e}"));
            }
            let r = grid.period() / e;
            if (r - r.round()).abs() > 1e-9 * r || r.round() < 1.0 {
                return precondition(format!("period {} is not an integer multiple of eps = {e}", grid.period()));
            }
            if grid.h() * RESOLUTION > e * (1.0 + 1e-9) {
                return precondition(format!(
                    "grid spacing {} does not resolve eps = {e} (need h <= eps/{RESOLUTION})",
                    grid.h()
                ));
            }
        }
        None => {
            if fast {
                return precondition("eps missing for a system with a fast variable");
            }
        }
    }
    Ok(())
}

fn check_slow_period(spec: &HamiltonianSpec, grid: &TorusGrid) -> Result<()> {
    if spec.n() != grid.n() {
        return precondition(format!("spec dimension {} vs grid dimension {}", spec.n(), grid.n()));
    }
    if spec.is_x_dependent() {
        let r = grid.period() / spec.slow_period();
        if (r - r.round()).abs() > 1e-9 * r || r.round() < 1.0 {
            return precondition(format!(
                "grid period {} is not a multiple of the slow period {}",
                grid.period(),
                spec.slow_period()
            ));
        }
    }
    Ok(())
}

/// Stored times: `0`, the uniform partition, the extras and `T`
/// (`EveryStep` runs store every step in addition).
pub fn stored_times(t_end: f64, output: &OutputTimes) -> Vec<f64> {
    let mut t = vec![0.0, t_end];
    if let OutputTimes::Uniform { max_interval, extra } = output {
        let k = (t_end / max_interval - 1e-9).ceil().max(1.0) as usize;
        t.extend((1..k).map(|j| t_end * j as f64 / k as f64));
        t.extend(extra.iter().copied().filter(|&s| s > 0.0 && s < t_end));
    }
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_end.max(1.0));
    t
}

/// Minimizers `q*` of `p ↦ H_i(x, x/ε, p, ·)` scaled by a time factor; the
/// Godunov flux is used when present.
#[derive(Clone, Copy)]
struct Minimizers<'a> {
    q: &'a [f64],
    scale: f64,
}

/// One explicit update of every `(i, g)`:
/// `next = cur − dt·(zeroth·cur + Ĥ(cur, coupling))`.
#[allow(clippy::too_many_arguments)]
fn lf_step<H: SystemHamiltonian>(
    ham: &H,
    grid: &TorusGrid,
    eps: Option<f64>,
    t: f64,
    dt: f64,
    sigma: f64,
    zeroth: f64,
    cur: &[f64],
    coupling: &[f64],
    godunov: Option<Minimizers<'_>>,
    next: &mut [f64],
) {
    let len = grid.len();
    let m = ham.m();
    let n = grid.n();
    let h = grid.h();
    let inv_h = 1.0 / h;
    let np = grid.points();
    let inv_eps = eps.map(|e| 1.0 / e);
    parallel::for_each_chunk_mut(next, 2048, |start, chunk| {
        let mut u = [0.0f64; 8];
        for (off, out) in chunk.iter_mut().enumerate() {
            let e = start + off;
            let i = e / len;
            let g = e - i * len;
            let row = &cur[i * len..(i + 1) * len];
            for (k, uk) in u.iter_mut().enumerate().take(m) {
                *uk = coupling[k * len + g];
            }
            let u0 = row[g];
            let x = grid.coords(g);
            let mut y = [0.0; 2];
            if let Some(ie) = inv_eps {
                for a in 0..n {
                    let s = x[a] * ie;
                    y[a] = s - s.floor();
                }
            }
            let mut p = [0.0; 2];
            let mut visc = 0.0;
            if n == 1 {
                let um = row[if g == 0 { len - 1 } else { g - 1 }];
                let up = row[if g + 1 == len { 0 } else { g + 1 }];
                let pp = (up - u0) * inv_h;
                let pm = (u0 - um) * inv_h;
                if let Some(q) = godunov {
                    let qs = q.q[e] * q.scale;
                    let xs = &x[..1];
                    let ys = &y[..1];
                    let left = ham.value(i, xs, t, ys, &[pm.max(qs)], &u[..m]);
                    let right = ham.value(i, xs, t, ys, &[pp.min(qs)], &u[..m]);
                    *out = u0 - dt * (zeroth * u0 + left.max(right));
                    continue;
                }
                p[0] = 0.5 * (pp + pm);
                visc = 0.5 * sigma * (pp - pm);
            } else {
                let (a, b) = ((g % np) as isize, (g / np) as isize);
                for ax in 0..2 {
                    let (gp, gm) = if ax == 0 {
                        (grid.index(a + 1, b), grid.index(a - 1, b))
                    } else {
                        (grid.index(a, b + 1), grid.index(a, b - 1))
                    };
                    let pp = (row[gp] - u0) * inv_h;
                    let pm = (u0 - row[gm]) * inv_h;
                    p[ax] = 0.5 * (pp + pm);
                    visc += 0.5 * sigma * (pp - pm);
                }
            }
            let hv = ham.value(i, &x[..n], t, &y[..n], &p[..n], &u[..m]);
            *out = u0 - dt * (zeroth * u0 + hv - visc);
        }
    });
}

/// Largest one-sided difference quotient, or `None` when a value is not finite.
fn max_gradient(grid: &TorusGrid, m: usize, slice: &[f64]) -> Option<f64> {
    let len = grid.len();
    let inv_h = 1.0 / grid.h();
    let np = grid.points();
    let mut g_max: f64 = 0.0;
    for i in 0..m {
        let row = &slice[i * len..(i + 1) * len];
        for g in 0..len {
            let v = row[g];
            if !v.is_finite() {
                return None;
            }
            let nxt = if grid.n() == 1 {
                row[if g + 1 == len { 0 } else { g + 1 }]
            } else {
                row[grid.index((g % np) as isize + 1, (g / np) as isize)]
            };
            g_max = g_max.max((nxt - v).abs() * inv_h);
            if grid.n() == 2 {
                let up = row[grid.index((g % np) as isize, (g / np) as isize + 1)];
                g_max = g_max.max((up - v).abs() * inv_h);
            }
        }
    }
    Some(g_max)
}

/// `q*_i(x_g) = argmin_p H_i(x_g, x_g/ε, p, ·)` for every `(i, g)` when the
/// Godunov flux is selected.
fn minimizers(spec: &HamiltonianSpec, cfg: &SchemeConfig, eps: Option<f64>) -> Result<Option<Vec<f64>>> {
    if cfg.flux == Flux::LaxFriedrichs {
        return Ok(None);
    }
    let grid = &cfg.grid;
    if grid.n() != 1 {
        return precondition("the Godunov flux is implemented in one dimension only");
    }
    if spec.additive_coupling().is_none() && spec.theta() > 0.0 {
        return precondition("the Godunov flux needs an additive coupling");
    }
    let len = grid.len();
    let q = parallel::map_range(spec.m() * len, |e| {
        let (i, g) = (e / len, e % len);
        let x = [grid.coords(g)[0]];
        let y = [eps.map_or(0.0, |ep| (x[0] / ep).rem_euclid(1.0))];
        // h(q*) ≤ h(0) bounds q* by the coercivity radius at the resting level.
        let zero = vec![0.0; spec.m()];
        let level = spec.eval(i, &x, &y, &[0.0], &zero);
        let r = SIGMA_INFLATION * spec.coercivity_radius(i, level, 0.0) + 1e-6;
        golden_max(-r, r, 1e-12 * (1.0 + r), |p| -spec.uncoupled(i, &x, &y, &[p])).0
    });
    if q.iter().any(|v| !v.is_finite()) {
        return precondition("minimizer of H in p is not finite");
    }
    Ok(Some(q))
}

enum MarchError {
    Escape(f64),
    Fatal(Error),
}

struct Setup {
    sigma: f64,
    box_radius: f64,
    dt_max: f64,
}

fn stability_limit(grid: &TorusGrid, cfl: f64, sigma: f64, lip_u: f64, zeroth: f64) -> f64 {
    let n = grid.n() as f64;
    let mut dt = cfl * grid.h() / (n * sigma).max(1e-300);
    if lip_u + zeroth > 0.0 {
        dt = dt.min(COUPLING_STEP / (lip_u + zeroth));
    }
    dt
}

fn setup<H: SystemHamiltonian>(
    ham: &H,
    cfg: &SchemeConfig,
    radius: f64,
    u_bound: f64,
    zeroth: f64,
) -> Result<Setup> {
    let box_radius = SIGMA_INFLATION * radius;
    let sigma = match cfg.sigma {
        SigmaMode::Fixed(s) => s,
        SigmaMode::Sampled => {
            let times = [0.0, 0.5 * cfg.t_end, cfg.t_end];
            // A zero sample (flat box) still needs a positive coefficient.
            estimate_sigma(ham, cfg.grid.period(), box_radius, u_bound, &times)?.max(1e-9)
        }
    };
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Cfl(format!("dissipation coefficient must be positive, got {sigma}")));
    }
    let limit = stability_limit(&cfg.grid, cfg.cfl, sigma, ham.coupling_lipschitz(), zeroth);
    let dt_max = match cfg.dt {
        Some(dt) if dt > limit * (1.0 + 1e-12) => {
            return Err(Error::Cfl(format!(
                "dt = {dt} exceeds the stability limit {limit} (sigma {sigma}, h {}, theta {})",
                cfg.grid.h(),
                ham.coupling_lipschitz()
            )))
        }
        Some(dt) => dt,
        None => limit,
    };
    if cfg.cfl > 1.0 || cfg.cfl <= 0.0 {
        return Err(Error::Cfl(format!("Courant number {} outside (0, 1]", cfg.cfl)));
    }
    Ok(Setup {
        sigma,
        box_radius,
        dt_max,
    })
}

/// Time-dependent gradient scale of the unknown (`e^{−λt}` for monotonized runs).
type GradScale<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

#[allow(clippy::too_many_arguments)]
fn march<H: SystemHamiltonian>(
    ham: &H,
    init: &[f64],
    eps: Option<f64>,
    cfg: &SchemeConfig,
    frozen: Option<&Field>,
    st: &Setup,
    grad_scale: GradScale<'_>,
    enforce_box: bool,
    qstar: Option<&[f64]>,
) -> std::result::Result<(Field, usize, f64), MarchError> {
    let grid = &cfg.grid;
    let m = ham.m();
    let stops = stored_times(cfg.t_end, &cfg.output);
    let every = matches!(cfg.output, OutputTimes::EveryStep);
    let mut out = Field::empty(grid.clone(), m);
    let mut cur = init.to_vec();
    let mut next = vec![0.0; cur.len()];
    let mut coup = vec![0.0; cur.len()];
    out.push_slice(0.0, &cur);
    let mut steps = 0usize;
    let mut gmax = max_gradient(grid, m, &cur).unwrap_or(f64::INFINITY);
    for w in stops.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let k = ((t1 - t0) / st.dt_max - 1e-9).ceil().max(1.0) as usize;
        let dt = (t1 - t0) / k as f64;
        for s in 0..k {
            let t = t0 + dt * s as f64;
            let coupling: &[f64] = match frozen {
                Some(f) => {
                    f.slice_at(t, &mut coup).map_err(MarchError::Fatal)?;
                    &coup
                }
                None => &cur,
            };
            let god = qstar.map(|q| Minimizers { q, scale: grad_scale(t) });
            lf_step(ham, grid, eps, t, dt, st.sigma, 0.0, &cur, coupling, god, &mut next);
            std::mem::swap(&mut cur, &mut next);
            steps += 1;
            let tn = if s + 1 == k { t1 } else { t + dt };
            match max_gradient(grid, m, &cur) {
                None => return Err(MarchError::Fatal(Error::NonFinite { step: steps, t: tn })),
                Some(g) => {
                    gmax = gmax.max(g / grad_scale(tn));
                    if enforce_box && g > st.box_radius * grad_scale(tn) {
                        return Err(MarchError::Escape(g / grad_scale(tn)));
                    }
                }
            }
            if every && s + 1 < k {
                out.push_slice(tn, &cur);
            }
        }
        out.push_slice(t1, &cur);
    }
    Ok((out, steps, gmax))
}

fn initial_slice(data: &InitialData, grid: &TorusGrid, m: usize) -> Result<Vec<f64>> {
    if data.m() != m {
        return precondition(format!("data has {} components, spec has {m}", data.m()));
    }
    let len = grid.len();
    let mut v = vec![0.0; m * len];
    for i in 0..m {
        for g in 0..len {
            let x = grid.coords(g);
            v[i * len + g] = data.eval(i, &x[..grid.n()]);
        }
    }
    Ok(v)
}

fn frozen_on_grid(cfg: &SchemeConfig, m: usize) -> Result<Option<Arc<Field>>> {
    match &cfg.coupling {
        CouplingMode::Explicit => Ok(None),
        CouplingMode::Frozen(f) => {
            if f.m() != m {
                return precondition(format!("frozen field has {} components, spec has {m}", f.m()));
            }
            if f.grid() == &cfg.grid {
                Ok(Some(f.clone()))
            } else {
                Ok(Some(Arc::new(f.resample_to(&cfg.grid)?)))
            }
        }
    }
}

/// Solves `∂t u_i + H_i(x, x/ε, Du_i, u) = 0`, `u(·, 0) = φ` with the global
/// Lax–Friedrichs scheme and forward Euler in time.
pub fn solve_cauchy(spec: &HamiltonianSpec, data: &InitialData, eps: Option<f64>, cfg: &SchemeConfig) -> Result<Field> {
    Ok(solve_cauchy_with_stats(spec, data, eps, cfg)?.field)
}

pub fn solve_cauchy_with_stats(
    spec: &HamiltonianSpec,
    data: &InitialData,
    eps: Option<f64>,
    cfg: &SchemeConfig,
) -> Result<Solution> {
    check_eps(&cfg.grid, eps, spec.has_fast_variable())?;
    check_slow_period(spec, &cfg.grid)?;
    if !spec.is_convex() {
        return precondition("scheme requires a Hamiltonian convex in p");
    }
    if !(cfg.t_end > 0.0) {
        return precondition(format!("t_end must be positive, got {}", cfg.t_end));
    }
    let frozen = frozen_on_grid(cfg, spec.m())?;
    let gb = gradient_box(spec, data, cfg.t_end);
    let mut radius = cfg.p_radius.unwrap_or(gb.radius);
    let u_bound = match &frozen {
        Some(f) => f.sup_norm().max(gb.u_bound),
        None => gb.u_bound,
    };
    let init = initial_slice(data, &cfg.grid, spec.m())?;
    let qstar = minimizers(spec, cfg, eps)?;
    let adaptive = cfg.p_radius.is_none() && matches!(cfg.sigma, SigmaMode::Sampled);
    let mut restarts = 0;
    loop {
        let st = setup(spec, cfg, radius, u_bound, 0.0)?;
        debug!(
            "solve {}: eps {:?}, N {}, sigma {:.4}, radius {:.4}, dt {:.3e}",
            spec.name(),
            eps,
            cfg.grid.points(),
            st.sigma,
            st.box_radius,
            st.dt_max
        );
        let enforce = !matches!(cfg.sigma, SigmaMode::Fixed(_)) || cfg.p_radius.is_some();
        match march(spec, &init, eps, cfg, frozen.as_deref(), &st, &|_| 1.0, enforce, qstar.as_deref()) {
            Ok((field, steps, max_gradient)) => {
                return Ok(Solution {
                    field,
                    stats: SolveStats {
                        sigma: st.sigma,
                        box_radius: st.box_radius,
                        dt_max: st.dt_max,
                        steps,
                        max_gradient,
                        restarts,
                    },
                })
            }
            Err(MarchError::Fatal(e)) => return Err(e),
            Err(MarchError::Escape(g)) => {
                if !adaptive || restarts >= 4 {
                    return Err(Error::Cfl(format!(
                        "gradient {g:.4} left the box of radius {:.4} covered by sigma",
                        st.box_radius
                    )));
                }
                warn!("gradient {g:.4} left the box {:.4}; restarting with a larger box", st.box_radius);
                radius = radius.max(g) * 1.5;
                restarts += 1;
            }
        }
    }
}

/// Solves the same problem through `v = e^{−λt}u`, whose system is strictly
/// monotone for `λ > Θ`, and maps the result back.
pub fn solve_cauchy_monotonized(
    spec: &HamiltonianSpec,
    data: &InitialData,
    eps: Option<f64>,
    lambda: f64,
    cfg: &SchemeConfig,
) -> Result<Field> {
    check_eps(&cfg.grid, eps, spec.has_fast_variable())?;
    check_slow_period(spec, &cfg.grid)?;
    if !matches!(cfg.coupling, CouplingMode::Explicit) {
        return precondition("the monotonized path supports explicit coupling only");
    }
    let k = kruzhkov_transform(spec, lambda)?;
    let gb = gradient_box(spec, data, cfg.t_end);
    let radius = cfg.p_radius.unwrap_or(gb.radius);
    // ∂H^λ/∂p at (t, e^{−λt}q) equals ∂H/∂p at q, so σ comes from the base system.
    let sigma = match cfg.sigma {
        SigmaMode::Fixed(s) => s,
        SigmaMode::Sampled => estimate_sigma(spec, cfg.grid.period(), SIGMA_INFLATION * radius, gb.u_bound, &[0.0])?,
    };
    let mut c2 = cfg.clone();
    c2.sigma = SigmaMode::Fixed(sigma);
    let st = setup(&k, &c2, radius, gb.u_bound, 0.0)?;
    let init = initial_slice(data, &cfg.grid, spec.m())?;
    // The transformed Hamiltonian at time t is minimized at e^{−λt}q*.
    let qstar = minimizers(spec, cfg, eps)?;
    let scale = move |t: f64| (-lambda * t).exp();
    let (v, _, _) = match march(&k, &init, eps, &c2, None, &st, &scale, false, qstar.as_deref()) {
        Ok(r) => r,
        Err(MarchError::Fatal(e)) => return Err(e),
        Err(MarchError::Escape(_)) => unreachable!("box not enforced"),
    };
    let mut u = Field::empty(v.grid().clone(), v.m());
    for (kk, &t) in v.stamps().iter().enumerate() {
        let g = (lambda * t).exp();
        let s: Vec<f64> = v.slice(kk).iter().map(|x| g * x).collect();
        u.push_slice(t, &s);
    }
    Ok(u)
}

/// Marches `∂τ u + λu + H_i(x, x/ε, Du_i, u) = 0` in pseudo-time to steady state.
pub fn solve_stationary(
    spec: &HamiltonianSpec,
    eps: Option<f64>,
    scfg: &StationaryConfig,
    cfg: &SchemeConfig,
) -> Result<StationarySolution> {
    check_eps(&cfg.grid, eps, spec.has_fast_variable())?;
    check_slow_period(spec, &cfg.grid)?;
    let lambda = scfg.lambda;
    if !(lambda > spec.theta()) {
        return precondition(format!(
            "stationary problem needs lambda > theta (lambda = {lambda}, theta = {})",
            spec.theta()
        ));
    }
    let m = spec.m();
    let frozen = frozen_on_grid(cfg, m)?;
    let sup0 = spec.sup_at_rest(64);
    let big_m = lambda / (lambda - spec.theta()) * sup0;
    let bound = big_m / lambda;
    // λu + H(Du) = 0 gives H(Du) = −λu ≤ M, which bounds |Du| through coercivity.
    let u_bound = bound.max(frozen.as_ref().map_or(0.0, |f| f.sup_norm()));
    let level = big_m + spec.theta() * u_bound;
    let radius = cfg.p_radius.unwrap_or_else(|| {
        (0..m)
            .map(|i| spec.coercivity_radius(i, level, u_bound))
            .fold(0.0, f64::max)
    });
    let st = setup(spec, cfg, radius, u_bound, lambda)?;
    let qstar = minimizers(spec, cfg, eps)?;
    let grid = &cfg.grid;
    let len = grid.len();
    let mut cur = match &scfg.initial {
        None => vec![0.0; m * len],
        Some(f) => {
            if f.m() != m {
                return precondition(format!("initial guess has {} components, spec has {m}", f.m()));
            }
            let f = if f.grid() == grid { (**f).clone() } else { f.resample_to(grid)? };
            f.slice(f.stamps().len() - 1).to_vec()
        }
    };
    let mut next = vec![0.0; m * len];
    let coup_fixed: Option<Vec<f64>> = frozen.as_ref().map(|f| f.slice(f.stamps().len() - 1).to_vec());
    let dt = st.dt_max;
    let mut tau = 0.0;
    let mut calm = 0usize;
    let mut steps = 0usize;
    let mut gmax: f64 = 0.0;
    loop {
        let coupling: &[f64] = coup_fixed.as_deref().unwrap_or(&cur);
        let god = qstar.as_deref().map(|q| Minimizers { q, scale: 1.0 });
        lf_step(spec, grid, eps, 0.0, dt, st.sigma, lambda, &cur, coupling, god, &mut next);
        steps += 1;
        tau += dt;
        let mut du: f64 = 0.0;
        let mut un: f64 = 0.0;
        for (a, b) in next.iter().zip(&cur) {
            du = du.max((a - b).abs());
            un = un.max(a.abs());
        }
        if !(du.is_finite() && un.is_finite()) {
            return Err(Error::NonFinite { step: steps, t: tau });
        }
        std::mem::swap(&mut cur, &mut next);
        if steps % 64 == 0 {
            if let Some(g) = max_gradient(grid, m, &cur) {
                gmax = gmax.max(g);
            }
        }
        let rel = du / (dt * un.max(1.0));
        calm = if rel < scfg.steady_tol { calm + 1 } else { 0 };
        if calm >= STEADY_WINDOW {
            break;
        }
        if tau > scfg.max_pseudo_time {
            return Err(Error::NonConvergence(format!(
                "stationary march not steady after pseudo-time {tau:.3} (update {rel:.3e} > {:.1e})",
                scfg.steady_tol
            )));
        }
    }
    if let Some(g) = max_gradient(grid, m, &cur) {
        gmax = gmax.max(g);
    }
    let mut field = Field::empty(grid.clone(), m);
    field.push_slice(0.0, &cur);
    let sup_norm = field.sup_norm();
    let sol = StationarySolution {
        field,
        pseudo_time: tau,
        bound,
        sup_norm,
        stats: SolveStats {
            sigma: st.sigma,
            box_radius: st.box_radius,
            dt_max: dt,
            steps,
            max_gradient: gmax,
            restarts: 0,
        },
    };
    if !sol.bound_holds() {
        warn!(
            "stationary solution violates the a-priori bound: |u| = {:.6} > M/lambda = {:.6}",
            sol.sup_norm, sol.bound
        );
    }
    Ok(sol)
}

/// Successive-refinement study of the discretization error.
#[derive(Debug, Clone)]
pub struct RefinementEstimate {
    pub points: Vec<usize>,
    /// `d_k = sup|u_k − u_{k+1}|` on the coarsest grid's points and common stamps.
    pub differences: Vec<f64>,
    pub observed_order: Option<f64>,
    /// Estimated error of each grid's solution.
    pub errors: Vec<f64>,
    /// False when the differences fail to decrease (flagged, not fatal).
    pub monotone: bool,
    pub solutions: Vec<Field>,
}

impl RefinementEstimate {
    /// Error estimate of the coarsest grid.
    pub fn estimate(&self) -> f64 {
        self.errors[0]
    }
}

/// Richardson-type error estimate from solves on strictly refining grids.
/// The order used in the extrapolation is the observed order clamped to
/// `[0.5, 1]`, which errs on the large side for a first-order scheme.
pub fn scheme_error_estimate(
    spec: &HamiltonianSpec,
    data: &InitialData,
    eps: Option<f64>,
    grids: &[TorusGrid],
    cfg: &SchemeConfig,
) -> Result<RefinementEstimate> {
    let ratio = common_ratio(grids)?;
    if matches!(cfg.output, OutputTimes::EveryStep) {
        return precondition("refinement studies need grid-independent output times");
    }
    let mut solutions = Vec::new();
    for g in grids {
        let c = cfg.clone().with_grid(g.clone());
        solutions.push(solve_cauchy(spec, data, eps, &c)?);
    }
    let coarse = &grids[0];
    let restricted: Vec<Field> = solutions
        .iter()
        .map(|f| f.restrict_to_coarser(coarse))
        .collect::<Result<_>>()?;
    let window = (0.0, cfg.t_end);
    let differences: Vec<f64> = restricted
        .windows(2)
        .map(|w| sup_distance(&w[0], &w[1], window))
        .collect::<Result<_>>()?;
    Ok(RefinementEstimate::from_differences(
        grids.iter().map(|g| g.points()).collect(),
        differences,
        ratio,
        solutions,
    ))
}

/// Richardson estimate for the discounted stationary problem on strictly refining grids.
pub fn stationary_error_estimate(
    spec: &HamiltonianSpec,
    eps: Option<f64>,
    scfg: &StationaryConfig,
    grids: &[TorusGrid],
    cfg: &SchemeConfig,
) -> Result<(RefinementEstimate, Vec<StationarySolution>)> {
    let ratio = common_ratio(grids)?;
    let mut sols: Vec<StationarySolution> = Vec::new();
    for g in grids {
        let mut s = scfg.clone();
        if let Some(prev) = sols.last() {
            s.initial = Some(Arc::new(prev.field.clone()));
        }
        sols.push(solve_stationary(spec, eps, &s, &cfg.clone().with_grid(g.clone()))?);
    }
    let coarse = &grids[0];
    let restricted: Vec<Field> = sols
        .iter()
        .map(|s| s.field.restrict_to_coarser(coarse))
        .collect::<Result<_>>()?;
    let differences: Vec<f64> = restricted
        .windows(2)
        .map(|w| sup_distance(&w[0], &w[1], (0.0, 0.0)))
        .collect::<Result<_>>()?;
    let fields = sols.iter().map(|s| s.field.clone()).collect();
    let est = RefinementEstimate::from_differences(grids.iter().map(|g| g.points()).collect(), differences, ratio, fields);
    Ok((est, sols))
}

fn common_ratio(grids: &[TorusGrid]) -> Result<usize> {
    if grids.len() < 2 {
        return precondition("need at least two grids");
    }
    let mut ratio = 0;
    for w in grids.windows(2) {
        let r = w[0]
            .refinement_ratio(&w[1])
            .filter(|&r| r > 1)
            .ok_or_else(|| Error::Grid("grids must strictly refine each other".into()))?;
        if ratio != 0 && r != ratio {
            return precondition("refinement ratios must be equal");
        }
        ratio = r;
    }
    Ok(ratio)
}

impl RefinementEstimate {
    /// Extrapolated errors from successive differences `d_k` at refinement
    /// ratio `ratio`. The order is the observed one clamped to `[0.5, 1]`, or
    /// 0.5 with the worst difference when the differences do not decrease.
    pub fn from_differences(points: Vec<usize>, differences: Vec<f64>, ratio: usize, solutions: Vec<Field>) -> Self {
        let monotone = differences.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
        let r = ratio as f64;
        let observed_order = if differences.len() >= 2 && differences[1] > 0.0 && differences[0] > 0.0 {
            Some((differences[0] / differences[1]).ln() / r.ln())
        } else {
            None
        };
        let order = if monotone {
            observed_order.unwrap_or(1.0).clamp(0.5, 1.0)
        } else {
            0.5
        };
        let f = 1.0 / (1.0 - r.powf(-order));
        let mut errors: Vec<f64> = differences.iter().map(|d| d * f).collect();
        let last = *differences.last().unwrap_or(&0.0);
        errors.push(last * f * r.powf(-order));
        if !monotone {
            let worst = differences.iter().fold(0.0f64, |a, &b| a.max(b)) * f;
            for e in errors.iter_mut() {
                *e = e.max(worst);
            }
            warn!("refinement differences are not decreasing: {differences:?}");
        }
        RefinementEstimate {
            points,
            differences,
            observed_order,
            errors,
            monotone,
            solutions,
        }
    }

    /// Error estimate of the finest grid.
    pub fn finest(&self) -> f64 {
        *self.errors.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::problems::{mechanical, Potential, Problem, ProblemParams};

    fn quad(c: f64, k: f64) -> HamiltonianSpec {
        HamiltonianSpec::new("quad", 1, 1, move |_, _, _, p, _| c * p[0] * p[0] - k)
            .with_coercivity(move |_, l, _| ((l + k).max(0.0) / c).sqrt())
    }

    fn grid(n: usize) -> TorusGrid {
        TorusGrid::new(1, 1.0, n).unwrap()
    }

    #[test]
    fn constants_are_preserved() {
        let spec = quad(0.5, 0.0).without_fast_variable();
        let data = InitialData::constant(vec![0.7]);
        let f = solve_cauchy(&spec, &data, None, &SchemeConfig::new(grid(32), 1.0)).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn constant_hamiltonian_drifts_linearly() {
        let spec = quad(0.5, 1.0).without_fast_variable();
        let f = solve_cauchy(&spec, &InitialData::zero(1), None, &SchemeConfig::new(grid(32), 1.0)).unwrap();
        for (k, &t) in f.stamps().iter().enumerate() {
            for &v in f.component(k, 0) {
                assert!((v - t).abs() < 1e-12, "{v} vs {t}");
            }
        }
    }

    #[test]
    fn under_resolved_eps_rejected() {
        let spec = mechanical(Potential::Tent, 1);
        let cfg = SchemeConfig::new(grid(64), 0.1);
        let e = solve_cauchy(&spec, &InitialData::zero(1), Some(0.1), &cfg).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)), "{e}");
        let e = solve_cauchy(&spec, &InitialData::zero(1), Some(0.3), &cfg.clone().with_grid(grid(1024))).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)), "{e}");
    }

    #[test]
    fn oversized_step_is_cfl_error() {
        let spec = quad(0.5, 1.0).without_fast_variable();
        let mut cfg = SchemeConfig::new(grid(32), 1.0);
        cfg.dt = Some(0.5);
        let e = solve_cauchy(&spec, &InitialData::zero(1), None, &cfg).unwrap_err();
        assert!(matches!(e, Error::Cfl(_)));
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let spec = quad(0.5, 0.0).without_fast_variable();
        let data = InitialData::new(1, |_, x| (2.0 * std::f64::consts::PI * x[0]).sin(), 6.3, 1.0);
        let mut cfg = SchemeConfig::new(grid(32), 1.0).with_sigma(1e-3);
        cfg.dt = Some(0.01);
        // Far too little dissipation: the scheme is not monotone and blows up.
        match solve_cauchy(&spec, &data, None, &cfg) {
            Err(Error::NonFinite { step, .. }) => assert!(step > 0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn stored_times_hit_extras_exactly() {
        let spec = quad(0.5, 1.0).without_fast_variable();
        let cfg = SchemeConfig::new(grid(16), 1.0).with_output(OutputTimes::Uniform {
            max_interval: 0.25,
            extra: vec![0.005, 0.02],
        });
        let f = solve_cauchy(&spec, &InitialData::zero(1), None, &cfg).unwrap();
        assert_eq!(f.stamps(), &[0.0, 0.005, 0.02, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn stationary_trivial_solutions() {
        let spec = quad(0.5, 0.0).without_fast_variable();
        let s = solve_stationary(&spec, None, &StationaryConfig::new(1.0), &SchemeConfig::new(grid(16), 1.0)).unwrap();
        assert!(s.field.sup_norm() < 1e-12);
        let spec = quad(0.5, 1.0).without_fast_variable();
        let s = solve_stationary(&spec, None, &StationaryConfig::new(2.0), &SchemeConfig::new(grid(16), 1.0)).unwrap();
        for &v in s.field.values() {
            assert!((v - 0.5).abs() < 1e-8, "{v}");
        }
        assert!(s.bound_holds());
    }

    #[test]
    fn stationary_rejects_small_lambda() {
        let p = Problem::by_name("eikonal-1d").unwrap();
        let cfg = SchemeConfig::new(grid(256), 1.0);
        let e = solve_stationary(&p.spec, Some(0.1), &StationaryConfig::new(1.0), &cfg).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
    }

    #[test]
    fn monotonized_path_agrees_for_decoupled_problem() {
        let spec = mechanical(Potential::Tent, 1);
        let data = InitialData::new(1, |_, x| 0.2 * (2.0 * std::f64::consts::PI * x[0]).cos(), 1.3, 0.2);
        let cfg = SchemeConfig::new(grid(320), 0.5);
        let a = solve_cauchy(&spec, &data, Some(0.2), &cfg).unwrap();
        let b = solve_cauchy_monotonized(&spec, &data, Some(0.2), 1.0, &cfg).unwrap();
        let d = sup_distance(&a, &b, (0.0, 0.5)).unwrap();
        assert!(d < 2e-3, "{d}");
    }

    #[test]
    fn coupled_monotonized_agrees_with_direct() {
        let p = Problem::builtin("example11", &ProblemParams { coupling: Some(0.5), ..Default::default() }).unwrap();
        let g = TorusGrid::new(1, 0.1, 64).unwrap();
        let cfg = SchemeConfig::new(g, 0.3);
        let a = solve_cauchy(&p.spec, &p.data, Some(0.1), &cfg).unwrap();
        let b = solve_cauchy_monotonized(&p.spec, &p.data, Some(0.1), 2.0 * p.spec.theta() + 1.0, &cfg).unwrap();
        let d = sup_distance(&a, &b, (0.0, 0.3)).unwrap();
        assert!(d < 2e-3, "{d}");
    }

    #[test]
    fn refinement_of_constant_solution_is_zero() {
        let spec = quad(0.5, 1.0).without_fast_variable();
        let cfg = SchemeConfig::new(grid(16), 0.5);
        let est = scheme_error_estimate(&spec, &InitialData::zero(1), None, &[grid(16), grid(32), grid(64)], &cfg).unwrap();
        assert!(est.estimate() < 1e-12);
    }

    #[test]
    fn two_dimensional_linear_growth() {
        let spec = HamiltonianSpec::new("q2", 1, 2, |_, _, _, p, _| 0.5 * (p[0] * p[0] + p[1] * p[1]) - 1.0)
            .with_coercivity(|_, l, _| (2.0 * (l + 1.0).max(0.0)).sqrt())
            .without_fast_variable();
        let g = TorusGrid::new(2, 1.0, 16).unwrap();
        let f = solve_cauchy(&spec, &InitialData::zero(1), None, &SchemeConfig::new(g, 0.5)).unwrap();
        let last = f.stamps().len() - 1;
        assert!(f.component(last, 0).iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }
    fn cosine_data() -> InitialData {
        InitialData::new(1, |_, x| 0.2 * (2.0 * std::f64::consts::PI * x[0]).cos(), 1.3, 0.2)
    }

    #[test]
    fn godunov_and_lax_friedrichs_converge_together() {
        let spec = quad(0.5, 0.0).without_fast_variable();
        let cfg = SchemeConfig::new(grid(1024), 0.5);
        let a = solve_cauchy(&spec, &cosine_data(), None, &cfg).unwrap();
        let b = solve_cauchy(&spec, &cosine_data(), None, &cfg.clone().with_flux(Flux::Godunov)).unwrap();
        let d = sup_distance(&a, &b, (0.0, 0.5)).unwrap();
        assert!(d < 3e-3, "{d}");
    }

    #[test]
    fn godunov_is_sharper_on_oscillating_problem() {
        // Fine reference with Godunov, then compare both fluxes on a coarse grid.
        let spec = mechanical(Potential::Tent, 1);
        let eps = 0.25;
        let cfg = SchemeConfig::new(grid(2048), 0.5).with_flux(Flux::Godunov);
        let r = solve_cauchy(&spec, &cosine_data(), Some(eps), &cfg).unwrap();
        let coarse = cfg.clone().with_grid(grid(64));
        let g = solve_cauchy(&spec, &cosine_data(), Some(eps), &coarse).unwrap();
        let l = solve_cauchy(&spec, &cosine_data(), Some(eps), &coarse.with_flux(Flux::LaxFriedrichs)).unwrap();
        let r = r.resample_to(&grid(64)).unwrap();
        let dg = sup_distance(&g, &r, (0.0, 0.5)).unwrap();
        let dl = sup_distance(&l, &r, (0.0, 0.5)).unwrap();
        assert!(dg < 0.5 * dl, "godunov {dg}, lf {dl}");
    }

    #[test]
    fn godunov_monotonized_agrees_with_direct() {
        let p = Problem::builtin("example11", &ProblemParams { coupling: Some(0.5), ..Default::default() }).unwrap();
        let g = TorusGrid::new(1, 0.1, 64).unwrap();
        let cfg = SchemeConfig::new(g, 0.3).with_flux(Flux::Godunov);
        let a = solve_cauchy(&p.spec, &p.data, Some(0.1), &cfg).unwrap();
        let b = solve_cauchy_monotonized(&p.spec, &p.data, Some(0.1), 2.0 * p.spec.theta() + 1.0, &cfg).unwrap();
        let d = sup_distance(&a, &b, (0.0, 0.3)).unwrap();
        assert!(d < 2e-3, "{d}");
    }

    #[test]
    fn godunov_stationary_constant() {
        let spec = quad(0.5, 1.0).without_fast_variable();
        let cfg = SchemeConfig::new(grid(16), 1.0).with_flux(Flux::Godunov);
        let s = solve_stationary(&spec, None, &StationaryConfig::new(2.0), &cfg).unwrap();
        assert!(s.field.values().iter().all(|&v| (v - 0.5).abs() < 1e-8));
    }

    #[test]
    fn godunov_rejected_in_two_dimensions() {
        let spec = HamiltonianSpec::new("q2", 1, 2, |_, _, _, p, _| 0.5 * (p[0] * p[0] + p[1] * p[1]))
            .with_coercivity(|_, l, _| (2.0 * l.max(0.0)).sqrt())
            .without_fast_variable();
        let g = TorusGrid::new(2, 1.0, 8).unwrap();
        let cfg = SchemeConfig::new(g, 0.5).with_flux(Flux::Godunov);
        let e = solve_cauchy(&spec, &InitialData::zero(1), None, &cfg).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
    }
}
