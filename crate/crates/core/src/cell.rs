//! Cell problems `H_i(x, y, p + Dv, c) = H̄_i(x, p, c)` on the fast torus and
//! the quantized effective-Hamiltonian cache.
//!
//! Both the vanishing-discount and the large-time formulations are discretized
//! with the Lax–Friedrichs Hamiltonian. Steady states and implicit time steps
//! are found with Newton's method: a cyclic tridiagonal solve in 1D and
//! Jacobi-preconditioned BiCGSTAB in 2D.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{precondition, Error, Result};
use crate::model::{golden_max, CouplingFn, HamiltonianSpec};
use crate::parallel;
use crate::tolerances::{CELL_AGREEMENT, CELL_DELTA, CELL_HORIZON, CELL_POINTS_1D, SIGMA_INFLATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellMethod {
    Discount,
    LargeTime,
    Both,
}

#[derive(Debug, Clone)]
pub struct CellConfig {
    pub method: CellMethod,
    /// Smallest discount δ; the pair (δ, 2δ) is extrapolated.
    pub delta: f64,
    /// Horizon of the large-time method.
    pub t_cell: f64,
    /// Time step of the (implicit) large-time march.
    pub lt_step: f64,
    /// Fast-torus points per axis.
    pub points: usize,
    pub agreement_tol: f64,
    /// Also solve with 4δ and report the spread of the two extrapolations.
    pub third_delta: bool,
}

impl CellConfig {
    pub fn for_dimension(n: usize) -> Self {
        CellConfig {
            method: CellMethod::Discount,
            delta: CELL_DELTA,
            t_cell: CELL_HORIZON,
            lt_step: 0.25,
            points: if n == 1 { CELL_POINTS_1D } else { 32 },
            agreement_tol: CELL_AGREEMENT,
            third_delta: false,
        }
    }

    pub fn with_method(mut self, method: CellMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_points(mut self, points: usize) -> Self {
        self.points = points;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return precondition(format!("cell discount must be positive, got {}", self.delta));
        }
        if !(self.t_cell >= 10.0) {
            return precondition(format!("cell horizon must be at least 10, got {}", self.t_cell));
        }
        if self.points < 8 {
            return precondition("cell grid needs at least 8 points per axis");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellValue {
    /// The discount value when computed, else the large-time value.
    pub value: f64,
    pub discount: Option<f64>,
    pub large_time: Option<f64>,
    /// `|(2H̄_δ − H̄_{2δ}) − (2H̄_{2δ} − H̄_{4δ})|` when a third discount was used.
    pub extrapolation_spread: Option<f64>,
}

impl CellValue {
    pub fn discrepancy(&self) -> Option<f64> {
        Some((self.discount? - self.large_time?).abs())
    }
}

/// Discretized cell operator for fixed frozen arguments.
struct CellOperator<'a> {
    n: usize,
    points: usize,
    h: f64,
    sigma: f64,
    ham: &'a (dyn Fn(&[f64], &[f64]) -> f64 + Sync),
    p: [f64; 2],
    /// Minimizer of `q ↦ H(y_j, q)` per point; selects the Godunov
    /// Hamiltonian in 1D. Empty means Lax–Friedrichs.
    qstar: Vec<f64>,
}

/// Sparse Jacobian rows: diagonal plus `2n` neighbour couplings.
struct Jacobian {
    diag: Vec<f64>,
    off: Vec<[f64; 4]>,
}

impl<'a> CellOperator<'a> {
    fn len(&self) -> usize {
        self.points.pow(self.n as u32)
    }

    fn y(&self, j: usize) -> [f64; 2] {
        let np = self.points;
        [(j % np) as f64 * self.h, (j / np) as f64 * self.h]
    }

    /// Neighbours in the order +x, −x, +y, −y.
    fn neighbours(&self, j: usize) -> [usize; 4] {
        let np = self.points;
        let (a, b) = (j % np, j / np);
        let r = |v: usize, d: isize| ((v as isize + d).rem_euclid(np as isize)) as usize;
        if self.n == 1 {
            [r(a, 1), r(a, -1), 0, 0]
        } else {
            [r(a, 1) + np * b, r(a, -1) + np * b, a + np * r(b, 1), a + np * r(b, -1)]
        }
    }

    /// Godunov Hamiltonian `max(H(max(a, q*)), H(min(b, q*)))` of the
    /// one-sided slopes `a`, `b`, and its Jacobian.
    fn apply_godunov(&self, w: &[f64], out: &mut [f64], mut jac: Option<&mut Jacobian>) {
        let inv_h = 1.0 / self.h;
        let np = self.points;
        let deriv = |y: &[f64], q: f64| {
            let eta = 1e-6 * (1.0 + q.abs());
            ((self.ham)(y, &[q + eta]) - (self.ham)(y, &[q - eta])) / (2.0 * eta)
        };
        for j in 0..np {
            let y = [j as f64 * self.h];
            let (up, dn) = (w[(j + 1) % np], w[(j + np - 1) % np]);
            let a = self.p[0] + (w[j] - dn) * inv_h;
            let b = self.p[0] + (up - w[j]) * inv_h;
            let qs = self.qstar[j];
            let ha = (self.ham)(&y, &[a.max(qs)]);
            let hb = (self.ham)(&y, &[b.min(qs)]);
            out[j] = ha.max(hb);
            if let Some(jac) = jac.as_deref_mut() {
                let mut off = [0.0; 4];
                let d;
                if ha >= hb {
                    let da = if a > qs { deriv(&y, a) } else { 0.0 };
                    d = da * inv_h;
                    off[1] = -da * inv_h;
                } else {
                    let db = if b < qs { deriv(&y, b) } else { 0.0 };
                    d = -db * inv_h;
                    off[0] = db * inv_h;
                }
                jac.diag[j] = d;
                jac.off[j] = off;
            }
        }
    }

    /// Numerical Hamiltonian at every point and, if requested, its Jacobian.
    fn apply(&self, w: &[f64], out: &mut [f64], jac: Option<&mut Jacobian>) {
        if !self.qstar.is_empty() {
            return self.apply_godunov(w, out, jac);
        }
        let inv_h = 1.0 / self.h;
        let n = self.n;
        let mut jac = jac;
        for j in 0..self.len() {
            let nb = self.neighbours(j);
            let y = self.y(j);
            let mut q = [0.0; 2];
            let mut visc = 0.0;
            for ax in 0..n {
                let (up, dn) = (w[nb[2 * ax]], w[nb[2 * ax + 1]]);
                q[ax] = self.p[ax] + 0.5 * (up - dn) * inv_h;
                visc += 0.5 * self.sigma * (up - 2.0 * w[j] + dn) * inv_h;
            }
            let hv = (self.ham)(&y[..n], &q[..n]);
            out[j] = hv - visc;
            if let Some(jac) = jac.as_deref_mut() {
                let mut d = 0.0;
                let mut off = [0.0; 4];
                for ax in 0..n {
                    let eta = 1e-6 * (1.0 + q[ax].abs());
                    let mut qp = q;
                    let mut qm = q;
                    qp[ax] += eta;
                    qm[ax] -= eta;
                    let dh = ((self.ham)(&y[..n], &qp[..n]) - (self.ham)(&y[..n], &qm[..n])) / (2.0 * eta);
                    off[2 * ax] = 0.5 * (dh - self.sigma) * inv_h;
                    off[2 * ax + 1] = 0.5 * (-dh - self.sigma) * inv_h;
                    d += self.sigma * inv_h;
                }
                jac.diag[j] = d;
                jac.off[j] = off;
            }
        }
    }

    /// Solves `(shift·I + J) x = r`.
    fn linear_solve(&self, jac: &Jacobian, shift: f64, r: &[f64]) -> Result<Vec<f64>> {
        let len = self.len();
        if self.n == 1 {
            let a: Vec<f64> = jac.off.iter().map(|o| o[1]).collect();
            let b: Vec<f64> = jac.diag.iter().map(|d| d + shift).collect();
            let c: Vec<f64> = jac.off.iter().map(|o| o[0]).collect();
            return Ok(solve_cyclic(&a, &b, &c, r));
        }
        let apply = |x: &[f64], y: &mut [f64]| {
            for j in 0..len {
                let nb = self.neighbours(j);
                let mut s = (jac.diag[j] + shift) * x[j];
                for k in 0..4 {
                    s += jac.off[j][k] * x[nb[k]];
                }
                y[j] = s;
            }
        };
        let diag: Vec<f64> = jac.diag.iter().map(|d| d + shift).collect();
        bicgstab(apply, &diag, r, 1e-13, 20 * len)
    }
}

/// Sherman–Morrison solve of a cyclic tridiagonal system
/// `a_j x_{j−1} + b_j x_j + c_j x_{j+1} = r_j` (indices modulo n).
pub(crate) fn solve_cyclic(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let n = b.len();
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= a[0] * c[n - 1] / gamma;
    let x = thomas(a, &bb, c, r);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = c[n - 1];
    let z = thomas(a, &bb, c, &u);
    let fact = (x[0] + a[0] * x[n - 1] / gamma) / (1.0 + z[0] + a[0] * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn thomas(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = r[0] / b[0];
    for j in 1..n {
        let m = b[j] - a[j] * cp[j - 1];
        cp[j] = c[j] / m;
        dp[j] = (r[j] - a[j] * dp[j - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for j in (0..n - 1).rev() {
        x[j] = dp[j] - cp[j] * x[j + 1];
    }
    x
}

fn bicgstab(apply: impl Fn(&[f64], &mut [f64]), diag: &[f64], b: &[f64], tol: f64, maxit: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let bnorm = dot(b, b).sqrt().max(1e-300);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for _ in 0..maxit {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
            y[k] = p[k] / diag[k];
        }
        apply(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }
        if dot(&s, &s).sqrt() < tol * bnorm {
            for k in 0..n {
                x[k] += alpha * y[k];
            }
            return Ok(x);
        }
        for k in 0..n {
            z[k] = s[k] / diag[k];
        }
        apply(&z, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for k in 0..n {
            x[k] += alpha * y[k] + omega * z[k];
            r[k] = s[k] - omega * t[k];
        }
        if dot(&r, &r).sqrt() < tol * bnorm {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence("BiCGSTAB did not reach tolerance in the cell solve".into()))
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn l2(v: &[f64]) -> f64 {
    (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt()
}

/// One implicit Euler step `(w − w_old)/dt + δw + Ĥ(w) = 0` (with `dt = ∞`
/// allowed) by damped Newton iteration. Returns `None` when Newton stalls.
fn implicit_step(op: &CellOperator<'_>, w_old: &[f64], delta: f64, dt: f64) -> Result<Option<Vec<f64>>> {
    let len = op.len();
    let inv_dt = if dt.is_finite() { 1.0 / dt } else { 0.0 };
    let mut hbuf = vec![0.0; len];
    let mut jac = Jacobian {
        diag: vec![0.0; len],
        off: vec![[0.0; 4]; len],
    };
    let residual = |w: &[f64], hbuf: &mut [f64], jac: Option<&mut Jacobian>| -> Vec<f64> {
        op.apply(w, hbuf, jac);
        w.iter()
            .zip(w_old)
            .zip(hbuf.iter())
            .map(|((wi, oi), hi)| (wi - oi) * inv_dt + delta * wi + hi)
            .collect()
    };
    let mut w = w_old.to_vec();
    let mut res = residual(&w, &mut hbuf, Some(&mut jac));
    for _ in 0..40 {
        let size = sup(&hbuf) + (delta + inv_dt) * sup(&w);
        if sup(&res) <= 1e-12 * (1.0 + size) {
            return Ok(Some(w));
        }
        let neg: Vec<f64> = res.iter().map(|v| -v).collect();
        let dw = op.linear_solve(&jac, delta + inv_dt, &neg)?;
        let r0 = l2(&res);
        let mut lambda = 1.0;
        let mut tbuf = vec![0.0; len];
        loop {
            let trial: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + lambda * b).collect();
            let tres = residual(&trial, &mut tbuf, None);
            let tn = l2(&tres);
            if tn.is_finite() && tn <= (1.0 - 1e-4 * lambda) * r0 {
                w = trial;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-3 {
                // Newton stagnates at roundoff level or has lost its way.
                let ok = sup(&res) <= 1e-9 * (1.0 + size);
                return Ok(if ok { Some(w) } else { None });
            }
        }
        res = residual(&w, &mut hbuf, Some(&mut jac));
    }
    Ok(None)
}

/// Steady state of `δw + Ĥ(w) = 0` by implicit pseudo-time stepping with a
/// growing step, ending with an undamped (`dt = ∞`) Newton solve.
/// Returns `−mean(δw)` and the corrector.
fn discount_value(op: &CellOperator<'_>, delta: f64, warm: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let len = op.len();
    let mut w = match warm {
        Some(w) => w.to_vec(),
        None => {
            let mut hbuf = vec![0.0; len];
            op.apply(&vec![0.0; len], &mut hbuf, None);
            vec![-mean(&hbuf) / delta; len]
        }
    };
    let mut dt = 1.0;
    for _ in 0..200 {
        if let Some(steady) = implicit_step(op, &w, delta, f64::INFINITY)? {
            return Ok((-delta * mean(&steady), steady));
        }
        match implicit_step(op, &w, delta, dt)? {
            Some(next) => {
                w = next;
                dt *= 4.0;
            }
            None => {
                dt *= 0.25;
                if dt < 1e-8 {
                    break;
                }
            }
        }
    }
    Err(Error::NonConvergence(format!(
        "discounted cell problem (delta = {delta}) did not reach a steady state"
    )))
}

/// Implicit Euler march of `∂t v + Ĥ(v) = 0` to `T`; returns `−(v(T) − v(T/2))·2/T` averaged.
fn large_time_value(op: &CellOperator<'_>, t_cell: f64, step: f64) -> Result<f64> {
    let len = op.len();
    let mut v = vec![0.0; len];
    let mut mid = None;
    let half = 0.5 * t_cell;
    let mut t = 0.0;
    let mut dt = step;
    while t < t_cell - 1e-12 {
        let target = if t < half - 1e-12 { half } else { t_cell };
        let h = dt.min(target - t);
        match implicit_step(op, &v, 0.0, h)? {
            Some(next) => {
                v = next;
                t = if (target - t - h).abs() < 1e-12 { target } else { t + h };
                if mid.is_none() && t >= half {
                    mid = Some(v.clone());
                }
                dt = (dt * 2.0).min(step);
            }
            None => {
                dt *= 0.5;
                if dt < 1e-8 {
                    return Err(Error::NonConvergence("implicit large-time cell step did not converge".into()));
                }
            }
        }
    }
    let mid = mid.expect("midpoint reached");
    debug_assert_eq!(mid.len(), len);
    let diff: Vec<f64> = v.iter().zip(&mid).map(|(a, b)| a - b).collect();
    Ok(-mean(&diff) * 2.0 / t_cell)
}

/// Dissipation coefficient: `1.1·max|∂H/∂q|` over the box `|q| ≤ 1.1·R`, where
/// `R` is the coercivity radius at level `max_y H(y, p)` (an upper bound for H̄).
fn cell_sigma(
    ham: &(dyn Fn(&[f64], &[f64]) -> f64 + Sync),
    n: usize,
    p: [f64; 2],
    radius_at: &impl Fn(f64) -> f64,
) -> Result<f64> {
    let ny = 64;
    let mut level = f64::NEG_INFINITY;
    let count = if n == 1 { ny } else { ny * ny };
    let yof = |k: usize| [(k % ny) as f64 / ny as f64, (k / ny) as f64 / ny as f64];
    for k in 0..count {
        let y = yof(k);
        level = level.max(ham(&y[..n], &p[..n]));
    }
    let r = SIGMA_INFLATION * radius_at(level).max(p[0].abs().max(p[1].abs()));
    if !r.is_finite() {
        return precondition("coercivity radius of the cell Hamiltonian is not finite");
    }
    let nq: usize = if n == 1 { 81 } else { 21 };
    let eta = 1e-6 * (1.0 + r);
    let mut s: f64 = 0.0;
    let step_y = if n == 1 { 1 } else { 4 };
    for k in (0..count).step_by(step_y) {
        let y = yof(k);
        for c in 0..nq.pow(n as u32) {
            let mut q = [0.0; 2];
            q[0] = -r + 2.0 * r * (c % nq) as f64 / (nq - 1) as f64;
            if n == 2 {
                q[1] = -r + 2.0 * r * (c / nq) as f64 / (nq - 1) as f64;
            }
            for ax in 0..n {
                let mut qp = q;
                let mut qm = q;
                qp[ax] += eta;
                qm[ax] -= eta;
                let d = (ham(&y[..n], &qp[..n]) - ham(&y[..n], &qm[..n])) / (2.0 * eta);
                if !d.is_finite() {
                    return precondition("cell Hamiltonian not finite on its gradient box");
                }
                s = s.max(d.abs());
            }
        }
    }
    Ok(SIGMA_INFLATION * s.max(1e-3))
}

/// Solves the cell problem for a black-box `ham(y, q)` at momentum `p`.
fn cell_value(
    ham: &(dyn Fn(&[f64], &[f64]) -> f64 + Sync),
    n: usize,
    p: &[f64],
    radius_at: impl Fn(f64) -> f64,
    cfg: &CellConfig,
) -> Result<CellValue> {
    cfg.validate()?;
    let mut pp = [0.0; 2];
    pp[..n].copy_from_slice(&p[..n]);
    let sigma = cell_sigma(ham, n, pp, &radius_at)?;
    let h = 1.0 / cfg.points as f64;
    let qstar = if n == 1 {
        // H(y, q*) ≤ H(y, 0), so q* lies inside the radius at level max_y H(y, 0).
        let level0 = (0..cfg.points).map(|j| ham(&[j as f64 * h], &[0.0])).fold(f64::NEG_INFINITY, f64::max);
        let r = SIGMA_INFLATION * radius_at(level0) + 1e-6;
        (0..cfg.points)
            .map(|j| {
                let y = [j as f64 * h];
                golden_max(-r, r, 1e-12 * (1.0 + r), |q| -ham(&y, &[q])).0
            })
            .collect()
    } else {
        Vec::new()
    };
    let op = CellOperator {
        n,
        points: cfg.points,
        h,
        sigma,
        ham,
        p: pp,
        qstar,
    };
    let mut discount = None;
    let mut spread = None;
    if cfg.method != CellMethod::LargeTime {
        let (h2, w2) = discount_value(&op, 2.0 * cfg.delta, None)?;
        let warm: Vec<f64> = w2.iter().map(|v| 2.0 * v).collect();
        let (h1, _) = discount_value(&op, cfg.delta, Some(&warm))?;
        let rich = 2.0 * h1 - h2;
        if cfg.third_delta {
            let (h4, _) = discount_value(&op, 4.0 * cfg.delta, None)?;
            spread = Some((rich - (2.0 * h2 - h4)).abs());
        }
        discount = Some(rich);
    }
    let large_time = if cfg.method != CellMethod::Discount {
        Some(large_time_value(&op, cfg.t_cell, cfg.lt_step)?)
    } else {
        None
    };
    let value = discount.or(large_time).expect("one method runs");
    let out = CellValue {
        value,
        discount,
        large_time,
        extrapolation_spread: spread,
    };
    if let Some(d) = out.discrepancy() {
        if d > cfg.agreement_tol {
            return Err(Error::CellDisagreement {
                discount: discount.unwrap(),
                large_time: large_time.unwrap(),
                tol: cfg.agreement_tol,
            });
        }
    }
    Ok(out)
}

/// `H̄_i(x, p, c)` from the cell problem of `y ↦ H_i(x, y, p + ·, c)`.
pub fn effective_hamiltonian(
    spec: &HamiltonianSpec,
    i: usize,
    x: &[f64],
    p: &[f64],
    c: &[f64],
    cfg: &CellConfig,
) -> Result<CellValue> {
    if !spec.is_convex() {
        return precondition("cell problem needs a Hamiltonian convex in p");
    }
    if x.iter().chain(p).chain(c).any(|v| !v.is_finite()) {
        return precondition("frozen cell arguments must be finite");
    }
    let ub = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let f = |y: &[f64], q: &[f64]| spec.eval(i, x, y, q, c);
    cell_value(&f, spec.n(), p, |level| spec.coercivity_radius(i, level, ub), cfg)
}

/// `h̄_i(x, p)` for the uncoupled part of an additively coupled spec.
fn effective_uncoupled(spec: &HamiltonianSpec, i: usize, x: &[f64], p: &[f64], cfg: &CellConfig) -> Result<CellValue> {
    let f = |y: &[f64], q: &[f64]| spec.uncoupled(i, x, y, q);
    // With c = 0 the coupling term is a constant shift, so the radius at level
    // `L` for h is the radius at `L + g(x, 0)` for H.
    let zero = vec![0.0; spec.m()];
    let g0 = spec.additive_coupling().map_or(0.0, |g| g(i, x, &zero));
    cell_value(&f, spec.n(), p, |level| spec.coercivity_radius(i, level + g0, 0.0), cfg)
}

/// One axis of the cache lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheAxis {
    pub lo: f64,
    pub step: f64,
    pub count: usize,
    pub periodic: bool,
}

impl CacheAxis {
    pub fn periodic(period: f64, count: usize) -> Self {
        CacheAxis {
            lo: 0.0,
            step: period / count as f64,
            count,
            periodic: true,
        }
    }

    /// `count` points from `lo` to `hi` inclusive.
    pub fn interval(lo: f64, hi: f64, count: usize) -> Self {
        assert!(count >= 2 && hi > lo);
        CacheAxis {
            lo,
            step: (hi - lo) / (count - 1) as f64,
            count,
            periodic: false,
        }
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.step * (self.count - 1) as f64
    }

    pub fn coord(&self, k: usize) -> f64 {
        self.lo + self.step * k as f64
    }

    /// Lower lattice index, upper index and weight of the upper one.
    #[inline]
    fn locate(&self, v: f64) -> Option<(usize, usize, f64)> {
        if self.periodic {
            if self.count == 1 {
                return Some((0, 0, 0.0));
            }
            let s = (v - self.lo) / self.step;
            let f = s.floor();
            let k = (f as i64).rem_euclid(self.count as i64) as usize;
            return Some((k, (k + 1) % self.count, s - f));
        }
        let s = (v - self.lo) / self.step;
        let top = (self.count - 1) as f64;
        if !(s >= -1e-9 && s <= top + 1e-9) {
            return None;
        }
        let s = s.clamp(0.0, top);
        let k = (s.floor() as usize).min(self.count - 2);
        Some((k, k + 1, s - k as f64))
    }
}

/// Lattice boxes for [`build_cache`].
#[derive(Debug, Clone)]
pub struct CacheBoxes {
    /// Points per axis on the slow period (1 for x-independent systems).
    pub x_points: usize,
    pub p: (f64, f64),
    pub p_points: usize,
    /// Full coupling lattice `(lo, hi, points)` per component, or `None` to
    /// solve only the uncoupled part of an additively coupled system.
    pub c: Option<(f64, f64, usize)>,
}

/// Structural diagnostics of a built cache, computed on lattice lines.
#[derive(Debug, Clone, Copy)]
pub struct CacheDiagnostics {
    /// Minimum of `H̄(p−Δ) + H̄(p+Δ) − 2H̄(p)` over lattice triples.
    pub convexity_slack: f64,
    pub lip_x: f64,
    pub lip_p: f64,
    pub lip_c: f64,
    pub max_discrepancy: f64,
}

/// Quantized table of `H̄_i(x, p, c)` with multilinear interpolation.
pub struct EffectiveCache {
    name: String,
    m: usize,
    n: usize,
    x_axis: CacheAxis,
    p_axis: CacheAxis,
    c_axis: Option<CacheAxis>,
    values: Vec<f64>,
    discrepancy: Vec<f64>,
    theta: f64,
    lip_x: f64,
    coupling: Option<Arc<CouplingFn>>,
    out_of_box: AtomicUsize,
}

impl std::fmt::Debug for EffectiveCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EffectiveCache")
            .field("name", &self.name)
            .field("x_axis", &self.x_axis)
            .field("p_axis", &self.p_axis)
            .field("c_axis", &self.c_axis)
            .field("len", &self.values.len())
            .finish()
    }
}

const CACHE_MAGIC: &str = "hjhom-effective-cache v1";

impl EffectiveCache {
    fn x_dims(&self) -> usize {
        if self.x_axis.count == 1 {
            0
        } else {
            self.n
        }
    }

    fn strides(&self) -> (usize, usize, usize, usize) {
        let xs = self.x_axis.count.pow(self.x_dims() as u32);
        let ps = self.p_axis.count.pow(self.n as u32);
        let cs = self.c_axis.map_or(1, |a| a.count.pow(self.m as u32));
        (xs, ps, cs, xs * ps * cs)
    }

    fn lattice_len(&self) -> usize {
        self.m * self.strides().3
    }

    /// Decodes a flat lattice index into (i, x, p, c) coordinates.
    fn lattice_point(&self, idx: usize) -> (usize, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (xs, ps, cs, per) = self.strides();
        let i = idx / per;
        let mut r = idx % per;
        let xi = r % xs;
        r /= xs;
        let pi = r % ps;
        let ci = r / ps;
        let digits = |mut v: usize, base: usize, k: usize| {
            (0..k)
                .map(|_| {
                    let d = v % base;
                    v /= base;
                    d
                })
                .collect::<Vec<_>>()
        };
        let x: Vec<f64> = if self.x_dims() == 0 {
            vec![0.0; self.n]
        } else {
            digits(xi, self.x_axis.count, self.n).iter().map(|&d| self.x_axis.coord(d)).collect()
        };
        let p = digits(pi, self.p_axis.count, self.n).iter().map(|&d| self.p_axis.coord(d)).collect();
        let c = match self.c_axis {
            Some(a) => digits(ci, a.count, self.m).iter().map(|&d| a.coord(d)).collect(),
            None => vec![0.0; self.m],
        };
        debug_assert!(cs >= 1);
        (i, x, p, c)
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
    pub fn x_axis(&self) -> CacheAxis {
        self.x_axis
    }
    pub fn p_axis(&self) -> CacheAxis {
        self.p_axis
    }
    pub fn c_axis(&self) -> Option<CacheAxis> {
        self.c_axis
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn is_separable(&self) -> bool {
        self.c_axis.is_none()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    /// Stored `H̄_i` (without the additive coupling) along the p axis at x-lattice
    /// index `xk`, for one-dimensional caches without a coupling lattice.
    pub fn p_line(&self, i: usize, xk: usize) -> Option<Vec<f64>> {
        if self.n != 1 || self.c_axis.is_some() || xk >= self.x_axis.count {
            return None;
        }
        let (xs, ps, _, per) = self.strides();
        Some((0..ps).map(|k| self.values[i * per + xk + xs * k]).collect())
    }

    pub(crate) fn additive_coupling(&self) -> Option<&Arc<CouplingFn>> {
        self.coupling.as_ref()
    }

    /// Number of queries that fell outside the lattice boxes.
    pub fn out_of_box_queries(&self) -> usize {
        self.out_of_box.load(Ordering::Relaxed)
    }

    /// Multilinear interpolation of `H̄_i(x, p, c)`.
    pub fn query(&self, i: usize, x: &[f64], p: &[f64], c: &[f64]) -> Result<f64> {
        let n = self.n;
        let mut locs: [(usize, usize, f64); 8] = [(0, 0, 0.0); 8];
        let mut strides = [0usize; 8];
        let mut dims = 0;
        let (xs, ps, _, per) = self.strides();
        let oob = |what: &str, v: f64, a: &CacheAxis| {
            Error::OutOfBox(format!("{what} = {v} outside [{}, {}] in cache '{}'", a.lo, a.hi(), self.name))
        };
        let mut stride = 1;
        if self.x_dims() > 0 {
            for &xv in x.iter().take(n) {
                locs[dims] = self.x_axis.locate(xv).expect("periodic axis");
                strides[dims] = stride;
                stride *= self.x_axis.count;
                dims += 1;
            }
        }
        debug_assert_eq!(stride, xs);
        for &pv in p.iter().take(n) {
            locs[dims] = self.p_axis.locate(pv).ok_or_else(|| oob("p", pv, &self.p_axis))?;
            strides[dims] = stride;
            stride *= self.p_axis.count;
            dims += 1;
        }
        debug_assert_eq!(stride, xs * ps);
        if let Some(ca) = &self.c_axis {
            for &cv in c.iter().take(self.m) {
                locs[dims] = ca.locate(cv).ok_or_else(|| oob("c", cv, ca))?;
                strides[dims] = stride;
                stride *= ca.count;
                dims += 1;
            }
        }
        let base = i * per;
        let mut acc = 0.0;
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut idx = base;
            for d in 0..dims {
                let (lo, hi, t) = locs[d];
                if corner >> d & 1 == 1 {
                    w *= t;
                    idx += hi * strides[d];
                } else {
                    w *= 1.0 - t;
                    idx += lo * strides[d];
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        if let Some(g) = &self.coupling {
            acc += g(i, x, c);
        }
        Ok(acc)
    }

    /// Interpolation error bound `Lip(H)·Δx + L_p·Δp + Θ·Δc`.
    pub fn interpolation_error_bound(&self) -> f64 {
        let d = self.diagnostics();
        let dx = if self.x_dims() > 0 { self.x_axis.step } else { 0.0 };
        let dc = self.c_axis.map_or(0.0, |a| a.step);
        self.lip_x * dx + d.lip_p * self.p_axis.step + self.theta * dc
    }

    /// Convexity, Lipschitz and method-agreement statistics on lattice lines.
    pub fn diagnostics(&self) -> CacheDiagnostics {
        let (xs, ps, cs, per) = self.strides();
        let n = self.n;
        let xd = self.x_dims();
        let mut conv = f64::INFINITY;
        let (mut lx, mut lp, mut lc): (f64, f64, f64) = (0.0, 0.0, 0.0);
        let pc = self.p_axis.count;
        for i in 0..self.m {
            for ci in 0..cs {
                for pi in 0..ps {
                    for xi in 0..xs {
                        let at = |x: usize, p: usize, c: usize| self.values[i * per + x + xs * (p + ps * c)];
                        let v = at(xi, pi, ci);
                        for ax in 0..n {
                            let pw = pc.pow(ax as u32);
                            let digit = (pi / pw) % pc;
                            if digit + 1 < pc {
                                let up = at(xi, pi + pw, ci);
                                lp = lp.max((up - v).abs() / self.p_axis.step);
                                if digit >= 1 {
                                    let dn = at(xi, pi - pw, ci);
                                    conv = conv.min(up + dn - 2.0 * v);
                                }
                            }
                        }
                        if xd > 0 {
                            let xc = self.x_axis.count;
                            for ax in 0..n {
                                let xw = xc.pow(ax as u32);
                                let digit = (xi / xw) % xc;
                                let nxt = if digit + 1 < xc { xi + xw } else { xi - digit * xw };
                                lx = lx.max((at(nxt, pi, ci) - v).abs() / self.x_axis.step);
                            }
                        }
                        if let Some(ca) = self.c_axis {
                            for k in 0..self.m {
                                let cw = ca.count.pow(k as u32);
                                if (ci / cw) % ca.count + 1 < ca.count {
                                    lc = lc.max((at(xi, pi, ci + cw) - v).abs() / ca.step);
                                }
                            }
                        }
                    }
                }
            }
        }
        if self.c_axis.is_none() {
            lc = self.theta;
        }
        CacheDiagnostics {
            convexity_slack: if conv.is_finite() { conv } else { 0.0 },
            lip_x: lx,
            lip_p: lp,
            lip_c: lc,
            max_discrepancy: self.discrepancy.iter().fold(0.0f64, |a, &b| a.max(b)),
        }
    }

    /// Writes the cache as text with full-precision values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        s.push_str(CACHE_MAGIC);
        s.push('\n');
        s.push_str(&format!("name {}\n", self.name));
        s.push_str(&format!("m {}\nn {}\n", self.m, self.n));
        let axis = |a: &CacheAxis| format!("{:.16e} {:.16e} {} {}", a.lo, a.step, a.count, a.periodic as u8);
        s.push_str(&format!("x {}\n", axis(&self.x_axis)));
        s.push_str(&format!("p {}\n", axis(&self.p_axis)));
        match &self.c_axis {
            Some(a) => s.push_str(&format!("c {}\n", axis(a))),
            None => s.push_str("c none\n"),
        }
        s.push_str(&format!("theta {:.16e}\nlip_x {:.16e}\n", self.theta, self.lip_x));
        s.push_str(&format!("values {}\n", self.values.len()));
        for (v, d) in self.values.iter().zip(&self.discrepancy) {
            s.push_str(&format!("{v:.16e} {d:.16e}\n"));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(s.as_bytes())?;
        Ok(())
    }

    /// Reloads a cache written by [`EffectiveCache::save`]. The spec supplies
    /// the additive coupling for separable caches and must match name and sizes.
    pub fn load(path: &Path, spec: &HamiltonianSpec) -> Result<EffectiveCache> {
        let text = fs::read_to_string(path)?;
        let bad = |what: &str| Error::Config(format!("{}: {what}", path.display()));
        let mut lines = text.lines();
        if lines.next() != Some(CACHE_MAGIC) {
            return Err(bad("not a cache file of this version"));
        }
        let mut field = |key: &str| -> Result<String> {
            let l = lines.next().ok_or_else(|| bad("truncated header"))?;
            l.strip_prefix(key)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| bad(&format!("expected '{key}'")))
        };
        let name = field("name")?;
        let m: usize = field("m")?.parse().map_err(|_| bad("m"))?;
        let n: usize = field("n")?.parse().map_err(|_| bad("n"))?;
        let parse_axis = |s: &str| -> Result<CacheAxis> {
            let t: Vec<&str> = s.split_whitespace().collect();
            if t.len() != 4 {
                return Err(bad("axis"));
            }
            Ok(CacheAxis {
                lo: t[0].parse().map_err(|_| bad("axis lo"))?,
                step: t[1].parse().map_err(|_| bad("axis step"))?,
                count: t[2].parse().map_err(|_| bad("axis count"))?,
                periodic: t[3] == "1",
            })
        };
        let x_axis = parse_axis(&field("x")?)?;
        let p_axis = parse_axis(&field("p")?)?;
        let cs = field("c")?;
        let c_axis = if cs == "none" { None } else { Some(parse_axis(&cs)?) };
        let theta: f64 = field("theta")?.parse().map_err(|_| bad("theta"))?;
        let lip_x: f64 = field("lip_x")?.parse().map_err(|_| bad("lip_x"))?;
        let count: usize = field("values")?.parse().map_err(|_| bad("values"))?;
        let mut values = Vec::with_capacity(count);
        let mut discrepancy = Vec::with_capacity(count);
        for l in lines.take(count) {
            let mut it = l.split_whitespace();
            values.push(it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("value"))?);
            discrepancy.push(it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("discrepancy"))?);
        }
        let expected = format!("{}-effective", spec.name());
        if name != expected || m != spec.m() || n != spec.n() {
            return Err(bad(&format!("cache '{name}' does not belong to spec '{}'", spec.name())));
        }
        let coupling = if c_axis.is_none() {
            Some(
                spec.additive_coupling()
                    .cloned()
                    .ok_or_else(|| bad("separable cache needs an additively coupled spec"))?,
            )
        } else {
            None
        };
        let cache = EffectiveCache {
            name,
            m,
            n,
            x_axis,
            p_axis,
            c_axis,
            values,
            discrepancy,
            theta,
            lip_x,
            coupling,
            out_of_box: AtomicUsize::new(0),
        };
        if cache.values.len() != count || count != cache.lattice_len() {
            return Err(bad("value count does not match the lattice"));
        }
        Ok(cache)
    }
}

/// Solves the cell problem at every lattice point (in parallel).
pub fn build_cache(spec: &HamiltonianSpec, boxes: &CacheBoxes, cfg: &CellConfig) -> Result<EffectiveCache> {
    if !spec.has_fast_variable() {
        return precondition("cache construction needs a system with a fast variable");
    }
    if boxes.p_points < 3 || !(boxes.p.1 > boxes.p.0) {
        return precondition("p box needs at least 3 points and positive width");
    }
    let separable = boxes.c.is_none();
    if separable && spec.additive_coupling().is_none() && spec.theta() > 0.0 {
        return precondition("a coupling lattice is required for non-additive coupling");
    }
    let x_points = if spec.is_x_dependent() { boxes.x_points.max(2) } else { 1 };
    let mut cache = EffectiveCache {
        name: format!("{}-effective", spec.name()),
        m: spec.m(),
        n: spec.n(),
        x_axis: CacheAxis::periodic(spec.slow_period(), x_points),
        p_axis: CacheAxis::interval(boxes.p.0, boxes.p.1, boxes.p_points),
        c_axis: boxes.c.map(|(lo, hi, k)| CacheAxis::interval(lo, hi, k)),
        values: Vec::new(),
        discrepancy: Vec::new(),
        theta: spec.theta(),
        lip_x: spec.lip_x(),
        coupling: if separable { spec.additive_coupling().cloned() } else { None },
        out_of_box: AtomicUsize::new(0),
    };
    let len = cache.lattice_len();
    let results: Vec<Result<CellValue>> = parallel::map_range(len, |idx| {
        let (i, x, p, c) = cache.lattice_point(idx);
        if separable {
            effective_uncoupled(spec, i, &x, &p, cfg)
        } else {
            effective_hamiltonian(spec, i, &x, &p, &c, cfg)
        }
    });
    let mut values = Vec::with_capacity(len);
    let mut disc = Vec::with_capacity(len);
    for r in results {
        let v = r?;
        values.push(v.value);
        disc.push(v.discrepancy().unwrap_or(0.0));
    }
    cache.values = values;
    cache.discrepancy = disc;
    Ok(cache)
}

/// The effective system `H̄_i(x, p, u)` backed by a cache. Queries outside the
/// cache boxes evaluate to NaN (and are counted), which the solvers report as
/// a non-finite value.
pub fn effective_spec(cache: Arc<EffectiveCache>, base: &HamiltonianSpec) -> HamiltonianSpec {
    let base_radius = base.clone();
    let q = cache.clone();
    let spec = HamiltonianSpec::new(cache.name.clone(), cache.m, cache.n, move |i, x, _y, p, u| {
        match q.query(i, x, p, u) {
            Ok(v) => v,
            Err(_) => {
                q.out_of_box.fetch_add(1, Ordering::Relaxed);
                f64::NAN
            }
        }
    })
    .with_theta(base.theta())
    .with_coercivity(move |i, level, ub| base_radius.coercivity_radius(i, level, ub))
    .with_shift_invariance(base.is_shift_invariant())
    .with_coupling_arc(base.additive_coupling().cloned())
    .without_fast_variable();
    if base.is_x_dependent() {
        spec.with_slow(base.lip_x(), base.slow_period())
    } else {
        spec
    }
}

/// `(|p|, min over directions of H̄_i(x, p, c))` at the given radii.
pub fn coercivity_profile(cache: &EffectiveCache, i: usize, x: &[f64], c: &[f64], radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    let dirs: Vec<[f64; 2]> = if cache.n == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..16)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 8.0;
                [a.cos(), a.sin()]
            })
            .collect()
    };
    radii
        .iter()
        .map(|&r| {
            let mut lo = f64::INFINITY;
            for d in &dirs {
                let p = [d[0] * r, d[1] * r];
                lo = lo.min(cache.query(i, x, &p[..cache.n], c)?);
            }
            Ok((r, lo))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::problems::{mechanical, Potential};

    #[test]
    fn cyclic_solver_matches_dense() {
        let n = 7;
        let a: Vec<f64> = (0..n).map(|j| -0.3 - 0.01 * j as f64).collect();
        let b: Vec<f64> = (0..n).map(|j| 2.0 + 0.1 * j as f64).collect();
        let c: Vec<f64> = (0..n).map(|j| -0.5 + 0.02 * j as f64).collect();
        let x_true: Vec<f64> = (0..n).map(|j| (j as f64 * 0.7).sin()).collect();
        let r: Vec<f64> = (0..n)
            .map(|j| a[j] * x_true[(j + n - 1) % n] + b[j] * x_true[j] + c[j] * x_true[(j + 1) % n])
            .collect();
        let x = solve_cyclic(&a, &b, &c, &r);
        for j in 0..n {
            assert!((x[j] - x_true[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn free_particle_is_exact() {
        let spec = mechanical(Potential::Zero, 1);
        let cfg = CellConfig::for_dimension(1).with_points(32).with_method(CellMethod::Both);
        for p in [-1.3, 0.0, 0.4, 2.0] {
            let v = effective_hamiltonian(&spec, 0, &[0.0], &[p], &[0.0], &cfg).unwrap();
            assert!((v.value - 0.5 * p * p).abs() < 1e-9, "{p}: {v:?}");
            assert!((v.large_time.unwrap() - 0.5 * p * p).abs() < 1e-9);
        }
    }

    #[test]
    fn tent_flat_piece_at_zero() {
        let spec = mechanical(Potential::Tent, 1);
        let v = effective_hamiltonian(&spec, 0, &[0.0], &[0.0], &[0.0], &CellConfig::for_dimension(1)).unwrap();
        assert!(v.value.abs() < 5e-3, "{v:?}");
    }

    #[test]
    fn two_dimensional_free_particle() {
        let spec = mechanical(Potential::Zero, 2);
        let cfg = CellConfig::for_dimension(2).with_points(12).with_method(CellMethod::Both);
        let v = effective_hamiltonian(&spec, 0, &[0.0, 0.0], &[0.5, -1.0], &[0.0], &cfg).unwrap();
        assert!((v.value - 0.625).abs() < 1e-8, "{v:?}");
    }

    /// `|p| = ∫₀¹ √(2(H̄ + V(y))) dy` off the flat piece, solved by bisection.
    fn tent_oracle(p: f64) -> f64 {
        let action = |e: f64| {
            let k = 20000;
            (0..k)
                .map(|j| {
                    let y = (j as f64 + 0.5) / k as f64;
                    (2.0 * (e + Potential::Tent.eval(y))).max(0.0).sqrt()
                })
                .sum::<f64>()
                / k as f64
        };
        if p.abs() <= action(0.0) {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, p * p);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if action(mid) < p.abs() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn tent_matches_quadrature_oracle() {
        let spec = mechanical(Potential::Tent, 1);
        let cfg = CellConfig::for_dimension(1).with_method(CellMethod::Both);
        for p in [0.0, 0.3, 0.6, 0.9, 1.2, -1.5, 2.5] {
            let v = effective_hamiltonian(&spec, 0, &[0.0], &[p], &[0.0], &cfg).unwrap();
            let exact = tent_oracle(p);
            assert!((v.value - exact).abs() < 1e-3, "p = {p}: {} vs {exact}", v.value);
        }
    }

    #[test]
    fn axis_location() {
        let a = CacheAxis::interval(-1.0, 1.0, 5);
        assert_eq!(a.locate(-1.0), Some((0, 1, 0.0)));
        assert_eq!(a.locate(1.0).map(|l| l.0), Some(3));
        assert!(a.locate(1.1).is_none());
        let p = CacheAxis::periodic(1.0, 4);
        let (k, k1, w) = p.locate(-0.125).unwrap();
        assert_eq!((k, k1), (3, 0));
        assert!((w - 0.5).abs() < 1e-12);
    }
}
