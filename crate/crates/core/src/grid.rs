//! Periodic grids and multi-component grid functions with time slices.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Uniform grid on the torus `[0, P)^n` with `N` points per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusGrid {
    n: usize,
    period: f64,
    points: usize,
}

impl TorusGrid {
    pub fn new(n: usize, period: f64, points: usize) -> Result<Self> {
        if !(n == 1 || n == 2) {
            return Err(Error::Precondition(format!("grid dimension must be 1 or 2, got {n}")));
        }
        if points < 4 {
            return Err(Error::Precondition(format!("need at least 4 points per axis, got {points}")));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Precondition(format!("period must be positive, got {period}")));
        }
        Ok(TorusGrid { n, period, points })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn period(&self) -> f64 {
        self.period
    }
    pub fn points(&self) -> usize {
        self.points
    }
    pub fn h(&self) -> f64 {
        self.period / self.points as f64
    }
    /// Total number of grid points, `N^n`.
    pub fn len(&self) -> usize {
        self.points.pow(self.n as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinates of grid point `g`; only the first `n` entries are meaningful.
    #[inline]
    pub fn coords(&self, g: usize) -> [f64; 2] {
        let h = self.h();
        if self.n == 1 {
            [g as f64 * h, 0.0]
        } else {
            [(g % self.points) as f64 * h, (g / self.points) as f64 * h]
        }
    }

    /// Flat index of per-axis indices, wrapped modulo `N`.
    #[inline]
    pub fn index(&self, i0: isize, i1: isize) -> usize {
        let n = self.points as isize;
        let a = i0.rem_euclid(n) as usize;
        if self.n == 1 {
            a
        } else {
            a + self.points * i1.rem_euclid(n) as usize
        }
    }

    /// `Some(r)` when `finer` has `r` times as many points per axis on the same torus.
    pub fn refinement_ratio(&self, finer: &TorusGrid) -> Option<usize> {
        if self.n != finer.n || !same_period(self.period, finer.period) || finer.points % self.points != 0 {
            return None;
        }
        Some(finer.points / self.points)
    }

    pub fn refined(&self, factor: usize) -> TorusGrid {
        TorusGrid {
            n: self.n,
            period: self.period,
            points: self.points * factor,
        }
    }
}

fn same_period(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Relative tolerance for matching time stamps.
fn stamp_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-11 * a.abs().max(b.abs()).max(1.0)
}

/// An `m`-component grid function with one or more time slices.
///
/// Values are stored slice-major: `values[(k·m + i)·len + g]` for stamp `k`,
/// component `i` and grid point `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: TorusGrid,
    m: usize,
    stamps: Vec<f64>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: TorusGrid, m: usize, stamps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != stamps.len() * m * grid.len() {
            return Err(Error::Precondition(format!(
                "field size mismatch: {} values for {} stamps x {} components x {} points",
                values.len(),
                stamps.len(),
                m,
                grid.len()
            )));
        }
        if stamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("time stamps must be strictly increasing".into()));
        }
        Ok(Field { grid, m, stamps, values })
    }

    /// An empty field to which slices are appended.
    pub fn empty(grid: TorusGrid, m: usize) -> Self {
        Field {
            grid,
            m,
            stamps: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push_slice(&mut self, t: f64, slice: &[f64]) {
        debug_assert_eq!(slice.len(), self.m * self.grid.len());
        debug_assert!(self.stamps.last().is_none_or(|&s| t > s));
        self.stamps.push(t);
        self.values.extend_from_slice(slice);
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn slice_len(&self) -> usize {
        self.m * self.grid.len()
    }

    /// All components at stamp index `k`.
    pub fn slice(&self, k: usize) -> &[f64] {
        let s = self.slice_len();
        &self.values[k * s..(k + 1) * s]
    }

    pub fn component(&self, k: usize, i: usize) -> &[f64] {
        let l = self.grid.len();
        &self.slice(k)[i * l..(i + 1) * l]
    }

    #[inline]
    pub fn value(&self, i: usize, k: usize, g: usize) -> f64 {
        self.values[(k * self.m + i) * self.grid.len() + g]
    }

    /// Index of a stamp equal to `t`, if any.
    pub fn stamp_index(&self, t: f64) -> Option<usize> {
        let k = self.stamps.partition_point(|&s| s < t - 1e-11 * t.abs().max(1.0));
        (k < self.stamps.len() && stamp_eq(self.stamps[k], t)).then_some(k)
    }

    /// Writes the slice at time `t` into `out`, interpolating linearly between stamps.
    pub fn slice_at(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let s = self.slice_len();
        if let Some(k) = self.stamp_index(t) {
            out.copy_from_slice(self.slice(k));
            return Ok(());
        }
        let (lo, hi) = (self.stamps[0], *self.stamps.last().unwrap());
        if t < lo || t > hi {
            return Err(Error::Precondition(format!("time {t} outside stored range [{lo}, {hi}]")));
        }
        let k = self.stamps.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.stamps[k], self.stamps[k + 1]);
        let w = (t - t0) / (t1 - t0);
        let a = &self.values[k * s..(k + 1) * s];
        let b = &self.values[(k + 1) * s..(k + 2) * s];
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = x + w * (y - x);
        }
        Ok(())
    }

    /// Periodic multilinear interpolation of component `i` at stamp `k`.
    pub fn interpolate_at(&self, i: usize, k: usize, x: &[f64]) -> f64 {
        let c = self.component(k, i);
        interpolate_periodic(&self.grid, c, x)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Max one-cell difference quotient over all components, stamps and axes.
    pub fn lipschitz_seminorm(&self) -> f64 {
        let g = &self.grid;
        let inv_h = 1.0 / g.h();
        let mut lip: f64 = 0.0;
        for k in 0..self.stamps.len() {
            for i in 0..self.m {
                let c = self.component(k, i);
                for j in 0..g.len() {
                    let (a, b) = if g.n() == 1 { (j as isize, 0) } else { ((j % g.points()) as isize, (j / g.points()) as isize) };
                    lip = lip.max((c[g.index(a + 1, b)] - c[j]).abs() * inv_h);
                    if g.n() == 2 {
                        lip = lip.max((c[g.index(a, b + 1)] - c[j]).abs() * inv_h);
                    }
                }
            }
        }
        lip
    }

    /// Max over consecutive stamps of `|u(t_{k+1}) − u(t_k)| / (t_{k+1} − t_k)`.
    pub fn time_lipschitz(&self) -> f64 {
        let mut lip: f64 = 0.0;
        for k in 1..self.stamps.len() {
            let dt = self.stamps[k] - self.stamps[k - 1];
            for (a, b) in self.slice(k).iter().zip(self.slice(k - 1)) {
                lip = lip.max((a - b).abs() / dt);
            }
        }
        lip
    }

    /// Keeps only the given stamps (each must be stored).
    pub fn select_stamps(&self, stamps: &[f64]) -> Result<Field> {
        let mut out = Field::empty(self.grid.clone(), self.m);
        for &t in stamps {
            let k = self
                .stamp_index(t)
                .ok_or_else(|| Error::Precondition(format!("stamp {t} not stored")))?;
            out.push_slice(self.stamps[k], self.slice(k));
        }
        Ok(out)
    }

    /// The last slice as a single-stamp field.
    pub fn last(&self) -> Field {
        let k = self.stamps.len() - 1;
        let mut out = Field::empty(self.grid.clone(), self.m);
        out.push_slice(self.stamps[k], self.slice(k));
        out
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            m: self.m,
            stamps: self.stamps.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Spatial periodic interpolation onto another grid with the same period.
    pub fn resample_to(&self, target: &TorusGrid) -> Result<Field> {
        if target.n() != self.grid.n() || !same_period(target.period(), self.grid.period()) {
            return Err(Error::Grid(format!("cannot resample {:?} onto {:?}", self.grid, target)));
        }
        if let Some(r) = target.refinement_ratio(&self.grid) {
            return self.restrict_to_coarser_ratio(target, r);
        }
        let mut out = Field::empty(target.clone(), self.m);
        let mut buf = vec![0.0; self.m * target.len()];
        for k in 0..self.stamps.len() {
            for i in 0..self.m {
                let c = self.component(k, i);
                for g in 0..target.len() {
                    let x = target.coords(g);
                    buf[i * target.len() + g] = interpolate_periodic(&self.grid, c, &x[..target.n()]);
                }
            }
            out.push_slice(self.stamps[k], &buf);
        }
        Ok(out)
    }

    /// Subsamples onto a grid whose point count divides this one's.
    pub fn restrict_to_coarser(&self, target: &TorusGrid) -> Result<Field> {
        let r = target.refinement_ratio(&self.grid).ok_or_else(|| {
            Error::Grid(format!(
                "{} points do not refine {} points on the same torus",
                self.grid.points(),
                target.points()
            ))
        })?;
        self.restrict_to_coarser_ratio(target, r)
    }

    fn restrict_to_coarser_ratio(&self, target: &TorusGrid, r: usize) -> Result<Field> {
        let mut out = Field::empty(target.clone(), self.m);
        let mut buf = vec![0.0; self.m * target.len()];
        let np = self.grid.points();
        for k in 0..self.stamps.len() {
            for i in 0..self.m {
                let c = self.component(k, i);
                for g in 0..target.len() {
                    let src = if target.n() == 1 {
                        g * r
                    } else {
                        let (a, b) = (g % target.points(), g / target.points());
                        a * r + np * b * r
                    };
                    buf[i * target.len() + g] = c[src];
                }
            }
            out.push_slice(self.stamps[k], &buf);
        }
        Ok(out)
    }

    /// Writes one row per (component, t, x..., value) with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let n = self.grid.n();
        writeln!(w, "{}", if n == 1 { "component,t,x,value" } else { "component,t,x1,x2,value" })?;
        for k in 0..self.stamps.len() {
            for i in 0..self.m {
                let c = self.component(k, i);
                for (g, v) in c.iter().enumerate() {
                    let x = self.grid.coords(g);
                    if n == 1 {
                        writeln!(w, "{},{:.16e},{:.16e},{:.16e}", i + 1, self.stamps[k], x[0], v)?;
                    } else {
                        writeln!(w, "{},{:.16e},{:.16e},{:.16e},{:.16e}", i + 1, self.stamps[k], x[0], x[1], v)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a field written by [`Field::write_csv`] back onto `grid`.
    pub fn read_csv(path: &Path, grid: TorusGrid, m: usize) -> Result<Field> {
        let r = BufReader::new(File::open(path)?);
        let mut stamps: Vec<f64> = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in r.lines().enumerate().skip(1) {
            let line = line?;
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::Config(format!("{}:{}: malformed row", path.display(), lineno + 1));
            if cols.len() != grid.n() + 3 {
                return Err(bad());
            }
            let t: f64 = cols[1].parse().map_err(|_| bad())?;
            let v: f64 = cols[cols.len() - 1].parse().map_err(|_| bad())?;
            if stamps.last() != Some(&t) {
                stamps.push(t);
            }
            values.push(v);
        }
        Field::new(grid, m, stamps, values)
    }
}

/// Periodic multilinear interpolation of one component.
pub(crate) fn interpolate_periodic(grid: &TorusGrid, c: &[f64], x: &[f64]) -> f64 {
    let h = grid.h();
    let s0 = x[0] / h;
    let f0 = s0.floor();
    let w0 = s0 - f0;
    let i0 = f0 as isize;
    if grid.n() == 1 {
        let a = c[grid.index(i0, 0)];
        let b = c[grid.index(i0 + 1, 0)];
        return a + w0 * (b - a);
    }
    let s1 = x[1] / h;
    let f1 = s1.floor();
    let w1 = s1 - f1;
    let i1 = f1 as isize;
    let v00 = c[grid.index(i0, i1)];
    let v10 = c[grid.index(i0 + 1, i1)];
    let v01 = c[grid.index(i0, i1 + 1)];
    let v11 = c[grid.index(i0 + 1, i1 + 1)];
    (1.0 - w1) * (v00 + w0 * (v10 - v00)) + w1 * (v01 + w0 * (v11 - v01))
}

/// Evaluates `f(i, x, t)` at every grid point and stamp.
pub fn sample(
    f: impl Fn(usize, &[f64], f64) -> f64,
    grid: &TorusGrid,
    m: usize,
    stamps: &[f64],
) -> Result<Field> {
    let mut out = Field::empty(grid.clone(), m);
    let mut buf = vec![0.0; m * grid.len()];
    for &t in stamps {
        for i in 0..m {
            for g in 0..grid.len() {
                let x = grid.coords(g);
                buf[i * grid.len() + g] = f(i, &x[..grid.n()], t);
            }
        }
        if out.stamps.last().is_some_and(|&s| !(t > s)) {
            return Err(Error::Precondition("time stamps must be strictly increasing".into()));
        }
        out.push_slice(t, &buf);
    }
    Ok(out)
}

/// `max |a − b|` over components, grid points and the stamps of `a` inside `window`.
/// `b` is interpolated linearly in time where it lacks a stamp of `a`.
pub fn sup_distance(a: &Field, b: &Field, window: (f64, f64)) -> Result<f64> {
    if a.grid != b.grid || a.m != b.m {
        return Err(Error::Grid(format!(
            "sup_distance needs identical grids and component counts ({:?}/{} vs {:?}/{})",
            a.grid, a.m, b.grid, b.m
        )));
    }
    let mut buf = vec![0.0; a.slice_len()];
    let mut d: f64 = 0.0;
    for (k, &t) in a.stamps.iter().enumerate() {
        if t < window.0 - 1e-12 || t > window.1 + 1e-12 {
            continue;
        }
        b.slice_at(t, &mut buf)?;
        for (x, y) in a.slice(k).iter().zip(&buf) {
            d = d.max((x - y).abs());
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn g1(n: usize) -> TorusGrid {
        TorusGrid::new(1, 1.0, n).unwrap()
    }

    #[test]
    fn zero_sample() {
        let f = sample(|_, _, _| 0.0, &g1(16), 2, &[0.0]).unwrap();
        assert_eq!(f.sup_norm(), 0.0);
        assert_eq!(f.m(), 2);
    }

    #[test]
    fn sine_sample_hits_grid_points() {
        let f = sample(|_, x, _| (2.0 * PI * x[0]).sin(), &g1(8), 1, &[0.0]).unwrap();
        for j in 0..8 {
            assert_eq!(f.value(0, 0, j), (2.0 * PI * j as f64 / 8.0).sin());
        }
    }

    #[test]
    fn distance_to_constant() {
        let a = sample(|_, _, _| 0.0, &g1(8), 1, &[0.0, 1.0]).unwrap();
        let b = sample(|_, _, _| -2.5, &g1(8), 1, &[0.0, 1.0]).unwrap();
        assert_eq!(sup_distance(&a, &b, (0.0, 1.0)).unwrap(), 2.5);
        assert_eq!(sup_distance(&a, &a, (0.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn distance_interpolates_in_time() {
        let a = sample(|_, _, t| t, &g1(8), 1, &[0.5]).unwrap();
        let b = sample(|_, _, t| 2.0 * t, &g1(8), 1, &[0.0, 1.0]).unwrap();
        assert!((sup_distance(&a, &b, (0.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = sample(|_, _, _| 0.0, &g1(8), 1, &[0.0]).unwrap();
        let b = sample(|_, _, _| 0.0, &g1(16), 1, &[0.0]).unwrap();
        assert!(matches!(sup_distance(&a, &b, (0.0, 1.0)), Err(Error::Grid(_))));
    }

    #[test]
    fn restriction_keeps_even_points() {
        let f = sample(|_, x, _| x[0], &g1(64), 1, &[0.0]).unwrap();
        let c = f.restrict_to_coarser(&g1(32)).unwrap();
        for j in 0..32 {
            assert_eq!(c.value(0, 0, j), f.value(0, 0, 2 * j));
        }
        assert_eq!(f.restrict_to_coarser(&g1(64)).unwrap(), f);
        assert!(f.restrict_to_coarser(&g1(24)).is_err());
    }

    #[test]
    fn two_dimensional_indexing_wraps() {
        let g = TorusGrid::new(2, 1.0, 4).unwrap();
        assert_eq!(g.index(-1, 0), 3);
        assert_eq!(g.index(0, -1), 12);
        assert_eq!(g.coords(5), [0.25, 0.25]);
        let f = sample(|_, x, _| x[0] + 10.0 * x[1], &g, 1, &[0.0]).unwrap();
        let v = f.interpolate_at(0, 0, &[0.125, 0.25]);
        assert!((v - (0.125 + 2.5)).abs() < 1e-14);
    }

    #[test]
    fn lipschitz_of_sawtooth() {
        let f = sample(|_, x, _| x[0], &g1(10), 1, &[0.0]).unwrap();
        // The wrap-around jump from 0.9 back to 0 dominates.
        assert!((f.lipschitz_seminorm() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let f = sample(|i, x, t| (x[0] * 7.3 + t).sin() / 3.0 + i as f64, &g1(12), 2, &[0.0, 0.1, 0.7]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        f.write_csv(&p).unwrap();
        let g = Field::read_csv(&p, g1(12), 2).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn short_grids_rejected() {
        assert!(TorusGrid::new(1, 1.0, 3).is_err());
        assert!(TorusGrid::new(3, 1.0, 8).is_err());
    }
}
