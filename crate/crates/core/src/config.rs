//! Run settings: one table of documented defaults, overridden by a config file
//! (`key = value` lines grouped in `[section]`s) and then by command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fd_solver::Flux;
use crate::model::problems::{Potential, ProblemParams};

/// `(section.key, default, meaning)`. An empty default means "unset".
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("run.problem", "eikonal-1d", "built-in problem id"),
    ("run.out", "out", "output directory (the HJHOM_OUT variable overrides this default)"),
    ("run.threads", "0", "worker threads, 0 = hardware count"),
    ("run.backend", "fd", "decoupled solver used by iterations: fd or dp"),
    ("problem.coupling", "", "coupling amplitude"),
    ("problem.theta", "", "coupling constant Θ (sets the amplitude)"),
    ("problem.potential", "", "fast potential: tent, cosine, zero"),
    ("problem.slow_amp", "", "amplitude of the slow modulation"),
    ("problem.data_amp", "", "amplitude of the initial data"),
    ("solve.eps", "", "single ε for solve, cell and iterate"),
    ("solve.eps_list", "1/5, 1/10, 1/20, 1/40", "ε sweep, strictly decreasing"),
    ("solve.lambda", "1", "discount λ of stationary runs"),
    ("solve.t_end", "1", "final time T"),
    ("solve.t_list", "0.005, 0.02, 0.1, 1", "evaluation times of example11"),
    ("solve.grid", "", "grid points on the period (overrides grid.per_eps)"),
    ("grid.per_eps", "16", "fine grid points per ε"),
    ("grid.effective", "256", "coarsest grid of the effective solve"),
    ("grid.levels", "3", "grids in each refinement ladder (ratio 2)"),
    ("grid.flux", "godunov", "numerical Hamiltonian in 1D: godunov or lf"),
    ("cache.x_points", "64", "slow-variable points of the effective cache"),
    ("cache.p_points", "161", "momentum points of the effective cache"),
    ("cache.cell_points", "256", "fast-torus points of each cell problem"),
    ("iterate.tol", "1e-10", "stopping gap of the decoupling iteration"),
    ("iterate.max_iter", "8", "maximum number of iterates"),
    ("action.endpoints", "0:0:0.5, 0:0:1", "point actions as x:y:t"),
    ("action.component", "0", "component i of the action"),
    ("action.slow", "0", "frozen slow variable c"),
    ("action.steps_per_eps", "8", "DP steps per unit ε of time"),
    ("action.dv", "0.05", "DP velocity resolution"),
    ("action.v_bound", "1.75", "DP speed bound M₀"),
    ("action.p_points", "161", "momentum points of the action cache"),
];

/// Resolved settings with the origin of every non-default value.
#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
    overrides: Vec<(String, String, Origin)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    File,
    Flag,
    Environment,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::File => "file",
            Origin::Flag => "flag",
            Origin::Environment => "env",
        })
    }
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            values: DEFAULTS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
            overrides: Vec::new(),
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses a number, accepting fractions such as `1/40`.
pub fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad(format!("bad number '{s}'")))?;
            let b: f64 = b.trim().parse().map_err(|_| bad(format!("bad number '{s}'")))?;
            a / b
        }
        None => s.parse().map_err(|_| bad(format!("bad number '{s}'")))?,
    };
    if !v.is_finite() {
        return Err(bad(format!("'{s}' is not finite")));
    }
    Ok(v)
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(parse_number).collect()
}

fn toml_to_string(v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => format!("{f:?}"),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(a) => a.iter().map(toml_to_string).collect::<Result<Vec<_>>>()?.join(", "),
        other => return Err(bad(format!("unsupported value {other}"))),
    })
}

impl Settings {
    /// Sets `key` (validated against [`DEFAULTS`]) and records the override.
    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<()> {
        match self.values.get_mut(key) {
            None => Err(bad(format!("unknown setting '{key}'"))),
            Some(slot) => {
                *slot = value.trim().to_string();
                self.overrides.retain(|(k, _, _)| k != key);
                self.overrides.push((key.to_string(), value.trim().to_string(), origin));
                Ok(())
            }
        }
    }

    /// Applies a config file: `[section]` headers and `key = value` lines.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e| bad(format!("config is not parseable: {e}")))?;
        for (section, body) in &table {
            let toml::Value::Table(entries) = body else {
                return Err(bad(format!("top-level key '{section}' must sit inside a [section]")));
            };
            for (k, v) in entries {
                self.set(&format!("{section}.{k}"), &toml_to_string(v)?, Origin::File)?;
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("setting '{key}' is not in the defaults table"))
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.raw(key).is_empty()
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        parse_number(self.raw(key)).map_err(|e| bad(format!("{key}: {e}")))
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        if self.is_set(key) {
            self.f64(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.raw(key)
            .trim()
            .parse()
            .map_err(|_| bad(format!("{key}: '{}' is not a nonnegative integer", self.raw(key))))
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        if self.is_set(key) {
            self.usize(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        parse_list(self.raw(key)).map_err(|e| bad(format!("{key}: {e}")))
    }

    pub fn string(&self, key: &str) -> String {
        self.raw(key).to_string()
    }

    pub fn problem_params(&self) -> Result<ProblemParams> {
        Ok(ProblemParams {
            coupling: self.opt_f64("problem.coupling")?,
            theta: self.opt_f64("problem.theta")?,
            potential: if self.is_set("problem.potential") {
                Some(Potential::parse(self.raw("problem.potential"))?)
            } else {
                None
            },
            slow_amp: self.opt_f64("problem.slow_amp")?,
            data_amp: self.opt_f64("problem.data_amp")?,
        })
    }

    pub fn flux(&self) -> Result<Flux> {
        match self.raw("grid.flux") {
            "godunov" => Ok(Flux::Godunov),
            "lf" | "lax-friedrichs" => Ok(Flux::LaxFriedrichs),
            other => Err(bad(format!("grid.flux: unknown flux '{other}' (godunov, lf)"))),
        }
    }

    /// `(x, y, t)` triples from `x:y:t` items.
    pub fn endpoints(&self) -> Result<Vec<(f64, f64, f64)>> {
        self.raw("action.endpoints")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|item| {
                let parts: Vec<&str> = item.split(':').collect();
                if parts.len() != 3 {
                    return Err(bad(format!("action.endpoints: '{}' is not x:y:t", item.trim())));
                }
                Ok((parse_number(parts[0])?, parse_number(parts[1])?, parse_number(parts[2])?))
            })
            .collect()
    }

    pub fn overrides(&self) -> &[(String, String, Origin)] {
        &self.overrides
    }

    /// Every setting as `(key, value)`, for manifests.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// The defaults table rendered as aligned text.
    pub fn describe_defaults() -> String {
        let w = DEFAULTS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
        DEFAULTS
            .iter()
            .map(|(k, v, d)| format!("{k:w$}  {:<24}  {d}\n", if v.is_empty() { "(unset)" } else { v }))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let s = Settings::default();
        assert_eq!(s.list("solve.eps_list").unwrap(), vec![0.2, 0.1, 0.05, 0.025]);
        assert_eq!(s.usize("grid.per_eps").unwrap(), 16);
        assert_eq!(s.endpoints().unwrap(), vec![(0.0, 0.0, 0.5), (0.0, 0.0, 1.0)]);
        assert_eq!(s.flux().unwrap(), Flux::Godunov);
        assert_eq!(s.problem_params().unwrap(), ProblemParams::default());
        assert!(s.opt_f64("solve.eps").unwrap().is_none());
    }

    #[test]
    fn file_then_flag_precedence() {
        let mut s = Settings::default();
        s.apply_text("[solve]\neps = 0.1\neps_list = [0.2, 0.1]\n\n[problem]\ntheta = 1\npotential = \"cosine\"\n")
            .unwrap();
        assert_eq!(s.f64("solve.eps").unwrap(), 0.1);
        assert_eq!(s.list("solve.eps_list").unwrap(), vec![0.2, 0.1]);
        s.set("solve.eps", "1/20", Origin::Flag).unwrap();
        assert_eq!(s.f64("solve.eps").unwrap(), 0.05);
        let p = s.problem_params().unwrap();
        assert_eq!(p.theta, Some(1.0));
        assert_eq!(p.potential, Some(Potential::Cosine));
        assert_eq!(s.overrides().len(), 4);
        assert!(s.overrides().iter().any(|(k, v, o)| k == "solve.eps" && v == "1/20" && *o == Origin::Flag));
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        let mut s = Settings::default();
        assert!(matches!(s.apply_text("[solve]\nepsilon = 1\n"), Err(Error::Config(_))));
        assert!(matches!(s.apply_text("eps = 1\n"), Err(Error::Config(_))));
        assert!(matches!(s.apply_text("[solve\n"), Err(Error::Config(_))));
        s.set("solve.lambda", "abc", Origin::Flag).unwrap();
        assert!(matches!(s.f64("solve.lambda"), Err(Error::Config(_))));
        s.set("action.endpoints", "0:1", Origin::Flag).unwrap();
        assert!(s.endpoints().is_err());
    }

    #[test]
    fn fractions_and_lists() {
        assert_eq!(parse_number(" 3/4 ").unwrap(), 0.75);
        assert!(parse_number("1/0").is_err());
        assert_eq!(parse_list("1, 1/2,").unwrap(), vec![1.0, 0.5]);
    }
}
