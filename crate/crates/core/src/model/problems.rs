//! Built-in problems and parameter overrides.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::spec::{HamiltonianSpec, InitialData};
use crate::error::{precondition, Result};

/// Fast-variable potentials on the unit torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Potential {
    /// `min(1, max(0, 6(½ − |y|)))` on `[−½, ½)`: zero near `y = ½`, equal to 1 on `[−⅓, ⅓]`.
    Tent,
    /// `½(1 + cos 2πy)`.
    Cosine,
    Zero,
}

impl Potential {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tent" => Ok(Potential::Tent),
            "cosine" | "cos" => Ok(Potential::Cosine),
            "zero" | "none" => Ok(Potential::Zero),
            other => precondition(format!("unknown potential '{other}' (tent, cosine, zero)")),
        }
    }

    #[inline]
    pub fn eval(self, y: f64) -> f64 {
        match self {
            Potential::Tent => v_tent(y),
            Potential::Cosine => 0.5 * (1.0 + (2.0 * PI * y).cos()),
            Potential::Zero => 0.0,
        }
    }

    pub fn max(self) -> f64 {
        match self {
            Potential::Zero => 0.0,
            _ => 1.0,
        }
    }

    /// Lipschitz constant on the unit torus.
    pub fn lipschitz(self) -> f64 {
        match self {
            Potential::Tent => 6.0,
            Potential::Cosine => PI,
            Potential::Zero => 0.0,
        }
    }
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Potential::Tent => "tent",
            Potential::Cosine => "cosine",
            Potential::Zero => "zero",
        })
    }
}

/// The tent potential, 1-periodic.
#[inline]
pub fn v_tent(y: f64) -> f64 {
    let w = y - y.round();
    (6.0 * (0.5 - w.abs())).clamp(0.0, 1.0)
}

/// Optional overrides of built-in problem parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    /// Coupling amplitude (κ for sine couplings, β for linear ones).
    pub coupling: Option<f64>,
    /// Target coupling constant Θ; sets the amplitude to match.
    pub theta: Option<f64>,
    /// Potential of the first component.
    pub potential: Option<Potential>,
    /// Amplitude of the slow modulation `w(x) = a sin 2πx`.
    pub slow_amp: Option<f64>,
    /// Amplitude of the initial data.
    pub data_amp: Option<f64>,
}

/// A named system together with its initial data.
#[derive(Clone, Debug)]
pub struct Problem {
    pub id: String,
    pub spec: HamiltonianSpec,
    pub data: InitialData,
    /// Resolved parameter values, echoed into manifests.
    pub resolved: Vec<(String, f64)>,
    pub potential: Potential,
}

pub const BUILTINS: [&str; 3] = ["example11", "eikonal-1d", "linear-coupling-2sys"];

impl Problem {
    pub fn builtin(id: &str, params: &ProblemParams) -> Result<Problem> {
        if params.coupling.is_some() && params.theta.is_some() {
            return precondition("set either 'coupling' or 'theta', not both");
        }
        let p = match id {
            "example11" => example11(params),
            "eikonal-1d" => eikonal_1d(params),
            "linear-coupling-2sys" => linear_coupling(params),
            other => {
                return precondition(format!(
                    "unknown problem '{other}' (built-ins: {})",
                    BUILTINS.join(", ")
                ))
            }
        }?;
        if !p.spec.is_convex() {
            return precondition(format!("problem '{id}' is not convex in p"));
        }
        Ok(p)
    }

    pub fn by_name(id: &str) -> Result<Problem> {
        Self::builtin(id, &ProblemParams::default())
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.resolved.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

fn amplitude(params: &ProblemParams, default: f64) -> Result<f64> {
    // Both built-in couplings have Θ equal to twice their amplitude in the max norm.
    let a = match (params.coupling, params.theta) {
        (Some(c), _) => c,
        (_, Some(t)) => 0.5 * t,
        _ => default,
    };
    if !(a.is_finite() && a >= 0.0) {
        return precondition(format!("coupling amplitude must be finite and nonnegative, got {a}"));
    }
    Ok(a)
}

/// `H₁ = ½p² − V(y) + F(u)`, `H₂ = p² + F(u)`, `F = κ sin(u₁ − u₂)`, zero data.
fn example11(params: &ProblemParams) -> Result<Problem> {
    let kappa = amplitude(params, 0.0)?;
    let pot = params.potential.unwrap_or(Potential::Tent);
    // The lower-bound argument needs V ≥ 1 on [−⅓, ⅓] and min V = 0.
    if pot != Potential::Tent {
        let ok = (0..=60).all(|k| pot.eval(-1.0 / 3.0 + k as f64 / 90.0) >= 1.0);
        if !ok {
            return precondition(format!("potential '{pot}' is not ≥ 1 on [−1/3, 1/3]"));
        }
    }
    if params.slow_amp.is_some() || params.data_amp.is_some() {
        return precondition("example11 has no slow modulation and zero data");
    }
    let f = move |u: &[f64]| kappa * (u[0] - u[1]).sin();
    let spec = HamiltonianSpec::new("example11", 2, 1, move |i, _x, y, p, u| {
        let q = p[0];
        match i {
            0 => 0.5 * q * q - pot.eval(y[0]) + f(u),
            _ => q * q + f(u),
        }
    })
    .with_theta(2.0 * kappa)
    .with_coercivity(move |i, level, _| match i {
        0 => (2.0 * (level + pot.max() + kappa).max(0.0)).sqrt(),
        _ => (level + kappa).max(0.0).sqrt(),
    })
    .with_shift_invariance(true)
    .with_lagrangian(move |i, _x, y, v, u| {
        let w = v[0];
        match i {
            0 => 0.5 * w * w + pot.eval(y[0]) - f(u),
            _ => 0.25 * w * w - f(u),
        }
    })
    .with_additive_coupling(move |_, _, u| f(u));
    Ok(Problem {
        id: "example11".into(),
        spec,
        data: InitialData::zero(2),
        resolved: vec![("coupling".into(), kappa), ("theta".into(), 2.0 * kappa)],
        potential: pot,
    })
}

fn harmonic_data(amp: f64) -> InitialData {
    InitialData::new(
        2,
        move |i, x| match i {
            0 => amp * (2.0 * PI * x[0]).cos(),
            _ => amp * (2.0 * PI * x[0]).sin(),
        },
        2.0 * PI * amp,
        amp,
    )
}

/// Two mechanical Hamiltonians with opposite slow modulation and a sine coupling:
/// `H₁ = ½p² − V(y) − w(x) + κ sin(u₁−u₂)`, `H₂ = ½p² − V_cos(y) + w(x) − κ sin(u₁−u₂)`.
fn eikonal_1d(params: &ProblemParams) -> Result<Problem> {
    let kappa = amplitude(params, 0.5)?;
    let pot = params.potential.unwrap_or(Potential::Tent);
    let a_w = params.slow_amp.unwrap_or(0.25);
    let amp = params.data_amp.unwrap_or(0.25);
    let w = move |x: f64| a_w * (2.0 * PI * x).sin();
    let s = move |u: &[f64]| kappa * (u[0] - u[1]).sin();
    let vmax = pot.max().max(1.0);
    let spec = HamiltonianSpec::new("eikonal-1d", 2, 1, move |i, x, y, p, u| {
        let k = 0.5 * p[0] * p[0];
        match i {
            0 => k - pot.eval(y[0]) - w(x[0]) + s(u),
            _ => k - Potential::Cosine.eval(y[0]) + w(x[0]) - s(u),
        }
    })
    .with_theta(2.0 * kappa)
    .with_slow(2.0 * PI * a_w, 1.0)
    .with_coercivity(move |_, level, _| (2.0 * (level + vmax + a_w + kappa).max(0.0)).sqrt())
    .with_shift_invariance(true)
    .with_lagrangian(move |i, x, y, v, u| {
        let k = 0.5 * v[0] * v[0];
        match i {
            0 => k + pot.eval(y[0]) + w(x[0]) - s(u),
            _ => k + Potential::Cosine.eval(y[0]) - w(x[0]) + s(u),
        }
    })
    .with_additive_coupling(move |i, _, u| if i == 0 { s(u) } else { -s(u) });
    Ok(Problem {
        id: "eikonal-1d".into(),
        spec,
        data: harmonic_data(amp),
        resolved: vec![
            ("coupling".into(), kappa),
            ("theta".into(), 2.0 * kappa),
            ("slow_amp".into(), a_w),
            ("data_amp".into(), amp),
        ],
        potential: pot,
    })
}

/// Linear coupling with zero row sums, `b = β[[1, −1], [−1, 1]]`:
/// `H₁ = ½p² − V(y) − w(x) + β(u₁−u₂)`, `H₂ = ½a(y)p² + w(x) + β(u₂−u₁)`, `a = 1 + ½ sin 2πy`.
fn linear_coupling(params: &ProblemParams) -> Result<Problem> {
    let beta = amplitude(params, 0.25)?;
    let pot = params.potential.unwrap_or(Potential::Tent);
    let a_w = params.slow_amp.unwrap_or(0.2);
    let amp = params.data_amp.unwrap_or(0.25);
    let w = move |x: f64| a_w * (2.0 * PI * x).sin();
    let a = |y: f64| 1.0 + 0.5 * (2.0 * PI * y).sin();
    let vmax = pot.max();
    let spec = HamiltonianSpec::new("linear-coupling-2sys", 2, 1, move |i, x, y, p, u| {
        let q = p[0];
        match i {
            0 => 0.5 * q * q - pot.eval(y[0]) - w(x[0]) + beta * (u[0] - u[1]),
            _ => 0.5 * a(y[0]) * q * q + w(x[0]) + beta * (u[1] - u[0]),
        }
    })
    .with_theta(2.0 * beta)
    .with_slow(2.0 * PI * a_w, 1.0)
    .with_coercivity(move |i, level, ub| {
        let shift = a_w + 2.0 * beta * ub;
        match i {
            0 => (2.0 * (level + vmax + shift).max(0.0)).sqrt(),
            _ => (4.0 * (level + shift).max(0.0)).sqrt(),
        }
    })
    .with_shift_invariance(true)
    .with_lagrangian(move |i, x, y, v, u| {
        let q = v[0];
        match i {
            0 => 0.5 * q * q + pot.eval(y[0]) + w(x[0]) - beta * (u[0] - u[1]),
            _ => 0.5 * q * q / a(y[0]) - w(x[0]) - beta * (u[1] - u[0]),
        }
    })
    .with_additive_coupling(move |i, _, u| {
        if i == 0 {
            beta * (u[0] - u[1])
        } else {
            beta * (u[1] - u[0])
        }
    });
    Ok(Problem {
        id: "linear-coupling-2sys".into(),
        spec,
        data: harmonic_data(amp),
        resolved: vec![
            ("coupling".into(), beta),
            ("theta".into(), 2.0 * beta),
            ("slow_amp".into(), a_w),
            ("data_amp".into(), amp),
        ],
        potential: pot,
    })
}

/// `H_i = ½p² − V_tent(y) + (Σ_j b_ij u_j)²` with `b = [[1, −1], [−1, 1]]`: invariant
/// under `u ↦ u + c𝟙` but not Lipschitz in `u` on unbounded boxes. `declared_theta`
/// is the (necessarily wrong) coupling constant attached to it.
pub fn quadratic_coupling_counterexample(declared_theta: f64) -> HamiltonianSpec {
    HamiltonianSpec::new("quadratic-coupling", 2, 1, |i, _x, y, p, u| {
        let b = if i == 0 { u[0] - u[1] } else { u[1] - u[0] };
        0.5 * p[0] * p[0] - v_tent(y[0]) + b * b
    })
    .with_theta(declared_theta)
    .with_coercivity(|_, level, _| (2.0 * (level + 1.0).max(0.0)).sqrt())
    .with_shift_invariance(true)
}

/// `H = ½|p|² − V(y)` as a single equation, used by cell-problem checks.
pub fn mechanical(pot: Potential, n: usize) -> HamiltonianSpec {
    HamiltonianSpec::new(format!("mechanical-{pot}"), 1, n, move |_, _x, y, p, _u| {
        let k: f64 = p.iter().map(|q| 0.5 * q * q).sum();
        k - y.iter().map(|&c| pot.eval(c)).product::<f64>()
    })
    .with_coercivity(move |_, level, _| (2.0 * (level + pot.max()).max(0.0)).sqrt())
    .with_lagrangian(move |_, _x, y, v, _u| {
        let k: f64 = v.iter().map(|q| 0.5 * q * q).sum();
        k + y.iter().map(|&c| pot.eval(c)).product::<f64>()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tent_shape() {
        assert_eq!(v_tent(0.0), 1.0);
        assert_eq!(v_tent(1.0 / 3.0), 1.0);
        assert_eq!(v_tent(-1.0 / 3.0), 1.0);
        assert_eq!(v_tent(0.5), 0.0);
        assert!((v_tent(0.45) - 0.3).abs() < 1e-12);
        assert_eq!(v_tent(0.2), v_tent(1.2));
    }

    #[test]
    fn builtins_resolve() {
        for id in BUILTINS {
            let p = Problem::by_name(id).unwrap();
            assert_eq!(p.spec.m(), 2);
            assert_eq!(p.data.m(), 2);
        }
        assert!(Problem::by_name("nope").is_err());
    }

    #[test]
    fn theta_override_sets_amplitude() {
        let p = Problem::builtin(
            "eikonal-1d",
            &ProblemParams {
                theta: Some(0.5),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(p.spec.theta(), 0.5);
        assert_eq!(p.param("coupling"), Some(0.25));
    }

    #[test]
    fn example11_rejects_weak_potential() {
        let r = Problem::builtin(
            "example11",
            &ProblemParams {
                potential: Some(Potential::Cosine),
                ..Default::default()
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn closed_form_lagrangians_match_hamiltonians_at_rest() {
        // L(x, y, 0, u) = −H(x, y, 0, u) for Hamiltonians minimized at p = 0.
        for id in BUILTINS {
            let p = Problem::by_name(id).unwrap();
            let l = p.spec.closed_lagrangian().unwrap();
            for k in 0..7 {
                let x = [0.13 * k as f64];
                let y = [0.29 * k as f64];
                let u = [0.3, -0.2];
                for i in 0..2 {
                    let h = p.spec.eval(i, &x, &y, &[0.0], &u);
                    assert!((l(i, &x, &y, &[0.0], &u) + h).abs() < 1e-14, "{id} {i}");
                }
            }
        }
    }
}
