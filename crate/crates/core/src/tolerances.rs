//! Default numerical tolerances and scheme constants, kept in one place so
//! tests, the harness and the CLI agree on them.

/// Target accuracy of the numerical Legendre transform.
pub const TOL_LEGENDRE: f64 = 1e-6;

/// Courant number of the explicit Lax–Friedrichs scheme.
pub const CFL: f64 = 0.45;
/// Inflation of the sampled gradient box before estimating σ.
pub const SIGMA_INFLATION: f64 = 1.1;
/// Explicit coupling restriction `Δt·Θ ≤ COUPLING_STEP`.
pub const COUPLING_STEP: f64 = 0.5;
/// Fast-variable resolution: `h ≤ ε / RESOLUTION`.
pub const RESOLUTION: f64 = 16.0;

/// Consecutive checks below tolerance before a march counts as steady.
pub const STEADY_WINDOW: usize = 10;
pub const STEADY_TOL: f64 = 1e-9;

/// Smallest discount of the vanishing-discount pair (δ, 2δ).
pub const CELL_DELTA: f64 = 1e-2;
/// Horizon of the large-time cell method.
pub const CELL_HORIZON: f64 = 50.0;
/// Allowed discrepancy between the discount and large-time cell values.
pub const CELL_AGREEMENT: f64 = 5e-3;
/// Default fast-torus resolution per axis in 1D.
pub const CELL_POINTS_1D: usize = 256;

/// Truncation tolerance of discounted value iteration.
pub const TRUNC_TOL: f64 = 1e-8;
/// Fraction of pinned minimizers tolerated before the velocity box is rejected.
pub const PIN_FRACTION: f64 = 1e-3;

/// Absolute slack on measured contraction ratios.
pub const TOL_RATIO: f64 = 0.15;
/// Gap ratio that counts as divergence when seen three times in a row.
pub const DIVERGENCE_RATIO: f64 = 1.2;

/// Scheme budget must stay below this fraction of the measured error.
pub const BUDGET_FRACTION: f64 = 0.3;
/// Log-space residual RMS above which a fitted slope is withheld.
pub const MAX_FIT_RMS: f64 = 0.1;
/// Significance level of the trend test.
pub const TREND_ALPHA: f64 = 0.05;
