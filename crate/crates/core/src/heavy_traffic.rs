//! Heavy-traffic constant `A` of the two-hop (star) mean-field model.
//!
//! `A` is defined through the boundary-value system
//!
//! ```text
//! z c'(z) + c(z) v(z) = 0
//! z v''(z) + v'(z)    = c(z)
//! v(0) = 0, v'(0) = 1, c(0) = 1
//! ```
//!
//! as `A = ∫_0^∞ c(z) dz = lim_{z→∞} z v'(z)`, and the mean link occupancy
//! behaves like `1 / ((1-ρ)^2 A)` as `ρ → 1`.
//!
//! The origin is a regular singular point, so integration starts at a small
//! `z_0` from the local series
//!
//! ```text
//! c   = 1 - z + 5/8 z^2 + O(z^3)
//! z v' = z - z^2/2 + 5/24 z^3 + O(z^4)
//! v   = z - z^2/4 + 5/72 z^3 + O(z^4)
//! ```
//!
//! (from `(z v')' = c` and matching powers in `z c' = -c v`). The system is
//! integrated in `s = ln z`, where it reads `c_s = -c v`, `v_s = p`,
//! `p_s = z c` with `p = z v'`; in that variable the logarithmic growth of
//! `v` and the log-normal decay of `c` are both benign.
//!
//! With `y = s`, the function `w(y) = v(e^y) - 1` satisfies the Blasius
//! equation `w''' + w w'' = 0`, which serves as an independent check.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_Z_START: f64 = 1e-8;
pub const DEFAULT_Z_END: f64 = 50.0;
pub const DEFAULT_RTOL: f64 = 1e-10;

/// Integration continues past `z_end` until `c` drops below this.
pub const C_FLOOR: f64 = 1e-12;

/// Largest step in `ln z`; keeps the output grid fine enough for the
/// quadrature and the Blasius resampling.
const MAX_STEP: f64 = 0.005;
const MIN_STEP: f64 = 1e-12;
const MAX_STEPS: usize = 2_000_000;
const Z_LIMIT: f64 = 1e9;

/// Relative disagreement between the two estimators that
/// [`estimate_a`] treats as an integration failure.
pub const ESTIMATOR_MISMATCH: f64 = 0.05;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Extremes of accepted steps, in `ln z`.
    pub min_step: f64,
    pub max_step: f64,
    pub rtol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeSolution {
    /// Increasing abscissae `z_i`.
    pub grid: Vec<f64>,
    pub c: Vec<f64>,
    pub v: Vec<f64>,
    pub v_prime: Vec<f64>,
    /// `∫_0^∞ c dz`: series head, per-step quadrature, exponential tail.
    pub a_integral: f64,
    /// `z v'(z)` at the last grid point.
    pub a_limit: f64,
    pub step_stats: StepStats,
}

impl OdeSolution {
    /// CSV with header `z,c,v,v_prime`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["z", "c", "v", "v_prime"])?;
        for i in 0..self.grid.len() {
            w.write_record([
                self.grid[i].to_string(),
                self.c[i].to_string(),
                self.v[i].to_string(),
                self.v_prime[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `p = z v'` at node `i`.
    fn p(&self, i: usize) -> f64 {
        self.grid[i] * self.v_prime[i]
    }

    /// `z c` at node `i`, which is `d²v/ds²`.
    fn g(&self, i: usize) -> f64 {
        self.grid[i] * self.c[i]
    }
}

type State = [f64; 3];

/// Right-hand side in `s = ln z` for `(c, v, p = z v')`.
fn rhs(s: f64, y: &State) -> State {
    let [c, v, p] = *y;
    [-c * v, p, s.exp() * c]
}

fn axpy(y: &State, h: f64, terms: &[(f64, &State)]) -> State {
    let mut out = *y;
    for (coef, k) in terms {
        for i in 0..3 {
            out[i] += h * coef * k[i];
        }
    }
    out
}

/// One Dormand–Prince 5(4) step. Returns the fifth-order solution, the
/// embedded error estimate and the derivative at the new point (FSAL).
fn dopri_step(s: f64, y: &State, k1: &State, h: f64) -> (State, State, State) {
    let k2 = rhs(s + h / 5.0, &axpy(y, h, &[(1.0 / 5.0, k1)]));
    let k3 = rhs(
        s + 3.0 * h / 10.0,
        &axpy(y, h, &[(3.0 / 40.0, k1), (9.0 / 40.0, &k2)]),
    );
    let k4 = rhs(
        s + 4.0 * h / 5.0,
        &axpy(
            y,
            h,
            &[(44.0 / 45.0, k1), (-56.0 / 15.0, &k2), (32.0 / 9.0, &k3)],
        ),
    );
    let k5 = rhs(
        s + 8.0 * h / 9.0,
        &axpy(
            y,
            h,
            &[
                (19372.0 / 6561.0, k1),
                (-25360.0 / 2187.0, &k2),
                (64448.0 / 6561.0, &k3),
                (-212.0 / 729.0, &k4),
            ],
        ),
    );
    let k6 = rhs(
        s + h,
        &axpy(
            y,
            h,
            &[
                (9017.0 / 3168.0, k1),
                (-355.0 / 33.0, &k2),
                (46732.0 / 5247.0, &k3),
                (49.0 / 176.0, &k4),
                (-5103.0 / 18656.0, &k5),
            ],
        ),
    );
    let y5 = axpy(
        y,
        h,
        &[
            (35.0 / 384.0, k1),
            (500.0 / 1113.0, &k3),
            (125.0 / 192.0, &k4),
            (-2187.0 / 6784.0, &k5),
            (11.0 / 84.0, &k6),
        ],
    );
    let k7 = rhs(s + h, &y5);
    // b5 - b4
    let e = [
        35.0 / 384.0 - 5179.0 / 57600.0,
        0.0,
        500.0 / 1113.0 - 7571.0 / 16695.0,
        125.0 / 192.0 - 393.0 / 640.0,
        -2187.0 / 6784.0 + 92097.0 / 339200.0,
        11.0 / 84.0 - 187.0 / 2100.0,
        -1.0 / 40.0,
    ];
    let ks = [k1, &k2, &k3, &k4, &k5, &k6, &k7];
    let mut err = [0.0; 3];
    for (coef, k) in e.iter().zip(ks) {
        for i in 0..3 {
            err[i] += h * coef * k[i];
        }
    }
    (y5, err, k7)
}

fn series_start(z: f64) -> State {
    let c = 1.0 - z + 0.625 * z * z;
    let v = z - z * z / 4.0 + 5.0 / 72.0 * z * z * z;
    let p = z - z * z / 2.0 + 5.0 / 24.0 * z * z * z;
    [c, v, p]
}

/// Integrates the `(c, v)` system from the series start at
/// [`DEFAULT_Z_START`] to `z_end`, extending the range (doubling `z_end`)
/// while `c(z_end) > C_FLOOR`. `tol` is the relative error tolerance of the
/// adaptive stepper.
pub fn solve_cv_system(z_end: f64, tol: f64) -> Result<OdeSolution> {
    solve_cv_system_from(DEFAULT_Z_START, z_end, tol)
}

pub fn solve_cv_system_from(z_start: f64, z_end: f64, tol: f64) -> Result<OdeSolution> {
    if !(z_start > 0.0 && z_start < 1e-2) {
        return Err(Error::Parameter(format!(
            "series start must lie in (0, 0.01), got {z_start}"
        )));
    }
    if !(z_end > z_start && z_end.is_finite()) {
        return Err(Error::Parameter(format!(
            "z_end must exceed the start point, got {z_end}"
        )));
    }
    if !(tol > 0.0 && tol < 1e-2) {
        return Err(Error::Parameter(format!(
            "tolerance must lie in (0, 0.01), got {tol}"
        )));
    }
    let atol = tol * 1e-4;

    let mut s = z_start.ln();
    let mut y = series_start(z_start);
    let mut k = rhs(s, &y);
    let mut grid = vec![z_start];
    let mut states = vec![y];
    let mut stats = StepStats {
        min_step: f64::INFINITY,
        rtol: tol,
        ..Default::default()
    };
    let mut h: f64 = 1e-3;
    let mut target = z_end;

    loop {
        let s_end = target.ln();
        while s < s_end {
            if stats.accepted + stats.rejected > MAX_STEPS {
                return Err(Error::Integration(format!(
                    "tolerance {tol:e} not met within {MAX_STEPS} steps (reached z = {:e})",
                    s.exp()
                )));
            }
            h = h.min(MAX_STEP).min(s_end - s);
            let (y_new, err, k_new) = dopri_step(s, &y, &k, h);
            let norm = ((0..3)
                .map(|i| {
                    let scale = atol + tol * y[i].abs().max(y_new[i].abs());
                    (err[i] / scale).powi(2)
                })
                .sum::<f64>()
                / 3.0)
                .sqrt();
            if norm <= 1.0 && y_new.iter().all(|x| x.is_finite()) {
                s += h;
                y = y_new;
                k = k_new;
                grid.push(s.exp());
                states.push(y);
                stats.accepted += 1;
                stats.min_step = stats.min_step.min(h);
                stats.max_step = stats.max_step.max(h);
                let grow = if norm == 0.0 {
                    5.0
                } else {
                    (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0)
                };
                h *= grow;
            } else {
                stats.rejected += 1;
                let shrink = if norm.is_finite() {
                    (0.9 * norm.powf(-0.2)).clamp(0.1, 0.9)
                } else {
                    0.1
                };
                h *= shrink;
                if h < MIN_STEP {
                    return Err(Error::Integration(format!(
                        "step size underflow (h = {h:e}) at z = {:e}, c = {:e}, v = {:e}",
                        s.exp(),
                        y[0],
                        y[1]
                    )));
                }
            }
        }
        if y[0] <= C_FLOOR {
            break;
        }
        target *= 2.0;
        if target > Z_LIMIT {
            return Err(Error::Integration(format!(
                "c still {:e} at z = {:e}; no decay",
                y[0],
                s.exp()
            )));
        }
    }

    let c: Vec<f64> = states.iter().map(|y| y[0]).collect();
    let v: Vec<f64> = states.iter().map(|y| y[1]).collect();
    let v_prime: Vec<f64> = states.iter().zip(&grid).map(|(y, z)| y[2] / z).collect();
    let a_limit = states.last().expect("nonempty")[2];
    let mut solution = OdeSolution {
        grid,
        c,
        v,
        v_prime,
        a_integral: 0.0,
        a_limit,
        step_stats: stats,
    };
    solution.a_integral = integrate_c(&solution);
    Ok(solution)
}

/// `∫_0^∞ c dz` from the stored trajectory alone.
///
/// On `[0, z_0]` the series gives `z_0 - z_0^2/2`. Between nodes the
/// integrand in `s`, `g = z c` with `g_s = z c (1 - v)`, is integrated with
/// the endpoint-corrected trapezoid rule
/// `h/2 (g_i + g_{i+1}) + h^2/12 (g'_i - g'_{i+1})`. Beyond the last node
/// the decay rate `c'/c = -v/z` is frozen, giving `c z / v`.
fn integrate_c(sol: &OdeSolution) -> f64 {
    let z0 = sol.grid[0];
    let mut total = z0 - z0 * z0 / 2.0;
    let g_s = |i: usize| sol.g(i) * (1.0 - sol.v[i]);
    for i in 0..sol.grid.len() - 1 {
        let h = (sol.grid[i + 1] / sol.grid[i]).ln();
        total += h / 2.0 * (sol.g(i) + sol.g(i + 1)) + h * h / 12.0 * (g_s(i) - g_s(i + 1));
    }
    let n = sol.grid.len() - 1;
    total + sol.c[n] * sol.grid[n] / sol.v[n]
}

/// Average of the two estimators of `A`; fails if they disagree by more
/// than [`ESTIMATOR_MISMATCH`] relative.
pub fn estimate_a(solution: &OdeSolution) -> Result<f64> {
    let (a, b) = (solution.a_integral, solution.a_limit);
    let mean = 0.5 * (a + b);
    if !(mean.is_finite() && mean > 0.0) || (a - b).abs() > ESTIMATOR_MISMATCH * mean {
        return Err(Error::Integration(format!(
            "estimators of A disagree: integral {a}, limit {b}"
        )));
    }
    Ok(mean)
}

/// Quintic Hermite interpolation of `v` in `s = ln z` from the node values
/// of `v`, `v_s = z v'` and `v_ss = z c`.
fn interpolate_v(sol: &OdeSolution, log_grid: &[f64], s: f64) -> f64 {
    let j = log_grid
        .partition_point(|&x| x <= s)
        .clamp(1, log_grid.len() - 1);
    let i = j - 1;
    let h = log_grid[j] - log_grid[i];
    let t = (s - log_grid[i]) / h;
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t3 * t, t3 * t2);
    let h00 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h10 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h20 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h01 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h11 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h21 = 0.5 * (t3 - 2.0 * t4 + t5);
    h00 * sol.v[i]
        + h10 * h * sol.p(i)
        + h20 * h * h * sol.g(i)
        + h01 * sol.v[j]
        + h11 * h * sol.p(j)
        + h21 * h * h * sol.g(j)
}

/// [`blasius_residual_with`] on `y ∈ [-4, 3]` with 2801 points.
pub fn blasius_residual(solution: &OdeSolution) -> Result<f64> {
    blasius_residual_with(solution, -4.0, 3.0, 2801)
}

/// Resamples `w(y) = v(e^y) - 1` on a uniform grid of `points` values over
/// `[y_min, y_max]` and returns `max |w''' + w w''|` over the interior, with
/// both derivatives taken by central differences.
pub fn blasius_residual_with(
    solution: &OdeSolution,
    y_min: f64,
    y_max: f64,
    points: usize,
) -> Result<f64> {
    if points < 5 || !(y_max > y_min) {
        return Err(Error::Validation(format!(
            "need at least 5 points on a nonempty range, got {points} on [{y_min}, {y_max}]"
        )));
    }
    let log_grid: Vec<f64> = solution.grid.iter().map(|z| z.ln()).collect();
    let (lo, hi) = (log_grid[0], *log_grid.last().expect("nonempty"));
    if y_min < lo || y_max > hi {
        return Err(Error::Validation(format!(
            "solution covers ln z in [{lo:.3}, {hi:.3}], residual requested on [{y_min}, {y_max}]"
        )));
    }
    let h = (y_max - y_min) / (points - 1) as f64;
    let widest = log_grid
        .windows(2)
        .filter(|w| w[1] >= y_min && w[0] <= y_max)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    // Third differences need the interpolant to be resolved well below h.
    if widest > 50.0 * h || widest > 0.1 {
        return Err(Error::Validation(format!(
            "solution grid too coarse for third differences: node spacing {widest:.3e}, sample spacing {h:.3e}"
        )));
    }
    let w: Vec<f64> = (0..points)
        .map(|i| interpolate_v(solution, &log_grid, y_min + i as f64 * h) - 1.0)
        .collect();
    let worst = (2..points - 2)
        .map(|i| {
            let w2 = (w[i + 1] - 2.0 * w[i] + w[i - 1]) / (h * h);
            let w3 = (w[i + 2] - 2.0 * w[i + 1] + 2.0 * w[i - 1] - w[i - 2]) / (2.0 * h * h * h);
            (w3 + w[i] * w2).abs()
        })
        .fold(0.0, f64::max);
    Ok(worst)
}
