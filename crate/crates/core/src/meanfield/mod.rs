//! Mean-field fixed point for the link-occupancy distribution of large
//! symmetrical networks.
//!
//! With `α_k` the stationary fraction of links holding `k` transfers,
//! `ᾱ = Σ k α_k` and routes of length `L`, the equations are
//!
//! ```text
//! α_{k+1} u_{k+1} = ρ ᾱ^{L-1} α_k                      (k ≥ 0)
//! u_k = k Σ_{y≥k} [Σ_{m≤y} m α_m]^{L-1} / (y (y+1))
//! ```
//!
//! The solver alternates between computing `u` from the current `α` and
//! rebuilding `α` from the recursion, with damping.

pub mod asym;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use asym::{solve_asym_star, AsymStarProblem, AsymStarSolution};

/// Truncation is grown until the estimated mass beyond `k_max` drops below this.
pub const TAIL_MASS_TARGET: f64 = 1e-12;

/// Truncation is never grown beyond this many states.
pub const MAX_K: usize = 1 << 22;

const MIN_DAMPING: f64 = 1.0 / 1024.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// `α_k ∝ ρ^k`, the `L = 1` solution.
    #[default]
    Geometric,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldProblem {
    pub rho: f64,
    pub route_len: usize,
    /// Initial truncation; grown automatically.
    pub k_max: usize,
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub init: Init,
}

/// Initial truncation `max(50, 10 / (1-ρ)^2)`.
pub fn default_k_max(rho: f64) -> usize {
    let k = 10.0 / ((1.0 - rho) * (1.0 - rho));
    if k.is_finite() {
        (k.ceil() as usize).clamp(50, MAX_K)
    } else {
        MAX_K
    }
}

impl MeanFieldProblem {
    pub fn new(rho: f64, route_len: usize) -> Self {
        MeanFieldProblem {
            rho,
            route_len,
            k_max: default_k_max(rho),
            damping: 0.5,
            tol: 1e-10,
            max_iters: 10_000,
            init: Init::Geometric,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho < 1.0) {
            return Err(Error::Unstable { rho: self.rho });
        }
        if !(self.rho > 0.0) {
            return Err(Error::Parameter(format!(
                "load must be positive, got {}",
                self.rho
            )));
        }
        if self.route_len == 0 {
            return Err(Error::Parameter("route length must be at least 1".into()));
        }
        check_solver_params(self.k_max, self.damping, self.tol)
    }
}

pub(crate) fn check_solver_params(k_max: usize, damping: f64, tol: f64) -> Result<()> {
    if k_max < 10 {
        return Err(Error::Parameter(format!(
            "k_max must be at least 10, got {k_max}"
        )));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::Parameter(format!(
            "damping must be in (0, 1], got {damping}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldSolution {
    pub rho: f64,
    pub route_len: usize,
    /// `α_0 ..= α_{k_max}`.
    pub alpha: Vec<f64>,
    /// `u_0 ..= u_{k_max}`, with `u_0 = 0` as a placeholder.
    pub u: Vec<f64>,
    pub alpha_bar: f64,
    pub k0: usize,
    pub mean: f64,
    pub k_max: usize,
    pub iterations: usize,
    /// `max_k |α_{k+1} u_{k+1} - ρ ᾱ^{L-1} α_k| / ᾱ^{L-1}`.
    pub residual: f64,
    /// Estimated probability mass beyond `k_max`.
    pub tail_mass: f64,
}

impl MeanFieldSolution {
    pub fn cdf(&self) -> Vec<f64> {
        cumulative(&self.alpha)
    }

    /// Per-link Little's law: a link holds `ᾱ` transfers on average and
    /// sees arrivals at `link_arrival_rate`, so each transfer spends
    /// `ᾱ / λ` in the system.
    pub fn mean_transfer_time(&self, link_arrival_rate: f64) -> f64 {
        self.alpha_bar / link_arrival_rate
    }

    /// CSV with header `k,alpha,u,cdf`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "alpha", "u", "cdf"])?;
        for (k, ((a, u), c)) in self.alpha.iter().zip(&self.u).zip(self.cdf()).enumerate() {
            w.write_record([k.to_string(), a.to_string(), u.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

pub(crate) fn mean_of(alpha: &[f64]) -> f64 {
    alpha.iter().enumerate().map(|(k, a)| k as f64 * a).sum()
}

fn check_distribution(alpha: &[f64]) -> Result<()> {
    if alpha.is_empty() {
        return Err(Error::Validation("empty distribution".into()));
    }
    if let Some(bad) = alpha.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::Validation(format!("invalid probability {bad}")));
    }
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "distribution sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// `u_k / ᾱ^{L-1}` for `k = 0..=K` (entry 0 unused), from prefix sums.
///
/// The distribution is taken to vanish beyond `K`, so for `y > K` the
/// prefix sum stays at `ᾱ` and the remaining series `Σ_{y>K} 1/(y(y+1))`
/// contributes exactly `1/(K+1)`. Requires `ᾱ > 0`.
fn normalized_u(alpha: &[f64], route_len: usize) -> Vec<f64> {
    let k_max = alpha.len() - 1;
    let power = (route_len - 1) as i32;
    let mut prefix = Vec::with_capacity(alpha.len());
    let mut s = 0.0;
    for (m, a) in alpha.iter().enumerate() {
        s += m as f64 * a;
        prefix.push(s);
    }
    let mean = s;
    let mut u = vec![0.0; alpha.len()];
    let mut suffix = 1.0 / (k_max as f64 + 1.0);
    for y in (1..=k_max).rev() {
        let yf = y as f64;
        suffix += (prefix[y] / mean).powi(power) / (yf * (yf + 1.0));
        u[y] = yf * suffix;
    }
    u
}

/// `u_1 ..= u_K` for a distribution `α_0 ..= α_K` supported on `0..=K`,
/// returned as a vector indexed by `k` with `u[0] = 0`.
///
/// Uses the prefix-sum form
/// `u_k = k Σ_{y≥k} S_y^{L-1} / (y(y+1))` with `S_y = Σ_{m≤y} m α_m`,
/// closing the tail `y > K` in closed form. `O(K)`.
pub fn compute_u(alpha: &[f64], route_len: usize) -> Result<Vec<f64>> {
    check_distribution(alpha)?;
    if route_len == 0 {
        return Err(Error::Parameter("route length must be at least 1".into()));
    }
    let mean = mean_of(alpha);
    if mean == 0.0 {
        // Every S_y vanishes: u_k = 1 for L = 1, 0 otherwise.
        let fill = if route_len == 1 { 1.0 } else { 0.0 };
        let mut u = vec![fill; alpha.len()];
        u[0] = 0.0;
        return Ok(u);
    }
    let scale = mean.powi(route_len as i32 - 1);
    Ok(normalized_u(alpha, route_len)
        .into_iter()
        .map(|x| x * scale)
        .collect())
}

/// Rebuilds a normalized distribution from `α_{k+1} / α_k = ratio(k+1)`
/// with `α_0` seeded at 1. Runs in log space; the unnormalized products
/// overflow for loads close to 1.
pub(crate) fn rebuild(len: usize, mut ratio: impl FnMut(usize) -> f64, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(len);
    let mut log = 0.0f64;
    let mut peak = 0.0f64;
    out.push(0.0);
    for k in 1..len {
        log += ratio(k).ln();
        peak = peak.max(log);
        out.push(log);
    }
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = (*v - peak).exp();
        total += *v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
}

/// Geometric tail estimate of the mass beyond the last entry, from the
/// ratio of the last two entries. Infinite if the tail does not decay.
pub(crate) fn tail_mass(alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let (last, before) = (alpha[n - 1], alpha[n - 2]);
    if last == 0.0 {
        return 0.0;
    }
    let q = last / before;
    if q >= 1.0 {
        f64::INFINITY
    } else {
        last * q / (1.0 - q)
    }
}

/// Extends a distribution to `new_len` entries, continuing it
/// geometrically with ratio `q`, and renormalizes.
pub(crate) fn extend_geometric(alpha: &mut Vec<f64>, new_len: usize, q: f64) {
    let mut last = *alpha.last().expect("nonempty");
    while alpha.len() < new_len {
        last *= q;
        alpha.push(last);
    }
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= total);
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Step-size control shared by the solvers: the damping factor is halved
/// whenever the change between successive iterates grows, and creeps back
/// towards its initial value while the change keeps shrinking.
pub(crate) struct Damping {
    pub omega: f64,
    initial: f64,
    previous: f64,
}

impl Damping {
    pub fn new(omega: f64) -> Self {
        Damping {
            omega,
            initial: omega,
            previous: f64::INFINITY,
        }
    }

    pub fn observe(&mut self, change: f64) {
        if change > self.previous {
            self.omega = (self.omega * 0.5).max(MIN_DAMPING);
        } else {
            self.omega = (self.omega * 1.1).min(self.initial);
        }
        self.previous = change;
    }

    /// Estimated distance to the fixed point given the latest undamped
    /// change, from the observed contraction of successive changes.
    pub fn error_bound(&self, change: f64) -> f64 {
        let q = change / self.previous;
        if q < 1.0 {
            change * self.omega / (1.0 - q)
        } else {
            f64::INFINITY
        }
    }
}

pub(crate) fn mix(current: &mut [f64], target: &[f64], omega: f64) {
    for (a, t) in current.iter_mut().zip(target) {
        *a = (1.0 - omega) * *a + omega * t;
    }
}

fn initial(problem: &MeanFieldProblem) -> Vec<f64> {
    let n = problem.k_max + 1;
    let mut alpha: Vec<f64> = match problem.init {
        Init::Geometric => (0..n).map(|k| problem.rho.powi(k as i32)).collect(),
        Init::Uniform => vec![1.0; n],
    };
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= total);
    alpha
}

fn residual(alpha: &[f64], u_norm: &[f64], rho: f64) -> f64 {
    (0..alpha.len() - 1)
        .map(|k| (alpha[k + 1] * u_norm[k + 1] - rho * alpha[k]).abs())
        .fold(0.0, f64::max)
}

/// Solves the fixed-point equations by damped iteration.
///
/// Each sweep computes `ᾱ` and `u` from the current iterate, rebuilds the
/// distribution from `α̃_{k+1} = ρ ᾱ^{L-1} α̃_k / u_{k+1}` with `α̃_0 = 1`,
/// normalizes, and mixes it into the iterate. The sweep stops when the
/// sup-norm change, the equation residual and the estimated distance to the
/// fixed point are all below `tol`; the truncation
/// is then doubled until the tail mass is below [`TAIL_MASS_TARGET`].
pub fn fixed_point_solve(problem: &MeanFieldProblem) -> Result<MeanFieldSolution> {
    problem.validate()?;
    let rho = problem.rho;
    let mut alpha = initial(problem);
    let mut rebuilt = Vec::new();
    let mut damping = Damping::new(problem.damping);
    let mut iterations = 0;
    let mut last_residual = f64::INFINITY;

    loop {
        let u_norm = loop {
            if iterations >= problem.max_iters {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: last_residual,
                });
            }
            iterations += 1;
            let u_norm = normalized_u(&alpha, problem.route_len);
            rebuild(alpha.len(), |k| rho / u_norm[k], &mut rebuilt);
            let change = sup_diff(&alpha, &rebuilt);
            last_residual = residual(&alpha, &u_norm, rho);
            if change < problem.tol
                && last_residual <= problem.tol
                && damping.error_bound(change) < problem.tol
            {
                break u_norm;
            }
            damping.observe(change);
            mix(&mut alpha, &rebuilt, damping.omega);
        };

        let tail = tail_mass(&alpha);
        if tail < TAIL_MASS_TARGET {
            let alpha_bar = mean_of(&alpha);
            let scale = alpha_bar.powi(problem.route_len as i32 - 1);
            let mut solution = MeanFieldSolution {
                rho,
                route_len: problem.route_len,
                u: u_norm.iter().map(|x| x * scale).collect(),
                k0: 0,
                mean: alpha_bar,
                alpha_bar,
                k_max: alpha.len() - 1,
                iterations,
                residual: last_residual,
                tail_mass: tail,
                alpha,
            };
            solution.k0 = peak_index(&solution);
            return Ok(solution);
        }
        if !tail.is_finite() || alpha.len() > MAX_K {
            return Err(Error::NonConvergence {
                iterations,
                residual: last_residual,
            });
        }
        let new_len = 2 * (alpha.len() - 1) + 1;
        extend_geometric(&mut alpha, new_len, rho);
        damping = Damping::new(problem.damping);
        log::debug!("mean-field truncation grown to k_max = {}", new_len - 1);
    }
}

/// `k0 = max{k > 0 : u_k < ρ ᾱ^{L-1}}`, or 0 if no such `k`.
///
/// Since `u` is nondecreasing, this is where the distribution peaks.
pub fn peak_index(solution: &MeanFieldSolution) -> usize {
    let threshold = solution.rho * solution.alpha_bar.powi(solution.route_len as i32 - 1);
    solution
        .u
        .iter()
        .enumerate()
        .skip(1)
        .rfind(|(_, &u)| u < threshold)
        .map_or(0, |(k, _)| k)
}
