//! Fixed point for the asymmetric star: `N_in` inbound links of capacity
//! `C_in`, `N_out` outbound links of capacity `C_out`.
//!
//! With `c = C_out / C_in` the equations are
//!
//! ```text
//! α^in_{k+1}  u^out_{k+1} = ρ_in ᾱ^out α^in_k
//! α^out_{k+1} u^in_{k+1}  = ρ_in ᾱ^out α^out_k
//! u^in_k  = Σ_y α^in_y  min(k, c y)
//! u^out_k = Σ_y α^out_y min(c k, y)
//! ```
//!
//! Note that both recursions carry `ρ_in ᾱ^out`; `ρ_out` only enters as a
//! stability precondition.

use serde::{Deserialize, Serialize};

use super::{
    check_solver_params, default_k_max, extend_geometric, mean_of, mix, rebuild, sup_diff,
    tail_mass, Damping, MAX_K, TAIL_MASS_TARGET,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymStarProblem {
    pub rho_in: f64,
    pub rho_out: f64,
    /// `C_out / C_in`.
    pub c_ratio: f64,
    pub k_max: usize,
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl AsymStarProblem {
    pub fn new(rho_in: f64, rho_out: f64, c_ratio: f64) -> Self {
        AsymStarProblem {
            rho_in,
            rho_out,
            c_ratio,
            k_max: default_k_max(rho_in.max(rho_out)),
            damping: 0.5,
            tol: 1e-10,
            max_iters: 10_000,
        }
    }

    fn validate(&self) -> Result<()> {
        for rho in [self.rho_in, self.rho_out] {
            if !(rho < 1.0) {
                return Err(Error::Unstable { rho });
            }
            if !(rho > 0.0) {
                return Err(Error::Parameter(format!(
                    "loads must be positive, got {rho}"
                )));
            }
        }
        if !(self.c_ratio > 0.0 && self.c_ratio.is_finite()) {
            return Err(Error::Parameter(format!(
                "capacity ratio must be positive, got {}",
                self.c_ratio
            )));
        }
        check_solver_params(self.k_max, self.damping, self.tol)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymStarSolution {
    pub alpha_in: Vec<f64>,
    pub alpha_out: Vec<f64>,
    /// Indexed by `k`, entry 0 unused.
    pub u_in: Vec<f64>,
    pub u_out: Vec<f64>,
    pub alpha_bar_in: f64,
    pub alpha_bar_out: f64,
    pub k_max: usize,
    pub iterations: usize,
    pub residual: f64,
    pub tail_mass: f64,
}

/// Prefix sums `(Σ_{y≤m} y α_y, Σ_{y≤m} α_y)`.
fn prefix_sums(alpha: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut first = Vec::with_capacity(alpha.len());
    let mut mass = Vec::with_capacity(alpha.len());
    let (mut p, mut q) = (0.0, 0.0);
    for (y, a) in alpha.iter().enumerate() {
        p += y as f64 * a;
        q += a;
        first.push(p);
        mass.push(q);
    }
    (first, mass)
}

/// Last index `y` in `0..=k_max` with `y < bound`, if any.
fn last_below(bound: f64, k_max: usize) -> Option<usize> {
    if bound <= 0.0 {
        return None;
    }
    let m = bound.ceil() - 1.0;
    Some((m.max(0.0) as usize).min(k_max))
}

/// `u^in_k = Σ_y α_y min(k, c y)`, `O(K)` via prefix sums.
pub fn inbound_u(alpha: &[f64], c_ratio: f64) -> Vec<f64> {
    let k_max = alpha.len() - 1;
    let (first, mass) = prefix_sums(alpha);
    let total = mass[k_max];
    let mut u = vec![0.0; alpha.len()];
    for (k, slot) in u.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        // y with c y < k contribute c y, the rest contribute k.
        *slot = match last_below(kf / c_ratio, k_max) {
            Some(m) => c_ratio * first[m] + kf * (total - mass[m]),
            None => kf * total,
        };
    }
    u
}

/// `u^out_k = Σ_y α_y min(c k, y)`, `O(K)` via prefix sums.
pub fn outbound_u(alpha: &[f64], c_ratio: f64) -> Vec<f64> {
    let k_max = alpha.len() - 1;
    let (first, mass) = prefix_sums(alpha);
    let total = mass[k_max];
    let mut u = vec![0.0; alpha.len()];
    for (k, slot) in u.iter_mut().enumerate().skip(1) {
        let ck = c_ratio * k as f64;
        *slot = match last_below(ck, k_max) {
            Some(m) => first[m] + ck * (total - mass[m]),
            None => ck * total,
        };
    }
    u
}

fn residual(p: &AsymStarProblem, a_in: &[f64], a_out: &[f64], u_in: &[f64], u_out: &[f64]) -> f64 {
    let bar_out = mean_of(a_out);
    let rhs = p.rho_in * bar_out;
    (0..a_in.len() - 1)
        .map(|k| {
            let r_in = (a_in[k + 1] * u_out[k + 1] - rhs * a_in[k]).abs();
            let r_out = (a_out[k + 1] * u_in[k + 1] - rhs * a_out[k]).abs();
            r_in.max(r_out) / bar_out
        })
        .fold(0.0, f64::max)
}

/// Damped iteration on the pair: both distributions are rebuilt from the
/// previous iterate and mixed in together. A symmetric start therefore
/// stays symmetric; the printed equations also admit asymmetric solutions
/// at `c = 1`, which a sequential sweep can drift into. Same stopping and
/// truncation rules as [`super::fixed_point_solve`].
pub fn solve_asym_star(problem: &AsymStarProblem) -> Result<AsymStarSolution> {
    problem.validate()?;
    let c = problem.c_ratio;
    let geometric = |rho: f64| {
        let v: Vec<f64> = (0..=problem.k_max).map(|k| rho.powi(k as i32)).collect();
        let total: f64 = v.iter().sum();
        v.into_iter().map(|x| x / total).collect::<Vec<f64>>()
    };
    let mut a_in = geometric(problem.rho_in);
    let mut a_out = geometric(problem.rho_in);
    let mut rebuilt = Vec::new();
    let mut rebuilt_out = Vec::new();
    let mut damp = Damping::new(problem.damping);
    let mut iterations = 0;
    let mut last_residual = f64::INFINITY;

    loop {
        loop {
            if iterations >= problem.max_iters {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: last_residual,
                });
            }
            iterations += 1;

            let rhs = problem.rho_in * mean_of(&a_out);
            let u_out = outbound_u(&a_out, c);
            let u_in = inbound_u(&a_in, c);
            rebuild(a_in.len(), |k| rhs / u_out[k], &mut rebuilt);
            rebuild(a_out.len(), |k| rhs / u_in[k], &mut rebuilt_out);
            let change_in = sup_diff(&a_in, &rebuilt);
            let change_out = sup_diff(&a_out, &rebuilt_out);
            mix(&mut a_in, &rebuilt, damp.omega);
            mix(&mut a_out, &rebuilt_out, damp.omega);

            let change = change_in.max(change_out);
            last_residual = residual(
                problem,
                &a_in,
                &a_out,
                &inbound_u(&a_in, c),
                &outbound_u(&a_out, c),
            );
            if !last_residual.is_finite() {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: last_residual,
                });
            }
            if change < problem.tol
                && last_residual <= problem.tol
                && damp.error_bound(change) < problem.tol
            {
                break;
            }
            damp.observe(change);
        }

        let tail = tail_mass(&a_in).max(tail_mass(&a_out));
        if tail < TAIL_MASS_TARGET {
            let u_in = inbound_u(&a_in, c);
            let u_out = outbound_u(&a_out, c);
            return Ok(AsymStarSolution {
                alpha_bar_in: mean_of(&a_in),
                alpha_bar_out: mean_of(&a_out),
                k_max: a_in.len() - 1,
                iterations,
                residual: last_residual,
                tail_mass: tail,
                alpha_in: a_in,
                alpha_out: a_out,
                u_in,
                u_out,
            });
        }
        if !tail.is_finite() || a_in.len() > MAX_K {
            return Err(Error::NonConvergence {
                iterations,
                residual: last_residual,
            });
        }
        let new_len = 2 * (a_in.len() - 1) + 1;
        extend_geometric(&mut a_in, new_len, problem.rho_in);
        extend_geometric(&mut a_out, new_len, problem.rho_in);
        damp = Damping::new(problem.damping);
    }
}
