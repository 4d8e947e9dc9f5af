//! Per-flow bandwidth shares under the min policy and under max-min fairness.

use serde::{Deserialize, Serialize};

use crate::network::NetworkSpec;
use crate::{Error, Result};

/// Relative slack used by the feasibility and bottleneck checks.
pub const CHECK_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    Min,
    MaxMin,
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Policy::Min => "min",
            Policy::MaxMin => "maxmin",
        })
    }
}

/// Number of transfers in progress on each route, `x_r`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteCounts(pub Vec<u32>);

impl RouteCounts {
    pub fn zeros(n_routes: usize) -> Self {
        RouteCounts(vec![0; n_routes])
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.0.len() != spec.num_routes() {
            return Err(Error::Validation(format!(
                "{} counts for {} routes",
                self.0.len(),
                spec.num_routes()
            )));
        }
        Ok(())
    }

    /// `X_ℓ = Σ_{r∋ℓ} x_r`.
    pub fn link_occupancy(&self, spec: &NetworkSpec) -> Vec<u64> {
        let mut occ = vec![0u64; spec.num_links()];
        for (route, &x) in spec.routes.iter().zip(&self.0) {
            for &l in &route.links {
                occ[l] += u64::from(x);
            }
        }
        occ
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Bandwidth received by each individual transfer on route `r`.
    pub shares: Vec<f64>,
    pub policy: Policy,
}

/// Reusable allocator holding the route/link incidence and scratch space,
/// so that the simulator can recompute shares after every event without
/// allocating.
#[derive(Clone, Debug)]
pub struct Allocator {
    route_links: Vec<Vec<usize>>,
    link_routes: Vec<Vec<usize>>,
    capacity: Vec<f64>,
    occupancy: Vec<u64>,
    residual: Vec<f64>,
    unfrozen: Vec<u64>,
    frozen: Vec<bool>,
}

impl Allocator {
    pub fn new(spec: &NetworkSpec) -> Self {
        let n = spec.num_links();
        Allocator {
            route_links: spec.routes.iter().map(|r| r.links.clone()).collect(),
            link_routes: spec.link_routes(),
            capacity: spec.links.iter().map(|l| l.capacity).collect(),
            occupancy: vec![0; n],
            residual: vec![0.0; n],
            unfrozen: vec![0; n],
            frozen: vec![false; spec.num_routes()],
        }
    }

    pub fn allocate(&mut self, policy: Policy, counts: &[u32], shares: &mut [f64]) {
        match policy {
            Policy::Min => self.min_shares(counts, shares),
            Policy::MaxMin => self.maxmin_shares(counts, shares),
        }
    }

    /// `ζ_r = min_{ℓ∈r} C_ℓ / X_ℓ` for occupied routes, zero otherwise.
    pub fn min_shares(&mut self, counts: &[u32], shares: &mut [f64]) {
        self.occupancy.fill(0);
        for (links, &x) in self.route_links.iter().zip(counts) {
            if x > 0 {
                for &l in links {
                    self.occupancy[l] += u64::from(x);
                }
            }
        }
        for ((share, links), &x) in shares.iter_mut().zip(&self.route_links).zip(counts) {
            *share = if x == 0 {
                0.0
            } else {
                links
                    .iter()
                    .map(|&l| self.capacity[l] / self.occupancy[l] as f64)
                    .fold(f64::INFINITY, f64::min)
            };
        }
    }

    /// Progressive filling. The link with the smallest fair share
    /// `residual / unfrozen flows` binds first (lowest id on ties); all its
    /// unfrozen flows are frozen at that share and their consumption is
    /// removed from every link they cross.
    pub fn maxmin_shares(&mut self, counts: &[u32], shares: &mut [f64]) {
        self.residual.copy_from_slice(&self.capacity);
        self.unfrozen.fill(0);
        let mut remaining = 0usize;
        for (r, (links, &x)) in self.route_links.iter().zip(counts).enumerate() {
            shares[r] = 0.0;
            self.frozen[r] = x == 0;
            if x > 0 {
                remaining += 1;
                for &l in links {
                    self.unfrozen[l] += u64::from(x);
                }
            }
        }

        while remaining > 0 {
            let mut best: Option<(usize, f64)> = None;
            for (l, &n) in self.unfrozen.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let fair = self.residual[l].max(0.0) / n as f64;
                if best.is_none_or(|(_, b)| fair < b) {
                    best = Some((l, fair));
                }
            }
            let (bottleneck, fair) = best.expect("unfrozen routes always cross a loaded link");
            for &r in &self.link_routes[bottleneck] {
                if self.frozen[r] {
                    continue;
                }
                self.frozen[r] = true;
                remaining -= 1;
                shares[r] = fair;
                let x = counts[r];
                for &l in &self.route_links[r] {
                    self.residual[l] -= f64::from(x) * fair;
                    self.unfrozen[l] -= u64::from(x);
                }
            }
        }
    }
}

fn allocate(spec: &NetworkSpec, counts: &RouteCounts, policy: Policy) -> Allocation {
    let mut shares = vec![0.0; spec.num_routes()];
    Allocator::new(spec).allocate(policy, &counts.0, &mut shares);
    Allocation { shares, policy }
}

pub fn alloc_min(spec: &NetworkSpec, counts: &RouteCounts) -> Result<Allocation> {
    counts.check(spec)?;
    Ok(allocate(spec, counts, Policy::Min))
}

pub fn alloc_maxmin(spec: &NetworkSpec, counts: &RouteCounts) -> Result<Allocation> {
    counts.check(spec)?;
    Ok(allocate(spec, counts, Policy::MaxMin))
}

pub fn alloc(spec: &NetworkSpec, counts: &RouteCounts, policy: Policy) -> Result<Allocation> {
    counts.check(spec)?;
    Ok(allocate(spec, counts, policy))
}

fn link_usage(spec: &NetworkSpec, counts: &RouteCounts, alloc: &Allocation) -> Vec<f64> {
    let mut used = vec![0.0; spec.num_links()];
    for ((route, &x), &share) in spec.routes.iter().zip(&counts.0).zip(&alloc.shares) {
        for &l in &route.links {
            used[l] += f64::from(x) * share;
        }
    }
    used
}

/// Capacity constraints `Σ_{r∋ℓ} x_r ζ_r ≤ C_ℓ` with relative slack.
pub fn verify_feasibility(spec: &NetworkSpec, counts: &RouteCounts, alloc: &Allocation) -> bool {
    if counts.0.len() != spec.num_routes() || alloc.shares.len() != spec.num_routes() {
        return false;
    }
    if alloc.shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return false;
    }
    link_usage(spec, counts, alloc)
        .iter()
        .zip(&spec.links)
        .all(|(used, link)| *used <= link.capacity * (1.0 + CHECK_TOL))
}

/// Bottleneck condition: every occupied route crosses a saturated link on
/// which its share is maximal among occupied routes.
pub fn verify_maxmin_conditions(
    spec: &NetworkSpec,
    counts: &RouteCounts,
    alloc: &Allocation,
) -> bool {
    if counts.0.len() != spec.num_routes() || alloc.shares.len() != spec.num_routes() {
        return false;
    }
    let used = link_usage(spec, counts, alloc);
    let mut link_max = vec![0.0f64; spec.num_links()];
    for ((route, &x), &share) in spec.routes.iter().zip(&counts.0).zip(&alloc.shares) {
        if x > 0 {
            for &l in &route.links {
                link_max[l] = link_max[l].max(share);
            }
        }
    }
    spec.routes
        .iter()
        .zip(&counts.0)
        .zip(&alloc.shares)
        .all(|((route, &x), &share)| {
            x == 0
                || route.links.iter().any(|&l| {
                    let cap = spec.links[l].capacity;
                    (used[l] - cap).abs() <= CHECK_TOL * cap
                        && share >= link_max[l] - CHECK_TOL * link_max[l].max(cap)
                })
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{gen_linear, LinkSpec, RouteSpec};

    fn linear2() -> NetworkSpec {
        gen_linear(2, 1.0, 0.1, 0.1, 1.0).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn min_two_links() {
        let spec = NetworkSpec {
            label: "t".into(),
            links: vec![
                LinkSpec {
                    id: 0,
                    capacity: 1.0,
                },
                LinkSpec {
                    id: 1,
                    capacity: 1.0,
                },
            ],
            routes: vec![
                RouteSpec {
                    id: 0,
                    links: vec![0, 1],
                    arrival_rate: 0.0,
                    mean_size: 1.0,
                },
                RouteSpec {
                    id: 1,
                    links: vec![0],
                    arrival_rate: 0.0,
                    mean_size: 1.0,
                },
                RouteSpec {
                    id: 2,
                    links: vec![1],
                    arrival_rate: 0.0,
                    mean_size: 1.0,
                },
            ],
        };
        // X_0 = 2, X_1 = 4
        let a = alloc_min(&spec, &RouteCounts(vec![1, 1, 3])).unwrap();
        assert!((a.shares[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn min_linear() {
        let a = alloc_min(&linear2(), &RouteCounts(vec![1, 2, 1])).unwrap();
        assert!(close(&a.shares, &[1.0 / 3.0, 1.0 / 3.0, 0.5]));
    }

    #[test]
    fn alone_gets_full_capacity() {
        let spec = gen_linear(1, 1.0, 0.1, 0.0, 1.0).unwrap();
        let counts = RouteCounts(vec![1, 0]);
        assert_eq!(alloc_min(&spec, &counts).unwrap().shares, vec![1.0, 0.0]);
        assert_eq!(alloc_maxmin(&spec, &counts).unwrap().shares, vec![1.0, 0.0]);
    }

    #[test]
    fn maxmin_alone_gets_min_capacity() {
        let spec = NetworkSpec {
            label: "t".into(),
            links: vec![
                LinkSpec {
                    id: 0,
                    capacity: 3.0,
                },
                LinkSpec {
                    id: 1,
                    capacity: 1.5,
                },
            ],
            routes: vec![RouteSpec {
                id: 0,
                links: vec![0, 1],
                arrival_rate: 0.0,
                mean_size: 1.0,
            }],
        };
        let counts = RouteCounts(vec![1]);
        let a = alloc_maxmin(&spec, &counts).unwrap();
        assert_eq!(a.shares, vec![1.5]);
        assert!(verify_maxmin_conditions(&spec, &counts, &a));
    }

    #[test]
    fn maxmin_linear() {
        let spec = linear2();
        let c = RouteCounts(vec![1, 1, 0]);
        let a = alloc_maxmin(&spec, &c).unwrap();
        assert!(close(&a.shares, &[0.5, 0.5, 0.0]));
        assert!(verify_maxmin_conditions(&spec, &c, &a));

        let c = RouteCounts(vec![1, 2, 1]);
        let a = alloc_maxmin(&spec, &c).unwrap();
        assert!(close(&a.shares, &[1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]));
        assert!(verify_maxmin_conditions(&spec, &c, &a));
        assert!(verify_feasibility(&spec, &c, &a));
    }

    #[test]
    fn min_is_not_maxmin() {
        let spec = linear2();
        let c = RouteCounts(vec![1, 2, 1]);
        let a = alloc_min(&spec, &c).unwrap();
        assert!(verify_feasibility(&spec, &c, &a));
        assert!(!verify_maxmin_conditions(&spec, &c, &a));
    }

    #[test]
    fn doubled_shares_infeasible() {
        let spec = linear2();
        let c = RouteCounts(vec![1, 1, 0]);
        let mut a = alloc_maxmin(&spec, &c).unwrap();
        a.shares.iter_mut().for_each(|s| *s *= 2.0);
        assert!(!verify_feasibility(&spec, &c, &a));
    }

    #[test]
    fn all_empty() {
        let spec = linear2();
        let c = RouteCounts::zeros(3);
        assert_eq!(alloc_maxmin(&spec, &c).unwrap().shares, vec![0.0; 3]);
        assert_eq!(alloc_min(&spec, &c).unwrap().shares, vec![0.0; 3]);
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(alloc_min(&linear2(), &RouteCounts(vec![1])).is_err());
    }
}
