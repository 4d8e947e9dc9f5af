//! Topologies, traffic parameters and link loads.
//!
//! A [`NetworkSpec`] is a set of links with capacities and a set of routes,
//! each route being an ordered list of link ids with a Poisson arrival rate
//! and a mean (exponential) document size. Ids are dense so that state can
//! be kept in plain vectors.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default half-width of the band around unit load that is reported as
/// [`Classification::Boundary`].
pub const DEFAULT_STABILITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: usize,
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub id: usize,
    pub links: Vec<usize>,
    pub arrival_rate: f64,
    pub mean_size: f64,
}

impl RouteSpec {
    /// Offered work per unit time, `λ_r σ_r`.
    pub fn offered_work(&self) -> f64 {
        self.arrival_rate * self.mean_size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub label: String,
    pub links: Vec<LinkSpec>,
    pub routes: Vec<RouteSpec>,
}

impl NetworkSpec {
    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    /// Checks every structural invariant: dense ids, positive capacities,
    /// nonempty duplicate-free routes over existing links, sane rates.
    pub fn validate(&self) -> Result<()> {
        if self.routes.is_empty() {
            return Err(Error::Validation("network has no routes".into()));
        }
        for (i, link) in self.links.iter().enumerate() {
            if link.id != i {
                return Err(Error::Validation(format!(
                    "link ids must be dense: position {i} holds id {}",
                    link.id
                )));
            }
            if !(link.capacity > 0.0 && link.capacity.is_finite()) {
                return Err(Error::Validation(format!(
                    "link {i} has non-positive capacity {}",
                    link.capacity
                )));
            }
        }
        for (i, route) in self.routes.iter().enumerate() {
            if route.id != i {
                return Err(Error::Validation(format!(
                    "route ids must be dense: position {i} holds id {}",
                    route.id
                )));
            }
            if route.links.is_empty() {
                return Err(Error::Validation(format!("route {i} has no links")));
            }
            if let Some(&bad) = route.links.iter().find(|&&l| l >= self.links.len()) {
                return Err(Error::Validation(format!(
                    "route {i} references unknown link {bad}"
                )));
            }
            if !route.links.iter().all_unique() {
                return Err(Error::Validation(format!("route {i} crosses a link twice")));
            }
            if !(route.arrival_rate >= 0.0 && route.arrival_rate.is_finite()) {
                return Err(Error::Validation(format!(
                    "route {i} has invalid arrival rate {}",
                    route.arrival_rate
                )));
            }
            if !(route.mean_size > 0.0 && route.mean_size.is_finite()) {
                return Err(Error::Validation(format!(
                    "route {i} has non-positive mean size {}",
                    route.mean_size
                )));
            }
        }
        Ok(())
    }

    /// Routes crossing each link, indexed by link id.
    pub fn link_routes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.links.len()];
        for route in &self.routes {
            for &l in &route.links {
                out[l].push(route.id);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Ergodic,
    Transient,
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub per_link_load: Vec<f64>,
    pub max_load: f64,
    pub classification: Classification,
}

/// `ρ_ℓ = (1/C_ℓ) Σ_{r∋ℓ} λ_r σ_r` for every link, plus the maximum and
/// the resulting stability class.
pub fn compute_link_loads(spec: &NetworkSpec) -> Result<LoadReport> {
    spec.validate()?;
    let mut work = vec![0.0; spec.num_links()];
    for route in &spec.routes {
        let w = route.offered_work();
        for &l in &route.links {
            work[l] += w;
        }
    }
    let per_link_load: Vec<f64> = work
        .iter()
        .zip(&spec.links)
        .map(|(w, link)| w / link.capacity)
        .collect();
    let max_load = per_link_load.iter().copied().fold(0.0, f64::max);
    Ok(LoadReport {
        classification: classify_stability(max_load, DEFAULT_STABILITY_TOL),
        per_link_load,
        max_load,
    })
}

/// Ergodic strictly below unit load, transient strictly above; the band
/// `[1 - tol, 1 + tol]` is left undecided.
pub fn classify_stability(max_load: f64, tol: f64) -> Classification {
    if max_load < 1.0 - tol {
        Classification::Ergodic
    } else if max_load > 1.0 + tol {
        Classification::Transient
    } else {
        Classification::Boundary
    }
}

fn unit_links(n: usize, capacity: f64) -> Vec<LinkSpec> {
    (0..n).map(|id| LinkSpec { id, capacity }).collect()
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "{name} must be positive, got {value}"
        )))
    }
}

fn check_nonnegative(name: &str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "{name} must be non-negative, got {value}"
        )))
    }
}

/// Linear network: route 0 crosses every link, route `i` (1-based) uses
/// link `i - 1` only.
pub fn gen_linear(
    n_links: usize,
    capacity: f64,
    lambda_long: f64,
    lambda_short: f64,
    sigma: f64,
) -> Result<NetworkSpec> {
    if n_links == 0 {
        return Err(Error::Parameter(
            "linear network needs at least one link".into(),
        ));
    }
    check_positive("capacity", capacity)?;
    check_nonnegative("lambda_long", lambda_long)?;
    check_nonnegative("lambda_short", lambda_short)?;
    check_positive("sigma", sigma)?;

    let mut routes = vec![RouteSpec {
        id: 0,
        links: (0..n_links).collect(),
        arrival_rate: lambda_long,
        mean_size: sigma,
    }];
    routes.extend((0..n_links).map(|l| RouteSpec {
        id: l + 1,
        links: vec![l],
        arrival_rate: lambda_short,
        mean_size: sigma,
    }));
    Ok(NetworkSpec {
        label: format!("linear(n={n_links})"),
        links: unit_links(n_links, capacity),
        routes,
    })
}

/// Which branch pairs of a star carry a route.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum StarRoutes {
    /// Ordered pairs of distinct branches; each link carries `N/2 - 1`
    /// routes and the link load is `ρ (1 - 2/N)`.
    #[default]
    DistinctBranches,
    /// All ordered pairs, including a branch's inbound link paired with its
    /// own outbound link; each link carries `N/2` routes and the link load
    /// is exactly `ρ`.
    AllBranchPairs,
}

/// Symmetric star: `N/2` branches, each with one inbound and one outbound
/// unit-capacity link. Links `0..N/2` are inbound, `N/2..N` outbound.
/// Every route has rate `2λ/N` with `λ = ρ/σ`.
pub fn gen_star(n_links: usize, rho: f64, sigma: f64) -> Result<NetworkSpec> {
    gen_star_with(n_links, rho, sigma, StarRoutes::DistinctBranches)
}

pub fn gen_star_with(
    n_links: usize,
    rho: f64,
    sigma: f64,
    pairs: StarRoutes,
) -> Result<NetworkSpec> {
    if !n_links.is_multiple_of(2) || n_links < 4 {
        return Err(Error::Parameter(format!(
            "star needs an even number of links >= 4, got {n_links}"
        )));
    }
    check_positive("rho", rho)?;
    check_positive("sigma", sigma)?;

    let branches = n_links / 2;
    let rate = 2.0 * (rho / sigma) / n_links as f64;
    let routes = (0..branches)
        .cartesian_product(0..branches)
        .filter(|(src, dst)| pairs == StarRoutes::AllBranchPairs || src != dst)
        .enumerate()
        .map(|(id, (src, dst))| RouteSpec {
            id,
            links: vec![src, branches + dst],
            arrival_rate: rate,
            mean_size: sigma,
        })
        .collect();
    let suffix = match pairs {
        StarRoutes::DistinctBranches => "",
        StarRoutes::AllBranchPairs => ",all-pairs",
    };
    Ok(NetworkSpec {
        label: format!("star(N={n_links},rho={rho}{suffix})"),
        links: unit_links(n_links, 1.0),
        routes,
    })
}

/// Asymmetric star: `n_in` inbound links of capacity `c_in`, `n_out`
/// outbound links of capacity `c_out`, one route per (inbound, outbound)
/// pair with rate `λ / n_in`.
///
/// Outbound links then see load `λσ / c_out` and inbound links
/// `λσ n_out / (c_in n_in)`.
pub fn gen_asym_star(
    n_in: usize,
    n_out: usize,
    c_in: f64,
    c_out: f64,
    lambda: f64,
    sigma: f64,
) -> Result<NetworkSpec> {
    if n_in == 0 || n_out == 0 {
        return Err(Error::Parameter(format!(
            "asymmetric star needs at least one link on each side, got {n_in}/{n_out}"
        )));
    }
    check_positive("c_in", c_in)?;
    check_positive("c_out", c_out)?;
    check_positive("lambda", lambda)?;
    check_positive("sigma", sigma)?;

    let mut links = unit_links(n_in, c_in);
    links.extend((0..n_out).map(|j| LinkSpec {
        id: n_in + j,
        capacity: c_out,
    }));
    let rate = lambda / n_in as f64;
    let routes = (0..n_in)
        .cartesian_product(0..n_out)
        .enumerate()
        .map(|(id, (i, j))| RouteSpec {
            id,
            links: vec![i, n_in + j],
            arrival_rate: rate,
            mean_size: sigma,
        })
        .collect();
    Ok(NetworkSpec {
        label: format!("asym-star(in={n_in},out={n_out})"),
        links,
        routes,
    })
}

/// Number of routes through any link of [`gen_hypercube`]:
/// `L (d-1)! / (d-L)!`.
pub fn hypercube_routes_per_link(d: usize, route_len: usize) -> usize {
    route_len * ((d - route_len + 1)..d).product::<usize>()
}

/// Hypercube of dimension `d` with two one-way unit links per edge.
///
/// The directed link leaving vertex `v` along coordinate `i` has id
/// `v * d + i`, so there are `d 2^d` links. Routes are all shortest paths
/// between ordered vertex pairs that differ in exactly `route_len`
/// coordinates, one per ordering of the flipped coordinates. Route rates are
/// chosen so that every link has load exactly `rho`.
pub fn gen_hypercube(d: usize, route_len: usize, rho: f64, sigma: f64) -> Result<NetworkSpec> {
    if d == 0 || d > 20 {
        return Err(Error::Parameter(format!(
            "hypercube dimension must be in 1..=20, got {d}"
        )));
    }
    if route_len == 0 || route_len > d {
        return Err(Error::Parameter(format!(
            "route length must be in 1..={d}, got {route_len}"
        )));
    }
    check_positive("rho", rho)?;
    check_positive("sigma", sigma)?;

    let per_link = hypercube_routes_per_link(d, route_len);
    let rate = rho / (sigma * per_link as f64);
    let mut routes = Vec::new();
    for source in 0..(1usize << d) {
        for dims in (0..d).combinations(route_len) {
            for order in dims.iter().copied().permutations(route_len) {
                let mut at = source;
                let links = order
                    .iter()
                    .map(|&i| {
                        let link = at * d + i;
                        at ^= 1 << i;
                        link
                    })
                    .collect();
                routes.push(RouteSpec {
                    id: routes.len(),
                    links,
                    arrival_rate: rate,
                    mean_size: sigma,
                });
            }
        }
    }
    Ok(NetworkSpec {
        label: format!("hypercube(d={d},L={route_len})"),
        links: unit_links(d << d, 1.0),
        routes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loads() {
        let spec = gen_linear(3, 1.0, 0.3, 0.4, 1.0).unwrap();
        assert_eq!(spec.num_routes(), 4);
        assert_eq!(spec.routes[0].links.len(), 3);
        let report = compute_link_loads(&spec).unwrap();
        for rho in &report.per_link_load {
            assert!((rho - 0.7).abs() < 1e-15);
        }
        assert_eq!(report.classification, Classification::Ergodic);
    }

    #[test]
    fn linear_single_link() {
        let spec = gen_linear(1, 1.0, 0.1, 0.1, 1.0).unwrap();
        assert_eq!(spec.num_routes(), 2);
        assert!(spec.routes.iter().all(|r| r.links == vec![0]));
    }

    #[test]
    fn single_link_half_load() {
        let spec = NetworkSpec {
            label: "one".into(),
            links: vec![LinkSpec {
                id: 0,
                capacity: 2.0,
            }],
            routes: vec![RouteSpec {
                id: 0,
                links: vec![0],
                arrival_rate: 1.0,
                mean_size: 1.0,
            }],
        };
        assert_eq!(compute_link_loads(&spec).unwrap().max_load, 0.5);
    }

    #[test]
    fn dangling_link_rejected() {
        let spec = NetworkSpec {
            label: "bad".into(),
            links: vec![LinkSpec {
                id: 0,
                capacity: 1.0,
            }],
            routes: vec![RouteSpec {
                id: 0,
                links: vec![0, 3],
                arrival_rate: 1.0,
                mean_size: 1.0,
            }],
        };
        assert!(matches!(
            compute_link_loads(&spec),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn duplicate_link_in_route_rejected() {
        let spec = NetworkSpec {
            label: "bad".into(),
            links: vec![LinkSpec {
                id: 0,
                capacity: 1.0,
            }],
            routes: vec![RouteSpec {
                id: 0,
                links: vec![0, 0],
                arrival_rate: 1.0,
                mean_size: 1.0,
            }],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn classification_thresholds() {
        assert_eq!(classify_stability(0.9, 1e-12), Classification::Ergodic);
        assert_eq!(classify_stability(1.1, 1e-12), Classification::Transient);
        assert_eq!(classify_stability(1.0, 1e-12), Classification::Boundary);
    }

    #[test]
    fn smallest_star() {
        let spec = gen_star(4, 0.5, 1.0).unwrap();
        assert_eq!(spec.num_routes(), 2);
        assert!(spec.routes.iter().all(|r| r.links.len() == 2));
        let all = gen_star_with(4, 0.5, 1.0, StarRoutes::AllBranchPairs).unwrap();
        assert_eq!(all.num_routes(), 4);
    }

    #[test]
    fn star_rejects_odd_or_small() {
        assert!(matches!(gen_star(7, 0.9, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(gen_star(2, 0.9, 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn star_100() {
        let spec = gen_star(100, 0.9, 1.0).unwrap();
        assert_eq!(spec.num_routes(), 50 * 49);
        assert!(spec
            .routes
            .iter()
            .all(|r| (r.arrival_rate - 0.018).abs() < 1e-15));
        let report = compute_link_loads(&spec).unwrap();
        assert!((report.max_load - 0.9 * (1.0 - 2.0 / 100.0)).abs() < 1e-12);
        for count in spec.link_routes().iter().map(Vec::len) {
            assert_eq!(count, 49);
        }

        let exact = gen_star_with(100, 0.9, 1.0, StarRoutes::AllBranchPairs).unwrap();
        assert_eq!(exact.num_routes(), 2500);
        let report = compute_link_loads(&exact).unwrap();
        assert!(report.per_link_load.iter().all(|r| (r - 0.9).abs() < 1e-12));
    }

    #[test]
    fn asym_star_loads() {
        let single = gen_asym_star(1, 1, 1.0, 1.0, 0.5, 1.0).unwrap();
        assert_eq!(single.num_routes(), 1);
        assert_eq!(single.routes[0].links, vec![0, 1]);

        let (n_in, n_out, c_in, c_out, lambda, sigma) = (3, 12, 8.0, 1.0, 0.6, 1.0);
        let spec = gen_asym_star(n_in, n_out, c_in, c_out, lambda, sigma).unwrap();
        let report = compute_link_loads(&spec).unwrap();
        let rho_in = lambda * sigma * n_out as f64 / (c_in * n_in as f64);
        let rho_out = lambda * sigma / c_out;
        for (l, rho) in report.per_link_load.iter().enumerate() {
            let want = if l < n_in { rho_in } else { rho_out };
            assert!((rho - want).abs() < 1e-12, "link {l}: {rho} vs {want}");
        }
    }

    #[test]
    fn hypercube_d5_l2() {
        let spec = gen_hypercube(5, 2, 0.5, 1.0).unwrap();
        assert_eq!(spec.num_links(), 160);
        assert!(spec.link_routes().iter().all(|r| r.len() == 8));
        assert_eq!(hypercube_routes_per_link(5, 2), 8);
    }

    #[test]
    fn hypercube_d2_l1() {
        let spec = gen_hypercube(2, 1, 0.5, 1.0).unwrap();
        assert_eq!(spec.num_links(), 8);
        assert_eq!(spec.num_routes(), 8);
        assert!(spec.link_routes().iter().all(|r| r.len() == 1));
    }

    #[test]
    fn hypercube_route_too_long() {
        assert!(matches!(
            gen_hypercube(3, 4, 0.5, 1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn json_field_names() {
        let spec = gen_linear(1, 1.0, 0.1, 0.2, 1.0).unwrap();
        let value: serde_json::Value = serde_json::from_str(&spec.to_json().unwrap()).unwrap();
        assert!(value["label"].is_string());
        assert_eq!(value["links"][0]["capacity"], 1.0);
        assert_eq!(value["routes"][1]["arrival_rate"], 0.2);
        assert_eq!(value["routes"][0]["mean_size"], 1.0);
        let report = compute_link_loads(&spec).unwrap();
        let value = serde_json::to_value(&report).unwrap();
        assert_eq!(value["classification"], "Ergodic");
        assert!(value["per_link_load"].is_array());
    }
}
