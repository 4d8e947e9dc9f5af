use bestnet::allocation::Policy;
use bestnet::network::{
    gen_linear, gen_star, gen_star_with, LinkSpec, NetworkSpec, RouteSpec, StarRoutes,
};
use bestnet::sim::{occupancy_cdf, run, run_coupled, run_replications, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single_link(rho: f64) -> NetworkSpec {
    NetworkSpec {
        label: "mm1".into(),
        links: vec![LinkSpec {
            id: 0,
            capacity: 1.0,
        }],
        routes: vec![RouteSpec {
            id: 0,
            links: vec![0],
            arrival_rate: rho,
            mean_size: 1.0,
        }],
    }
}

fn sup_cdf(a: &[f64], b: &[f64]) -> f64 {
    let (mut ca, mut cb, mut sup) = (0.0, 0.0, 0.0f64);
    for k in 0..a.len().max(b.len()) {
        ca += a.get(k).copied().unwrap_or(0.0);
        cb += b.get(k).copied().unwrap_or(0.0);
        sup = sup.max((ca - cb).abs());
    }
    sup
}

#[test]
fn mm1_processor_sharing() {
    let rho = 0.5;
    let spec = single_link(rho);
    // About one event per unit time.
    let cfg = SimConfig::with_horizon(3, Policy::Min, 1.4e6);
    let stats = run(&spec, &cfg).unwrap();
    assert!(stats.measured_events >= 1_000_000);

    let mean = stats.mean_link_occupancy();
    assert!((mean - 1.0).abs() < 0.05, "mean occupancy {mean}");

    let sup = stats
        .link_occupancy_dist
        .iter()
        .enumerate()
        .map(|(k, p)| (p - (1.0 - rho) * rho.powi(k as i32)).abs())
        .fold(0.0, f64::max);
    assert!(sup < 0.02, "pmf sup deviation {sup}");

    // Sojourn time of M/M/1-PS is 1/(μ-λ) = 2.
    let little = stats.mean_transfer_time[0].unwrap();
    let observed = stats.observed_transfer_time[0].unwrap();
    assert!((little - 2.0).abs() < 0.1, "Little {little}");
    assert!(
        (observed - little).abs() < 0.03 * little,
        "observed {observed} vs {little}"
    );

    let cdf = occupancy_cdf(&stats).unwrap();
    assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*cdf.last().unwrap(), 1.0);
}

/// Two links, route 0 crossing both, route 1 on link 0 only. Link 1 is
/// narrow, so route 0 is sometimes bottlenecked there and max-min then
/// gives route 1 the leftover of link 0.
fn two_route_network() -> NetworkSpec {
    NetworkSpec {
        label: "two-route".into(),
        links: vec![
            LinkSpec {
                id: 0,
                capacity: 1.0,
            },
            LinkSpec {
                id: 1,
                capacity: 0.5,
            },
        ],
        routes: vec![
            RouteSpec {
                id: 0,
                links: vec![0, 1],
                arrival_rate: 0.2,
                mean_size: 1.0,
            },
            RouteSpec {
                id: 1,
                links: vec![0],
                arrival_rate: 0.45,
                mean_size: 1.0,
            },
        ],
    }
}

/// Per-flow rates for [`two_route_network`], written out by hand.
fn hand_shares(policy: Policy, x0: u32, x1: u32) -> (f64, f64) {
    let total = f64::from(x0 + x1);
    let link0 = 1.0 / total;
    let link1 = if x0 > 0 {
        0.5 / f64::from(x0)
    } else {
        f64::INFINITY
    };
    match policy {
        Policy::Min => (link0.min(link1), link0),
        Policy::MaxMin => {
            if link1 < link0 {
                // Route 0 frozen on link 1; route 1 takes what is left of link 0.
                (link1, (1.0 - 0.5) / f64::from(x1))
            } else {
                (link0, link0)
            }
        }
    }
}

/// Gillespie simulation of the Markov chain on `(x0, x1)`; returns the
/// time-weighted occupancy distribution pooled over both links.
fn ctmc_occupancy(policy: Policy, seed: u64, events: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lam0, lam1) = (0.2, 0.45);
    let (mut x0, mut x1) = (0u32, 0u32);
    let mut hist = vec![0.0; 1];
    let mut total_time = 0.0;
    let burn_in = events / 10;
    for step in 0..events {
        let (z0, z1) = if x0 + x1 == 0 {
            (0.0, 0.0)
        } else {
            hand_shares(policy, x0, x1)
        };
        let d0 = if x0 > 0 { f64::from(x0) * z0 } else { 0.0 };
        let d1 = if x1 > 0 { f64::from(x1) * z1 } else { 0.0 };
        let rates = [lam0, lam1, d0, d1];
        let sum: f64 = rates.iter().sum();
        let dt = -(1.0 - rng.random::<f64>()).ln() / sum;
        if step >= burn_in {
            for occ in [(x0 + x1) as usize, x0 as usize] {
                if hist.len() <= occ {
                    hist.resize(occ + 1, 0.0);
                }
                hist[occ] += dt;
            }
            total_time += 2.0 * dt;
        }
        let mut u = rng.random::<f64>() * sum;
        let mut pick = 3;
        for (i, r) in rates.iter().enumerate() {
            if u < *r {
                pick = i;
                break;
            }
            u -= r;
        }
        match pick {
            0 => x0 += 1,
            1 => x1 += 1,
            2 => x0 -= 1,
            _ => x1 -= 1,
        }
    }
    hist.into_iter().map(|t| t / total_time).collect()
}

#[test]
fn fluid_simulation_matches_markov_chain() {
    let spec = two_route_network();
    for policy in [Policy::Min, Policy::MaxMin] {
        let cfg = SimConfig::with_horizon(17, policy, 1.0e6);
        let stats = run(&spec, &cfg).unwrap();
        let oracle = ctmc_occupancy(policy, 99, 2_000_000);
        let sup = sup_cdf(&stats.link_occupancy_dist, &oracle);
        assert!(sup < 0.02, "{policy}: sup CDF distance {sup}");
    }
}

#[test]
fn identical_seeds_reproduce_exactly() {
    let spec = gen_star(10, 0.8, 1.0).unwrap();
    for policy in [Policy::Min, Policy::MaxMin] {
        let cfg = SimConfig::with_horizon(42, policy, 2_000.0);
        let a = run(&spec, &cfg).unwrap();
        let b = run(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        let other = run(&spec, &SimConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.link_occupancy_dist, other.link_occupancy_dist);
    }
}

#[test]
fn littles_law_on_a_star() {
    let spec = gen_star(12, 0.7, 1.0).unwrap();
    let stats = run(&spec, &SimConfig::with_horizon(5, Policy::Min, 60_000.0)).unwrap();
    let (mut little, mut observed) = (0.0, 0.0);
    for r in 0..spec.num_routes() {
        little += stats.mean_transfer_time[r].unwrap();
        observed += stats.observed_transfer_time[r].unwrap();
    }
    assert!(
        (little - observed).abs() < 0.03 * little,
        "{little} vs {observed}"
    );
}

#[test]
fn replications_agree_within_monte_carlo_error() {
    let spec = single_link(0.5);
    let cfg = SimConfig::with_horizon(100, Policy::Min, 100_000.0);
    let reps = run_replications(&spec, &cfg, 6).unwrap();
    let means: Vec<f64> = reps.iter().map(|s| s.mean_link_occupancy()).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let sd =
        (means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt();
    assert!((grand - 1.0).abs() < 0.05, "grand mean {grand}");
    // Relaxation time of M/M/1 at load 0.5 is a few time units; over 8e4
    // units the standard error of a replication mean is about 0.01.
    assert!(sd < 0.04, "spread {sd}");
    for m in &means {
        assert!((m - grand).abs() < 5.0 * sd.max(0.01), "{means:?}");
    }
    // Replications used distinct seeds.
    assert!(means.windows(2).all(|w| w[0] != w[1]));
}

#[test]
fn overloaded_star_grows_linearly() {
    let spec = gen_star_with(10, 1.1, 1.0, StarRoutes::AllBranchPairs).unwrap();
    let mut cfg = SimConfig::with_horizon(9, Policy::Min, 4_000.0);
    cfg.warmup_time = 0.0;
    cfg.measure_time = 4_000.0;
    cfg.trace_interval = Some(10.0);
    let stats = run(&spec, &cfg).unwrap();
    let pts = &stats.count_trace;
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.time).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.total as f64).sum::<f64>() / n;
    let sxy: f64 = pts
        .iter()
        .map(|p| (p.time - mt) * (p.total as f64 - my))
        .sum();
    let sxx: f64 = pts.iter().map(|p| (p.time - mt).powi(2)).sum();
    let slope = sxy / sxx;
    // Excess arrival rate is 0.1 per link over 10 links, split across two
    // links per document: about 0.5 documents per unit time.
    assert!(slope > 0.2, "slope {slope}");
}

#[test]
fn coupled_runs_never_violate_dominance() {
    let linear = gen_linear(3, 1.0, 0.3, 0.4, 1.0).unwrap();
    let star = gen_star(20, 0.9, 1.0).unwrap();
    for (spec, horizon) in [(&linear, 40_000.0), (&star, 5_000.0)] {
        let cfg = SimConfig::with_horizon(77, Policy::Min, horizon);
        let out = run_coupled(spec, &cfg).unwrap();
        assert_eq!(out.dominance_violations, 0, "{}", spec.label);
        assert!(out.min.events_processed >= 50_000);
        for r in 0..spec.num_routes() {
            let (Some(t_mm), Some(t_min)) = (
                out.maxmin.mean_transfer_time[r],
                out.min.mean_transfer_time[r],
            ) else {
                continue;
            };
            assert!(t_min >= t_mm, "route {r}: min {t_min} < maxmin {t_mm}");
        }
    }
}
