//! Event-driven fluid simulation of the flow-level Markov process.
//!
//! Every document is tracked individually with its residual work. All
//! documents on a route receive the same rate, so each route keeps a
//! *service clock* `S_r(t) = ∫ ζ_r dt`; a document of size `s` arriving at
//! clock value `S` finishes when the clock reaches `S + s`, and its residual
//! work at any time is that finish tag minus the current clock. Rates are
//! updated after every arrival or completion.
//!
//! Arrivals and sizes are drawn from dedicated per-route random streams so
//! that [`run_coupled`] can feed identical documents to a min-policy system
//! and a max-min system.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{Allocator, Policy};
use crate::network::{compute_link_loads, Classification, NetworkSpec};
use crate::{Error, Result};

/// Fraction of the simulated horizon discarded as warm-up by
/// [`SimConfig::with_horizon`].
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.2;

/// Residual work below `COMPLETION_TOL * max(1, |S_r|)` counts as finished.
const COMPLETION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub warmup_time: f64,
    pub measure_time: f64,
    pub policy: Policy,
    pub max_events: u64,
    /// Sample the total number of documents in the system on this period.
    #[serde(default)]
    pub trace_interval: Option<f64>,
}

impl SimConfig {
    /// Total horizon `horizon`, of which the first 20% is warm-up.
    pub fn with_horizon(seed: u64, policy: Policy, horizon: f64) -> Self {
        SimConfig {
            seed,
            warmup_time: DEFAULT_WARMUP_FRACTION * horizon,
            measure_time: (1.0 - DEFAULT_WARMUP_FRACTION) * horizon,
            policy,
            max_events: u64::MAX,
            trace_interval: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.warmup_time >= 0.0 && self.warmup_time.is_finite()) {
            return Err(Error::Validation(format!(
                "invalid warmup time {}",
                self.warmup_time
            )));
        }
        if !(self.measure_time > 0.0) {
            return Err(Error::Validation(format!(
                "measurement time must be positive, got {}",
                self.measure_time
            )));
        }
        if let Some(dt) = self.trace_interval {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Validation(format!("invalid trace interval {dt}")));
            }
        }
        Ok(())
    }

    fn horizon(&self) -> f64 {
        self.warmup_time + self.measure_time
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time: f64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub policy: Policy,
    /// Time-average fraction of links holding exactly `k` transfers over the
    /// measurement window. Empty when the window has zero length.
    pub link_occupancy_dist: Vec<f64>,
    /// Time-average `x_r` over the measurement window.
    pub mean_per_route_count: Vec<f64>,
    /// Little's law estimate `E[x_r] / λ_r`; `None` for routes without traffic.
    pub mean_transfer_time: Vec<Option<f64>>,
    /// Average sojourn of the documents that left during the window.
    pub observed_transfer_time: Vec<Option<f64>>,
    pub departures: Vec<u64>,
    pub events_processed: u64,
    pub measured_events: u64,
    pub warmup_time: f64,
    pub end_time: f64,
    pub truncated: bool,
    #[serde(default)]
    pub count_trace: Vec<TracePoint>,
}

impl SimStats {
    pub fn window(&self) -> f64 {
        (self.end_time - self.warmup_time).max(0.0)
    }

    /// Mean number of transfers per link, `Σ k α̂_k`.
    pub fn mean_link_occupancy(&self) -> f64 {
        self.link_occupancy_dist
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    /// Writes the occupancy distribution as CSV with header `k,prob,cdf`.
    pub fn write_occupancy_csv<W: Write>(&self, out: W) -> Result<()> {
        let cdf = occupancy_cdf(self)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "prob", "cdf"])?;
        for (k, (p, c)) in self.link_occupancy_dist.iter().zip(&cdf).enumerate() {
            w.write_record([k.to_string(), p.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cumulative distribution `P(X ≤ k)` of the measured link occupancy.
pub fn occupancy_cdf(stats: &SimStats) -> Result<Vec<f64>> {
    if stats.link_occupancy_dist.is_empty() {
        return Err(Error::Validation("empty measurement window".into()));
    }
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = stats
        .link_occupancy_dist
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    // Accumulated rounding would otherwise leave the last entry a few ulps off.
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    Ok(cdf)
}

/// Heap key ordering by time, then by id for deterministic ties.
#[derive(Clone, Copy, Debug)]
struct Key(f64, u64);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// A newly arrived document, shared verbatim by coupled systems.
#[derive(Clone, Copy, Debug)]
struct Arrival {
    time: f64,
    route: usize,
    size: f64,
}

struct RouteStream {
    arrivals: ChaCha8Rng,
    sizes: ChaCha8Rng,
    interarrival: Option<Exp<f64>>,
    size: Exp<f64>,
}

/// Independent Poisson arrival processes, one pair of random streams per
/// route (inter-arrival times and document sizes).
struct ArrivalSource {
    streams: Vec<RouteStream>,
    pending: BinaryHeap<Reverse<Key>>,
}

impl ArrivalSource {
    fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut streams = Vec::with_capacity(spec.num_routes());
        let mut pending = BinaryHeap::new();
        for (r, route) in spec.routes.iter().enumerate() {
            let mut arrivals = ChaCha8Rng::seed_from_u64(seed);
            arrivals.set_stream(2 * r as u64);
            let mut sizes = ChaCha8Rng::seed_from_u64(seed);
            sizes.set_stream(2 * r as u64 + 1);
            let interarrival = if route.arrival_rate > 0.0 {
                Some(Exp::new(route.arrival_rate).map_err(|e| Error::Validation(e.to_string()))?)
            } else {
                None
            };
            let size =
                Exp::new(1.0 / route.mean_size).map_err(|e| Error::Validation(e.to_string()))?;
            let mut stream = RouteStream {
                arrivals,
                sizes,
                interarrival,
                size,
            };
            if let Some(exp) = stream.interarrival {
                pending.push(Reverse(Key(exp.sample(&mut stream.arrivals), r as u64)));
            }
            streams.push(stream);
        }
        Ok(ArrivalSource { streams, pending })
    }

    fn next_time(&self) -> f64 {
        self.pending.peek().map_or(f64::INFINITY, |Reverse(k)| k.0)
    }

    fn pop(&mut self) -> Arrival {
        let Reverse(Key(time, r)) = self.pending.pop().expect("pop on empty arrival source");
        let route = r as usize;
        let stream = &mut self.streams[route];
        let size = stream.size.sample(&mut stream.sizes);
        let gap = stream
            .interarrival
            .expect("scheduled route has traffic")
            .sample(&mut stream.arrivals);
        self.pending.push(Reverse(Key(time + gap, r)));
        Arrival { time, route, size }
    }
}

#[derive(Clone, Copy, Debug)]
struct Document {
    finish_tag: f64,
    arrival_time: f64,
    id: u64,
}

impl PartialEq for Document {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Document {}
impl PartialOrd for Document {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Document {
    fn cmp(&self, other: &Self) -> Ordering {
        Key(self.finish_tag, self.id).cmp(&Key(other.finish_tag, other.id))
    }
}

/// Time-weighted statistics over `[start, end]`.
struct Accumulator {
    start: f64,
    link_last: Vec<f64>,
    hist: Vec<f64>,
    route_last: Vec<f64>,
    route_area: Vec<f64>,
    departures: Vec<u64>,
    sojourn_sum: Vec<f64>,
}

impl Accumulator {
    fn new(n_links: usize, n_routes: usize, start: f64) -> Self {
        Accumulator {
            start,
            link_last: vec![0.0; n_links],
            hist: Vec::new(),
            route_last: vec![0.0; n_routes],
            route_area: vec![0.0; n_routes],
            departures: vec![0; n_routes],
            sojourn_sum: vec![0.0; n_routes],
        }
    }

    fn overlap(&self, from: f64, to: f64) -> f64 {
        (to - from.max(self.start)).max(0.0)
    }

    fn link_changing(&mut self, link: usize, occupancy: u32, now: f64) {
        let dt = self.overlap(self.link_last[link], now);
        if dt > 0.0 {
            let k = occupancy as usize;
            if self.hist.len() <= k {
                self.hist.resize(k + 1, 0.0);
            }
            self.hist[k] += dt;
        }
        self.link_last[link] = now;
    }

    fn route_changing(&mut self, route: usize, count: u32, now: f64) {
        self.route_area[route] += f64::from(count) * self.overlap(self.route_last[route], now);
        self.route_last[route] = now;
    }
}

/// Indexed binary min-heap of routes keyed by their next completion time,
/// so a route's entry can be moved or dropped in `O(log R)`.
struct CompletionQueue {
    heap: Vec<usize>,
    pos: Vec<usize>,
    time: Vec<f64>,
}

const ABSENT: usize = usize::MAX;

impl CompletionQueue {
    fn new(n_routes: usize) -> Self {
        CompletionQueue {
            heap: Vec::new(),
            pos: vec![ABSENT; n_routes],
            time: vec![0.0; n_routes],
        }
    }

    fn less(&self, a: usize, b: usize) -> bool {
        Key(self.time[a], a as u64) < Key(self.time[b], b as u64)
    }

    fn peek(&self) -> Option<(f64, usize)> {
        self.heap.first().map(|&r| (self.time[r], r))
    }

    fn set(&mut self, route: usize, time: f64) {
        self.time[route] = time;
        let i = self.pos[route];
        if i == ABSENT {
            self.heap.push(route);
            self.pos[route] = self.heap.len() - 1;
            self.sift_up(self.heap.len() - 1);
        } else {
            self.sift_up(i);
            self.sift_down(self.pos[route]);
        }
    }

    fn remove(&mut self, route: usize) {
        let i = self.pos[route];
        if i == ABSENT {
            return;
        }
        self.pos[route] = ABSENT;
        let last = self.heap.pop().expect("indexed route is in the heap");
        if i < self.heap.len() {
            self.heap[i] = last;
            self.pos[last] = i;
            self.sift_up(i);
            self.sift_down(self.pos[last]);
        }
    }

    fn swap(&mut self, i: usize, j: usize) {
        self.heap.swap(i, j);
        self.pos[self.heap[i]] = i;
        self.pos[self.heap[j]] = j;
    }

    fn sift_up(&mut self, mut i: usize) {
        while i > 0 {
            let parent = (i - 1) / 2;
            if !self.less(self.heap[i], self.heap[parent]) {
                break;
            }
            self.swap(i, parent);
            i = parent;
        }
    }

    fn sift_down(&mut self, mut i: usize) {
        loop {
            let left = 2 * i + 1;
            if left >= self.heap.len() {
                break;
            }
            let right = left + 1;
            let child = if right < self.heap.len() && self.less(self.heap[right], self.heap[left]) {
                right
            } else {
                left
            };
            if !self.less(self.heap[child], self.heap[i]) {
                break;
            }
            self.swap(i, child);
            i = child;
        }
    }
}

/// One network operating under one policy.
///
/// Route clocks are kept lazily: `base[r]` is `S_r` at time `stamp[r]` and
/// the clock grows at `shares[r]` until the share next changes. Under the
/// min policy an event only affects routes sharing a link with the route
/// that changed, so only those are re-examined; max-min shares are
/// recomputed in full.
struct FluidSystem {
    policy: Policy,
    allocator: Allocator,
    route_links: Vec<Vec<usize>>,
    link_routes: Vec<Vec<usize>>,
    capacity: Vec<f64>,
    counts: Vec<u32>,
    link_occupancy: Vec<u32>,
    /// `C_ℓ / X_ℓ`, maintained for the min policy.
    link_fair: Vec<f64>,
    shares: Vec<f64>,
    base: Vec<f64>,
    stamp: Vec<f64>,
    docs: Vec<BinaryHeap<Reverse<Document>>>,
    queue: CompletionQueue,
    dirty: Vec<usize>,
    dirty_mark: Vec<bool>,
    any_change: bool,
    scratch: Vec<f64>,
    total: u64,
    work_in: f64,
    work_out: f64,
    acc: Accumulator,
}

impl FluidSystem {
    fn new(spec: &NetworkSpec, policy: Policy, measure_from: f64) -> Self {
        let n_routes = spec.num_routes();
        FluidSystem {
            policy,
            allocator: Allocator::new(spec),
            route_links: spec.routes.iter().map(|r| r.links.clone()).collect(),
            link_routes: spec.link_routes(),
            capacity: spec.links.iter().map(|l| l.capacity).collect(),
            counts: vec![0; n_routes],
            link_occupancy: vec![0; spec.num_links()],
            link_fair: vec![f64::INFINITY; spec.num_links()],
            shares: vec![0.0; n_routes],
            base: vec![0.0; n_routes],
            stamp: vec![0.0; n_routes],
            docs: (0..n_routes).map(|_| BinaryHeap::new()).collect(),
            queue: CompletionQueue::new(n_routes),
            dirty: Vec::new(),
            dirty_mark: vec![false; n_routes],
            any_change: false,
            scratch: vec![0.0; n_routes],
            total: 0,
            work_in: 0.0,
            work_out: 0.0,
            acc: Accumulator::new(spec.num_links(), n_routes, measure_from),
        }
    }

    /// Earliest scheduled completion time.
    fn next_time(&self) -> f64 {
        self.queue.peek().map_or(f64::INFINITY, |(t, _)| t)
    }

    /// Brings the clock of `route` forward to `now` at its current share.
    fn sync(&mut self, route: usize, now: f64) {
        let dt = now - self.stamp[route];
        let x = self.counts[route];
        if dt > 0.0 && x > 0 {
            let served = self.shares[route] * dt;
            self.base[route] += served;
            self.work_out += f64::from(x) * served;
        }
        self.stamp[route] = now;
    }

    /// Recomputes the completion time of `route`, whose clock must be
    /// synced to `now`.
    fn reschedule(&mut self, route: usize, now: f64) {
        let share = self.shares[route];
        match self.docs[route].peek() {
            Some(Reverse(doc)) if share > 0.0 => {
                let residual = (doc.finish_tag - self.base[route]).max(0.0);
                self.queue.set(route, now + residual / share);
            }
            _ => self.queue.remove(route),
        }
    }

    fn change(&mut self, route: usize, now: f64, delta: i32) {
        self.acc.route_changing(route, self.counts[route], now);
        self.counts[route] = self.counts[route]
            .checked_add_signed(delta)
            .expect("count underflow");
        for i in 0..self.route_links[route].len() {
            let l = self.route_links[route][i];
            self.acc.link_changing(l, self.link_occupancy[l], now);
            self.link_occupancy[l] = self.link_occupancy[l]
                .checked_add_signed(delta)
                .expect("occupancy underflow");
            if self.policy == Policy::Min {
                // Same expression as Allocator::min_shares.
                self.link_fair[l] = self.capacity[l] / f64::from(self.link_occupancy[l]);
                for &q in &self.link_routes[l] {
                    if !self.dirty_mark[q] {
                        self.dirty_mark[q] = true;
                        self.dirty.push(q);
                    }
                }
            }
        }
        self.any_change = true;
        if delta > 0 {
            self.total += 1;
        } else {
            self.total -= 1;
        }
    }

    fn arrive(&mut self, arrival: Arrival, id: u64) {
        let r = arrival.route;
        self.sync(r, arrival.time);
        self.docs[r].push(Reverse(Document {
            finish_tag: self.base[r] + arrival.size,
            arrival_time: arrival.time,
            id,
        }));
        self.work_in += arrival.size;
        self.change(r, arrival.time, 1);
        self.reschedule(r, arrival.time);
    }

    fn depart(&mut self, route: usize, now: f64) {
        self.sync(route, now);
        let Reverse(doc) = self.docs[route].pop().expect("departure from empty route");
        // Clamp: whatever residual rounding left is credited as served.
        self.work_out += (doc.finish_tag - self.base[route]).max(0.0);
        if now >= self.acc.start {
            self.acc.departures[route] += 1;
            self.acc.sojourn_sum[route] += now - doc.arrival_time;
        }
        self.change(route, now, -1);
        self.reschedule(route, now);
    }

    /// Removes every document scheduled to finish by `now` (up to a relative
    /// rounding slack), under the rates in force before `now`.
    fn complete_until(&mut self, now: f64) -> usize {
        let limit = now + COMPLETION_TOL * now.abs().max(1.0);
        let mut done = 0;
        while let Some((t, r)) = self.queue.peek() {
            if t > limit {
                break;
            }
            self.depart(r, now);
            done += 1;
        }
        done
    }

    fn update_share(&mut self, route: usize, share: f64, now: f64) {
        if share != self.shares[route] {
            self.sync(route, now);
            self.shares[route] = share;
            self.reschedule(route, now);
        }
    }

    /// Applies the policy to the current counts.
    fn reallocate(&mut self, now: f64) {
        if !self.any_change {
            return;
        }
        self.any_change = false;
        match self.policy {
            Policy::Min => {
                let dirty = std::mem::take(&mut self.dirty);
                for &q in &dirty {
                    self.dirty_mark[q] = false;
                    let share = if self.counts[q] == 0 {
                        0.0
                    } else {
                        self.route_links[q]
                            .iter()
                            .map(|&l| self.link_fair[l])
                            .fold(f64::INFINITY, f64::min)
                    };
                    self.update_share(q, share, now);
                }
                self.dirty = dirty;
                self.dirty.clear();
            }
            Policy::MaxMin => {
                let mut scratch = std::mem::take(&mut self.scratch);
                self.allocator.maxmin_shares(&self.counts, &mut scratch);
                for (q, &share) in scratch.iter().enumerate() {
                    self.update_share(q, share, now);
                }
                self.scratch = scratch;
            }
        }
    }

    /// Work served up to `now`, including service not yet synced.
    #[cfg(test)]
    fn served_by(&self, now: f64) -> f64 {
        self.work_out
            + (0..self.counts.len())
                .map(|r| f64::from(self.counts[r]) * self.shares[r] * (now - self.stamp[r]))
                .sum::<f64>()
    }

    #[cfg(test)]
    fn residual_work(&self, now: f64) -> f64 {
        self.docs
            .iter()
            .enumerate()
            .flat_map(|(r, heap)| {
                let clock = self.base[r] + self.shares[r] * (now - self.stamp[r]);
                heap.iter()
                    .map(move |Reverse(d)| (d.finish_tag - clock).max(0.0))
            })
            .sum()
    }

    fn finish(mut self, spec: &NetworkSpec, run: &RunTally, trace: Vec<TracePoint>) -> SimStats {
        let end = run.end_time;
        for r in 0..self.counts.len() {
            self.sync(r, end);
        }
        for l in 0..self.link_occupancy.len() {
            self.acc.link_changing(l, self.link_occupancy[l], end);
        }
        for r in 0..self.counts.len() {
            self.acc.route_changing(r, self.counts[r], end);
        }
        let window = (end - self.acc.start).max(0.0);
        let n_links = self.link_occupancy.len() as f64;
        let link_occupancy_dist = if window > 0.0 {
            self.acc
                .hist
                .iter()
                .map(|t| t / (window * n_links))
                .collect()
        } else {
            Vec::new()
        };
        let mean_per_route_count: Vec<f64> = self
            .acc
            .route_area
            .iter()
            .map(|a| if window > 0.0 { a / window } else { 0.0 })
            .collect();
        let mean_transfer_time = spec
            .routes
            .iter()
            .zip(&mean_per_route_count)
            .map(|(route, m)| {
                (route.arrival_rate > 0.0 && window > 0.0).then(|| m / route.arrival_rate)
            })
            .collect();
        let observed_transfer_time = self
            .acc
            .departures
            .iter()
            .zip(&self.acc.sojourn_sum)
            .map(|(&n, s)| (n > 0).then(|| s / n as f64))
            .collect();
        SimStats {
            policy: self.policy,
            link_occupancy_dist,
            mean_per_route_count,
            mean_transfer_time,
            observed_transfer_time,
            departures: self.acc.departures,
            events_processed: run.events,
            measured_events: run.measured_events,
            warmup_time: self.acc.start,
            end_time: end,
            truncated: run.truncated,
            count_trace: trace,
        }
    }
}

#[derive(Debug, Default)]
struct RunTally {
    events: u64,
    measured_events: u64,
    end_time: f64,
    truncated: bool,
}

struct Tracer {
    interval: Option<f64>,
    next: f64,
    points: Vec<TracePoint>,
}

impl Tracer {
    fn new(interval: Option<f64>) -> Self {
        Tracer {
            interval,
            next: 0.0,
            points: Vec::new(),
        }
    }

    /// Records the state in force just before time `t`.
    fn sample_until(&mut self, t: f64, total: u64) {
        let Some(dt) = self.interval else { return };
        while self.next <= t {
            self.points.push(TracePoint {
                time: self.next,
                total,
            });
            self.next += dt;
        }
    }
}

fn prepare(spec: &NetworkSpec, config: &SimConfig) -> Result<()> {
    config.validate()?;
    let report = compute_link_loads(spec)?;
    if report.classification == Classification::Transient {
        log::warn!(
            "simulating a transient network (max link load {:.4}); counts will grow without bound",
            report.max_load
        );
    }
    Ok(())
}

/// Simulates `spec` under `config.policy` and returns the statistics of the
/// measurement window `[warmup_time, warmup_time + measure_time]` (shorter
/// if `max_events` is reached first, in which case `truncated` is set).
pub fn run(spec: &NetworkSpec, config: &SimConfig) -> Result<SimStats> {
    prepare(spec, config)?;
    let horizon = config.horizon();
    let mut arrivals = ArrivalSource::new(spec, config.seed)?;
    let mut system = FluidSystem::new(spec, config.policy, config.warmup_time);
    let mut tracer = Tracer::new(config.trace_interval);
    let mut tally = RunTally::default();
    let mut now = 0.0;
    let mut next_id = 0u64;

    loop {
        if tally.events >= config.max_events {
            tally.truncated = true;
            break;
        }
        let t_arr = arrivals.next_time();
        let t_dep = system.next_time();
        let t = t_arr.min(t_dep);
        if t > horizon {
            tracer.sample_until(horizon, system.total);
            now = horizon;
            break;
        }
        tracer.sample_until(t, system.total);
        now = t;
        // Completions win ties with arrivals.
        if t_dep <= t_arr {
            system.complete_until(now);
        } else {
            system.arrive(arrivals.pop(), next_id);
            next_id += 1;
        }
        system.reallocate(now);
        tally.events += 1;
        if now >= config.warmup_time {
            tally.measured_events += 1;
        }
    }
    tally.end_time = now;
    Ok(system.finish(spec, &tally, tracer.points))
}

/// Result of a coupled run of both policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledStats {
    pub maxmin: SimStats,
    pub min: SimStats,
    /// Number of event instants after which some link had more transfers
    /// under max-min than under the min policy.
    pub dominance_violations: u64,
}

/// Runs the max-min and min systems on one probability space: both see the
/// same arrival epochs and the same document sizes, and each serves its
/// documents at its own policy's rates. After every event instant the link
/// occupancies are compared; `X^mm_ℓ ≤ X^min_ℓ` should hold throughout.
///
/// `config.policy` is ignored. `events_processed` counts event instants,
/// at which several simultaneous state changes may be applied.
pub fn run_coupled(spec: &NetworkSpec, config: &SimConfig) -> Result<CoupledStats> {
    prepare(spec, config)?;
    let horizon = config.horizon();
    let mut arrivals = ArrivalSource::new(spec, config.seed)?;
    let mut mm = FluidSystem::new(spec, Policy::MaxMin, config.warmup_time);
    let mut min = FluidSystem::new(spec, Policy::Min, config.warmup_time);
    let mut trace_mm = Tracer::new(config.trace_interval);
    let mut trace_min = Tracer::new(config.trace_interval);
    let mut tally = RunTally::default();
    let mut violations = 0u64;
    let mut now = 0.0;
    let mut next_id = 0u64;

    loop {
        if tally.events >= config.max_events {
            tally.truncated = true;
            break;
        }
        let t_arr = arrivals.next_time();
        let t = t_arr.min(mm.next_time()).min(min.next_time());
        if t > horizon {
            trace_mm.sample_until(horizon, mm.total);
            trace_min.sample_until(horizon, min.total);
            now = horizon;
            break;
        }
        trace_mm.sample_until(t, mm.total);
        trace_min.sample_until(t, min.total);
        now = t;

        // Max-min completions first so that a document leaving both systems
        // at the same instant never shows up as a spurious violation.
        mm.complete_until(now);
        min.complete_until(now);
        if t_arr == t {
            let arrival = arrivals.pop();
            mm.arrive(arrival, next_id);
            min.arrive(arrival, next_id);
            next_id += 1;
        }
        mm.reallocate(now);
        min.reallocate(now);

        if mm
            .link_occupancy
            .iter()
            .zip(&min.link_occupancy)
            .any(|(a, b)| a > b)
        {
            violations += 1;
        }
        tally.events += 1;
        if now >= config.warmup_time {
            tally.measured_events += 1;
        }
    }
    tally.end_time = now;
    Ok(CoupledStats {
        maxmin: mm.finish(spec, &tally, trace_mm.points),
        min: min.finish(spec, &tally, trace_min.points),
        dominance_violations: violations,
    })
}

/// Independent replications with seeds `config.seed, config.seed + 1, ...`,
/// executed in parallel on the current rayon pool.
pub fn run_replications(spec: &NetworkSpec, config: &SimConfig, n: usize) -> Result<Vec<SimStats>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = SimConfig {
                seed: config.seed.wrapping_add(i),
                ..config.clone()
            };
            run(spec, &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{gen_linear, gen_star};

    #[test]
    fn cdf_of_two_point_distribution() {
        let stats = SimStats {
            policy: Policy::Min,
            link_occupancy_dist: vec![0.5, 0.5],
            mean_per_route_count: vec![],
            mean_transfer_time: vec![],
            observed_transfer_time: vec![],
            departures: vec![],
            events_processed: 0,
            measured_events: 0,
            warmup_time: 0.0,
            end_time: 1.0,
            truncated: false,
            count_trace: vec![],
        };
        assert_eq!(occupancy_cdf(&stats).unwrap(), vec![0.5, 1.0]);

        let geometric: Vec<f64> = (0..60).map(|k| 0.5f64.powi(k + 1)).collect();
        let stats = SimStats {
            link_occupancy_dist: geometric,
            ..stats
        };
        let cdf = occupancy_cdf(&stats).unwrap();
        for (k, c) in cdf.iter().enumerate().take(59) {
            assert!((c - (1.0 - 0.5f64.powi(k as i32 + 1))).abs() < 1e-15);
        }
        assert_eq!(*cdf.last().unwrap(), 1.0);

        let empty = SimStats {
            link_occupancy_dist: vec![],
            ..stats
        };
        assert!(occupancy_cdf(&empty).is_err());
    }

    /// Drives a system by hand and checks work conservation and the
    /// per-interval service accounting.
    #[test]
    fn work_is_conserved() {
        let spec = gen_star(10, 0.8, 1.0).unwrap();
        for policy in [Policy::Min, Policy::MaxMin] {
            let mut arrivals = ArrivalSource::new(&spec, 11).unwrap();
            let mut sys = FluidSystem::new(&spec, policy, 0.0);
            let capacity: f64 = spec.links.iter().map(|l| l.capacity).sum();
            let mut now = 0.0;
            for id in 0..20_000u64 {
                let t_arr = arrivals.next_time();
                let t_dep = sys.next_time();
                let t = t_arr.min(t_dep);
                let rate: f64 = sys
                    .counts
                    .iter()
                    .zip(&sys.shares)
                    .map(|(&x, s)| f64::from(x) * s)
                    .sum();
                assert!(rate <= capacity * (1.0 + 1e-9));
                now = t;
                if t_dep <= t_arr {
                    assert!(sys.complete_until(now) >= 1);
                } else {
                    sys.arrive(arrivals.pop(), id);
                }
                sys.reallocate(now);
                let gap = sys.work_in - sys.served_by(now) - sys.residual_work(now);
                assert!(
                    gap.abs() <= 1e-9 * sys.work_in.max(1.0),
                    "{policy}: gap {gap}"
                );
            }
            for r in 0..sys.counts.len() {
                sys.sync(r, now);
            }
            let residual = sys.residual_work(now);
            let err = (sys.work_in - sys.work_out - residual).abs();
            assert!(
                err < 1e-6 * sys.work_in,
                "{policy}: conservation error {err}"
            );
        }
    }

    /// The incremental share updates must agree bit for bit with a full
    /// recomputation, and every scheduled completion must sit at a
    /// non-negative residual.
    #[test]
    fn incremental_shares_match_full_allocation() {
        let specs = [
            gen_star(12, 0.9, 1.0).unwrap(),
            gen_linear(4, 1.0, 0.2, 0.5, 1.0).unwrap(),
        ];
        for spec in &specs {
            for policy in [Policy::Min, Policy::MaxMin] {
                let mut arrivals = ArrivalSource::new(spec, 5).unwrap();
                let mut sys = FluidSystem::new(spec, policy, 0.0);
                let mut full = Allocator::new(spec);
                let mut expect = vec![0.0; spec.num_routes()];
                for id in 0..5_000u64 {
                    let t_arr = arrivals.next_time();
                    let t_dep = sys.next_time();
                    let now = t_arr.min(t_dep);
                    if t_dep <= t_arr {
                        sys.complete_until(now);
                    } else {
                        sys.arrive(arrivals.pop(), id);
                    }
                    sys.reallocate(now);
                    full.allocate(policy, &sys.counts, &mut expect);
                    assert_eq!(sys.shares, expect, "{policy} after event {id}");
                    for (r, heap) in sys.docs.iter().enumerate() {
                        if let Some(Reverse(doc)) = heap.peek() {
                            let clock = sys.base[r] + sys.shares[r] * (now - sys.stamp[r]);
                            assert!(doc.finish_tag - clock >= -1e-12 * clock.abs().max(1.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let spec = gen_linear(2, 1.0, 0.1, 0.1, 1.0).unwrap();
        let mut cfg = SimConfig::with_horizon(1, Policy::Min, 10.0);
        cfg.measure_time = 0.0;
        assert!(matches!(run(&spec, &cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn event_cap_truncates() {
        let spec = gen_linear(2, 1.0, 0.3, 0.3, 1.0).unwrap();
        let mut cfg = SimConfig::with_horizon(1, Policy::Min, 1e9);
        cfg.max_events = 500;
        let stats = run(&spec, &cfg).unwrap();
        assert!(stats.truncated);
        assert_eq!(stats.events_processed, 500);
    }
}
