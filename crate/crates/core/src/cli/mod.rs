//! Command-line front end: generators, simulation, mean-field sweeps,
//! comparison reports and the heavy-traffic constant.
//!
//! Every command writes its outputs and a `<command>.manifest.json` into
//! `--out-dir`. `rerun --manifest` replays a recorded run.

mod manifest;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use manifest::{sha256_hex, RunManifest};

use crate::allocation::{self, Policy, RouteCounts};
use crate::heavy_traffic;
use crate::meanfield::{self, asym, MeanFieldProblem};
use crate::network::{self, NetworkSpec, StarRoutes};
use crate::sim::{self, SimConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "bestnet",
    version,
    about = "Best-effort network flow simulator and mean-field solver"
)]
pub struct Cli {
    /// Directory receiving outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a network spec (JSON) and print its load report.
    Gen(GenArgs),
    /// Run the fluid simulator on a spec file.
    Simulate(SimulateArgs),
    /// Solve the mean-field fixed point over a grid of loads and route lengths.
    Meanfield(MeanfieldArgs),
    /// Compare an empirical occupancy CSV with a mean-field CSV.
    Compare(CompareArgs),
    /// Compute the heavy-traffic constant A.
    ConstA(ConstAArgs),
    /// Allocate bandwidth for one configuration (debugging aid).
    Alloc(AllocArgs),
    /// Replay the run recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum PolicyArg {
    Min,
    Maxmin,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Min => Policy::Min,
            PolicyArg::Maxmin => Policy::MaxMin,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Output file name inside the output directory.
    #[arg(long, global = true, default_value = "network.json")]
    pub output: String,

    #[command(subcommand)]
    pub kind: GenKind,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum GenKind {
    Linear {
        #[arg(long)]
        links: usize,
        #[arg(long, default_value_t = 1.0)]
        capacity: f64,
        #[arg(long)]
        lambda_long: f64,
        #[arg(long)]
        lambda_short: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    Star {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Also route each branch to itself, so every link carries N/2
        /// routes and has load exactly rho.
        #[arg(long)]
        all_pairs: bool,
    },
    AsymStar {
        #[arg(long)]
        n_in: usize,
        #[arg(long)]
        n_out: usize,
        #[arg(long, default_value_t = 1.0)]
        c_in: f64,
        #[arg(long, default_value_t = 1.0)]
        c_out: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    Hypercube {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        route_len: usize,
        #[arg(long, default_value_t = 0.9)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Network spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_enum, default_value = "min")]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Total simulated time; the first 20% is warm-up.
    #[arg(long, conflicts_with = "measure")]
    pub horizon: Option<f64>,
    /// Warm-up time (with --measure); defaults to a quarter of --measure.
    #[arg(long, requires = "measure")]
    pub warmup: Option<f64>,
    /// Length of the measurement window.
    #[arg(long)]
    pub measure: Option<f64>,
    #[arg(long)]
    pub max_events: Option<u64>,
    /// Simulate max-min and min on shared arrivals and count dominance violations.
    #[arg(long, conflicts_with = "replications")]
    pub coupled: bool,
    /// Independent replications with seeds seed, seed+1, ...
    #[arg(long)]
    pub replications: Option<usize>,
    /// Sample the total number of documents on this period.
    #[arg(long)]
    pub trace_interval: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct MeanfieldArgs {
    /// Loads, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub rho: Vec<f64>,
    /// Route lengths, comma separated.
    #[arg(long = "L", value_delimiter = ',')]
    pub route_len: Vec<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Asymmetric star: inbound load.
    #[arg(long, requires_all = ["rho_out", "c_ratio"], conflicts_with_all = ["rho", "route_len"])]
    pub rho_in: Option<f64>,
    /// Asymmetric star: outbound load.
    #[arg(long, requires = "rho_in")]
    pub rho_out: Option<f64>,
    /// Asymmetric star: C_out / C_in.
    #[arg(long, requires = "rho_in")]
    pub c_ratio: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// Occupancy CSV from `simulate` (columns k,prob,...).
    pub sim_csv: PathBuf,
    /// Solution CSV from `meanfield` (columns k,alpha,...).
    pub mf_csv: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ConstAArgs {
    #[arg(long, default_value_t = heavy_traffic::DEFAULT_RTOL)]
    pub tol: f64,
    #[arg(long, default_value_t = heavy_traffic::DEFAULT_Z_END)]
    pub z_end: f64,
    /// Also write the trajectory as const_a.csv.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct AllocArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Per-route counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub counts: Vec<u32>,
    #[arg(long, value_enum, default_value = "maxmin")]
    pub policy: PolicyArg,
}

#[derive(Debug, Args, Serialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Compare the new outputs byte-for-byte with the recorded ones.
    #[arg(long)]
    pub verify: bool,
}

/// Result of comparing two occupancy distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub sup_cdf_distance: f64,
    /// Simulated mean minus mean-field mean.
    pub mean_diff: f64,
    pub sim_mean: f64,
    pub mf_mean: f64,
}

/// Sup distance between the CDFs of two probability vectors indexed from
/// 0, the shorter one padded with zeros.
pub fn compare_distributions(sim: &[f64], mf: &[f64]) -> CompareReport {
    let n = sim.len().max(mf.len());
    let (mut cs, mut cm, mut sup) = (0.0, 0.0, 0.0f64);
    let (mut ms, mut mm) = (0.0, 0.0);
    for k in 0..n {
        let a = sim.get(k).copied().unwrap_or(0.0);
        let b = mf.get(k).copied().unwrap_or(0.0);
        cs += a;
        cm += b;
        sup = sup.max((cs - cm).abs());
        ms += k as f64 * a;
        mm += k as f64 * b;
    }
    CompareReport {
        sup_cdf_distance: sup,
        mean_diff: ms - mm,
        sim_mean: ms,
        mf_mean: mm,
    }
}

/// Reads a probability mass function from a CSV with a `k` column and a
/// `prob` or `alpha` column.
pub fn read_distribution_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let k_col =
        col("k").ok_or_else(|| Error::Validation(format!("{}: no `k` column", path.display())))?;
    let p_col = col("prob").or_else(|| col("alpha")).ok_or_else(|| {
        Error::Validation(format!("{}: no `prob` or `alpha` column", path.display()))
    })?;
    let mut pmf = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let k: usize = parse(k_col)
            .parse()
            .map_err(|e| Error::Validation(format!("{}: bad k: {e}", path.display())))?;
        let p: f64 = parse(p_col)
            .parse()
            .map_err(|e| Error::Validation(format!("{}: bad probability: {e}", path.display())))?;
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::Validation(format!(
                "{}: negative probability at k={k}",
                path.display()
            )));
        }
        if pmf.len() <= k {
            pmf.resize(k + 1, 0.0);
        }
        pmf[k] += p;
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!(
            "{}: probabilities sum to {total}, not 1",
            path.display()
        )));
    }
    Ok(pmf)
}

fn params<T: Serialize>(args: &T) -> Result<BTreeMap<String, serde_json::Value>> {
    Ok(match serde_json::to_value(args)? {
        serde_json::Value::Object(map) => map.into_iter().collect(),
        other => BTreeMap::from([("value".to_string(), other)]),
    })
}

/// Drops `--out-dir X` / `--out-dir=X` so a manifest can be replayed elsewhere.
pub fn strip_out_dir(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out-dir" {
            skip = true;
        } else if !a.starts_with("--out-dir=") {
            out.push(a.clone());
        }
    }
    out
}

struct Ctx {
    out_dir: PathBuf,
    args: Vec<String>,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.outputs.push(PathBuf::from(name));
        Ok(BufWriter::new(File::create(self.out_dir.join(name))?))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.outputs.push(PathBuf::from(name));
        std::fs::write(
            self.out_dir.join(name),
            serde_json::to_string_pretty(value)? + "\n",
        )?;
        Ok(())
    }

    fn finish<T: Serialize>(
        self,
        command: &str,
        args: &T,
        input_hash: String,
        seed: u64,
    ) -> Result<PathBuf> {
        RunManifest {
            command: command.to_string(),
            parameters: params(args)?,
            input_hash,
            output_paths: self.outputs,
            seed,
            timestamp: manifest::now(),
            args: self.args,
        }
        .write(&self.out_dir)
    }
}

/// Parses `argv` (without the program name) and runs the command.
pub fn run_args(argv: &[String]) -> Result<()> {
    let cli =
        Cli::try_parse_from(std::iter::once("bestnet".to_string()).chain(argv.iter().cloned()))
            .map_err(|e| Error::Validation(e.to_string()))?;
    run(cli, strip_out_dir(argv))
}

/// Runs a parsed command; `args` is what gets recorded in the manifest.
pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    std::fs::create_dir_all(&cli.out_dir)?;
    let ctx = Ctx {
        out_dir: cli.out_dir.clone(),
        args,
        outputs: Vec::new(),
    };
    match cli.command {
        Command::Gen(a) => cmd_gen(ctx, a),
        Command::Simulate(a) => cmd_simulate(ctx, a),
        Command::Meanfield(a) => cmd_meanfield(ctx, a),
        Command::Compare(a) => cmd_compare(ctx, a),
        Command::ConstA(a) => cmd_const_a(ctx, a),
        Command::Alloc(a) => cmd_alloc(ctx, a),
        Command::Rerun(a) => cmd_rerun(&cli.out_dir, a),
    }
}

fn cmd_gen(mut ctx: Ctx, a: GenArgs) -> Result<()> {
    let spec = match a.kind {
        GenKind::Linear {
            links,
            capacity,
            lambda_long,
            lambda_short,
            sigma,
        } => network::gen_linear(links, capacity, lambda_long, lambda_short, sigma)?,
        GenKind::Star {
            n,
            rho,
            sigma,
            all_pairs,
        } => {
            let pairs = if all_pairs {
                StarRoutes::AllBranchPairs
            } else {
                StarRoutes::DistinctBranches
            };
            network::gen_star_with(n, rho, sigma, pairs)?
        }
        GenKind::AsymStar {
            n_in,
            n_out,
            c_in,
            c_out,
            lambda,
            sigma,
        } => network::gen_asym_star(n_in, n_out, c_in, c_out, lambda, sigma)?,
        GenKind::Hypercube {
            d,
            route_len,
            rho,
            sigma,
        } => network::gen_hypercube(d, route_len, rho, sigma)?,
    };
    let report = network::compute_link_loads(&spec)?;
    let json = spec.to_json()?;
    ctx.outputs.push(PathBuf::from(&a.output));
    std::fs::write(ctx.out_dir.join(&a.output), &json)?;
    println!(
        "{}: {} links, {} routes, max load {:.6}, {:?}",
        spec.label,
        spec.num_links(),
        spec.num_routes(),
        report.max_load,
        report.classification
    );
    ctx.write_json("gen.load.json", &report)?;
    let hash = sha256_hex(json.as_bytes());
    ctx.finish("gen", &a, hash, 0)?;
    Ok(())
}

fn read_spec(path: &Path) -> Result<(NetworkSpec, String)> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Validation(format!("{}: not UTF-8: {e}", path.display())))?;
    let spec = NetworkSpec::from_json(&text)?;
    Ok((spec, sha256_hex(text.as_bytes())))
}

fn sim_config(a: &SimulateArgs) -> Result<SimConfig> {
    let policy = a.policy.into();
    let mut config = match (a.horizon, a.measure) {
        (Some(h), None) => SimConfig::with_horizon(a.seed, policy, h),
        (None, Some(m)) => SimConfig {
            warmup_time: a.warmup.unwrap_or(0.25 * m),
            measure_time: m,
            ..SimConfig::with_horizon(a.seed, policy, 1.0)
        },
        _ => {
            return Err(Error::Parameter(
                "give either --horizon or --measure".into(),
            ))
        }
    };
    if let Some(n) = a.max_events {
        config.max_events = n;
    }
    config.trace_interval = a.trace_interval;
    Ok(config)
}

fn write_trace(ctx: &mut Ctx, name: &str, stats: &sim::SimStats) -> Result<()> {
    if stats.count_trace.is_empty() {
        return Ok(());
    }
    let mut w = csv::Writer::from_writer(ctx.create(name)?);
    w.write_record(["time", "total"])?;
    for p in &stats.count_trace {
        w.write_record([p.time.to_string(), p.total.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn summarize(stats: &sim::SimStats) {
    println!(
        "{}: mean link occupancy {:.4}, {} measured events{}",
        stats.policy,
        stats.mean_link_occupancy(),
        stats.measured_events,
        if stats.truncated {
            " (truncated by event cap)"
        } else {
            ""
        }
    );
}

fn cmd_simulate(mut ctx: Ctx, a: SimulateArgs) -> Result<()> {
    let (spec, hash) = read_spec(&a.spec)?;
    let config = sim_config(&a)?;
    let mut violations = 0;
    if a.coupled {
        let stats = sim::run_coupled(&spec, &config)?;
        stats
            .maxmin
            .write_occupancy_csv(ctx.create("simulate_maxmin.csv")?)?;
        stats
            .min
            .write_occupancy_csv(ctx.create("simulate_min.csv")?)?;
        write_trace(&mut ctx, "simulate_maxmin_trace.csv", &stats.maxmin)?;
        write_trace(&mut ctx, "simulate_min_trace.csv", &stats.min)?;
        ctx.write_json("simulate.json", &stats)?;
        summarize(&stats.maxmin);
        summarize(&stats.min);
        println!("dominance violations: {}", stats.dominance_violations);
        violations = stats.dominance_violations;
    } else if let Some(n) = a.replications {
        let reps = sim::run_replications(&spec, &config, n)?;
        for (i, stats) in reps.iter().enumerate() {
            stats.write_occupancy_csv(ctx.create(&format!("simulate_rep{i}.csv"))?)?;
            write_trace(&mut ctx, &format!("simulate_rep{i}_trace.csv"), stats)?;
            summarize(stats);
        }
        ctx.write_json("simulate.json", &reps)?;
    } else {
        let stats = sim::run(&spec, &config)?;
        stats.write_occupancy_csv(ctx.create("simulate.csv")?)?;
        write_trace(&mut ctx, "simulate_trace.csv", &stats)?;
        ctx.write_json("simulate.json", &stats)?;
        summarize(&stats);
    }
    let seed = a.seed;
    ctx.finish("simulate", &a, hash, seed)?;
    if violations > 0 {
        return Err(Error::Invariant(format!(
            "{violations} events with max-min link occupancy above min"
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MeanfieldSummary {
    rho: f64,
    route_len: usize,
    mean: f64,
    alpha_bar: f64,
    k0: usize,
    peak: usize,
    k_max: usize,
    iterations: usize,
    residual: f64,
    tail_mass: f64,
    csv: String,
}

fn configure(mut p: MeanFieldProblem, a: &MeanfieldArgs) -> MeanFieldProblem {
    if let Some(k) = a.k_max {
        p.k_max = k;
    }
    if let Some(t) = a.tol {
        p.tol = t;
    }
    if let Some(d) = a.damping {
        p.damping = d;
    }
    if let Some(m) = a.max_iters {
        p.max_iters = m;
    }
    p
}

fn cmd_meanfield(mut ctx: Ctx, a: MeanfieldArgs) -> Result<()> {
    let hash = sha256_hex(serde_json::to_string(&a)?.as_bytes());
    if let (Some(rho_in), Some(rho_out), Some(c_ratio)) = (a.rho_in, a.rho_out, a.c_ratio) {
        let mut p = asym::AsymStarProblem::new(rho_in, rho_out, c_ratio);
        if let Some(k) = a.k_max {
            p.k_max = k;
        }
        if let Some(t) = a.tol {
            p.tol = t;
        }
        if let Some(d) = a.damping {
            p.damping = d;
        }
        if let Some(m) = a.max_iters {
            p.max_iters = m;
        }
        let sol = asym::solve_asym_star(&p)?;
        let mut w = csv::Writer::from_writer(ctx.create("meanfield_asym.csv")?);
        w.write_record(["k", "alpha_in", "alpha_out", "u_in", "u_out"])?;
        for k in 0..=sol.k_max {
            w.write_record([
                k.to_string(),
                sol.alpha_in[k].to_string(),
                sol.alpha_out[k].to_string(),
                sol.u_in[k].to_string(),
                sol.u_out[k].to_string(),
            ])?;
        }
        w.flush()?;
        drop(w);
        println!(
            "asym star: mean in {:.4}, mean out {:.4}, {} iterations",
            sol.alpha_bar_in, sol.alpha_bar_out, sol.iterations
        );
        ctx.write_json("meanfield.json", &sol)?;
        ctx.finish("meanfield", &a, hash, 0)?;
        return Ok(());
    }

    if a.rho.is_empty() || a.route_len.is_empty() {
        return Err(Error::Parameter(
            "give --rho and --L (or the asymmetric-star flags)".into(),
        ));
    }
    let grid: Vec<(f64, usize)> = a
        .rho
        .iter()
        .flat_map(|&r| a.route_len.iter().map(move |&l| (r, l)))
        .collect();
    let solutions = grid
        .par_iter()
        .map(|&(rho, l)| {
            meanfield::fixed_point_solve(&configure(MeanFieldProblem::new(rho, l), &a))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    for sol in &solutions {
        let name = format!("meanfield_rho{}_L{}.csv", sol.rho, sol.route_len);
        sol.write_csv(ctx.create(&name)?)?;
        let peak = meanfield::peak_index(sol);
        println!(
            "rho {} L {}: mean {:.4}, k0 {}, peak {}, {} iterations",
            sol.rho, sol.route_len, sol.mean, sol.k0, peak, sol.iterations
        );
        summary.push(MeanfieldSummary {
            rho: sol.rho,
            route_len: sol.route_len,
            mean: sol.mean,
            alpha_bar: sol.alpha_bar,
            k0: sol.k0,
            peak,
            k_max: sol.k_max,
            iterations: sol.iterations,
            residual: sol.residual,
            tail_mass: sol.tail_mass,
            csv: name,
        });
    }
    ctx.write_json("meanfield.json", &summary)?;
    ctx.finish("meanfield", &a, hash, 0)?;
    Ok(())
}

fn cmd_compare(mut ctx: Ctx, a: CompareArgs) -> Result<()> {
    let mut bytes = std::fs::read(&a.sim_csv)?;
    bytes.extend(std::fs::read(&a.mf_csv)?);
    let report = compare_distributions(
        &read_distribution_csv(&a.sim_csv)?,
        &read_distribution_csv(&a.mf_csv)?,
    );
    println!(
        "sup CDF distance {:.6}, mean difference {:.6} (sim {:.4}, mean field {:.4})",
        report.sup_cdf_distance, report.mean_diff, report.sim_mean, report.mf_mean
    );
    ctx.write_json("compare.json", &report)?;
    ctx.finish("compare", &a, sha256_hex(&bytes), 0)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ConstAReport {
    a: f64,
    a_integral: f64,
    a_limit: f64,
    blasius_residual: f64,
    z_last: f64,
    step_stats: heavy_traffic::StepStats,
}

fn cmd_const_a(mut ctx: Ctx, a: ConstAArgs) -> Result<()> {
    let sol = heavy_traffic::solve_cv_system(a.z_end, a.tol)?;
    let estimate = heavy_traffic::estimate_a(&sol)?;
    let report = ConstAReport {
        a: estimate,
        a_integral: sol.a_integral,
        a_limit: sol.a_limit,
        blasius_residual: heavy_traffic::blasius_residual(&sol)?,
        z_last: *sol.grid.last().expect("nonempty"),
        step_stats: sol.step_stats.clone(),
    };
    println!(
        "A = {:.8} (integral {:.8}, limit {:.8}), Blasius residual {:.2e}",
        report.a, report.a_integral, report.a_limit, report.blasius_residual
    );
    if a.csv {
        sol.write_csv(ctx.create("const_a.csv")?)?;
    }
    ctx.write_json("const_a.json", &report)?;
    let hash = sha256_hex(serde_json::to_string(&a)?.as_bytes());
    ctx.finish("const-a", &a, hash, 0)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AllocReport {
    policy: Policy,
    counts: Vec<u32>,
    shares: Vec<f64>,
    link_occupancy: Vec<u64>,
    feasible: bool,
    maxmin_conditions: Option<bool>,
}

fn cmd_alloc(mut ctx: Ctx, a: AllocArgs) -> Result<()> {
    let (spec, hash) = read_spec(&a.spec)?;
    let counts = RouteCounts(a.counts.clone());
    let policy: Policy = a.policy.into();
    let alloc = allocation::alloc(&spec, &counts, policy)?;
    let feasible = allocation::verify_feasibility(&spec, &counts, &alloc);
    let maxmin_conditions = (policy == Policy::MaxMin)
        .then(|| allocation::verify_maxmin_conditions(&spec, &counts, &alloc));
    let report = AllocReport {
        policy,
        link_occupancy: counts.link_occupancy(&spec),
        counts: counts.0,
        shares: alloc.shares,
        feasible,
        maxmin_conditions,
    };
    println!("{}", serde_json::to_string(&report)?);
    ctx.write_json("alloc.json", &report)?;
    ctx.finish("alloc", &a, hash, 0)?;
    if !feasible || maxmin_conditions == Some(false) {
        return Err(Error::Invariant("allocation failed its own checks".into()));
    }
    Ok(())
}

fn cmd_rerun(out_dir: &Path, a: RerunArgs) -> Result<()> {
    let recorded = RunManifest::read(&a.manifest)?;
    let source_dir = a
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let originals = if a.verify {
        recorded
            .output_paths
            .iter()
            .map(|p| Ok((p.clone(), std::fs::read(source_dir.join(p))?)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut argv = recorded.args.clone();
    argv.push("--out-dir".into());
    argv.push(out_dir.display().to_string());
    let cli = Cli::try_parse_from(std::iter::once("bestnet".to_string()).chain(argv))
        .map_err(|e| Error::Validation(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Error::Validation("manifest records a rerun".into()));
    }
    run(cli, recorded.args)?;
    for (path, before) in originals {
        let after = std::fs::read(out_dir.join(&path))?;
        if after != before {
            return Err(Error::Invariant(format!(
                "{} differs from the recorded run",
                path.display()
            )));
        }
    }
    if a.verify {
        println!("all {} outputs reproduced", recorded.output_paths.len());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_comparison_is_zero() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let r = compare_distributions(&p, &p);
        assert_eq!(r.sup_cdf_distance, 0.0);
        assert_eq!(r.mean_diff, 0.0);
    }

    #[test]
    fn mismatched_lengths_are_padded() {
        let r = compare_distributions(&[0.5, 0.5], &[0.5, 0.25, 0.25]);
        assert!((r.sup_cdf_distance - 0.25).abs() < 1e-15);
        assert!((r.mean_diff - (0.5 - 0.75)).abs() < 1e-15);
    }

    #[test]
    fn out_dir_is_stripped() {
        let argv: Vec<String> = ["--out-dir", "x", "gen", "--out-dir=y", "star"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            strip_out_dir(&argv),
            vec!["gen".to_string(), "star".to_string()]
        );
    }
}
