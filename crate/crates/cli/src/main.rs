//! Command-line driver around the scheduling library: simulate a policy over
//! an instance file, price instances offline, play the adaptive lower-bound
//! game, audit runs against their charge ledgers, generate seeded instances,
//! and benchmark empirical ratios over instance families.
//!
//! Exit codes: 0 on success, 1 when a bound or audit is violated (or a run
//! fails), 2 on usage errors. All outputs are deterministic functions of the
//! arguments; `--json` switches stdout to compact machine-readable form.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use pktsched::adversary::{
    full_game_profits, gen_random_sbounded, lb_weights, run_lb_adversary, stopped_profits,
    ExpiringFirst, LbParams, WeightDist,
};
use pktsched::audit::{
    lcalpha_charges, toggleh_charges, verify_lcalpha, verify_toggleh, AuditReport,
};
use pktsched::constants::{lc_constants, phi, sqrt3};
use pktsched::domain::Instance;
use pktsched::engine::{run, Lookahead, OnlinePolicy};
use pktsched::offline::{brute_force_optimal, optimal_schedule};
use pktsched::policies::{EdfAlpha, Greedy, LcAlpha, ToggleH};

#[derive(Parser)]
#[command(name = "pktsched", version, about = "Online bounded-delay packet scheduling toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an online policy over an instance file and report the outcome.
    Simulate(SimulateArgs),
    /// Compute the exact offline optimum of an instance file.
    Opt(OptArgs),
    /// Play the adaptive lower-bound game against a policy.
    Lowerbound(LowerboundArgs),
    /// Rebuild a run's charge ledger and verify it against the bound.
    Audit(AuditArgs),
    /// Generate a seeded random s-bounded instance.
    Gen(GenArgs),
    /// Measure empirical ratios over a seeded instance family.
    Bench(BenchArgs),
}

/// Algorithm selector: `greedy`, `edf:phi`, `edf:sqrt3`, `edf:<threshold>`,
/// `toggleh`, `lcalpha`, or `expiring`.
#[derive(Debug, Clone, PartialEq)]
enum AlgSpec {
    Greedy,
    Edf(f64),
    ToggleH,
    LcAlpha,
    Expiring,
}

impl FromStr for AlgSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(AlgSpec::Greedy),
            "toggleh" => Ok(AlgSpec::ToggleH),
            "lcalpha" => Ok(AlgSpec::LcAlpha),
            "expiring" => Ok(AlgSpec::Expiring),
            _ => match s.strip_prefix("edf:") {
                Some("phi") => Ok(AlgSpec::Edf(phi())),
                Some("sqrt3") => Ok(AlgSpec::Edf(sqrt3())),
                Some(num) => match num.parse::<f64>() {
                    Ok(a) if a.is_finite() && a >= 1.0 => Ok(AlgSpec::Edf(a)),
                    _ => Err(format!("EDF threshold {num:?} must be a finite number >= 1")),
                },
                None => Err(format!(
                    "unknown algorithm {s:?} (expected greedy, edf:phi, edf:sqrt3, edf:<num>, toggleh, lcalpha, or expiring)"
                )),
            },
        }
    }
}

impl AlgSpec {
    fn build(&self) -> Box<dyn OnlinePolicy> {
        match self {
            AlgSpec::Greedy => Box::new(Greedy),
            AlgSpec::Edf(a) => Box::new(EdfAlpha::new(*a).expect("threshold checked at parse time")),
            AlgSpec::ToggleH => Box::new(ToggleH::new()),
            AlgSpec::LcAlpha => Box::new(LcAlpha::new()),
            AlgSpec::Expiring => Box::new(ExpiringFirst),
        }
    }

    fn name(&self) -> String {
        self.build().name()
    }

    fn default_lookahead(&self) -> Lookahead {
        if matches!(self, AlgSpec::LcAlpha) { Lookahead::One } else { Lookahead::Zero }
    }

    /// Window bound of the instance family the algorithm's guarantee covers.
    fn default_s(&self) -> u32 {
        match self {
            AlgSpec::Greedy | AlgSpec::LcAlpha | AlgSpec::Expiring => 2,
            AlgSpec::ToggleH => 4,
            AlgSpec::Edf(a) if *a == sqrt3() => 4,
            AlgSpec::Edf(_) => 3,
        }
    }

    /// Proven competitive ratio on the default family, when there is one.
    fn default_bound(&self) -> Option<f64> {
        match self {
            AlgSpec::Greedy => Some(2.0),
            AlgSpec::Edf(a) => Some(*a),
            AlgSpec::ToggleH => Some(phi()),
            AlgSpec::LcAlpha => Some(lc_constants().ratio),
            AlgSpec::Expiring => None,
        }
    }
}

fn resolve_lookahead(overridden: Option<u8>, alg: &AlgSpec) -> Lookahead {
    overridden.map_or_else(
        || alg.default_lookahead(),
        |v| Lookahead::try_from(v).expect("clap restricts the range"),
    )
}

#[derive(Args)]
struct SimulateArgs {
    /// Algorithm to run.
    #[arg(long)]
    alg: AlgSpec,
    /// Slots of lookahead (defaults to the algorithm's natural setting).
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    lookahead: Option<u8>,
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Write the full step-by-step trace JSON here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Compact machine-readable stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OptArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Use the small brute-force oracle instead of the matching solver.
    #[arg(long)]
    oracle: bool,
    /// Compact machine-readable stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct LowerboundArgs {
    /// Policy the adversary plays against.
    #[arg(long)]
    alg: AlgSpec,
    /// Number of phases.
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Weight-sequence perturbation.
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    /// Write the full report JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Compact machine-readable stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AuditAlg {
    Toggleh,
    Lcalpha,
}

#[derive(Args)]
struct AuditArgs {
    /// Audited algorithm (only the two with charge schemes).
    #[arg(long)]
    alg: AuditAlg,
    /// Instance JSON file to replay and audit.
    #[arg(long)]
    instance: PathBuf,
    /// Additionally audit this many seeded random instances.
    #[arg(long, value_name = "N")]
    seed_fuzz: Option<u64>,
    /// Compact machine-readable stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistArg {
    Uniform,
    Exp,
}

impl From<DistArg> for WeightDist {
    fn from(d: DistArg) -> WeightDist {
        match d {
            DistArg::Uniform => WeightDist::Uniform,
            DistArg::Exp => WeightDist::Exp,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Window bound: every deadline within s-1 slots of the release.
    #[arg(long)]
    s: u32,
    /// Number of packets.
    #[arg(long)]
    count: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Releases are drawn from [0, horizon).
    #[arg(long, default_value_t = 12)]
    horizon: i64,
    /// Weight distribution.
    #[arg(long, value_enum, default_value_t = DistArg::Uniform)]
    dist: DistArg,
    /// Write the instance here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compact machine-readable stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Algorithm to measure.
    #[arg(long)]
    alg: AlgSpec,
    /// Window bound of the family (defaults to the algorithm's guarantee).
    #[arg(long)]
    s: Option<u32>,
    /// Number of instances.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Base seed; instance i uses seed base+i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fix every instance to this many packets (default: cycle 1..=30).
    #[arg(long)]
    count: Option<usize>,
    /// Fix every release range to [0, horizon) (default: cycle 1..=12).
    #[arg(long)]
    horizon: Option<i64>,
    /// Ratio bound to count violations against (defaults to the proven one).
    #[arg(long)]
    bound: Option<f64>,
    /// Slots of lookahead (defaults to the algorithm's natural setting).
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    lookahead: Option<u8>,
    /// Write per-instance rows here as `instance_id,alg,opt,ratio`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the aggregate report JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the worst instance found here.
    #[arg(long)]
    save_worst: Option<PathBuf>,
    /// Compact machine-readable stdout.
    #[arg(long)]
    json: bool,
}

/// Constants stamped into every report so downstream plots are
/// self-describing.
#[derive(Serialize)]
struct Constants {
    phi: f64,
    sqrt3: f64,
    lc_alpha: f64,
    lc_delta: f64,
    lc_ratio: f64,
    lb_target: f64,
}

fn constants() -> Constants {
    let lc = lc_constants();
    Constants {
        phi: phi(),
        sqrt3: sqrt3(),
        lc_alpha: lc.alpha,
        lc_delta: lc.delta,
        lc_ratio: lc.ratio,
        lb_target: (1.0 + 17.0_f64.sqrt()) / 4.0,
    }
}

/// 17 significant digits, for the human-readable summaries.
fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

fn read_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Instance::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Prints one stdout line, treating a closed pipe as a normal exit so
/// `pktsched ... | head` stays quiet.
fn print_out(text: &str) {
    use std::io::Write;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let done = lock.write_all(text.as_bytes()).and_then(|()| lock.write_all(b"\n"));
    if let Err(e) = done {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("failed printing to stdout: {e}");
    }
}

fn emit<T: Serialize>(value: &T, compact: bool) -> Result<()> {
    let text =
        if compact { serde_json::to_string(value)? } else { serde_json::to_string_pretty(value)? };
    print_out(&text);
    Ok(())
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

/// The seeded family used by `bench` and the audit fuzz: shapes cycle with
/// the index unless pinned, weights follow the per-instance seed.
fn family_instance(
    base_seed: u64,
    i: u64,
    s: u32,
    count: Option<usize>,
    horizon: Option<i64>,
) -> Instance {
    let count = count.unwrap_or(1 + (i as usize % 30));
    let horizon = horizon.unwrap_or(1 + (i as i64 % 12));
    let dist = if i % 2 == 0 { WeightDist::Uniform } else { WeightDist::Exp };
    gen_random_sbounded(base_seed + i, count, s, horizon, dist)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match &cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Opt(a) => cmd_opt(a),
        Cmd::Lowerbound(a) => cmd_lowerbound(a),
        Cmd::Audit(a) => cmd_audit(a),
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match out {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    algorithm: String,
    lookahead: u8,
    packets: usize,
    steps: usize,
    transmitted: usize,
    total_weight: f64,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let inst = read_instance(&args.instance)?;
    let lookahead = resolve_lookahead(args.lookahead, &args.alg);
    let mut policy = args.alg.build();
    let trace = run(policy.as_mut(), &inst, lookahead)?;
    if let Some(path) = &args.trace {
        fs::write(path, serde_json::to_string_pretty(&trace)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let summary = SimulateSummary {
        algorithm: trace.algorithm.clone(),
        lookahead: lookahead.into(),
        packets: inst.len(),
        steps: trace.steps.len(),
        transmitted: trace.steps.iter().filter(|s| s.real_packet().is_some()).count(),
        total_weight: trace.total_weight,
    };
    if args.json {
        emit(&summary, true)?;
    } else {
        print_out(&format!(
            "{} transmitted {} of {} packets over {} steps, total weight {}",
            summary.algorithm, summary.transmitted, summary.packets, summary.steps,
            summary.total_weight
        ));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_opt(args: &OptArgs) -> Result<ExitCode> {
    let inst = read_instance(&args.instance)?;
    let opt = if args.oracle { brute_force_optimal(&inst)? } else { optimal_schedule(&inst)? };
    emit(&opt, args.json)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FormulaCheck {
    alg_weight: f64,
    opt_weight: f64,
    ratio: f64,
    alg_matches: bool,
    opt_matches: bool,
    ratio_matches: bool,
}

#[derive(Serialize)]
struct LowerboundReport {
    algorithm: String,
    phases: usize,
    delta: f64,
    target_ratio: f64,
    k: usize,
    stopped_early: bool,
    alg_weight: f64,
    opt_weight: f64,
    ratio: f64,
    formula: FormulaCheck,
    constants: Constants,
}

fn cmd_lowerbound(args: &LowerboundArgs) -> Result<ExitCode> {
    let params = LbParams::new(args.n, args.delta)?;
    let mut policy = args.alg.build();
    let outcome = run_lb_adversary(policy.as_mut(), &params)?;

    let weights = lb_weights(&params);
    let (f_alg, f_opt) = if outcome.k < params.phases {
        stopped_profits(outcome.k, &weights)?
    } else {
        full_game_profits(&weights)
    };
    let report = LowerboundReport {
        algorithm: policy.name(),
        phases: args.n,
        delta: args.delta,
        target_ratio: params.ratio,
        k: outcome.k,
        stopped_early: outcome.stopped_early,
        alg_weight: outcome.alg_weight,
        opt_weight: outcome.opt_weight,
        ratio: outcome.ratio,
        formula: FormulaCheck {
            alg_weight: f_alg,
            opt_weight: f_opt,
            ratio: f_opt / f_alg,
            alg_matches: rel_close(outcome.alg_weight, f_alg),
            opt_matches: rel_close(outcome.opt_weight, f_opt),
            ratio_matches: rel_close(outcome.ratio, f_opt / f_alg),
        },
        constants: constants(),
    };
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if args.json {
        emit(&report, true)?;
    } else {
        print_out(&format!(
            "{} survived {} of {} phases: ratio {} (target {})",
            report.algorithm,
            report.k,
            report.phases,
            report.ratio,
            sig17(report.target_ratio)
        ));
        print_out(&format!(
            "formula cross-check: alg {} opt {} ratio {} (matches: {} {} {})",
            report.formula.alg_weight,
            report.formula.opt_weight,
            report.formula.ratio,
            report.formula.alg_matches,
            report.formula.opt_matches,
            report.formula.ratio_matches
        ));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FuzzFailure {
    seed: u64,
    report: AuditReport,
}

#[derive(Serialize)]
struct FuzzSummary {
    count: u64,
    passed: u64,
    first_failure: Option<FuzzFailure>,
}

#[derive(Serialize)]
struct AuditOutput {
    algorithm: String,
    instance: String,
    report: AuditReport,
    fuzz: Option<FuzzSummary>,
}

fn audit_one(alg: AuditAlg, inst: &Instance) -> Result<AuditReport> {
    let opt = optimal_schedule(inst)?;
    match alg {
        AuditAlg::Toggleh => {
            let trace = run(&mut ToggleH::new(), inst, Lookahead::Zero)?;
            let ledger = toggleh_charges(&trace, &opt)?;
            Ok(verify_toggleh(&ledger, &trace))
        }
        AuditAlg::Lcalpha => {
            let trace = run(&mut LcAlpha::new(), inst, Lookahead::One)?;
            let ledger = lcalpha_charges(&trace, &opt)?;
            Ok(verify_lcalpha(&ledger, &trace))
        }
    }
}

fn cmd_audit(args: &AuditArgs) -> Result<ExitCode> {
    let inst = read_instance(&args.instance)?;
    let report = audit_one(args.alg, &inst)?;
    let mut all_passed = report.passed();

    let fuzz = match args.seed_fuzz {
        None => None,
        Some(n) => {
            let s = match args.alg {
                AuditAlg::Toggleh => 4,
                AuditAlg::Lcalpha => 2,
            };
            let mut passed = 0;
            let mut first_failure = None;
            for i in 0..n {
                let fuzz_report = audit_one(args.alg, &family_instance(0, i, s, None, None))?;
                if fuzz_report.passed() {
                    passed += 1;
                } else if first_failure.is_none() {
                    first_failure = Some(FuzzFailure { seed: i, report: fuzz_report });
                }
            }
            all_passed &= passed == n;
            Some(FuzzSummary { count: n, passed, first_failure })
        }
    };

    let algorithm = report.algorithm.clone();
    let output = AuditOutput {
        algorithm,
        instance: args.instance.display().to_string(),
        report,
        fuzz,
    };
    emit(&output, args.json)?;
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_gen(args: &GenArgs) -> Result<ExitCode> {
    let inst = gen_random_sbounded(args.seed, args.count, args.s, args.horizon, args.dist.into());
    let text = if args.json {
        serde_json::to_string(&inst)?
    } else {
        serde_json::to_string_pretty(&inst)?
    };
    match &args.out {
        Some(path) => fs::write(path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => print_out(&text),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct WorstCase {
    instance_id: u64,
    seed: u64,
    alg_weight: f64,
    opt_weight: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct BenchReport {
    algorithm: String,
    s: u32,
    lookahead: u8,
    n: usize,
    seed: u64,
    bound: f64,
    max_ratio: Option<f64>,
    mean_ratio: Option<f64>,
    count_exceeding: usize,
    worst: Option<WorstCase>,
    constants: Constants,
}

struct BenchRow {
    id: u64,
    alg_weight: f64,
    opt_weight: f64,
    ratio: f64,
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("PKTSCHED_THREADS") {
        let n: usize = raw.parse().context("PKTSCHED_THREADS must be a positive integer")?;
        if n == 0 {
            bail!("PKTSCHED_THREADS must be a positive integer");
        }
        builder = builder.num_threads(n);
    }
    builder.build().context("building the worker pool")
}

fn cmd_bench(args: &BenchArgs) -> Result<ExitCode> {
    let s = args.s.unwrap_or_else(|| args.alg.default_s());
    let Some(bound) = args.bound.or_else(|| args.alg.default_bound()) else {
        eprintln!("error: {} has no proven ratio bound; pass --bound", args.alg.name());
        return Ok(ExitCode::from(2));
    };
    let lookahead = resolve_lookahead(args.lookahead, &args.alg);

    let rows = thread_pool()?.install(|| {
        (0..args.n as u64)
            .into_par_iter()
            .map(|i| -> Result<BenchRow> {
                let inst = family_instance(args.seed, i, s, args.count, args.horizon);
                let trace = run(args.alg.build().as_mut(), &inst, lookahead)?;
                let opt = optimal_schedule(&inst)?;
                let ratio = if trace.total_weight == 0.0 {
                    if opt.weight == 0.0 { 1.0 } else { f64::INFINITY }
                } else {
                    opt.weight / trace.total_weight
                };
                Ok(BenchRow { id: i, alg_weight: trace.total_weight, opt_weight: opt.weight, ratio })
            })
            .collect::<Result<Vec<BenchRow>>>()
    })?;

    if let Some(path) = &args.csv {
        let mut text = String::from("instance_id,alg,opt,ratio\n");
        for r in &rows {
            text.push_str(&format!("{},{},{},{}\n", r.id, r.alg_weight, r.opt_weight, r.ratio));
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }

    let worst = rows.iter().fold(None::<&BenchRow>, |m, r| match m {
        Some(m) if m.ratio >= r.ratio => Some(m),
        _ => Some(r),
    });
    let count_exceeding = rows.iter().filter(|r| r.ratio > bound + 1e-9).count();
    let report = BenchReport {
        algorithm: args.alg.name(),
        s,
        lookahead: lookahead.into(),
        n: args.n,
        seed: args.seed,
        bound,
        max_ratio: worst.map(|r| r.ratio),
        mean_ratio: (!rows.is_empty())
            .then(|| rows.iter().map(|r| r.ratio).sum::<f64>() / rows.len() as f64),
        count_exceeding,
        worst: worst.map(|r| WorstCase {
            instance_id: r.id,
            seed: args.seed + r.id,
            alg_weight: r.alg_weight,
            opt_weight: r.opt_weight,
            ratio: r.ratio,
        }),
        constants: constants(),
    };

    if let Some(path) = &args.save_worst {
        if let Some(w) = &report.worst {
            let inst = family_instance(args.seed, w.instance_id, s, args.count, args.horizon);
            fs::write(path, serde_json::to_string_pretty(&inst)? + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if args.json {
        emit(&report, true)?;
    } else {
        match &report.worst {
            None => print_out(&format!("{} on {}-bounded: no instances", report.algorithm, report.s)),
            Some(w) => print_out(&format!(
                "{} on {}-bounded: {} instances from seed {}, max ratio {} (instance {}), mean {}, {} exceeding bound {}",
                report.algorithm,
                report.s,
                report.n,
                report.seed,
                w.ratio,
                w.instance_id,
                report.mean_ratio.unwrap_or(f64::NAN),
                report.count_exceeding,
                sig17(report.bound)
            )),
        }
    }
    Ok(if count_exceeding == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
