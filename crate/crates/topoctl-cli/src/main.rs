//! `topoctl` — incremental kTC topology control, rule refinement and WSN
//! simulation from the command line.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 consistency
//! check failure. Errors go to stderr with a machine-parsable `E<code>:`
//! prefix. File outputs are written atomically (temp file + rename).

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use topoctl_core::ktc::{self, KtcOptions, LinkOrder};
use topoctl_core::metrics::{self, CSV_HEADER};
use topoctl_core::pattern::{check_strong_consistency, check_weak_consistency, connectivity, ConnectivityLevel};
use topoctl_core::refine::{self, ConstraintKind, RefineConfig, RuleKind};
use topoctl_core::sim::{self, SimConfig, SimMode};
use topoctl_core::{text, Topology};

#[derive(Parser)]
#[command(name = "topoctl", version, about = "Incremental kTC topology control engine and WSN simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a WSN per configuration file and emit per-TC-run CSV metrics.
    Run(RunArgs),
    /// Derive application conditions from graph constraints and categorize them.
    Refine(RefineArgs),
    /// Load a topology fixture and run the consistency and connectivity checks.
    Check(CheckArgs),
    /// Load a topology fixture, run a TC variant, dump the resulting topology.
    Tc(TcArgs),
    /// Run the boundedness micro-benchmarks.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (flat `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Inclusive seed range `a..b`; one simulation per seed.
    #[arg(long, value_name = "A..B")]
    seed_range: Option<String>,
    /// TC variant: incremental, batch or both.
    #[arg(long)]
    mode: Option<String>,
    /// kTC parameter override.
    #[arg(long)]
    k: Option<f64>,
    /// Unclassified-link processing order: weight, id or random.
    #[arg(long)]
    link_order: Option<String>,
    /// Disable the consistency checks (performance measurement mode).
    #[arg(long)]
    no_check: bool,
    /// Record zeros instead of wall-clock timings.
    #[arg(long)]
    zero_timers: bool,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary output path.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Additional `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct RefineArgs {
    /// Rule name (activation, inactivation, unclassification,
    /// node-addition, node-removal, link-addition, link-removal,
    /// weight-modification); all eight when omitted.
    #[arg(long)]
    rule: Option<String>,
    /// Constraint name (inactive-link, active-link); both when omitted.
    #[arg(long)]
    constraint: Option<String>,
    /// kTC parameter (exact decimal).
    #[arg(long, default_value = "2")]
    k: String,
    /// Candidate bound (nodes) for the counterexample search.
    #[arg(long, default_value_t = 6)]
    bound: usize,
    /// Output format: text or table.
    #[arg(long, default_value = "text")]
    format: String,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Topology fixture file.
    #[arg(long)]
    fixture: PathBuf,
    #[arg(long, default_value_t = 1.41)]
    k: f64,
}

#[derive(Args)]
struct TcArgs {
    /// Topology fixture file.
    #[arg(long)]
    fixture: PathBuf,
    #[arg(long, default_value_t = 1.41)]
    k: f64,
    /// incremental, batch or oracle.
    #[arg(long, default_value = "incremental")]
    mode: String,
    #[arg(long, default_value = "weight")]
    link_order: String,
    /// Verify the weak-consistency precondition and the rule-level
    /// equivalences while running.
    #[arg(long)]
    check_consistency: bool,
    /// Output path for the resulting topology (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1.41)]
    k: f64,
    /// Length of the cascade gadget.
    #[arg(long, default_value_t = 8)]
    gadget_len: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

/// Errors carrying the exit-code prefix convention.
struct CliError(String);

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn usage_err(msg: impl std::fmt::Display) -> CliError {
    CliError(format!("E1: {msg}"))
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Refine(args) => cmd_refine(args),
        Command::Check(args) => cmd_check(args),
        Command::Tc(args) => cmd_tc(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

/// Writes `content` to `path` atomically (temp file in the same
/// directory, then rename), or to stdout when no path is given.
fn emit(path: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match path {
        None => {
            print!("{content}");
            Ok(())
        }
        Some(p) => {
            let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let tmp = dir.join(format!(
                ".{}.tmp-{}",
                p.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
                std::process::id()
            ));
            let mut f = std::fs::File::create(&tmp).map_err(|e| usage_err(format!("cannot write {}: {e}", tmp.display())))?;
            f.write_all(content.as_bytes()).map_err(|e| usage_err(format!("write failed: {e}")))?;
            f.sync_all().ok();
            std::fs::rename(&tmp, p).map_err(|e| usage_err(format!("rename failed: {e}")))?;
            Ok(())
        }
    }
}

fn parse_seed_range(s: &str) -> Result<std::ops::RangeInclusive<u64>, CliError> {
    let (a, b) = s.split_once("..").ok_or_else(|| usage_err(format!("bad seed range `{s}` (expected a..b)")))?;
    let a: u64 = a.parse().map_err(|_| usage_err(format!("bad seed range `{s}`")))?;
    let b: u64 = b.parse().map_err(|_| usage_err(format!("bad seed range `{s}`")))?;
    if a > b {
        return Err(usage_err(format!("empty seed range `{s}`")));
    }
    Ok(a..=b)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let content = std::fs::read_to_string(path)
                .map_err(|e| usage_err(format!("cannot read {}: {e}", path.display())))?;
            SimConfig::parse(&content).map_err(usage_err)?
        }
        None => SimConfig::default(),
    };
    cfg.apply_env(std::env::vars()).map_err(usage_err)?;
    for kv in &args.sets {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage_err(format!("bad --set `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(|_| usage_err(format!("bad --set `{kv}`")))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = SimMode::parse(mode).ok_or_else(|| usage_err(format!("bad mode `{mode}`")))?;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(order) = &args.link_order {
        cfg.link_order = LinkOrder::parse(order).ok_or_else(|| usage_err(format!("bad link order `{order}`")))?;
    }
    if args.no_check {
        cfg.check = false;
    }
    if args.zero_timers {
        cfg.zero_timers = true;
    }
    cfg.validate().map_err(usage_err)?;

    let seeds: Vec<u64> = match &args.seed_range {
        Some(r) => parse_seed_range(r)?.collect(),
        None => vec![cfg.seed],
    };

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut per_seed_rows = Vec::new();
    let mut sent = 0;
    let mut dropped = 0;
    let mut final_alive_sum = 0usize;
    for &seed in &seeds {
        let mut cfg2 = cfg.clone();
        cfg2.seed = seed;
        let out = sim::run_simulation(&cfg2).map_err(|e| match e {
            sim::SimError::Consistency { .. } => CliError(format!("E2: {e}")),
            other => usage_err(other),
        })?;
        for row in &out.rows {
            csv.push_str(&row.csv_row());
            csv.push('\n');
        }
        sent += out.messages_sent;
        dropped += out.messages_dropped;
        final_alive_sum += out.final_alive;
        per_seed_rows.push(out.rows);
    }
    let _ = final_alive_sum;
    emit(&args.out, &csv)?;
    if args.summary.is_some() {
        let name = args
            .config
            .as_ref()
            .and_then(|p| p.file_stem())
            .and_then(|s| s.to_str())
            .unwrap_or("default")
            .to_string();
        let summary = metrics::summarize(&name, &seeds, &per_seed_rows, sent, dropped);
        let json = serde_json::to_string_pretty(&summary).map_err(|e| usage_err(e))?;
        emit(&args.summary, &format!("{json}\n"))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_refine(args: RefineArgs) -> Result<ExitCode, CliError> {
    let cfg = RefineConfig::from_decimal_k(&args.k)
        .ok_or_else(|| usage_err(format!("bad k `{}` (decimal >= 1 expected)", args.k)))?;
    let cfg = RefineConfig { bound: args.bound, ..cfg };
    let rules: Vec<RuleKind> = match &args.rule {
        Some(r) => vec![RuleKind::parse(r).ok_or_else(|| usage_err(format!("unknown rule `{r}`")))?],
        None => RuleKind::ALL.to_vec(),
    };
    let constraints: Vec<ConstraintKind> = match &args.constraint {
        Some(c) => vec![ConstraintKind::parse(c).ok_or_else(|| usage_err(format!("unknown constraint `{c}`")))?],
        None => ConstraintKind::ALL.to_vec(),
    };
    let mut out = String::new();
    for rule in &rules {
        for constraint in &constraints {
            if *rule == RuleKind::NodeRemoval {
                // empty RHS: nothing overlaps, nothing to derive
                let _ = writeln!(out, "{} x {}: 0 gluings", rule.label(), constraint.label());
                continue;
            }
            let conditions = refine::refine_pair(*rule, *constraint, &cfg).map_err(usage_err)?;
            match args.format.as_str() {
                "table" => out.push_str(&refine::render_table(&conditions)),
                "text" => {
                    out.push_str(&refine::render_report(&conditions));
                    out.push('\n');
                }
                other => return Err(usage_err(format!("unknown format `{other}`"))),
            }
        }
    }
    emit(&args.out, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn load_fixture(path: &PathBuf) -> Result<Topology, CliError> {
    let content =
        std::fs::read_to_string(path).map_err(|e| usage_err(format!("cannot read {}: {e}", path.display())))?;
    text::from_text(&content).map_err(|e| usage_err(format!("{}: {e}", path.display())))
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode, CliError> {
    let t = load_fixture(&args.fixture)?;
    let weak = check_weak_consistency(&t, args.k);
    let strong = check_strong_consistency(&t, args.k);
    println!("{}", weak.render());
    println!("{}", strong.render());
    for (label, level) in [
        ("physical", ConnectivityLevel::Physical),
        ("weak", ConnectivityLevel::Weak),
        ("strong", ConnectivityLevel::Strong),
    ] {
        println!("{label} connectivity: {}", connectivity(&t, level));
    }
    if weak.fulfilled {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("E2: weak consistency violated");
        Ok(ExitCode::from(2))
    }
}

fn cmd_tc(args: TcArgs) -> Result<ExitCode, CliError> {
    let mut t = load_fixture(&args.fixture)?;
    let order = LinkOrder::parse(&args.link_order)
        .ok_or_else(|| usage_err(format!("bad link order `{}`", args.link_order)))?;
    let mut opts = KtcOptions::new(args.k);
    opts.order = order;
    opts.check = args.check_consistency;
    match args.mode.as_str() {
        "incremental" => {
            ktc::incremental_ktc(&mut t, &opts).map_err(|e| CliError(format!("E2: {e}")))?;
        }
        "batch" => {
            ktc::batch_ktc(&mut t, &opts).map_err(|e| CliError(format!("E2: {e}")))?;
        }
        "oracle" => {
            let states = ktc::oracle_ktc(&t, args.k);
            for (e, s) in states {
                t.set_state(e, s, topoctl_core::topology::ModificationCause::TcInvocation)
                    .map_err(usage_err)?;
            }
        }
        other => return Err(usage_err(format!("unknown tc mode `{other}`"))),
    }
    emit(&args.out, &text::to_text(&t))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, CliError> {
    let records = metrics::micro_boundedness_suite(args.k, args.gadget_len);
    print!("{}", metrics::render_boundedness(&records));
    Ok(ExitCode::SUCCESS)
}
