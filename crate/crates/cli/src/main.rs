use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use storm_core::harness::verify::{self, Suite};
use storm_core::harness::{self, ExperimentConfig, ReportFormat};
use storm_core::policy::{Horizon, PolicySpec, RunContext};
use storm_core::seeding;
use storm_core::stream::{self, Fixture, ProbSource, StreamEvent, SyntheticTopics};

/// Environment variable naming the default directory for written files.
const OUT_DIR_VAR: &str = "STORM_OUT_DIR";

#[derive(Parser)]
#[command(name = "storm", version, about = "Streaming recommendation with on-demand visits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic item file and visit schedule.
    Gen(GenArgs),
    /// Run one policy on a fixture or on stream files.
    Run(Box<RunArgs>),
    /// Run an experiment config and write the aggregated report.
    Sweep(SweepArgs),
    /// Run a self-check suite.
    Verify(VerifyArgs),
    /// List the built-in fixtures, or print one.
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    /// Number of visits.
    #[arg(long = "T")]
    visits: usize,
    /// Size of the topic universe.
    #[arg(long, default_value_t = 40)]
    topics: u32,
    /// Topics per item, `N` or `MIN-MAX`.
    #[arg(long, default_value = "1-4")]
    topics_per_item: String,
    #[arg(long, default_value_t = 0.0)]
    prob_lo: f64,
    #[arg(long, default_value_t = 0.2)]
    prob_hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to $STORM_OUT_DIR or the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in stream: thm1-adversarial, storm-tight or appendix-c3.
    #[arg(long, conflicts_with_all = ["items", "probs", "schedule"])]
    fixture: Option<String>,
    /// Item file (`id<TAB>topics[<TAB>prob]`).
    #[arg(long, required_unless_present = "fixture")]
    items: Option<PathBuf>,
    /// Probability file (`id<TAB>prob`).
    #[arg(long)]
    probs: Option<PathBuf>,
    /// Visit schedule file (one 0/1 per line); drawn with --T when absent.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Number of visits when the schedule is drawn.
    #[arg(long = "T")]
    visits: Option<usize>,
    /// Visit upper bound; defaults to the number of visits.
    #[arg(long = "Tprime")]
    tprime: Option<usize>,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PolicySpec::NAMES))]
    policy: String,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Storm horizon: `T`, `Tprime` or a number.
    #[arg(long)]
    horizon: Option<String>,
    /// Storm++ guess spacing.
    #[arg(long)]
    delta: Option<usize>,
    /// Skip probability for Storm / Storm++ sampling.
    #[arg(long)]
    skip: Option<f64>,
    /// Stochastic-greedy sample size for LMGreedy.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Range for uniform click probabilities when the items carry none.
    #[arg(long, default_value_t = 0.0)]
    prob_lo: f64,
    #[arg(long, default_value_t = 0.2)]
    prob_hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report file; relative paths go under $STORM_OUT_DIR when set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Report file; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<ReportFormat>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_parser = ["fixtures", "properties", "ratios"])]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the check list to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FixturesArgs {
    /// Fixture to print; lists all names when absent.
    name: Option<String>,
    /// `T′` for storm-tight.
    #[arg(long = "Tprime")]
    tprime: Option<usize>,
    /// Accepted for uniformity; fixtures are fixed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Verification(String),
    Usage(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(*a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Fixtures(a) => fixtures(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn out_dir() -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_VAR).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Relative paths are placed under $STORM_OUT_DIR when it is set.
fn resolve_out(path: &Path) -> PathBuf {
    match out_dir() {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn parse_per_item(s: &str) -> Result<(u32, u32), String> {
    let bad = || format!("--topics-per-item expects N or MIN-MAX, got `{s}`");
    match s.split_once('-') {
        Some((lo, hi)) => Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

fn gen(a: GenArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&a.prob_lo) || !(0.0..=1.0).contains(&a.prob_hi) || a.prob_lo > a.prob_hi {
        return Err(Failure::Usage(format!(
            "invalid probability range [{}, {}]: need 0 <= prob-lo <= prob-hi <= 1",
            a.prob_lo, a.prob_hi
        )));
    }
    let (per_item_min, per_item_max) = parse_per_item(&a.topics_per_item)?;
    let topics = SyntheticTopics {
        topics: a.topics,
        per_item_min,
        per_item_max,
    };
    let table = topics.generate(a.n, seeding::split(a.seed, 0))?;
    let source = ProbSource::Uniform {
        lo: a.prob_lo,
        hi: a.prob_hi,
        seed: seeding::split(a.seed, 1),
    };
    let items = stream::assign_probs(&table.records, &source)?;
    let schedule = stream::make_visit_schedule(a.n, a.visits, seeding::split(a.seed, 3))?;

    let dir = a.out.or_else(out_dir).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let items_path = dir.join("items.tsv");
    let schedule_path = dir.join("schedule.txt");
    stream::write_items(&items_path, &items)?;
    stream::write_schedule(&schedule_path, &schedule)?;
    println!("wrote {} and {}", items_path.display(), schedule_path.display());
    Ok(())
}

fn policy_spec(a: &RunArgs) -> Result<PolicySpec, Failure> {
    let mut spec = PolicySpec::from_name(&a.policy)?;
    match &mut spec {
        PolicySpec::Lmgreedy { sample } => *sample = a.sample,
        PolicySpec::Storm { horizon, skip } => {
            if let Some(h) = &a.horizon {
                *horizon = match h.as_str() {
                    "T" => Horizon::Visits,
                    "Tprime" | "T'" => Horizon::Bound,
                    n => Horizon::Fixed(n.parse().map_err(|_| format!("invalid --horizon `{n}`"))?),
                };
            }
            *skip = a.skip;
        }
        PolicySpec::Stormpp { delta, skip } => {
            *delta = a.delta.ok_or("stormpp needs --delta")?;
            *skip = a.skip;
        }
        PolicySpec::Sievepp { epsilon } => *epsilon = a.epsilon.unwrap_or(*epsilon),
        PolicySpec::Preemption { c } => *c = a.c.unwrap_or(*c),
    }
    Ok(spec)
}

fn load_run_stream(a: &RunArgs) -> Result<Vec<StreamEvent>, Failure> {
    if let Some(name) = &a.fixture {
        return Ok(stream::fixture_stream(name, a.tprime)?);
    }
    let items_path = a.items.as_ref().expect("clap requires --items without --fixture");
    let table = stream::load_items(items_path)?;
    let source = match &a.probs {
        Some(p) => ProbSource::Table(stream::load_probs(p)?),
        None if !table.records.is_empty() && table.records.iter().all(|r| r.click_prob.is_some()) => {
            ProbSource::Embedded
        }
        None => ProbSource::Uniform {
            lo: a.prob_lo,
            hi: a.prob_hi,
            seed: seeding::split(a.seed, 1),
        },
    };
    let items = stream::assign_probs(&table.records, &source)?;
    let schedule = match (&a.schedule, a.visits) {
        (Some(path), _) => stream::load_schedule(path)?,
        (None, Some(t)) => stream::make_visit_schedule(items.len(), t, seeding::split(a.seed, 3))?,
        (None, None) => return Err(Failure::Usage("give either --schedule or --T".into())),
    };
    if schedule.len() != items.len() {
        return Err(Failure::Usage(format!(
            "schedule has {} entries but there are {} items",
            schedule.len(),
            items.len()
        )));
    }
    Ok(stream::build_events(items, &schedule))
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let spec = policy_spec(&a)?;
    let events = load_run_stream(&a)?;
    let visits = events.iter().filter(|e| e.visit).count();
    let visit_bound = a.tprime.unwrap_or(visits);
    if visit_bound < visits {
        return Err(Failure::Usage(format!("--Tprime {visit_bound} is below the {visits} visits in the stream")));
    }
    let ctx = RunContext {
        k: a.k,
        visits,
        visit_bound,
        seed: harness::policy_seed(a.seed),
    };
    let report = harness::run_events(&events, &spec, ctx, false)?;
    for out in &report.outputs {
        let ids: Vec<&str> = out.item_refs().map(|i| i.id()).collect();
        println!(
            "visit {}: [{}] gain={:?}",
            out.visit_index,
            ids.join(", "),
            harness::round_sig(out.gain_at_emission)
        );
    }
    println!(
        "policy={} coverage={:?} oracle_calls={} peak_copies={}{}",
        report.policy,
        harness::round_sig(report.total_coverage),
        report.oracle_calls,
        report.peak_copies,
        if report.exhausted { " exhausted" } else { "" }
    );
    let target = a.out.as_deref().map(resolve_out);
    if let Some(path) = target {
        let format = a.format.unwrap_or_else(|| ReportFormat::from_path(&path));
        let row = harness::aggregate(None, None, std::slice::from_ref(&report));
        harness::emit_report(&[row], &path, format)?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let path = a
        .out
        .or_else(|| config.output.clone())
        .map(|p| resolve_out(&p))
        .unwrap_or_else(|| resolve_out(Path::new("report.csv")));
    let format = a.format.or(config.format).unwrap_or_else(|| ReportFormat::from_path(&path));
    let rows = harness::run_sweep(&config)?;
    for row in &rows {
        println!("{row}");
    }
    harness::emit_report(&rows, &path, format)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> Result<(), Failure> {
    let suite: Suite = a.suite.parse()?;
    let checks = verify::run_suite(suite, a.seed);
    let mut text = String::new();
    for c in &checks {
        text.push_str(&format!("{c}\n"));
    }
    print!("{text}");
    if let Some(path) = a.out.as_deref().map(resolve_out) {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        }
        fs::write(&path, &text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("{} checks passed", checks.len());
        Ok(())
    } else {
        Err(Failure::Verification(format!("{} failed: {}", failed.len(), failed.join(", "))))
    }
}

fn fixtures(a: FixturesArgs) -> Result<(), Failure> {
    let _ = a.seed;
    let Some(name) = a.name else {
        for n in Fixture::NAMES {
            println!("{n}");
        }
        return Ok(());
    };
    let fixture = Fixture::parse(&name, a.tprime)?;
    println!("# {fixture}");
    for e in fixture.events() {
        let topics: Vec<String> = e.item.topics().iter().map(|t| t.to_string()).collect();
        println!(
            "{}\t{{{}}}\t{}\t{}",
            e.item.id(),
            topics.join(","),
            e.item.click_prob(),
            if e.visit { "visit" } else { "-" }
        );
    }
    Ok(())
}
