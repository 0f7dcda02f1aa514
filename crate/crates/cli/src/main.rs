use std::collections::HashMap;
use std::error::Error;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use rtslice_core::admission::{admit_with_risk, fit_runtime_distribution, RuntimeDistribution};
use rtslice_core::config::{load_config_file, resolve_profile, ExperimentConfig};
use rtslice_core::joblog::{export_trace, ingest_files};
use rtslice_core::stats::{render_delimited, signed_mean, TaskRuntimes};
use rtslice_core::testcase::{
    builtin_config, plan, report_trace, run_batch, run_testcase, sim_config, PlannedRun, TestCase,
    DEFAULT_DURATION,
};
use rtslice_core::{
    count_misses, group_report, render_table, simulate, threshold_check, GroupReport, ProfileName, Trace,
};

/// Plan, simulate and analyze periodic real-time containers on CPU slices.
#[derive(Parser)]
#[command(name = "rtslice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Admission and slice partitioning only.
    Plan(PlanArgs),
    /// Plan and simulate a configuration.
    Simulate(SimulateArgs),
    /// Statistics over recorded job logs.
    Analyze(AnalyzeArgs),
    /// Tables for a built-in case over every scale and system.
    Report(ReportArgs),
    /// Run one built-in case.
    Testcase(TestcaseArgs),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Text,
    Delimited,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file, or `case1` … `case4`.
    #[arg(long)]
    config: String,
    /// Overrides the configured noise profile.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time in µs.
    #[arg(long)]
    duration: Option<u64>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Job logs to fit run-time distributions from, for risk admission.
    #[arg(long, num_args = 1..)]
    logs: Vec<PathBuf>,
    /// Use the empirical rather than the normal fit of `--logs`.
    #[arg(long)]
    empirical: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Writes the job log here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    /// Exit with status 1 if any deadline is missed.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, num_args = 1.., required = true)]
    logs: Vec<PathBuf>,
    /// Cycle time in µs for the latency threshold rule.
    #[arg(long)]
    cycle: Option<u64>,
    #[arg(long, default_value = "logs")]
    label: String,
    #[arg(long, default_value = "observed")]
    system: String,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    case: u8,
    /// Comma-separated systems.
    #[arg(long, value_delimiter = ',', default_value = "BM,T3,C5")]
    systems: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_DURATION)]
    duration: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    /// Writes the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestcaseArgs {
    #[arg(long)]
    case: u8,
    #[arg(long, default_value = "C5")]
    profile: String,
    /// Container count; defaults to the largest for the case.
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_DURATION)]
    duration: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long)]
    strict: bool,
}

type CliResult = Result<ExitCode, Box<dyn Error>>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Report(args) => cmd_report(args),
        Command::Testcase(args) => cmd_testcase(args),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, Box<dyn Error>> {
    let path = Path::new(&args.config);
    let mut config = match builtin_config(&args.config) {
        Some(builtin) if !path.exists() => builtin,
        _ => load_config_file(path)?,
    };
    if let Some(name) = &args.profile {
        config.profile = resolve_profile(name)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(duration) = args.duration {
        if duration == 0 {
            return Err("--duration must be positive".into());
        }
        config.duration = duration;
    }
    Ok(config)
}

fn status(failed: bool) -> ExitCode {
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn print_plan(config: &ExperimentConfig, planned: &PlannedRun) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} tasks, {} slice(s), profile {}",
        config.tasks.len(),
        config.slices.len(),
        config.profile.name()
    );
    for (load, feasibility) in planned.assignment.slices().iter().zip(&planned.feasibility) {
        let _ = writeln!(out, "slice {}: {} | {feasibility}", load.slice.id, load.tasks.join(" "));
    }
    out
}

fn cmd_plan(args: PlanArgs) -> CliResult {
    let config = load(&args.config)?;
    let planned = plan(&config)?;
    print!("{}", print_plan(&config, &planned));
    if planned.bypassed {
        println!("verdict: infeasible");
        return Ok(status(true));
    }

    let Some(policy) = config.risk else {
        println!("verdict: feasible");
        return Ok(ExitCode::SUCCESS);
    };
    let profile = config.profile.build()?;
    let (offset, spread) = profile.noise.env_runtime.moments();
    let mut dists: HashMap<String, RuntimeDistribution> = HashMap::new();
    if !args.logs.is_empty() {
        let trace = ingest_files(&args.logs)?;
        for t in &trace.tasks {
            let samples: Vec<u64> = t.records.iter().map(|r| r.observed_runtime()).collect();
            match fit_runtime_distribution(&samples) {
                Ok(fit) => {
                    let dist = if args.empirical { fit.empirical } else { fit.normal };
                    dists.insert(t.task_id.clone(), dist);
                }
                Err(e) => warn!("`{}`: {e}; using the profile model", t.task_id),
            }
        }
    }
    for task in config.tasks.iter() {
        if !dists.contains_key(&task.id) {
            dists.insert(
                task.id.clone(),
                RuntimeDistribution::normal(task.runtime as f64 + offset, spread)?,
            );
        }
    }
    let verdict = admit_with_risk(&config.tasks, &dists, &profile.noise, policy)?;
    for (id, p) in &verdict.per_task {
        println!("miss probability {id}: {p:.6e}");
    }
    println!(
        "combined miss probability {:.6e} vs limit {:.6e}",
        verdict.combined,
        policy.max_miss_probability()
    );
    println!("verdict: {}", if verdict.accepted { "feasible" } else { "risk rejected" });
    Ok(status(!verdict.accepted))
}

fn write_log(out: Option<&Path>, trace: &Trace) -> Result<(), Box<dyn Error>> {
    if let Some(path) = out {
        std::fs::write(path, export_trace(trace)).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn render(reports: &[GroupReport], format: Format) -> String {
    match format {
        Format::Text => {
            let mut systems: Vec<&str> = Vec::new();
            for r in reports {
                if !systems.contains(&r.system.as_str()) {
                    systems.push(&r.system);
                }
            }
            render_table(reports, &systems)
        }
        Format::Delimited => render_delimited(reports),
    }
}

fn print_misses(trace: &Trace) -> usize {
    let misses = count_misses(trace);
    let per_task: Vec<String> = misses.per_task.iter().map(|(id, m)| format!("{id} {m}")).collect();
    println!("misses: {} ({})", misses.total, per_task.join(", "));
    misses.total
}

fn cmd_simulate(args: SimulateArgs) -> CliResult {
    let config = load(&args.config)?;
    let planned = plan(&config)?;
    let sim = sim_config(&config, planned.assignment.clone())?;
    let trace = simulate(&sim, &config.tasks)?;
    write_log(args.out.as_deref(), &trace)?;

    let report = report_trace(&TestCase::label(config.tasks.len()), &config.profile.name(), &trace, &config.tasks);
    if let Format::Delimited = args.format {
        print!("{}", render(&[report], args.format));
        return Ok(status(args.strict && count_misses(&trace).total > 0));
    }
    print!("{}", print_plan(&config, &planned));
    println!(
        "simulated {} us, seed {}, {} jobs",
        config.duration,
        config.seed,
        trace.job_count()
    );
    let env: Vec<i64> = trace.records().map(|r| r.env_noise).collect();
    if let Some(mean) = signed_mean(&env) {
        println!("mean run-time noise: {mean:.3} us");
    }
    let missed = print_misses(&trace);
    print!("{}", render(&[report], args.format));
    Ok(status(args.strict && missed > 0))
}

fn cmd_analyze(args: AnalyzeArgs) -> CliResult {
    if args.cycle == Some(0) {
        return Err("--cycle must be positive".into());
    }
    let trace = ingest_files(&args.logs)?;
    let runtimes: Vec<_> = trace
        .tasks
        .iter()
        .map(|t| TaskRuntimes {
            task_id: t.task_id.clone(),
            runtimes: t.records.iter().map(|r| r.observed_runtime()).collect(),
            misses: t.misses(),
        })
        .collect();
    let report = group_report(&args.label, &args.system, &runtimes);
    let missed = count_misses(&trace).total;
    match args.format {
        Format::Delimited => print!("{}", render(&[report], args.format)),
        Format::Text => {
            println!("{} containers, {} jobs", trace.tasks.len(), trace.job_count());
            print_misses(&trace);
            print!("{}", render(&[report], args.format));
        }
    }
    if let Some(cycle) = args.cycle {
        let latencies: Vec<u64> = trace.records().map(|r| r.firing_latency).collect();
        let t = threshold_check(&latencies, cycle);
        println!(
            "threshold {} us: {} of {} above, ratio {:e}",
            t.threshold_us,
            t.overshoots,
            latencies.len(),
            t.ratio
        );
    }
    Ok(status(args.strict && missed > 0))
}

fn parse_systems(names: &[String]) -> Result<Vec<ProfileName>, Box<dyn Error>> {
    names
        .iter()
        .map(|n| {
            let p: ProfileName = n.trim().parse()?;
            if let ProfileName::Custom(name) = &p {
                return Err(format!("unknown system `{name}`; expected BM, T3, T3U or C5").into());
            }
            Ok(p)
        })
        .collect()
}

fn cmd_report(args: ReportArgs) -> CliResult {
    let case = TestCase::from_number(args.case)?;
    let systems = parse_systems(&args.systems)?;
    let reports = run_batch(case, &systems, args.duration, args.seed)?;
    let text = render(&reports, args.format);
    match &args.out {
        Some(path) => std::fs::write(path, &text).map_err(|e| format!("{}: {e}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_testcase(args: TestcaseArgs) -> CliResult {
    let case = TestCase::from_number(args.case)?;
    let system = parse_systems(std::slice::from_ref(&args.profile))?.remove(0);
    let scale = args.scale.unwrap_or(case.max_scale());
    let run = run_testcase(case, system, scale, args.duration, args.seed)?;
    write_log(args.out.as_deref(), &run.trace)?;
    match args.format {
        Format::Delimited => print!("{}", render(&[run.report], args.format)),
        Format::Text => {
            println!("case {case}, {scale} units, {} jobs", run.trace.job_count());
            if run.plan.bypassed {
                println!("admission rejected the set; all containers share slice {}", run.config.slices[0].id);
            }
            print_misses(&run.trace);
            print!("{}", render(&[run.report], args.format));
        }
    }
    Ok(status(args.strict && run.misses.total > 0))
}
