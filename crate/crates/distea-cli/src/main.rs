//! `distea` — run scripted demos, merge traces, and answer impact
//! queries.
//!
//! Exit codes: 0 success, 1 one or more queries failed, 2 usage, parse,
//! or run errors.

use std::fmt::Write as _;
use std::fs;
use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use distea_core::impact::{self, QuerySet, Subset};
use distea_core::model::MethodId;
use distea_core::sim::{self, RunOptions, TransportMode};
use distea_core::store::{self, TraceCorpus};

#[derive(Parser)]
#[command(name = "distea", version, about = "Dynamic impact analysis for message-passing programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute script files and write one trace file per process.
    Run(RunArgs),
    /// Answer impact queries over trace files.
    Query(QueryArgs),
    /// Effectiveness and composition statistics over all executed methods.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Mem,
    Tcp,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Machine,
}

#[derive(Args)]
struct RunArgs {
    /// Script files, one per process.
    #[arg(required = true)]
    scripts: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "mem")]
    transport: TransportArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving `<process>.trace` files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Skip full event sequences in the traces.
    #[arg(long)]
    no_oracle: bool,
    /// Interface TCP listeners bind to.
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// Per-run time budget in seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

#[derive(Args)]
struct QueryArgs {
    /// Trace files or directories containing `*.trace`.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Query method; repeatable.
    #[arg(long = "query", short = 'q')]
    queries: Vec<String>,
    /// File with one query method per line.
    #[arg(long)]
    query_file: Option<PathBuf>,
    /// Compare against a baseline (only `mcov` exists).
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, value_enum, default_value = "table")]
    format: FormatArg,
}

#[derive(Args)]
struct ReportArgs {
    /// Trace files or directories containing `*.trace`.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Query every executed method (the default).
    #[arg(long, default_value_t = true)]
    all_queries: bool,
    /// Restrict to specific queries instead.
    #[arg(long = "query", short = 'q')]
    queries: Vec<String>,
    #[arg(long, value_enum, default_value = "table")]
    format: FormatArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Query(args) => cmd_query(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("distea: {message}");
            ExitCode::from(2)
        }
    }
}

fn sanitize_file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_whitespace() || c == '/' || c == '\\' { '-' } else { c })
        .collect()
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let mut programs = Vec::new();
    for path in &args.scripts {
        let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let program =
            sim::parse_script(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        programs.push(program);
    }
    let opts = RunOptions {
        transport: match args.transport {
            TransportArg::Mem => TransportMode::InMemory,
            TransportArg::Tcp => TransportMode::Tcp,
        },
        seed: args.seed,
        oracle: !args.no_oracle,
        timeout: Duration::from_secs(args.timeout),
        bind: args.bind,
    };
    let outcome = sim::run_scripts(&programs, &opts).map_err(|e| e.to_string())?;
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| format!("{}: {e}", args.out_dir.display()))?;
    for trace in outcome.corpus.traces() {
        let path = args
            .out_dir
            .join(format!("{}.trace", sanitize_file_stem(trace.process().as_str())));
        fs::write(&path, store::serialize_trace(trace))
            .map_err(|e| format!("{}: {e}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_corpus(paths: &[PathBuf]) -> Result<TraceCorpus, String> {
    store::load_corpus("cli", paths).map_err(|e| e.to_string())
}

fn collect_queries(list: &[String], file: Option<&PathBuf>) -> Result<Vec<MethodId>, String> {
    let mut names: Vec<String> = list.to_vec();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        names.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from),
        );
    }
    names
        .into_iter()
        .map(|n| MethodId::new(n).map_err(|e| e.to_string()))
        .collect()
}

fn percent(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

fn cmd_query(args: QueryArgs) -> Result<ExitCode, String> {
    let baseline = match args.baseline.as_deref() {
        None => false,
        Some("mcov") => true,
        Some(other) => return Err(format!("unknown baseline {other:?} (try `mcov`)")),
    };
    let corpus = load_corpus(&args.traces)?;
    let queries = collect_queries(&args.queries, args.query_file.as_ref())?;
    if queries.is_empty() {
        return Err("no queries given (use --query or --query-file)".into());
    }

    let mut failed = false;
    let mut out = String::new();
    for query in &queries {
        let set = match impact::impact_set(&corpus, query) {
            Ok(set) => set,
            Err(e) => {
                failed = true;
                match args.format {
                    FormatArg::Machine => {
                        let _ = writeln!(out, "{query}\terror\tnot-executed");
                    }
                    FormatArg::Table => {
                        let _ = writeln!(out, "query {query}: error: {e}");
                    }
                }
                continue;
            }
        };
        match args.format {
            FormatArg::Machine => {
                for subset in Subset::LISTING {
                    for (_, member) in impact::ranked_members(&corpus, &set, subset) {
                        let _ = writeln!(out, "{query}\t{}\t{member}", subset.name());
                    }
                }
                if baseline {
                    let base = impact::mcov_set(&corpus, query).map_err(|e| e.to_string())?;
                    let _ = writeln!(
                        out,
                        "{query}\tratio\tall\t{:.6}",
                        set.all().len() as f64 / base.all().len() as f64
                    );
                    let _ = writeln!(
                        out,
                        "{query}\tratio\tlocal\t{:.6}",
                        set.local().len() as f64 / base.local().len() as f64
                    );
                    if !base.remote().is_empty() {
                        let _ = writeln!(
                            out,
                            "{query}\tratio\tremote\t{:.6}",
                            set.remote().len() as f64 / base.remote().len() as f64
                        );
                    }
                }
            }
            FormatArg::Table => {
                let _ = writeln!(
                    out,
                    "query {query}  (local process: {})",
                    set.local_process()
                );
                for subset in Subset::LISTING {
                    let members = impact::ranked_members(&corpus, &set, subset);
                    let _ = writeln!(out, "  {} ({}):", subset.name(), members.len());
                    for (ts, member) in members {
                        let _ = writeln!(out, "    {member}  [last event {ts}]");
                    }
                }
                if baseline {
                    let base = impact::mcov_set(&corpus, query).map_err(|e| e.to_string())?;
                    let remote = if base.remote().is_empty() {
                        "-".to_string()
                    } else {
                        percent(set.remote().len() as f64 / base.remote().len() as f64)
                    };
                    let _ = writeln!(
                        out,
                        "  vs mcov: all {}/{} = {}  local {}/{} = {}  remote {}/{} = {}",
                        set.all().len(),
                        base.all().len(),
                        percent(set.all().len() as f64 / base.all().len() as f64),
                        set.local().len(),
                        base.local().len(),
                        percent(set.local().len() as f64 / base.local().len() as f64),
                        set.remote().len(),
                        base.remote().len(),
                        remote,
                    );
                }
            }
        }
    }
    print!("{out}");
    Ok(if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode, String> {
    let corpus = load_corpus(&args.traces)?;
    let queries = if args.queries.is_empty() {
        corpus.methods().cloned().collect()
    } else {
        collect_queries(&args.queries, None)?
    };
    let queries = QuerySet::new(queries).map_err(|e| e.to_string())?;
    let report = impact::effectiveness(&corpus, &queries).map_err(|e| e.to_string())?;

    match args.format {
        FormatArg::Machine => {
            for row in &report.rows {
                let remote = row
                    .ratio_remote
                    .map(|r| format!("{r:.6}"))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "{}\t{:.6}\t{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}",
                    row.query,
                    row.ratio_all,
                    row.ratio_local,
                    remote,
                    row.local_only_share,
                    row.remote_only_share,
                    row.common_share
                );
            }
            let remote = report
                .mean_ratio_remote
                .map(|r| format!("{r:.6}"))
                .unwrap_or_else(|| "-".into());
            println!(
                "#mean\t{:.6}\t{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}",
                report.mean_ratio_all,
                report.mean_ratio_local,
                remote,
                report.mean_local_only_share,
                report.mean_remote_only_share,
                report.mean_common_share
            );
        }
        FormatArg::Table => {
            let width = report
                .rows
                .iter()
                .map(|r| r.query.as_str().len())
                .max()
                .unwrap_or(5)
                .max(5);
            println!(
                "{:width$}  {:>5} {:>5}  {:>8} {:>8} {:>8}  {:>8} {:>8} {:>8}",
                "query", "|IS|", "|cov|", "all", "local", "remote", "loc-only", "rem-only",
                "common",
            );
            for row in &report.rows {
                let remote = row
                    .ratio_remote
                    .map(percent)
                    .unwrap_or_else(|| "0.0%".into());
                println!(
                    "{:width$}  {:>5} {:>5}  {:>8} {:>8} {:>8}  {:>8} {:>8} {:>8}",
                    row.query.as_str(),
                    row.impact_size,
                    row.baseline_size,
                    percent(row.ratio_all),
                    percent(row.ratio_local),
                    remote,
                    percent(row.local_only_share),
                    percent(row.remote_only_share),
                    percent(row.common_share),
                );
            }
            let remote = report
                .mean_ratio_remote
                .map(percent)
                .unwrap_or_else(|| "0.0%".into());
            println!(
                "{:width$}  {:>5} {:>5}  {:>8} {:>8} {:>8}  {:>8} {:>8} {:>8}",
                "mean",
                "",
                "",
                percent(report.mean_ratio_all),
                percent(report.mean_ratio_local),
                remote,
                percent(report.mean_local_only_share),
                percent(report.mean_remote_only_share),
                percent(report.mean_common_share),
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
