mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

/// Exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_ACCESS: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "moocdb", version, about = "Normalize, partition and analyze MOOC behavioral logs")]
pub struct Cli {
    /// Print a machine-readable JSON summary on standard output.
    #[arg(long, global = true)]
    pub json: bool,

    /// Pipeline configuration (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic course: structure, raw log, PII sentinels and ground truth.
    Gen(GenArgs),
    /// Normalize raw logs into a course store.
    Ingest(IngestArgs),
    /// Check every schema invariant of a store.
    Validate(InArg),
    /// Export the tables granted at an access level.
    Partition(PartitionArgs),
    /// Report which tables of a partition can be joined on user keys, and scan for PII.
    Audit(AuditArgs),
    /// Compute a named statistic under time, cohort and space cuts.
    Stat(StatArgs),
    /// Video time versus correct submissions over a homework window.
    Correlate(CorrelateArgs),
    /// Write knowledge-tracing or item-response study files.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator spec file (TOML or JSON); flags below override it.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub users: Option<usize>,
    /// Exact number of raw log lines.
    #[arg(long)]
    pub events: Option<usize>,
    #[arg(long)]
    pub weeks: Option<usize>,
    #[arg(long)]
    pub course_id: Option<String>,
    /// Plant a Pearson r between week-1 video time and correct submissions.
    #[arg(long, value_name = "R")]
    pub planted_r: Option<f64>,
    /// Write the verbose tracking-log dialect.
    #[arg(long)]
    pub verbose: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw log files, or a generator output directory.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Course structure JSON; defaults to structure.json beside the first input.
    #[arg(long)]
    pub structure: Option<PathBuf>,
    /// Source adapter name (overrides the config and file-suffix detection).
    #[arg(long)]
    pub adapter: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InArg {
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    #[value(name = "multi_course")]
    MultiCourse,
    #[value(name = "single_course")]
    SingleCourse,
    #[value(name = "table_level")]
    TableLevel,
}

#[derive(Debug, Args)]
pub struct LevelArgs {
    #[arg(long, value_enum)]
    pub level: Option<LevelArg>,
    #[arg(long, overrides_with = "no_collaboration")]
    pub with_collaboration: bool,
    #[arg(long, overrides_with = "with_collaboration")]
    pub no_collaboration: bool,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// One or more course stores.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub level: LevelArgs,
    /// Export only these tables (comma separated); each must be granted.
    #[arg(long, value_delimiter = ',')]
    pub tables: Option<Vec<String>>,
    /// Shift timestamps by a keyed per-course offset.
    #[arg(long)]
    pub jitter: bool,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// PII profiles (JSON lines) to scan the partition for.
    #[arg(long)]
    pub pii: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatArgs {
    /// Store or partition directory.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "list")]
    pub name: Option<String>,
    #[command(flatten)]
    pub level: LevelArgs,
    /// Window start (inclusive), ISO-8601.
    #[arg(long)]
    pub from: Option<String>,
    /// Window end (exclusive), ISO-8601.
    #[arg(long)]
    pub to: Option<String>,
    /// Cohort predicate, e.g. `certified&grade>=0.5`.
    #[arg(long)]
    pub cohort: Option<String>,
    /// Keep only these countries (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub country: Option<Vec<String>>,
    #[arg(long)]
    pub group_by_country: bool,
    /// List the statistic catalog instead of computing.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Homework problem name or id; every root problem when omitted.
    #[arg(long)]
    pub problem: Option<String>,
    #[command(flatten)]
    pub level: LevelArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExportFormat {
    Bkt,
    Irt,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: ExportFormat,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub level: LevelArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json = cli.json;
    match commands::run(cli) {
        Ok(out) => {
            let body = if json {
                serde_json::to_string_pretty(&out.summary).expect("summary serializes") + "\n"
            } else {
                out.text
            };
            // A closed pipe (`| head`) is not an error worth reporting.
            let _ = std::io::stdout().lock().write_all(body.as_bytes());
            ExitCode::from(out.code)
        }
        Err(e) => report(e, json),
    }
}

fn report(e: CliError, json: bool) -> ExitCode {
    let code = e.code();
    if json {
        let v = serde_json::json!({ "ok": false, "exit_code": code, "error": e.to_string() });
        println!("{}", serde_json::to_string_pretty(&v).expect("error serializes"));
    }
    eprintln!("moocdb: {e}");
    ExitCode::from(code)
}
