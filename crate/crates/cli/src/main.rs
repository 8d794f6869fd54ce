use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tbp_core::pipeline::{run_stage, PipelineConfig, PipelineError, Profile, Stage, StageJob};

/// Search, refine and classify periodic orbits of the equal-mass planar
/// three-body problem.
#[derive(Parser, Debug)]
#[command(name = "tbp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Default set used when no config file is given: full or desk
    #[arg(long, global = true)]
    profile: Option<String>,
    #[arg(long, global = true, default_value_t = 0)]
    shard_index: usize,
    #[arg(long, global = true, default_value_t = 1)]
    shard_count: usize,
    /// Concurrent tasks within this process
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the stage's decimal digits
    #[arg(long, global = true)]
    digits: Option<u32>,
    /// Override the stage's Taylor order
    #[arg(long, global = true)]
    order: Option<usize>,
    /// Input file(s); merge and dedup accept several
    #[arg(long = "in", global = true)]
    input: Vec<PathBuf>,
    /// Output file (stdout when omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scan the velocity grid (or one shard of it) for near-returns
    Scan,
    /// Extract candidate triplets from a merged cell file
    Candidates,
    /// Damped Newton correction of candidates
    Correct,
    /// Classical Newton refinement of corrected triplets
    Refine,
    /// Re-refine at the verification precision and count agreeing digits
    Verify,
    /// Topological classification into catalog records
    Classify,
    /// Group representations of the same solution into a catalog
    Dedup,
    /// Family table of a catalog
    Report,
    /// SVG scatter of catalog initial velocities
    RenderScatter,
    /// SVG of one catalog orbit over a period
    RenderOrbit {
        /// Zero-based record index in the catalog
        #[arg(long, default_value_t = 0)]
        record: usize,
    },
    /// Split a stage file round-robin
    Shard,
    /// Reassemble shards into one file
    Merge,
    /// Print the effective configuration
    ConfigDump,
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let base = match common.profile.as_deref() {
        None | Some("full") => Profile::Full,
        Some("desk") => Profile::Desk,
        Some(other) => {
            return Err(PipelineError::Config(format!("unknown profile '{other}'")));
        }
    };
    match &common.config {
        None => Ok(PipelineConfig::defaults(base)),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            let has_profile = text
                .lines()
                .any(|l| l.split('#').next().unwrap_or("").trim_start().starts_with("profile"));
            if has_profile || base == Profile::Full {
                PipelineConfig::parse(&text)
            } else {
                PipelineConfig::parse(&format!("profile = desk\n{text}"))
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config = load_config(&cli.common)?;
    let (stage, record) = match cli.command {
        Command::Scan => (Stage::Scan, 0),
        Command::Candidates => (Stage::Candidates, 0),
        Command::Correct => (Stage::Correct, 0),
        Command::Refine => (Stage::Refine, 0),
        Command::Verify => (Stage::Verify, 0),
        Command::Classify => (Stage::Classify, 0),
        Command::Dedup => (Stage::Dedup, 0),
        Command::Report => (Stage::Report, 0),
        Command::RenderScatter => (Stage::RenderScatter, 0),
        Command::RenderOrbit { record } => (Stage::RenderOrbit, record),
        Command::Shard => (Stage::Shard, 0),
        Command::Merge => (Stage::Merge, 0),
        Command::ConfigDump => (Stage::ConfigDump, 0),
    };
    let c = cli.common;
    let job = StageJob {
        stage,
        config,
        shard_index: c.shard_index,
        shard_count: c.shard_count,
        workers: c.workers,
        digits: c.digits,
        order: c.order,
        inputs: c.input,
        record,
    };
    let output = run_stage(&job)?;
    for note in &output.notes {
        eprintln!("{note}");
    }
    match c.out {
        Some(path) => fs::write(&path, output.text)
            .map_err(|e| PipelineError::Job(format!("{}: {e}", path.display())))?,
        None => std::io::stdout()
            .write_all(output.text.as_bytes())
            .map_err(|e| PipelineError::Job(e.to_string()))?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tbp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
