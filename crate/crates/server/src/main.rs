use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use mediator_core::metrics::{build_report, export_csv, Alternative, MetricsInput};
use mediator_core::scenario::{replay_study, ReplayOptions, Scenario};
use mediator_core::store::EventLog;
use mediator_server::{init_logging, serve, LogFormat, ServiceConfig};

#[derive(Parser)]
#[command(name = "mediator", version, about = "Meeting feedback mediator service and study tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP and WebSocket service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a two-condition study scenario against the scripted mock provider.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        /// Persist the run here instead of in memory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Simulate a crash and recovery after this many steps (needs --data-dir).
        #[arg(long)]
        crash_after: Option<usize>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare speaking-time balance across conditions.
    Metrics {
        /// Meeting stats JSON: an array of stats or {"meetings": [...], "paired_samples": [...]}.
        #[arg(long, conflicts_with = "data_dir", required_unless_present = "data_dir")]
        input: Option<PathBuf>,
        /// Read finalized stats of closed meetings from a service data directory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "less")]
        alternative: Alt,
        /// Apply Benjamini-Hochberg adjustment across all reported tests.
        #[arg(long)]
        fdr: bool,
        #[arg(long)]
        export_csv: Option<PathBuf>,
    },
}

/// Direction of the Gini test: treatment greater or less than control.
#[derive(Clone, Copy, ValueEnum)]
enum Alt {
    Greater,
    Less,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config } => run_serve(config.as_deref()),
        Command::Replay {
            scenario,
            data_dir,
            crash_after,
            out,
        } => {
            init_logging("warn", LogFormat::Text);
            run_replay(&scenario, data_dir, crash_after, out.as_deref())
        }
        Command::Metrics {
            input,
            data_dir,
            alternative,
            fdr,
            export_csv,
        } => {
            init_logging("warn", LogFormat::Text);
            run_metrics(input.as_deref(), data_dir.as_deref(), alternative, fdr, export_csv.as_deref())
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run_serve(path: Option<&Path>) -> anyhow::Result<ExitCode> {
    let config = ServiceConfig::load(path)?;
    init_logging(&config.log_level, config.log_format);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let handle = serve(config).await?;
        handle.run_until_ctrl_c().await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn emit(json: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn run_replay(
    scenario: &Path,
    data_dir: Option<PathBuf>,
    crash_after: Option<usize>,
    out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let scenario_doc = Scenario::load(scenario).with_context(|| format!("scenario {}", scenario.display()))?;
    let opts = ReplayOptions {
        data_dir,
        crash_after,
        snapshot_every: None,
    };
    let report = replay_study(&scenario_doc, &opts)?;
    emit(&serde_json::to_string_pretty(&report)?, out)?;
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    Ok(if report.ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run_metrics(
    input: Option<&Path>,
    data_dir: Option<&Path>,
    alt: Alt,
    fdr: bool,
    csv_dir: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let input = match (input, data_dir) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            MetricsInput::from_json(&text).with_context(|| format!("input {}", p.display()))?
        }
        (None, Some(dir)) => {
            if !dir.is_dir() {
                bail!("data directory {} does not exist", dir.display());
            }
            let (_, state, _) = EventLog::open(dir, u64::MAX)?;
            MetricsInput {
                meetings: state.meetings.values().filter_map(|m| m.stats.clone()).collect(),
                paired_samples: Vec::new(),
            }
        }
        (None, None) => bail!("one of --input or --data-dir is required"),
    };
    let alternative = match alt {
        Alt::Greater => Alternative::TreatmentGreater,
        Alt::Less => Alternative::TreatmentLess,
    };
    let report = build_report(&input, alternative, fdr);
    if let Some(dir) = csv_dir {
        export_csv(&report, dir)?;
    }
    emit(&serde_json::to_string_pretty(&report)?, None)?;
    Ok(ExitCode::SUCCESS)
}
