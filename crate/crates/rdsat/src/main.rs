use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rdsat::config::LoadedConfig;
use rdsat::expr::Expr;
use rdsat::pipeline::{FailureKind, Pipeline, PipelineError, Stage};

/// Output-feedback stabilization of saturated reaction-diffusion plants:
/// eigenbasis, projection, gains, certificates, attraction shaping and
/// simulation.
#[derive(Parser, Debug)]
#[command(name = "rdsat", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Artifact directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Progress and timing on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Every enabled stage, or only `--stage`.
    Run {
        #[arg(long, value_enum, value_name = "NAME")]
        stage: Option<Stage>,
    },
    /// Eigenpairs of the spatial operator.
    Eig,
    /// Modal coefficients and tail constants.
    Project,
    /// Controller and observer gains.
    Synth,
    /// Matrix-inequality certificates.
    Certify,
    /// Attraction-domain shaping.
    Doa,
    /// Closed-loop simulation.
    Simulate,
    /// Collated summary.
    Report,
    /// Membership of initial profiles in the attraction estimates.
    Member {
        /// Profile expression in `x`.
        #[arg(long, value_name = "EXPR", conflicts_with = "candidates")]
        z0: Option<String>,
        /// CSV with columns `name,z0`.
        #[arg(long, value_name = "CSV")]
        candidates: Option<PathBuf>,
    },
}

fn usage(message: impl Into<String>) -> PipelineError {
    PipelineError {
        stage: None,
        kind: FailureKind::Validation,
        message: message.into(),
    }
}

fn read_candidates(path: &Path) -> Result<Vec<(String, Expr)>, PipelineError> {
    let mut r =
        csv::Reader::from_path(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let (Some(name), Some(text)) = (rec.get(0), rec.get(1)) else {
            return Err(usage(format!(
                "{}:{}: expected name,z0",
                path.display(),
                i + 2
            )));
        };
        let expr = Expr::parse(text.trim())
            .map_err(|m| usage(format!("{}:{}: {m}", path.display(), i + 2)))?;
        out.push((name.trim().to_string(), expr));
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<String, PipelineError> {
    let path = cli
        .config
        .ok_or_else(|| usage("--config PATH is required"))?;
    let config = LoadedConfig::load(&path)?;
    let pipeline = Pipeline::new(config, cli.out, cli.verbose);
    match cli.command {
        Command::Run { stage: Some(s) } => pipeline.run_stage(s),
        Command::Run { stage: None } => pipeline.run_all(),
        Command::Eig => pipeline.run_stage(Stage::Eig),
        Command::Project => pipeline.run_stage(Stage::Project),
        Command::Synth => pipeline.run_stage(Stage::Synth),
        Command::Certify => pipeline.run_stage(Stage::Certify),
        Command::Doa => pipeline.run_stage(Stage::Doa),
        Command::Simulate => pipeline.run_stage(Stage::Simulate),
        Command::Report => pipeline.run_stage(Stage::Report),
        Command::Member { z0, candidates } => {
            let list = match (z0, candidates) {
                (Some(text), None) => vec![("z0".to_string(), Expr::parse(&text).map_err(usage)?)],
                (None, Some(p)) => read_candidates(&p)?,
                _ => return Err(usage("member needs --z0 EXPR or --candidates CSV")),
            };
            pipeline.member(&list)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
