use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fssl_cli::commands::{
    cmd_finetune, cmd_generate, cmd_matrix, cmd_pretrain, InitKind, InitSource, PretrainMode, Workspace,
};
use fssl_cli::report::cmd_report;
use fssl_cli::{CliError, ExperimentConfig, Result};
use fssl_core::data::Site;

#[derive(Parser)]
#[command(name = "fssl", version, about = "Federated self-supervised pretraining experiments on synthetic two-site data")]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Results root; overrides `out` in the config (default `runs`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SiteArg {
    #[value(name = "A")]
    A,
    #[value(name = "B")]
    B,
}

impl From<SiteArg> for Site {
    fn from(s: SiteArg) -> Self {
        match s {
            SiteArg::A => Site::A,
            SiteArg::B => Site::B,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render both synthetic sites into <out>/data.
    Generate,
    /// Pretrain an encoder into <out>/pretrain/<mode>/model.fssl.
    Pretrain {
        #[arg(long, value_enum)]
        mode: PretrainMode,
    },
    /// Fine-tune and evaluate on one site.
    Finetune {
        #[arg(long, value_enum)]
        init: InitKind,
        /// Pretraining mode whose snapshot to start from (with --init snapshot).
        #[arg(long, value_enum)]
        mode: Option<PretrainMode>,
        /// Explicit snapshot file; the method is named after its file stem.
        #[arg(long, conflicts_with = "mode")]
        snapshot: Option<PathBuf>,
        #[arg(long, value_enum)]
        site: SiteArg,
    },
    /// Collect every fine-tune report into <out>/report.csv and report.txt.
    Report,
    /// generate, all six pretrainings, the twelve fine-tunes and the report.
    Matrix,
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let ws = Workspace::new(&config, cli.seed, cli.out.as_deref())?;
    match cli.command {
        Command::Generate => {
            cmd_generate(&ws)?;
        }
        Command::Pretrain { mode } => {
            let path = cmd_pretrain(&ws, mode)?;
            println!("{}", path.display());
        }
        Command::Finetune {
            init,
            mode,
            snapshot,
            site,
        } => {
            let site = Site::from(site);
            let source = match (init, mode, snapshot) {
                (InitKind::Random, None, None) => InitSource::Random,
                (InitKind::Random, _, _) => {
                    return Err(CliError::Usage("--init random takes no --mode or --snapshot".into()))
                }
                (InitKind::Snapshot, Some(mode), None) => InitSource::from_mode(&ws, mode, site),
                (InitKind::Snapshot, None, Some(path)) => InitSource::Pretrained {
                    method: path
                        .file_stem()
                        .map_or_else(|| "snapshot".into(), |s| s.to_string_lossy().into_owned()),
                    snapshot: path,
                },
                (InitKind::Snapshot, _, _) => {
                    return Err(CliError::Usage("--init snapshot needs --mode or --snapshot".into()))
                }
            };
            let report = cmd_finetune(&ws, &source, site)?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
        }
        Command::Report => {
            print!("{}", cmd_report(&ws.root)?.text);
        }
        Command::Matrix => {
            print!("{}", cmd_matrix(&ws)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
