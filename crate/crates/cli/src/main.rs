//! `spancode`: knowledge base, evidence pairs, training data, inference,
//! evaluation and the review service from one binary.
//!
//! Every run ends with one JSON summary line on stdout. Exit status is 0 on
//! success, 1 for bad input or configuration, 2 for model endpoint or file
//! system failures.

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

mod commands;
mod config;

use commands::Command;
use config::ToolConfig;

#[derive(Parser)]
#[command(name = "spancode", version, about = "Evidence-based ICD-10-CM coding pipeline")]
struct Cli {
    /// TOML config file
    #[arg(long, global = true, env = "SPANCODE_CONFIG", value_name = "FILE")]
    config: Option<std::path::PathBuf>,

    #[command(flatten)]
    settings: ToolConfig,

    #[command(subcommand)]
    command: Option<Command>,
}

/// Bad input or configuration; exits with status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// Endpoint and I/O failures map to 2; everything else is a validation
/// failure.
fn exit_status(err: &anyhow::Error) -> u8 {
    use spancode_core::dataset::DatasetError;
    use spancode_core::expansion::ExpansionError;
    use spancode_core::inference::InferenceError;
    use spancode_core::llm::GatewayError;
    use spancode_core::metrics::MetricsError;
    use spancode_review::ReviewError;

    let runtime = err.chain().any(|cause| {
        cause.is::<std::io::Error>()
            || cause.is::<GatewayError>()
            || matches!(cause.downcast_ref(), Some(ExpansionError::Gateway(_)))
            || matches!(cause.downcast_ref(), Some(InferenceError::Gateway(_)))
            || matches!(cause.downcast_ref(), Some(MetricsError::Gateway(_)))
            || matches!(cause.downcast_ref(), Some(DatasetError::Io { .. }))
            || matches!(cause.downcast_ref(), Some(ReviewError::Io { .. } | ReviewError::Gateway(_)))
    });
    if runtime {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let Some(command) = cli.command else {
        eprintln!("{}", Cli::command().render_help());
        return ExitCode::from(1);
    };

    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let settings = match cli.config.as_deref().map(ToolConfig::load).transpose() {
        Ok(file) => cli.settings.over(file.unwrap_or_default()),
        Err(e) => return fail(&e),
    };
    if let Err(e) = settings.validate() {
        return fail(&e.into());
    }
    match commands::run(command, &settings) {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(err: &anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    ExitCode::from(exit_status(err))
}
