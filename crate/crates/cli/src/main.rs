//! `m2lads`: ingest, validate, export and serve learning sessions.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use m2lads_api::{ApiConfig, ServeError, DEFAULT_MAX_POINTS_CAP};
use m2lads_core::export::{export_session, ExportError, ExportFormat};
use m2lads_core::pipeline::{build_record, created_at_now, ingest_session, IngestManifest, Overrides, PipelineError};
use m2lads_core::store::{FileStore, SessionStore, StoreError, STORE_ROOT_ENV};

#[derive(Parser)]
#[command(name = "m2lads", version, about = "Multimodal learning-session analytics")]
struct Cli {
    /// Session store directory.
    #[arg(long, global = true, env = STORE_ROOT_ENV, default_value = "m2lads-store")]
    store: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on a manifest and store the session.
    Ingest {
        manifest: PathBuf,
        #[arg(long)]
        window_ms: Option<i64>,
        #[arg(long)]
        grid_ms: Option<i64>,
    },
    /// Parse and process a manifest without touching the store.
    Validate {
        manifest: PathBuf,
        #[arg(long)]
        window_ms: Option<i64>,
        #[arg(long)]
        grid_ms: Option<i64>,
    },
    /// Write a stored session's learner matrices and analytics to disk.
    Export {
        session_id: String,
        #[arg(long, value_enum)]
        format: Format,
        /// Output directory (default: ./<session_id>-export).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, default_value = "*")]
        cors_origin: String,
        #[arg(long, default_value_t = DEFAULT_MAX_POINTS_CAP)]
        max_points_cap: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl ToString) -> Self {
        Failure {
            code: 1,
            message: message.to_string(),
        }
    }

    fn io(message: impl ToString) -> Self {
        Failure {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_io() {
            Failure::io(e)
        } else {
            Failure::invalid(e)
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(_) | StoreError::Corrupt { .. } => Failure::io(e),
            other => Failure::invalid(other),
        }
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Io(_) => Failure::io(e),
            other => Failure::invalid(other),
        }
    }
}

fn load_manifest(path: &Path, window_ms: Option<i64>, grid_ms: Option<i64>) -> Result<IngestManifest, Failure> {
    let mut manifest = IngestManifest::load(path)?;
    manifest.apply(Overrides { window_ms, grid_ms });
    Ok(manifest)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest {
            manifest,
            window_ms,
            grid_ms,
        } => {
            let manifest = load_manifest(&manifest, window_ms, grid_ms)?;
            let created_at = created_at_now()?;
            let store = FileStore::open(&cli.store)?;
            let id = ingest_session(&manifest, &store, created_at)?;
            println!("{id}");
        }
        Command::Validate {
            manifest,
            window_ms,
            grid_ms,
        } => {
            let manifest = load_manifest(&manifest, window_ms, grid_ms)?;
            let record = build_record(&manifest, created_at_now()?)?;
            println!(
                "ok: {} ({} signals, {} activity intervals)",
                record.session_id,
                record.learner_matrices.len(),
                record.merged_matrix.intervals.len()
            );
        }
        Command::Export {
            session_id,
            format,
            out,
        } => {
            let store = FileStore::open_existing(&cli.store)
                .map_err(|e| Failure::io(format!("{}: {e}", cli.store.display())))?;
            let record = store.get_session(&session_id)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(format!("{session_id}-export")));
            let format = match format {
                Format::Csv => ExportFormat::Csv,
                Format::Json => ExportFormat::Json,
            };
            for path in export_session(&record, &dir, format)? {
                println!("{}", path.display());
            }
        }
        Command::Serve {
            bind,
            cors_origin,
            max_points_cap,
        } => {
            let config = ApiConfig {
                bind_address: bind,
                store_root: cli.store,
                cors_allowed_origin: cors_origin,
                max_points_cap,
            };
            let runtime = tokio::runtime::Runtime::new().map_err(Failure::io)?;
            runtime.block_on(m2lads_api::serve(config)).map_err(|e| match e {
                ServeError::InvalidConfig(_) => Failure::invalid(e),
                other => Failure::io(other),
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first} (see --help)");
            return ExitCode::from(1);
        }
    };

    let default_level = if matches!(cli.command, Command::Serve { .. }) {
        "info"
    } else {
        "warn"
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let line = f.message.replace('\n', " ");
            eprintln!("m2lads: {line}");
            ExitCode::from(f.code)
        }
    }
}
