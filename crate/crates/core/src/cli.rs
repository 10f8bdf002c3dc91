//! Command-line entry points.
//!
//! ```text
//! semprof profile --input patients.csv --table patients --provider mock --mock-script s.json --out p.json
//! semprof serve --port 8080 --provider live --model gpt-4o
//! ```
//!
//! `profile` exits 0 when every step finished, 2 when some failed or could
//! not run, and 1 on fatal errors (unreadable input, bad configuration).

use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ingest::{load_csv, CsvOptions};
use crate::llm::{ChatProvider, LiveConfig, ProviderConfig, ProviderKind, TranscriptRecorder, DEFAULT_MAX_RETRIES};
use crate::pipeline::{Session, Settings, StepFilter};
use crate::report::{export_json, render_static_report, session_charts};
use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "semprof", version, about = "Semantic profiling of tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Profile one CSV file and write the profile document.
    Profile(ProfileArgs),
    /// Serve the HTTP API (and a built UI under /ui).
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderChoice {
    Live,
    Mock,
    Replay,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    #[arg(long, value_enum, default_value = "live")]
    pub provider: ProviderChoice,
    /// Step id → responses JSON for the mock provider.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Recorded transcript for the replay provider.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Save every model exchange to this file.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_RETRIES)]
    pub max_retries: usize,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub table: Option<String>,
    /// Optional documentation handed to the table summary.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    #[arg(long)]
    pub tsv: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Profile JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Static HTML report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Only run steps matching this id or `prefix*`.
    #[arg(long)]
    pub until: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory with the built review UI.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

impl ProviderArgs {
    pub fn config(&self) -> anyhow::Result<ProviderConfig> {
        let kind = match self.provider {
            ProviderChoice::Mock => ProviderKind::Mock(
                self.mock_script.clone().context("--provider mock requires --mock-script")?,
            ),
            ProviderChoice::Replay => ProviderKind::Replay(
                self.transcript.clone().context("--provider replay requires --transcript")?,
            ),
            ProviderChoice::Live => {
                let mut cfg = LiveConfig::default();
                if let Some(m) = &self.model {
                    cfg.model = m.clone();
                }
                if let Some(e) = &self.endpoint {
                    cfg.endpoint = e.clone();
                }
                cfg.timeout = Duration::from_secs(self.timeout_secs);
                ProviderKind::Live(cfg)
            }
        };
        if self.provider != ProviderChoice::Mock && self.mock_script.is_some() {
            bail!("--mock-script only applies to --provider mock");
        }
        Ok(ProviderConfig {
            kind,
            max_retries: self.max_retries,
        })
    }
}

type Recorder = TranscriptRecorder<Arc<dyn ChatProvider>>;

fn build_provider(args: &ProviderArgs) -> anyhow::Result<(Arc<dyn ChatProvider>, Option<Arc<Recorder>>)> {
    let provider = args.config()?.build()?;
    match &args.record {
        Some(_) => {
            let rec = Arc::new(TranscriptRecorder::new(provider));
            Ok((rec.clone(), Some(rec)))
        }
        None => Ok((provider, None)),
    }
}

fn settings(args: &ProviderArgs) -> Settings {
    Settings {
        max_retries: args.max_retries,
        ..Settings::default()
    }
}

/// Runs `profile`; the returned code is 0, 1 or 2.
pub fn cmd_profile(args: &ProfileArgs) -> anyhow::Result<u8> {
    let (provider, recorder) = build_provider(&args.provider)?;
    let name = match &args.table {
        Some(t) => t.clone(),
        None => args
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "table".into()),
    };
    let options = if args.tsv { CsvOptions::tsv() } else { CsvOptions::default() };
    let table = load_csv(&args.input, &name, options)?;
    let docs = match &args.docs {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?),
        None => None,
    };
    let mut session = Session::new(table, docs, settings(&args.provider));
    let filter = args.until.as_deref().map(StepFilter::new);
    let report = session.run(provider.as_ref(), filter.as_ref());
    for f in &report.failures {
        eprintln!("step {} failed: {}", f.step, f.cause);
    }
    if !report.blocked.is_empty() {
        eprintln!("{} steps could not run", report.blocked.len());
    }
    if let (Some(rec), Some(path)) = (&recorder, &args.provider.record) {
        rec.save(path).with_context(|| format!("cannot write {}", path.display()))?;
    }

    let doc = export_json(&session, &provider.describe())?;
    let text = doc.to_json_string();
    match &args.out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("cannot write {}", p.display()))?,
        None => println!("{text}"),
    }
    if let Some(p) = &args.report {
        let html = render_static_report(&doc, &session_charts(&session));
        fs::write(p, html).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(if report.is_complete() { 0 } else { 2 })
}

pub fn cmd_serve(args: &ServeArgs) -> anyhow::Result<()> {
    let (provider, _) = build_provider(&args.provider)?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .context("invalid --host/--port")?;
    let state = AppState::new(provider, settings(&args.provider));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(service::serve(addr, state, args.ui_dir.clone()))?;
    Ok(())
}

/// Parses the process arguments and runs the chosen command.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Profile(a) => cmd_profile(a),
        Command::Serve(a) => cmd_serve(a).map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
