//! The `audit` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 pipeline error, 3 gate failed.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::project::{
    agreement_document, answer, generate, import_questions, load_round, score, Project,
    ProjectError, StageOptions, CONFIG_FILE,
};
use crate::report::{build_report, write_report, Format};
use crate::server::{serve, AppState, ServeError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PIPELINE: i32 = 2;
pub const EXIT_GATE_FAILED: i32 = 3;

/// Set to `1` to replace every provider with the offline mock.
pub const NO_NET_ENV: &str = "AUDIT_NO_NET";

#[derive(Debug, Parser)]
#[command(name = "audit", version, about = "Audit language models with human-validated probes")]
struct Cli {
    /// Project config file.
    #[arg(long, global = true, default_value = CONFIG_FILE)]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutFormat {
    Text,
    Json,
    Csv,
    Markdown,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scaffold a project in an empty directory.
    Init {
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
    /// Import questions from CSV or JSONL.
    Import { file: PathBuf },
    /// Generate one probe group per (sampled) question.
    Generate {
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the annotation server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Environment variable holding a bearer token the API will require.
        #[arg(long)]
        token_env: Option<String>,
        /// Directory with a built UI bundle.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Print agreement statistics for a closed round.
    Agreement {
        #[arg(long)]
        round: String,
        #[arg(long, value_enum, default_value = "text")]
        format: OutFormat,
    },
    /// Evaluate a closed round's gate; exits 3 when it fails.
    Gate {
        #[arg(long)]
        round: String,
        #[arg(long, value_enum, default_value = "text")]
        format: OutFormat,
    },
    /// Answer the probes with audited models.
    Answer {
        /// Audited provider name; repeat for several. Defaults to all.
        #[arg(long)]
        model: Vec<String>,
        #[arg(long, default_value = "run-1")]
        run: String,
        /// Also answer the source questions.
        #[arg(long)]
        originals: bool,
    },
    /// Score an answer run.
    Score {
        #[arg(long)]
        run: Option<String>,
    },
    /// Write report artifacts.
    Report {
        #[arg(long)]
        run: Option<String>,
        /// Only this format; all three by default.
        #[arg(long, value_enum)]
        format: Option<OutFormat>,
    },
}

enum Failure {
    Usage(String),
    Pipeline(String),
}

impl From<ProjectError> for Failure {
    fn from(e: ProjectError) -> Self {
        Failure::Pipeline(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Pipeline(e.to_string())
    }
}

/// Entry point for the binary; honours `AUDIT_NO_NET`.
pub fn run() -> i32 {
    let force_mock = std::env::var(NO_NET_ENV).is_ok_and(|v| v == "1");
    run_with(
        std::env::args_os().map(|a| a.to_string_lossy().into_owned()),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
        force_mock,
    )
}

pub fn run_with(
    args: impl IntoIterator<Item = String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
    force_mock: bool,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    let opts = StageOptions { force_mock };
    match dispatch(cli, out, &opts) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Pipeline(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_PIPELINE
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn open(config: &Path) -> Result<Project, Failure> {
    if !config.exists() {
        return Err(Failure::Usage(format!(
            "{} not found; run `audit init` or pass --config",
            config.display()
        )));
    }
    Ok(Project::open(config)?)
}

fn dispatch(cli: Cli, out: &mut dyn Write, opts: &StageOptions) -> Result<i32, Failure> {
    match cli.command {
        Command::Init { dir } => {
            Project::init(&dir)?;
            writeln!(out, "initialized project in {}", dir.display())?;
            Ok(EXIT_OK)
        }
        Command::Import { file } => {
            let p = open(&cli.config)?;
            let _lock = p.lock()?;
            let n = import_questions(&p, &file)?;
            writeln!(out, "imported {n} questions")?;
            Ok(EXIT_OK)
        }
        Command::Generate { sample, seed } => {
            let p = open(&cli.config)?;
            let _lock = p.lock()?;
            let s = runtime()?.block_on(generate(&p, sample, seed, opts))?;
            writeln!(
                out,
                "sampled {} questions: {} groups generated ({} probes, {} regenerations), {} skipped, {} failed",
                s.sampled.len(),
                s.generated.len(),
                s.probes,
                s.regenerations,
                s.skipped.len(),
                s.failures.len()
            )?;
            for (q, e) in &s.failures {
                writeln!(out, "  {q}: {e}")?;
            }
            Ok(if s.failures.is_empty() { EXIT_OK } else { EXIT_PIPELINE })
        }
        Command::Serve { addr, token_env, ui } => {
            let p = open(&cli.config)?;
            let _lock = p.lock()?;
            let mut state = AppState::new(p);
            if let Some(var) = token_env {
                let token = std::env::var(&var)
                    .map_err(|_| Failure::Usage(format!("environment variable {var} is not set")))?;
                state = state.with_token(token);
            }
            if let Some(dir) = ui {
                state = state.with_ui_dir(dir);
            }
            runtime()?
                .block_on(serve(state, addr))
                .map_err(|e: ServeError| Failure::Pipeline(e.to_string()))?;
            Ok(EXIT_OK)
        }
        Command::Agreement { round, format } => {
            let p = open(&cli.config)?;
            let doc = agreement_document(&p, &load_round(&p, &round)?)?;
            match format {
                OutFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("serializes"))?,
                _ => {
                    for a in &doc.agreement {
                        let alpha = a
                            .krippendorff_alpha
                            .map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
                        writeln!(
                            out,
                            "{}: kappa {:.6}  alpha {alpha}  overlap {:.6}  (n={})",
                            a.criterion, a.cohen_kappa, a.overlap_rate, a.n_items
                        )?;
                    }
                }
            }
            Ok(EXIT_OK)
        }
        Command::Gate { round, format } => {
            let p = open(&cli.config)?;
            let doc = agreement_document(&p, &load_round(&p, &round)?)?;
            match format {
                OutFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&doc.gates).expect("serializes"))?,
                _ => {
                    for g in &doc.gates {
                        writeln!(out, "{g}")?;
                    }
                    writeln!(out, "gate {}", if doc.passed { "passed" } else { "failed" })?;
                }
            }
            Ok(if doc.passed { EXIT_OK } else { EXIT_GATE_FAILED })
        }
        Command::Answer { model, run, originals } => {
            let p = open(&cli.config)?;
            let _lock = p.lock()?;
            let summaries = runtime()?.block_on(answer(&p, &model, &run, originals, opts))?;
            let mut failed = 0;
            for s in &summaries {
                failed += s.summary.failed;
                writeln!(
                    out,
                    "{} [{}]: {} answered, {} failed of {}",
                    s.model, s.run_id, s.summary.answered, s.summary.failed, s.summary.total
                )?;
            }
            Ok(if failed == 0 { EXIT_OK } else { EXIT_PIPELINE })
        }
        Command::Score { run } => {
            let p = open(&cli.config)?;
            let _lock = p.lock()?;
            let cards = runtime()?.block_on(score(&p, run.as_deref(), opts))?;
            let fails = cards.iter().filter(|c| c.group_failed).count();
            writeln!(out, "scored {} question groups, {fails} failed", cards.len())?;
            Ok(EXIT_OK)
        }
        Command::Report { run, format } => {
            let p = open(&cli.config)?;
            let _lock = p.lock()?;
            let formats = match format {
                None => vec![Format::Json, Format::Markdown, Format::Csv],
                Some(OutFormat::Json) => vec![Format::Json],
                Some(OutFormat::Csv) => vec![Format::Csv],
                Some(OutFormat::Markdown) => vec![Format::Markdown],
                Some(OutFormat::Text) => return Err(Failure::Usage("report formats: json, csv, markdown".into())),
            };
            let report = build_report(&p, run.as_deref())?;
            for path in write_report(&p, &report, &formats)? {
                writeln!(out, "wrote {}", path.display())?;
            }
            Ok(EXIT_OK)
        }
    }
}
