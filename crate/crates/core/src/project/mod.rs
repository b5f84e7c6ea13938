//! On-disk project: config, append-only JSONL data files, and the pipeline
//! stages that read and write them.
//!
//! ```text
//! <root>/audit.config.json
//! <root>/data/{questions,probes,ratings,responses,scores,rounds,codebooks}.jsonl
//! <root>/reports/report.{json,md}, reports/tables/*.csv
//! ```
//!
//! Every line is a domain object plus `run_id` and `config_fingerprint`.
//! Files are replaced with write-to-temp-then-rename, so readers never see a
//! partial line.

mod config;
mod pipeline;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::RoundError;
use crate::answering::AnswerError;
use crate::domain::Codebook;
use crate::generation::GenerationError;
use crate::metrics::MetricsError;
use crate::provider::ProviderError;

pub use config::{DataPaths, JudgeBackend, ProjectConfig, Roles, CONFIG_FILE};
pub use pipeline::{
    agreement_document, answer, complete_round, generate, import_questions, latest_groups,
    load_round, open_round, questions, rounds, sample_indices, score, submit_rating,
    AgreementDocument, AnswerStageSummary, GenerateSummary, OpenRoundRequest, RatingSubmission,
    StageOptions,
};

pub const QUESTIONS: &str = "questions.jsonl";
pub const PROBES: &str = "probes.jsonl";
pub const RATINGS: &str = "ratings.jsonl";
pub const RESPONSES: &str = "responses.jsonl";
pub const SCORES: &str = "scores.jsonl";
pub const ROUNDS: &str = "rounds.jsonl";
pub const CODEBOOKS: &str = "codebooks.jsonl";

const LOCK_FILE: &str = ".audit.lock";

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("config: {0}")]
    Config(String),
    #[error("role {role} points at unknown provider {name:?}")]
    Role { role: String, name: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("directory {0} is not empty")]
    DirNotEmpty(PathBuf),
    #[error("project is locked by another process ({0}); remove it if stale")]
    Locked(PathBuf),
    #[error("missing stage output: {0}")]
    MissingStage(String),
    #[error("records of run {run_id} mix config fingerprints {found:?}")]
    MixedFingerprints { run_id: String, found: Vec<String> },
    #[error("no scored runs")]
    NoScoredRuns,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error(transparent)]
    Round(#[from] RoundError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ProjectError + '_ {
    move |source| ProjectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One JSONL line: the domain object with provenance fields alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record<T> {
    pub run_id: String,
    pub config_fingerprint: String,
    #[serde(flatten)]
    pub body: T,
}

/// Replaces `path` atomically with `contents`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ProjectError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Holds the project lock file until dropped.
#[derive(Debug)]
pub struct ProjectLock {
    path: PathBuf,
}

impl Drop for ProjectLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct Project {
    root: PathBuf,
    config: ProjectConfig,
    fingerprint: String,
}

impl Project {
    /// Scaffolds a new project in an empty or absent directory.
    pub fn init(dir: &Path) -> Result<Self, ProjectError> {
        if dir.exists() {
            let mut entries = fs::read_dir(dir).map_err(io_err(dir))?;
            if entries.next().is_some() {
                return Err(ProjectError::DirNotEmpty(dir.to_path_buf()));
            }
        }
        let config = ProjectConfig::default();
        let root = dir.to_path_buf();
        fs::create_dir_all(root.join(&config.paths.data_dir)).map_err(io_err(&root))?;
        fs::create_dir_all(root.join(&config.paths.reports_dir)).map_err(io_err(&root))?;
        let text = serde_json::to_string_pretty(&config).expect("config serializes") + "\n";
        write_atomic(&root.join(CONFIG_FILE), text.as_bytes())?;
        let project = Self::with_config(root, config);
        project.append(CODEBOOKS, "init", &[Codebook::default_rubric()])?;
        Ok(project)
    }

    pub fn open(config_path: &Path) -> Result<Self, ProjectError> {
        let text = fs::read_to_string(config_path).map_err(io_err(config_path))?;
        let config: ProjectConfig = serde_json::from_str(&text).map_err(|e| ProjectError::Parse {
            file: config_path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        config.validate()?;
        let root = config_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Ok(Self::with_config(root, config))
    }

    pub fn with_config(root: PathBuf, config: ProjectConfig) -> Self {
        let fingerprint = config.fingerprint();
        Self {
            root,
            config,
            fingerprint,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn data_path(&self, file: &str) -> PathBuf {
        self.root.join(&self.config.paths.data_dir).join(file)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join(&self.config.paths.reports_dir)
    }

    pub fn lock(&self) -> Result<ProjectLock, ProjectError> {
        let path = self.root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(ProjectLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(ProjectError::Locked(path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn has(&self, file: &str) -> bool {
        self.data_path(file).exists()
    }

    /// All records of `file`; a missing file reads as empty.
    pub fn read<T: DeserializeOwned>(&self, file: &str) -> Result<Vec<Record<T>>, ProjectError> {
        let path = self.data_path(file);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ProjectError::Parse {
                    file: file.to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Like [`read`](Self::read) but a missing file is a `MissingStage` error.
    pub fn require<T: DeserializeOwned>(&self, file: &str) -> Result<Vec<Record<T>>, ProjectError> {
        if !self.has(file) {
            return Err(ProjectError::MissingStage(file.to_string()));
        }
        self.read(file)
    }

    fn encode<T: Serialize>(&self, run_id: &str, items: &[T]) -> String {
        let mut out = String::new();
        for item in items {
            let rec = Record {
                run_id: run_id.to_string(),
                config_fingerprint: self.fingerprint.clone(),
                body: item,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn append<T: Serialize>(&self, file: &str, run_id: &str, items: &[T]) -> Result<(), ProjectError> {
        let path = self.data_path(file);
        let mut existing = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(&path)(e)),
        };
        if !existing.is_empty() && !existing.ends_with(b"\n") {
            existing.push(b'\n');
        }
        existing.extend_from_slice(self.encode(run_id, items).as_bytes());
        write_atomic(&path, &existing)
    }

    /// Rewrites `file` with exactly `records`.
    pub fn rewrite<T: Serialize>(&self, file: &str, records: &[Record<T>]) -> Result<(), ProjectError> {
        let mut out = String::new();
        for rec in records {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        write_atomic(&self.data_path(file), out.as_bytes())
    }

    pub fn record<T>(&self, run_id: &str, body: T) -> Record<T> {
        Record {
            run_id: run_id.to_string(),
            config_fingerprint: self.fingerprint.clone(),
            body,
        }
    }

    pub fn codebook(&self, version: Option<u32>) -> Result<Codebook, ProjectError> {
        let books: Vec<Record<Codebook>> = self.read(CODEBOOKS)?;
        let found = match version {
            Some(v) => books.into_iter().rev().find(|b| b.body.version == v),
            None => books.into_iter().max_by_key(|b| b.body.version),
        };
        found
            .map(|r| r.body)
            .ok_or_else(|| ProjectError::NotFound(format!("codebook {version:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Question;

    #[test]
    fn init_writes_a_valid_project() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("proj");
        Project::init(&root).unwrap();
        let p = Project::open(&root.join(CONFIG_FILE)).unwrap();
        assert!(root.join("data").is_dir() && root.join("reports").is_dir());
        assert!(p.codebook(None).unwrap().missing_cells().is_empty());
        assert!(matches!(Project::init(&root), Err(ProjectError::DirNotEmpty(_))));
    }

    #[test]
    fn records_carry_provenance_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = Project::init(dir.path()).unwrap();
        let q = Question {
            id: "q1".into(),
            text: "Why?".into(),
            best_answer: "Because.".into(),
            category: None,
        };
        p.append(QUESTIONS, "import", &[q.clone()]).unwrap();
        p.append(QUESTIONS, "import", &[q.clone()]).unwrap();
        let recs: Vec<Record<Question>> = p.read(QUESTIONS).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].body, q);
        assert_eq!(recs[0].config_fingerprint, p.fingerprint());
        let line = fs::read_to_string(p.data_path(QUESTIONS)).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        assert_eq!(v["run_id"], "import");
        assert_eq!(v["text"], "Why?");
    }

    #[test]
    fn missing_stage_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = Project::init(dir.path()).unwrap();
        let err = p.require::<Question>(RESPONSES).unwrap_err();
        assert_eq!(err.to_string(), "missing stage output: responses.jsonl");
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let p = Project::init(dir.path()).unwrap();
        let held = p.lock().unwrap();
        assert!(matches!(p.lock(), Err(ProjectError::Locked(_))));
        drop(held);
        assert!(p.lock().is_ok());
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_atomic(&path, b"a\n").unwrap();
        write_atomic(&path, b"b\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "b\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
