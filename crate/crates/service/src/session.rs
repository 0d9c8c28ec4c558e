use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};

use idclean_core::cleaning::{LogFileError, DEFAULT_MIN_REMAINING};
use idclean_core::dataset_io::{EmbeddingError, ManifestError};
use idclean_core::outlier::OutlierError;
use idclean_core::reporting::{RocOptions, DEFAULT_HISTOGRAM_BINS};
use idclean_core::{
    DatasetManifest, EmbeddingMatrix, IdentityScore, OutlierReport, RocCurve, ScoresFile, VerdictLog, VerdictLogFile,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("report {path}: {source}")]
    Report { path: PathBuf, source: OutlierError },
    #[error("manifest {path}: {source}")]
    Manifest { path: PathBuf, source: ManifestError },
    #[error("embeddings {path}: {source}")]
    Embeddings { path: PathBuf, source: EmbeddingError },
    #[error("scores {path}: {message}")]
    Scores { path: PathBuf, message: String },
    #[error(transparent)]
    VerdictLog(#[from] LogFileError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Everything needed to open a review session from files on disk.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub report: PathBuf,
    pub manifest: PathBuf,
    pub verdicts: PathBuf,
    /// Directory that receives the cleaned manifest and removal list.
    pub out_dir: PathBuf,
    pub image_root: Option<PathBuf>,
    /// Full score set; enables the histogram endpoint.
    pub scores: Option<PathBuf>,
    /// Embeddings; enables the ROC endpoint.
    pub embeddings: Option<PathBuf>,
    pub token: Option<String>,
    pub histogram_bins: usize,
    pub roc: RocOptions,
}

impl SessionConfig {
    pub fn new(report: PathBuf, manifest: PathBuf, verdicts: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            report,
            manifest,
            verdicts,
            out_dir,
            image_root: None,
            scores: None,
            embeddings: None,
            token: None,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            roc: RocOptions::default(),
        }
    }
}

pub(crate) struct VerdictState {
    pub log: VerdictLog,
    pub file: VerdictLogFile,
}

/// Output locations written by the apply endpoint.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub manifest: PathBuf,
    pub removals: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self { manifest: dir.join("cleaned_manifest.csv"), removals: dir.join("removals.csv") }
    }
}

/// One reviewer's session over a fixed report and manifest.
///
/// The report and manifest never change after construction. Verdicts go
/// through a single mutex that also owns the log file, so appends are
/// serialized and each one is synced before the caller sees success.
pub struct ReviewSession {
    pub(crate) report: OutlierReport,
    pub(crate) manifest: DatasetManifest,
    pub(crate) flagged: BTreeSet<String>,
    pub(crate) image_root: Option<PathBuf>,
    pub(crate) verdicts: Mutex<VerdictState>,
    pub(crate) apply_lock: tokio::sync::Mutex<()>,
    pub(crate) outputs: OutputPaths,
    pub(crate) manifest_path: Option<PathBuf>,
    pub(crate) scores: Option<Vec<IdentityScore>>,
    pub(crate) embeddings: Option<EmbeddingMatrix>,
    pub(crate) token: Option<String>,
    pub(crate) histogram_bins: usize,
    pub(crate) roc_options: RocOptions,
    pub(crate) roc: OnceLock<Result<RocCurve, String>>,
    pub(crate) default_min_remaining: usize,
}

impl ReviewSession {
    /// Build a session from in-memory snapshots. The verdict log at
    /// `verdicts` is opened (or created) and its history replayed.
    pub fn new(
        report: OutlierReport,
        manifest: DatasetManifest,
        verdicts: &Path,
        outputs: OutputPaths,
    ) -> Result<Self, SessionError> {
        let (file, log) = VerdictLogFile::open(verdicts)?;
        let flagged = report.flagged_ids().map(str::to_string).collect();
        Ok(Self {
            report,
            manifest,
            flagged,
            image_root: None,
            verdicts: Mutex::new(VerdictState { log, file }),
            apply_lock: tokio::sync::Mutex::new(()),
            outputs,
            manifest_path: None,
            scores: None,
            embeddings: None,
            token: None,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            roc_options: RocOptions::default(),
            roc: OnceLock::new(),
            default_min_remaining: DEFAULT_MIN_REMAINING,
        })
    }

    pub fn open(config: &SessionConfig) -> Result<Self, SessionError> {
        let f = File::open(&config.report).map_err(|source| SessionError::Io { path: config.report.clone(), source })?;
        let (report, _) = OutlierReport::read_jsonl(BufReader::new(f))
            .map_err(|source| SessionError::Report { path: config.report.clone(), source })?;
        let manifest = DatasetManifest::load(&config.manifest)
            .map_err(|source| SessionError::Manifest { path: config.manifest.clone(), source })?;
        let mut session = Self::new(report, manifest, &config.verdicts, OutputPaths::in_dir(&config.out_dir))?;
        session.manifest_path = Some(config.manifest.clone());
        session.image_root = config.image_root.clone();
        session.token = config.token.clone();
        session.histogram_bins = config.histogram_bins;
        session.roc_options = config.roc;
        let mut normalize = false;
        if let Some(path) = &config.scores {
            let text =
                std::fs::read_to_string(path).map_err(|source| SessionError::Io { path: path.clone(), source })?;
            let file = ScoresFile::from_json(&text)
                .map_err(|e| SessionError::Scores { path: path.clone(), message: e.to_string() })?;
            normalize = file.normalize;
            session.scores = Some(file.scores);
        }
        if let Some(path) = &config.embeddings {
            let emb = EmbeddingMatrix::load(path)
                .map_err(|source| SessionError::Embeddings { path: path.clone(), source })?;
            session.embeddings = Some(if normalize { emb.l2_normalized() } else { emb });
        }
        Ok(session)
    }

    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub fn with_scores(mut self, scores: Vec<IdentityScore>) -> Self {
        self.scores = Some(scores);
        self
    }

    pub fn with_embeddings(mut self, embeddings: EmbeddingMatrix, roc: RocOptions) -> Self {
        self.embeddings = Some(embeddings);
        self.roc_options = roc;
        self
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn report(&self) -> &OutlierReport {
        &self.report
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn outputs(&self) -> &OutputPaths {
        &self.outputs
    }

    /// Snapshot of the verdict log.
    pub fn verdict_log(&self) -> VerdictLog {
        self.lock_verdicts().log.clone()
    }

    /// Take the apply lock without waiting, as the apply endpoint does.
    pub fn try_begin_apply(&self) -> Option<tokio::sync::MutexGuard<'_, ()>> {
        self.apply_lock.try_lock().ok()
    }

    pub(crate) fn lock_verdicts(&self) -> MutexGuard<'_, VerdictState> {
        // A panic mid-append leaves the log consistent on disk; keep serving.
        self.verdicts.lock().unwrap_or_else(|e| e.into_inner())
    }
}
