//! Reviewer verdicts and the cleaning actions they compile to.
//!
//! | verdict          | action                                                  |
//! |------------------|---------------------------------------------------------|
//! | `TYPE_A`         | remove the named samples; remove the whole identity if  |
//! |                  | fewer than `min_remaining` samples would be left        |
//! | `TYPE_B`         | remove the whole identity                               |
//! | `TYPE_C`         | remove the named samples (the non-retained identity)    |
//! | `HIGH_VARIATION` | nothing; the folder is kept as is                       |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::DatasetManifest;
use crate::provenance::Provenance;

pub const DEFAULT_MIN_REMAINING: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MislabelType {
    /// One main identity plus stray samples.
    TypeA,
    /// Several identities, none with enough samples to form a folder.
    TypeB,
    /// Two identities sharing one folder.
    TypeC,
    /// Correctly labeled, flagged because of intra-class variation.
    HighVariation,
}

impl MislabelType {
    pub const ALL: [MislabelType; 4] =
        [MislabelType::TypeA, MislabelType::TypeB, MislabelType::TypeC, MislabelType::HighVariation];

    pub fn as_str(self) -> &'static str {
        match self {
            MislabelType::TypeA => "TYPE_A",
            MislabelType::TypeB => "TYPE_B",
            MislabelType::TypeC => "TYPE_C",
            MislabelType::HighVariation => "HIGH_VARIATION",
        }
    }

    pub fn is_false_alarm(self) -> bool {
        self == MislabelType::HighVariation
    }
}

impl fmt::Display for MislabelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MislabelType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MislabelType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown mislabel type {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub identity_id: String,
    pub mislabel_type: MislabelType,
    #[serde(default)]
    pub removed_samples: BTreeSet<String>,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerdictError {
    #[error("identity {0:?} is not flagged in the current report")]
    UnknownIdentity(String),
    #[error("sample {sample_id:?} does not belong to identity {identity_id:?}")]
    ForeignSample { identity_id: String, sample_id: String },
    #[error("HIGH_VARIATION verdicts cannot remove samples")]
    HighVariationWithRemovals,
    #[error("{0} verdicts must name at least one sample to remove")]
    NothingRemoved(MislabelType),
}

impl Verdict {
    /// Structural checks that need no dataset context.
    pub fn check_well_formed(&self) -> Result<(), VerdictError> {
        match self.mislabel_type {
            MislabelType::HighVariation if !self.removed_samples.is_empty() => {
                Err(VerdictError::HighVariationWithRemovals)
            }
            t @ (MislabelType::TypeA | MislabelType::TypeC) if self.removed_samples.is_empty() => {
                Err(VerdictError::NothingRemoved(t))
            }
            _ => Ok(()),
        }
    }
}

/// Append-only verdict history. The latest verdict per identity is the
/// effective one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerdictLog {
    history: Vec<Verdict>,
    effective: BTreeMap<String, usize>,
}

impl VerdictLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuild from a history without re-validating it.
    pub fn from_history(history: Vec<Verdict>) -> Self {
        let mut log = Self::new();
        for v in history {
            log.push_unchecked(v);
        }
        log
    }

    /// Validate `verdict` against the flagged set and manifest, then append.
    pub fn record(
        &mut self,
        verdict: Verdict,
        flagged: &BTreeSet<String>,
        manifest: &DatasetManifest,
    ) -> Result<&Verdict, VerdictError> {
        check_verdict(&verdict, flagged, manifest)?;
        self.push_unchecked(verdict);
        Ok(self.history.last().expect("just pushed"))
    }

    fn push_unchecked(&mut self, verdict: Verdict) {
        self.effective.insert(verdict.identity_id.clone(), self.history.len());
        self.history.push(verdict);
    }

    pub fn history(&self) -> &[Verdict] {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn effective(&self, identity_id: &str) -> Option<&Verdict> {
        self.effective.get(identity_id).map(|&i| &self.history[i])
    }

    /// Effective verdicts in identity order.
    pub fn effective_verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.effective.values().map(|&i| &self.history[i])
    }

    pub fn effective_count(&self) -> usize {
        self.effective.len()
    }
}

pub fn check_verdict(
    verdict: &Verdict,
    flagged: &BTreeSet<String>,
    manifest: &DatasetManifest,
) -> Result<(), VerdictError> {
    if !flagged.contains(&verdict.identity_id) {
        return Err(VerdictError::UnknownIdentity(verdict.identity_id.clone()));
    }
    verdict.check_well_formed()?;
    for s in &verdict.removed_samples {
        match manifest.sample(s) {
            Some(rec) if rec.identity_id == verdict.identity_id => {}
            _ => {
                return Err(VerdictError::ForeignSample {
                    identity_id: verdict.identity_id.clone(),
                    sample_id: s.clone(),
                })
            }
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum LogFileError {
    #[error("verdict log {path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("verdict log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Newline-delimited JSON verdict log on disk.
///
/// Each append is flushed and synced before returning, so a verdict that was
/// acknowledged survives a crash.
#[derive(Debug)]
pub struct VerdictLogFile {
    path: PathBuf,
    file: File,
}

impl VerdictLogFile {
    /// Open (creating if missing) and return the existing history.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, VerdictLog), LogFileError> {
        let path = path.as_ref().to_path_buf();
        let history = if path.exists() { read_verdicts(&path)? } else { Vec::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| LogFileError::Io { path: path.clone(), source })?;
        Ok((Self { path, file }, VerdictLog::from_history(history)))
    }

    pub fn append(&mut self, verdict: &Verdict) -> Result<(), LogFileError> {
        let mut line = serde_json::to_vec(verdict).expect("verdict serializes");
        line.push(b'\n');
        let io_err = |source| LogFileError::Io { path: self.path.clone(), source };
        self.file.write_all(&line).map_err(io_err)?;
        self.file.sync_data().map_err(|source| LogFileError::Io { path: self.path.clone(), source })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>, LogFileError> {
    let f = File::open(path).map_err(|source| LogFileError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| LogFileError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Verdict = serde_json::from_str(&line).map_err(|e| LogFileError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SampleRemoval {
    pub identity_id: String,
    pub sample_id: String,
    pub reason: MislabelType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleaningPlan {
    pub sample_removals: BTreeSet<SampleRemoval>,
    pub identity_removals: BTreeMap<String, MislabelType>,
    pub min_remaining: usize,
}

impl CleaningPlan {
    pub fn empty(min_remaining: usize) -> Self {
        Self { sample_removals: BTreeSet::new(), identity_removals: BTreeMap::new(), min_remaining }
    }

    pub fn is_empty(&self) -> bool {
        self.sample_removals.is_empty() && self.identity_removals.is_empty()
    }
}

/// Turn the effective verdicts into removals.
///
/// Verdicts for identities absent from `manifest`, and removed samples no
/// longer in it, are skipped; this lets a log be replayed against a manifest
/// that was already cleaned.
pub fn compile_plan(log: &VerdictLog, manifest: &DatasetManifest, min_remaining: usize) -> CleaningPlan {
    let mut plan = CleaningPlan::empty(min_remaining);
    for v in log.effective_verdicts() {
        let Some(positions) = manifest.positions(&v.identity_id) else {
            continue;
        };
        let removed: Vec<&String> = v
            .removed_samples
            .iter()
            .filter(|s| manifest.sample(s).is_some_and(|r| r.identity_id == v.identity_id))
            .collect();
        match v.mislabel_type {
            MislabelType::HighVariation => {}
            MislabelType::TypeB => {
                plan.identity_removals.insert(v.identity_id.clone(), MislabelType::TypeB);
            }
            MislabelType::TypeA if positions.len() - removed.len() < min_remaining => {
                plan.identity_removals.insert(v.identity_id.clone(), MislabelType::TypeA);
            }
            t @ (MislabelType::TypeA | MislabelType::TypeC) => {
                for s in removed {
                    plan.sample_removals.insert(SampleRemoval {
                        identity_id: v.identity_id.clone(),
                        sample_id: s.clone(),
                        reason: t,
                    });
                }
            }
        }
    }
    plan
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RemovalAction {
    RemoveSample,
    RemoveIdentity,
}

impl RemovalAction {
    pub fn as_str(self) -> &'static str {
        match self {
            RemovalAction::RemoveSample => "REMOVE_SAMPLE",
            RemovalAction::RemoveIdentity => "REMOVE_IDENTITY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RemovalEntry {
    pub identity_id: String,
    pub sample_id: String,
    pub action: RemovalAction,
    pub mislabel_type: MislabelType,
}

impl PartialOrd for RemovalAction {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RemovalAction {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.as_str().cmp(other.as_str())
    }
}

/// Remove everything the plan names. Returns the cleaned manifest and one
/// removal entry per removed sample, sorted by identity then sample id.
pub fn apply_plan(manifest: &DatasetManifest, plan: &CleaningPlan) -> (DatasetManifest, Vec<RemovalEntry>) {
    let mut removed: BTreeMap<(String, String), (RemovalAction, MislabelType)> = BTreeMap::new();
    for (identity, &reason) in &plan.identity_removals {
        for &p in manifest.positions(identity).unwrap_or(&[]) {
            let s = &manifest.samples()[p];
            removed.insert(
                (identity.clone(), s.sample_id.clone()),
                (RemovalAction::RemoveIdentity, reason),
            );
        }
    }
    for r in &plan.sample_removals {
        if plan.identity_removals.contains_key(&r.identity_id) {
            continue;
        }
        if manifest.sample(&r.sample_id).is_some_and(|s| s.identity_id == r.identity_id) {
            removed.insert(
                (r.identity_id.clone(), r.sample_id.clone()),
                (RemovalAction::RemoveSample, r.reason),
            );
        }
    }
    let cleaned = manifest.retain_samples(|s| !removed.contains_key(&(s.identity_id.clone(), s.sample_id.clone())));
    let entries = removed
        .into_iter()
        .map(|((identity_id, sample_id), (action, mislabel_type))| RemovalEntry {
            identity_id,
            sample_id,
            action,
            mislabel_type,
        })
        .collect();
    (cleaned, entries)
}

pub const REMOVAL_LIST_HEADER: &str = "sample_id,identity_id,action,mislabel_type";

pub fn write_removal_list<W: Write>(entries: &[RemovalEntry], mut w: W) -> io::Result<()> {
    writeln!(w, "{REMOVAL_LIST_HEADER}")?;
    for e in entries {
        writeln!(w, "{},{},{},{}", e.sample_id, e.identity_id, e.action.as_str(), e.mislabel_type)?;
    }
    w.flush()
}

/// Parse a removal list; lines starting with `#` before the header are
/// skipped.
pub fn read_removal_list<B: BufRead>(r: B) -> Result<Vec<RemovalEntry>, String> {
    let mut entries = Vec::new();
    let mut seen_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let n = i + 1;
        if !seen_header {
            if line.starts_with('#') {
                continue;
            }
            if line != REMOVAL_LIST_HEADER {
                return Err(format!("line {n}: expected header `{REMOVAL_LIST_HEADER}`"));
            }
            seen_header = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(format!("line {n}: expected 4 columns, found {}", cols.len()));
        }
        let action = match cols[2] {
            "REMOVE_SAMPLE" => RemovalAction::RemoveSample,
            "REMOVE_IDENTITY" => RemovalAction::RemoveIdentity,
            other => return Err(format!("line {n}: unknown action {other:?}")),
        };
        let mislabel_type = cols[3].parse().map_err(|e| format!("line {n}: {e}"))?;
        entries.push(RemovalEntry {
            sample_id: cols[0].to_string(),
            identity_id: cols[1].to_string(),
            action,
            mislabel_type,
        });
    }
    if !seen_header {
        return Err("removal list is empty".into());
    }
    Ok(entries)
}

/// Write `contents` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| io::Error::other("output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

/// Path of the provenance sidecar written next to `path`.
pub fn provenance_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}

/// Write the cleaned manifest (with a provenance sidecar) and the removal
/// list (with a provenance comment line), each atomically.
pub fn write_cleaning_outputs(
    manifest_path: &Path,
    removals_path: &Path,
    cleaned: &DatasetManifest,
    entries: &[RemovalEntry],
    provenance: &Provenance,
) -> io::Result<()> {
    let mut removals = provenance.comment_line().into_bytes();
    write_removal_list(entries, &mut removals)?;
    let mut sidecar = serde_json::to_vec_pretty(provenance).expect("provenance serializes");
    sidecar.push(b'\n');
    write_atomic(removals_path, &removals)?;
    write_atomic(&provenance_sidecar(manifest_path), &sidecar)?;
    write_atomic(manifest_path, cleaned.to_text().as_bytes())
}
