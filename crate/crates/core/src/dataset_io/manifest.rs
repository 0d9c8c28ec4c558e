//! Sample → identity manifests.
//!
//! Text layout: header `sample_id,identity_id,image_path,row`, one record per
//! LF-terminated line, no quoting. Identifiers use `[A-Za-z0-9._/-]`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const MANIFEST_HEADER: &str = "sample_id,identity_id,image_path,row";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest is empty (expected header `{MANIFEST_HEADER}`)")]
    Empty,
    #[error("line 1: bad header {found:?}, expected `{MANIFEST_HEADER}`")]
    BadHeader { found: String },
    #[error("line {line}: expected 4 columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: invalid {field} {value:?} (allowed characters: A-Z a-z 0-9 . _ / -)")]
    InvalidIdentifier { line: usize, field: &'static str, value: String },
    #[error("line {line}: empty image_path")]
    EmptyPath { line: usize },
    #[error("line {line}: row {value:?} is not a nonnegative integer")]
    BadRow { line: usize, value: String },
    #[error("line {line}: duplicate sample_id {sample_id:?} (first seen on line {first_line})")]
    DuplicateSampleId { line: usize, sample_id: String, first_line: usize },
    #[error("manifest is not valid UTF-8")]
    Encoding,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleRecord {
    pub sample_id: String,
    pub identity_id: String,
    pub image_path: String,
    pub row: usize,
}

/// Ordered sample list plus an identity index.
///
/// Identities iterate in ascending lexicographic order; positions within an
/// identity are sorted by `sample_id`. The sample list keeps file order so
/// that saving a loaded manifest reproduces the file byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    samples: Vec<SampleRecord>,
    identity_index: BTreeMap<String, Vec<usize>>,
    by_sample_id: HashMap<String, usize>,
}

pub fn is_valid_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'/' | b'-'))
}

impl DatasetManifest {
    /// Build a manifest from records. Fails on duplicate sample ids or
    /// identifiers outside the allowed character set; line numbers in the
    /// error assume the records would be written after a header line.
    pub fn from_samples(samples: Vec<SampleRecord>) -> Result<Self, ManifestError> {
        let mut by_sample_id = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            let line = pos + 2;
            check_record(s, line)?;
            if let Some(&first) = by_sample_id.get(&s.sample_id) {
                return Err(ManifestError::DuplicateSampleId {
                    line,
                    sample_id: s.sample_id.clone(),
                    first_line: first + 2,
                });
            }
            by_sample_id.insert(s.sample_id.clone(), pos);
        }
        let identity_index = build_index(&samples);
        Ok(Self { samples, identity_index, by_sample_id })
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        if text.is_empty() {
            return Err(ManifestError::Empty);
        }
        let mut lines = text.split_terminator('\n');
        let header = lines.next().ok_or(ManifestError::Empty)?;
        if header != MANIFEST_HEADER {
            return Err(ManifestError::BadHeader { found: header.to_string() });
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(ManifestError::ColumnCount { line: line_no, found: cols.len() });
            }
            let row = parse_row(cols[3]).ok_or_else(|| ManifestError::BadRow {
                line: line_no,
                value: cols[3].to_string(),
            })?;
            samples.push(SampleRecord {
                sample_id: cols[0].to_string(),
                identity_id: cols[1].to_string(),
                image_path: cols[2].to_string(),
                row,
            });
        }
        Self::from_samples(samples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let bytes = fs::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| ManifestError::Encoding)?;
        Self::parse(&text)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{MANIFEST_HEADER}")?;
        for s in &self.samples {
            writeln!(w, "{},{},{},{}", s.sample_id, s.identity_id, s.image_path, s.row)?;
        }
        w.flush()
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("write to memory");
        String::from_utf8(buf).expect("manifest is ASCII")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let f = fs::File::create(path)?;
        self.write_to(io::BufWriter::new(f))
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn identity_count(&self) -> usize {
        self.identity_index.len()
    }

    pub fn identity_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.identity_index
    }

    pub fn identities(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.identity_index.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn identity_ids(&self) -> impl Iterator<Item = &str> {
        self.identity_index.keys().map(String::as_str)
    }

    /// Positions (into [`samples`](Self::samples)) of one identity's members.
    pub fn positions(&self, identity_id: &str) -> Option<&[usize]> {
        self.identity_index.get(identity_id).map(Vec::as_slice)
    }

    pub fn contains_identity(&self, identity_id: &str) -> bool {
        self.identity_index.contains_key(identity_id)
    }

    pub fn sample(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.by_sample_id.get(sample_id).map(|&p| &self.samples[p])
    }

    pub fn position_of(&self, sample_id: &str) -> Option<usize> {
        self.by_sample_id.get(sample_id).copied()
    }

    /// Recompute the identity index from the sample list.
    pub fn rebuilt_index(&self) -> BTreeMap<String, Vec<usize>> {
        build_index(&self.samples)
    }

    /// Keep the samples for which `keep` returns true, preserving order.
    pub fn retain_samples(&self, mut keep: impl FnMut(&SampleRecord) -> bool) -> Self {
        let samples: Vec<SampleRecord> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        Self::from_samples(samples).expect("subset of a valid manifest is valid")
    }
}

fn check_record(s: &SampleRecord, line: usize) -> Result<(), ManifestError> {
    if !is_valid_identifier(&s.sample_id) {
        return Err(ManifestError::InvalidIdentifier {
            line,
            field: "sample_id",
            value: s.sample_id.clone(),
        });
    }
    if !is_valid_identifier(&s.identity_id) {
        return Err(ManifestError::InvalidIdentifier {
            line,
            field: "identity_id",
            value: s.identity_id.clone(),
        });
    }
    if s.image_path.is_empty() {
        return Err(ManifestError::EmptyPath { line });
    }
    Ok(())
}

fn parse_row(s: &str) -> Option<usize> {
    // Reject signs and whitespace that `str::parse` would otherwise tolerate.
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn build_index(samples: &[SampleRecord]) -> BTreeMap<String, Vec<usize>> {
    let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (pos, s) in samples.iter().enumerate() {
        index.entry(s.identity_id.clone()).or_default().push(pos);
    }
    for positions in index.values_mut() {
        positions.sort_by(|&a, &b| samples[a].sample_id.cmp(&samples[b].sample_id));
    }
    index
}
