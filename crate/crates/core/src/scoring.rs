//! Pair scores and per-identity id scores.
//!
//! A pair score is the Euclidean distance between the embeddings of two
//! samples that share an identity label. The id score of an identity is the
//! largest pair score over all of its positive pairs.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{DatasetManifest, EmbeddingMatrix};
use crate::scalar::{format_significant, Real};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding vectors must have dimension >= 1")]
    EmptyVector,
}

/// Distance between two samples of the same identity. `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct PairScore<R> {
    pub a: String,
    pub b: String,
    pub distance: R,
}

impl<R: Real> PairScore<R> {
    /// Build with canonical ordering of the two sample ids.
    pub fn new(x: &str, y: &str, distance: R) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        Self { a: a.to_string(), b: b.to_string(), distance }
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.a == sample_id || self.b == sample_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct IdentityScore<R> {
    pub identity_id: String,
    /// `None` for identities with fewer than two samples.
    pub id_score: Option<R>,
    pub worst_pair: Option<PairScore<R>>,
    pub sample_count: usize,
    pub pair_count: usize,
}

impl<R: Real> IdentityScore<R> {
    pub fn is_scorable(&self) -> bool {
        self.id_score.is_some()
    }
}

/// Euclidean distance, accumulated in `R` by ascending coordinate index.
pub fn pair_distance<R: Real>(x: &[f32], y: &[f32]) -> Result<R, ScoreError> {
    if x.len() != y.len() {
        return Err(ScoreError::DimensionMismatch { left: x.len(), right: y.len() });
    }
    if x.is_empty() {
        return Err(ScoreError::EmptyVector);
    }
    Ok(distance_unchecked(x, y))
}

#[inline]
pub(crate) fn distance_unchecked<R: Real>(x: &[f32], y: &[f32]) -> R {
    let mut acc = R::zero();
    for (&u, &v) in x.iter().zip(y) {
        let d = R::from_coord(u) - R::from_coord(v);
        acc = acc + d * d;
    }
    acc.sqrt()
}

/// Exhaustive worst-pair search over one identity.
///
/// `positions` index into `manifest.samples()`; their order does not matter.
/// Ties on distance resolve to the lexicographically smallest `(a, b)`.
pub fn score_identity<R: Real>(
    identity_id: &str,
    positions: &[usize],
    manifest: &DatasetManifest,
    embeddings: &EmbeddingMatrix,
) -> IdentityScore<R> {
    let samples = manifest.samples();
    let mut members: Vec<(&str, &[f32])> = positions
        .iter()
        .map(|&p| (samples[p].sample_id.as_str(), embeddings.row(samples[p].row)))
        .collect();
    members.sort_unstable_by(|x, y| x.0.cmp(y.0));

    let n = members.len();
    let pair_count = n * n.saturating_sub(1) / 2;
    // Pairs are visited in lexicographic (a, b) order, so a strict `>` keeps
    // the smallest pair among equal distances.
    let mut worst: Option<(usize, usize, R)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let d: R = distance_unchecked(members[i].1, members[j].1);
            if worst.is_none_or(|(_, _, w)| d > w) {
                worst = Some((i, j, d));
            }
        }
    }
    let worst_pair = worst.map(|(i, j, d)| PairScore {
        a: members[i].0.to_string(),
        b: members[j].0.to_string(),
        distance: d,
    });
    IdentityScore {
        identity_id: identity_id.to_string(),
        id_score: worst_pair.as_ref().map(|p| p.distance),
        worst_pair,
        sample_count: n,
        pair_count,
    }
}

/// Score every identity. Output is in identity order and does not depend on
/// how rayon schedules the work.
pub fn score_all<R: Real>(manifest: &DatasetManifest, embeddings: &EmbeddingMatrix) -> Vec<IdentityScore<R>> {
    let identities: Vec<(&str, &[usize])> = manifest.identities().collect();
    identities
        .par_iter()
        .map(|&(id, positions)| score_identity(id, positions, manifest, embeddings))
        .collect()
}

/// Number of positive pairs across the manifest.
pub fn total_pair_count(manifest: &DatasetManifest) -> usize {
    manifest.identities().map(|(_, p)| p.len() * p.len().saturating_sub(1) / 2).sum()
}

pub const SCORES_CSV_HEADER: &str = "identity_id,id_score,sample_count,pair_count,worst_a,worst_b";

/// Scores table: scorable identities by id score descending (ties by
/// identity id), then unscorable identities by id with empty score columns.
pub fn write_scores_csv<R: Real, W: Write>(scores: &[IdentityScore<R>], mut w: W) -> io::Result<()> {
    let mut scorable: Vec<&IdentityScore<R>> = scores.iter().filter(|s| s.is_scorable()).collect();
    sort_by_score_desc(&mut scorable);
    let mut unscorable: Vec<&IdentityScore<R>> = scores.iter().filter(|s| !s.is_scorable()).collect();
    unscorable.sort_by(|a, b| a.identity_id.cmp(&b.identity_id));

    writeln!(w, "{SCORES_CSV_HEADER}")?;
    for s in scorable.into_iter().chain(unscorable) {
        let score = s.id_score.map(|v| format_significant(v, 9)).unwrap_or_default();
        let (a, b) = s
            .worst_pair
            .as_ref()
            .map(|p| (p.a.as_str(), p.b.as_str()))
            .unwrap_or(("", ""));
        writeln!(w, "{},{},{},{},{},{}", s.identity_id, score, s.sample_count, s.pair_count, a, b)?;
    }
    w.flush()
}

/// Descending id score, ties by ascending identity id. Unscorable entries sort last.
pub(crate) fn sort_by_score_desc<R: Real>(items: &mut [&IdentityScore<R>]) {
    items.sort_by(|x, y| match (x.id_score, y.id_score) {
        (Some(a), Some(b)) => b
            .partial_cmp(&a)
            .expect("finite scores")
            .then_with(|| x.identity_id.cmp(&y.identity_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => x.identity_id.cmp(&y.identity_id),
    });
}

/// Full-precision score set exchanged between pipeline stages.
///
/// The CSV table is rounded for reading; this carries the exact values so a
/// later stage reproduces the in-process result bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct ScoresFile<R> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
    /// Whether embeddings were L2-normalized before scoring.
    pub normalize: bool,
    pub scores: Vec<IdentityScore<R>>,
}

impl<R: Real> ScoresFile<R> {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scores serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
