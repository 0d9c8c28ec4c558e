//! Identity thresholding, pair thresholding and review-queue selection.
//!
//! 1. The identities with the largest id scores are flagged, either a fraction
//!    of the scorable identities (rounded up) or an absolute count.
//! 2. The pair threshold is the mean id score. Inside each flagged identity,
//!    every pair strictly above it is recorded, along with how many such
//!    pairs each sample takes part in (its image frequency).
//! 3. The review queue is chosen greedily: with NoP the number of flagged
//!    pairs, samples are taken in descending frequency order and each one's
//!    frequency is subtracted from NoP until NoP drops to zero or below.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{DatasetManifest, EmbeddingMatrix};
use crate::scalar::Real;
use crate::scoring::{distance_unchecked, sort_by_score_desc, IdentityScore, PairScore};

pub const DEFAULT_IDENTITY_FRACTION: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OutlierError {
    #[error("identity fraction {0} outside (0, 1]")]
    FractionOutOfRange(f64),
    #[error("flag count must be at least 1")]
    ZeroCount,
    #[error("no scorable identities (every identity has fewer than two samples)")]
    NoScorableIdentities,
    #[error("pair threshold {0} must be finite and nonnegative")]
    BadPairThreshold(f64),
    #[error("flagged identity {0:?} has no score")]
    UnknownIdentity(String),
    #[error("malformed report line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("report is missing its header record")]
    MissingHeader,
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<io::Error> for OutlierError {
    fn from(e: io::Error) -> Self {
        OutlierError::Io(e.to_string())
    }
}

/// How many identities the first thresholding stage flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum FlagSelection {
    Fraction(f64),
    Count(usize),
}

impl Default for FlagSelection {
    fn default() -> Self {
        FlagSelection::Fraction(DEFAULT_IDENTITY_FRACTION)
    }
}

impl FlagSelection {
    pub fn validate(&self) -> Result<(), OutlierError> {
        match *self {
            FlagSelection::Fraction(f) if !(f > 0.0 && f <= 1.0) => Err(OutlierError::FractionOutOfRange(f)),
            FlagSelection::Count(0) => Err(OutlierError::ZeroCount),
            _ => Ok(()),
        }
    }

    /// Number of identities flagged out of `scorable`.
    pub fn flag_count(&self, scorable: usize) -> Result<usize, OutlierError> {
        self.validate()?;
        Ok(match *self {
            FlagSelection::Fraction(f) => ceil_fraction(f, scorable),
            FlagSelection::Count(k) => k.min(scorable),
        })
    }
}

/// `ceil(fraction × n)`, treating products within 1e-9 (relative) of an
/// integer as that integer so that e.g. 0.07 × 100 flags 7, not 8.
fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (k as usize).min(n)
}

/// Flag the identities with the largest id scores, worst first.
pub fn threshold_identities<R: Real>(
    scores: &[IdentityScore<R>],
    selection: FlagSelection,
) -> Result<Vec<String>, OutlierError> {
    selection.validate()?;
    let mut scorable: Vec<&IdentityScore<R>> = scores.iter().filter(|s| s.is_scorable()).collect();
    if scorable.is_empty() {
        return Err(OutlierError::NoScorableIdentities);
    }
    let k = selection.flag_count(scorable.len())?;
    sort_by_score_desc(&mut scorable);
    Ok(scorable.into_iter().take(k).map(|s| s.identity_id.clone()).collect())
}

/// Which identities contribute to the mean that defines the pair threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPopulation {
    /// Every scorable identity, flagged or not.
    #[default]
    AllScorable,
    /// Scorable identities outside the flagged set (sensitivity studies).
    ExcludeFlagged,
}

/// Mean id score over scorable identities not in `exclude`.
///
/// Deviations from the first contributing score are summed in identity
/// order, so a population of identical scores yields that score exactly.
pub fn compute_pair_threshold<R: Real>(
    scores: &[IdentityScore<R>],
    exclude: &BTreeSet<String>,
) -> Result<R, OutlierError> {
    let mut values = scores
        .iter()
        .filter(|s| !exclude.contains(&s.identity_id))
        .filter_map(|s| s.id_score);
    let shift = values.next().ok_or(OutlierError::NoScorableIdentities)?;
    let mut deviation = R::zero();
    let mut n = 1usize;
    for v in values {
        deviation = deviation + (v - shift);
        n += 1;
    }
    Ok(shift + deviation / R::from_count(n))
}

/// Pairs of one identity scoring strictly above `pair_threshold`, in
/// canonical `(a, b)` order, plus the image frequency of each sample involved.
pub fn flag_pairs<R: Real>(
    positions: &[usize],
    manifest: &DatasetManifest,
    embeddings: &EmbeddingMatrix,
    pair_threshold: R,
) -> (Vec<PairScore<R>>, BTreeMap<String, usize>) {
    let samples = manifest.samples();
    let mut members: Vec<(&str, &[f32])> = positions
        .iter()
        .map(|&p| (samples[p].sample_id.as_str(), embeddings.row(samples[p].row)))
        .collect();
    members.sort_unstable_by(|x, y| x.0.cmp(y.0));

    let mut pairs = Vec::new();
    let mut frequency: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            let d: R = distance_unchecked(members[i].1, members[j].1);
            if d > pair_threshold {
                pairs.push(PairScore { a: members[i].0.to_string(), b: members[j].0.to_string(), distance: d });
                *frequency.entry(members[i].0.to_string()).or_default() += 1;
                *frequency.entry(members[j].0.to_string()).or_default() += 1;
            }
        }
    }
    (pairs, frequency)
}

/// Greedy selection of samples for manual examination.
///
/// NoP starts at the number of flagged pairs. Samples are visited by
/// descending image frequency (ties by ascending sample id); each visited
/// sample is selected and its frequency subtracted from NoP, stopping as
/// soon as NoP ≤ 0.
pub fn build_review_queue<R: Real>(
    flagged_pairs: &[PairScore<R>],
    image_frequency: &BTreeMap<String, usize>,
) -> Vec<String> {
    let mut remaining = flagged_pairs.len() as i64;
    let mut ranked: Vec<(&String, usize)> = image_frequency.iter().map(|(s, &f)| (s, f)).collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(y.0)));

    let mut queue = Vec::new();
    for (sample, freq) in ranked {
        if remaining <= 0 {
            break;
        }
        queue.push(sample.clone());
        remaining -= freq as i64;
    }
    queue
}

/// Per flagged identity outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct FlaggedIdentity<R> {
    pub identity_id: String,
    pub id_score: R,
    pub sample_count: usize,
    /// NoP: number of flagged pairs.
    pub nop: usize,
    pub flagged_pairs: Vec<PairScore<R>>,
    pub image_frequency: BTreeMap<String, usize>,
    pub review_queue: Vec<String>,
}

impl<R: Real> FlaggedIdentity<R> {
    /// Flagged by id score but no pair exceeded the pair threshold.
    pub fn no_specific_pair(&self) -> bool {
        self.flagged_pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairThresholdSource {
    MeanAllScorable,
    MeanExcludingFlagged,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct ReportHeader<R> {
    pub selection: FlagSelection,
    pub pair_threshold: R,
    pub pair_threshold_source: PairThresholdSource,
    pub scorable_identities: usize,
    pub flagged_identities: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport<R> {
    pub header: ReportHeader<R>,
    /// Worst id score first.
    pub identities: Vec<FlaggedIdentity<R>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReportOptions<R> {
    pub selection: FlagSelection,
    pub pair_threshold: Option<R>,
    pub population: ThresholdPopulation,
}

/// Outcome of the two thresholding stages before pair flagging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct FlagDecision<R> {
    pub selection: FlagSelection,
    pub pair_threshold: R,
    pub pair_threshold_source: PairThresholdSource,
    pub scorable_identities: usize,
    pub flagged: Vec<String>,
}

pub fn decide_flags<R: Real>(
    scores: &[IdentityScore<R>],
    options: &ReportOptions<R>,
) -> Result<FlagDecision<R>, OutlierError> {
    let flagged = threshold_identities(scores, options.selection)?;
    let (pair_threshold, source) = match options.pair_threshold {
        Some(t) => {
            if !(t.is_finite() && t >= R::zero()) {
                return Err(OutlierError::BadPairThreshold(t.to_f64_lossy()));
            }
            (t, PairThresholdSource::Override)
        }
        None => match options.population {
            ThresholdPopulation::AllScorable => {
                (compute_pair_threshold(scores, &BTreeSet::new())?, PairThresholdSource::MeanAllScorable)
            }
            ThresholdPopulation::ExcludeFlagged => {
                let exclude: BTreeSet<String> = flagged.iter().cloned().collect();
                (compute_pair_threshold(scores, &exclude)?, PairThresholdSource::MeanExcludingFlagged)
            }
        },
    };
    Ok(FlagDecision {
        selection: options.selection,
        pair_threshold,
        pair_threshold_source: source,
        scorable_identities: scores.iter().filter(|s| s.is_scorable()).count(),
        flagged,
    })
}

/// Flag pairs and build queues for an already-decided flagged set.
pub fn assemble_report<R: Real>(
    decision: &FlagDecision<R>,
    scores: &[IdentityScore<R>],
    manifest: &DatasetManifest,
    embeddings: &EmbeddingMatrix,
) -> Result<OutlierReport<R>, OutlierError> {
    let by_id: HashMap<&str, &IdentityScore<R>> = scores.iter().map(|s| (s.identity_id.as_str(), s)).collect();
    let mut inputs = Vec::with_capacity(decision.flagged.len());
    for id in &decision.flagged {
        let score = by_id
            .get(id.as_str())
            .and_then(|s| s.id_score)
            .ok_or_else(|| OutlierError::UnknownIdentity(id.clone()))?;
        let positions = manifest.positions(id).ok_or_else(|| OutlierError::UnknownIdentity(id.clone()))?;
        inputs.push((id, score, positions));
    }
    let identities = inputs
        .par_iter()
        .map(|&(id, id_score, positions)| {
            let (flagged_pairs, image_frequency) = flag_pairs(positions, manifest, embeddings, decision.pair_threshold);
            let review_queue = build_review_queue(&flagged_pairs, &image_frequency);
            FlaggedIdentity {
                identity_id: id.clone(),
                id_score,
                sample_count: positions.len(),
                nop: flagged_pairs.len(),
                flagged_pairs,
                image_frequency,
                review_queue,
            }
        })
        .collect::<Vec<_>>();
    Ok(OutlierReport {
        header: ReportHeader {
            selection: decision.selection,
            pair_threshold: decision.pair_threshold,
            pair_threshold_source: decision.pair_threshold_source,
            scorable_identities: decision.scorable_identities,
            flagged_identities: identities.len(),
        },
        identities,
    })
}

/// Run both thresholding stages and queue selection.
pub fn build_report<R: Real>(
    scores: &[IdentityScore<R>],
    manifest: &DatasetManifest,
    embeddings: &EmbeddingMatrix,
    options: &ReportOptions<R>,
) -> Result<OutlierReport<R>, OutlierError> {
    let decision = decide_flags(scores, options)?;
    assemble_report(&decision, scores, manifest, embeddings)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", bound = "R: Real")]
enum ReportLine<R> {
    Provenance(serde_json::Value),
    Header(ReportHeader<R>),
    Identity(FlaggedIdentity<R>),
}

impl<R: Real> OutlierReport<R> {
    pub fn flagged_ids(&self) -> impl Iterator<Item = &str> {
        self.identities.iter().map(|i| i.identity_id.as_str())
    }

    pub fn identity(&self, identity_id: &str) -> Option<&FlaggedIdentity<R>> {
        self.identities.iter().find(|i| i.identity_id == identity_id)
    }

    /// JSON Lines: optional provenance record, a header record, then one
    /// record per flagged identity in report order.
    pub fn write_jsonl<W: Write>(&self, mut w: W, provenance: Option<&serde_json::Value>) -> io::Result<()> {
        if let Some(p) = provenance {
            write_line(&mut w, &ReportLine::<R>::Provenance(p.clone()))?;
        }
        write_line(&mut w, &ReportLine::Header(self.header.clone()))?;
        for ident in &self.identities {
            write_line(&mut w, &ReportLine::Identity(ident.clone()))?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf, None).expect("write to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    /// Parse a report written by [`write_jsonl`](Self::write_jsonl). The
    /// provenance record, if any, is returned alongside.
    pub fn read_jsonl<B: BufRead>(r: B) -> Result<(Self, Option<serde_json::Value>), OutlierError> {
        let mut header = None;
        let mut provenance = None;
        let mut identities = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReportLine<R> = serde_json::from_str(&line)
                .map_err(|e| OutlierError::Parse { line: i + 1, message: e.to_string() })?;
            match parsed {
                ReportLine::Provenance(p) => provenance = Some(p),
                ReportLine::Header(h) => header = Some(h),
                ReportLine::Identity(ident) => identities.push(ident),
            }
        }
        let header = header.ok_or(OutlierError::MissingHeader)?;
        Ok((Self { header, identities }, provenance))
    }
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(io::Error::other)?;
    w.write_all(b"\n")
}
