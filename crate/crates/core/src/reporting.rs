//! Diagnostic tables: id-score histograms, verification ROC, cleaning census.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cleaning::{MislabelType, RemovalAction, RemovalEntry, VerdictLog};
use crate::dataset_io::{DatasetManifest, EmbeddingMatrix};
use crate::scalar::Real;
use crate::scoring::{distance_unchecked, IdentityScore};

pub const DEFAULT_HISTOGRAM_BINS: usize = 50;
/// Positive pairs beyond this count are subsampled for ROC measurement.
pub const DEFAULT_POSITIVE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportingError {
    #[error("no scorable identities")]
    NoScorableIdentities,
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("histogram range [{lo}, {hi}] is empty or not finite")]
    BadRange { lo: String, hi: String },
    #[error("verification ROC needs at least 2 identities, found {0}")]
    TooFewIdentities(usize),
    #[error("no positive pairs (every identity has a single sample)")]
    NoPositivePairs,
    #[error("negative pair count must be at least 1")]
    ZeroNegatives,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct Histogram<R> {
    /// `counts.len() + 1` strictly ascending edges.
    pub bin_edges: Vec<R>,
    pub counts: Vec<usize>,
    pub total: usize,
}

impl<R: Real> Histogram<R> {
    /// Index of the highest non-empty bin.
    pub fn max_occupied_bin(&self) -> Option<usize> {
        self.counts.iter().rposition(|&c| c > 0)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_lo,bin_hi,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", self.bin_edges[i], self.bin_edges[i + 1], c)?;
        }
        w.flush()
    }
}

/// Equal-width histogram of id scores over `[0, max id score]`.
pub fn id_score_histogram<R: Real>(scores: &[IdentityScore<R>], bins: usize) -> Result<Histogram<R>, ReportingError> {
    let max = scores
        .iter()
        .filter_map(|s| s.id_score)
        .fold(None, |m: Option<R>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or(ReportingError::NoScorableIdentities)?;
    let hi = if max > R::zero() { max } else { R::one() };
    histogram_over(scores, R::zero(), hi, bins)
}

/// Equal-width histogram over a fixed range. Values outside the range are
/// clamped into the first or last bin, so every scorable identity is counted.
pub fn histogram_over<R: Real>(
    scores: &[IdentityScore<R>],
    lo: R,
    hi: R,
    bins: usize,
) -> Result<Histogram<R>, ReportingError> {
    if bins == 0 {
        return Err(ReportingError::ZeroBins);
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(ReportingError::BadRange { lo: lo.to_string(), hi: hi.to_string() });
    }
    let width = hi - lo;
    let nb = R::from_count(bins);
    let bin_edges: Vec<R> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * R::from_count(i) / nb })
        .collect();
    let mut counts = vec![0usize; bins];
    let mut total = 0;
    for v in scores.iter().filter_map(|s| s.id_score) {
        let pos = ((v - lo) / width * nb).floor();
        let idx = if pos < R::zero() { 0 } else { pos.to_usize().unwrap_or(bins - 1).min(bins - 1) };
        counts[idx] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(ReportingError::NoScorableIdentities);
    }
    Ok(Histogram { bin_edges, counts, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct RocPoint<R> {
    /// Pairs with distance ≤ threshold are declared "same identity".
    pub threshold: R,
    pub tpr: R,
    pub fpr: R,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: Real")]
pub struct RocCurve<R> {
    pub points: Vec<RocPoint<R>>,
    pub auc: R,
    pub positives: usize,
    pub negatives: usize,
    pub seed: u64,
}

impl<R: Real> RocCurve<R> {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "threshold,tpr,fpr")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.threshold, p.tpr, p.fpr)?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RocOptions {
    /// Defaults to the number of positive pairs used.
    pub negative_pairs: Option<usize>,
    pub positive_cap: usize,
    pub seed: u64,
}

impl Default for RocOptions {
    fn default() -> Self {
        Self { negative_pairs: None, positive_cap: DEFAULT_POSITIVE_CAP, seed: 0 }
    }
}

/// Verification ROC from intra-identity (positive) and sampled
/// inter-identity (negative) pair distances.
///
/// Positives are every intra-identity pair, subsampled with the seed above
/// `positive_cap`. Negatives are drawn uniformly without replacement from all
/// inter-identity pairs. The curve has one point per distinct distance plus
/// a leading `(-inf, 0, 0)` point; AUC is the trapezoidal area computed in
/// integer arithmetic and divided once.
pub fn verification_roc<R: Real>(
    manifest: &DatasetManifest,
    embeddings: &EmbeddingMatrix,
    options: &RocOptions,
) -> Result<RocCurve<R>, ReportingError> {
    let identities = manifest.identity_count();
    if identities < 2 {
        return Err(ReportingError::TooFewIdentities(identities));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let samples = manifest.samples();

    let mut positives: Vec<(usize, usize)> = Vec::new();
    for (_, pos) in manifest.identities() {
        for i in 0..pos.len() {
            for j in i + 1..pos.len() {
                positives.push((pos[i], pos[j]));
            }
        }
    }
    if positives.is_empty() {
        return Err(ReportingError::NoPositivePairs);
    }
    if positives.len() > options.positive_cap {
        let mut keep = index::sample(&mut rng, positives.len(), options.positive_cap).into_vec();
        keep.sort_unstable();
        positives = keep.into_iter().map(|i| positives[i]).collect();
    }

    let n = samples.len();
    let intra_total: usize = manifest.identities().map(|(_, p)| p.len() * (p.len() - 1) / 2).sum();
    let inter_total = n * (n - 1) / 2 - intra_total;
    let wanted = options.negative_pairs.unwrap_or(positives.len());
    if wanted == 0 {
        return Err(ReportingError::ZeroNegatives);
    }
    let negatives = sample_negative_pairs(manifest, wanted.min(inter_total), inter_total, &mut rng);

    let dist = |&(p, q): &(usize, usize)| -> R {
        distance_unchecked(embeddings.row(samples[p].row), embeddings.row(samples[q].row))
    };
    let mut scored: Vec<(R, bool)> = positives.par_iter().map(|pq| (dist(pq), true)).collect();
    scored.par_extend(negatives.par_iter().map(|pq| (dist(pq), false)));
    Ok(roc_from_scored(scored, positives.len(), negatives.len(), options.seed))
}

fn sample_negative_pairs(
    manifest: &DatasetManifest,
    wanted: usize,
    inter_total: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let samples = manifest.samples();
    let n = samples.len();
    if wanted == inter_total {
        let mut all = Vec::with_capacity(inter_total);
        for i in 0..n {
            for j in i + 1..n {
                if samples[i].identity_id != samples[j].identity_id {
                    all.push((i, j));
                }
            }
        }
        return all;
    }
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(wanted);
    let mut out = Vec::with_capacity(wanted);
    while out.len() < wanted {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j || samples[i].identity_id == samples[j].identity_id {
            continue;
        }
        let pair = (i.min(j), i.max(j));
        if seen.insert(pair) {
            out.push(pair);
        }
    }
    out
}

/// Sweep thresholds over sorted `(distance, is_positive)` observations.
pub fn roc_from_scored<R: Real>(mut scored: Vec<(R, bool)>, positives: usize, negatives: usize, seed: u64) -> RocCurve<R> {
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
    let p = positives as u128;
    let nn = negatives as u128;
    let rate = |k: u128, total: u128| {
        if total == 0 {
            R::zero()
        } else {
            R::from_f64_lossy(k as f64 / total as f64)
        }
    };

    let mut points = vec![RocPoint { threshold: R::neg_infinity(), tpr: R::zero(), fpr: R::zero() }];
    let (mut tp, mut fp) = (0u128, 0u128);
    // Twice the trapezoid area, scaled by P·N.
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < scored.len() {
        let d = scored[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < scored.len() && scored[i].0 == d {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) * (tp + tp0);
        points.push(RocPoint { threshold: d, tpr: rate(tp, p), fpr: rate(fp, nn) });
    }
    let auc = if p == 0 || nn == 0 {
        R::nan()
    } else {
        R::from_f64_lossy(area2 as f64 / (2 * p * nn) as f64)
    };
    RocCurve { points, auc, positives, negatives, seed }
}

/// Before/after census of a cleaning run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub samples_before: usize,
    pub samples_after: usize,
    pub identities_before: usize,
    pub identities_after: usize,
    pub samples_removed: usize,
    pub identities_removed: usize,
    pub flagged: usize,
    pub reviewed: usize,
    /// Reviewed identities with a mislabel verdict (anything but HIGH_VARIATION).
    pub contaminated: usize,
    /// HIGH_VARIATION verdicts.
    pub false_alarms: usize,
    pub verdict_breakdown: BTreeMap<MislabelType, usize>,
    pub removals_by_action: BTreeMap<String, usize>,
    /// Identities whose whole folder was removed.
    pub folders_removed: usize,
}

pub fn summary(
    before: &DatasetManifest,
    after: &DatasetManifest,
    removals: &[RemovalEntry],
    verdicts: &VerdictLog,
    flagged: usize,
) -> Census {
    let mut verdict_breakdown = BTreeMap::new();
    for v in verdicts.effective_verdicts() {
        *verdict_breakdown.entry(v.mislabel_type).or_insert(0) += 1;
    }
    let false_alarms = verdict_breakdown.get(&MislabelType::HighVariation).copied().unwrap_or(0);
    let reviewed = verdicts.effective_count();
    let mut removals_by_action = BTreeMap::new();
    for r in removals {
        *removals_by_action.entry(r.action.as_str().to_string()).or_insert(0) += 1;
    }
    let removed_identities = removals
        .iter()
        .filter(|r| r.action == RemovalAction::RemoveIdentity)
        .map(|r| r.identity_id.as_str())
        .collect::<HashSet<_>>();
    Census {
        samples_before: before.sample_count(),
        samples_after: after.sample_count(),
        identities_before: before.identity_count(),
        identities_after: after.identity_count(),
        samples_removed: before.sample_count() - after.sample_count(),
        identities_removed: before.identity_count() - after.identity_count(),
        flagged,
        reviewed,
        contaminated: reviewed - false_alarms,
        false_alarms,
        verdict_breakdown,
        removals_by_action,
        folders_removed: removed_identities.len(),
    }
}
