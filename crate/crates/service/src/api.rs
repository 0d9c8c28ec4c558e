use std::collections::BTreeMap;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::Utc;
use idclean_core::cleaning::{check_verdict, write_cleaning_outputs, VerdictError};
use idclean_core::provenance::Provenance;
use idclean_core::reporting::{id_score_histogram, summary, verification_roc};
use idclean_core::{apply_plan, compile_plan, Census, MislabelType, PairScore, Verdict};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::session::ReviewSession;

pub const TOKEN_HEADER: &str = "x-idclean-token";

type Session = State<Arc<ReviewSession>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Done,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueueEntry {
    pub identity_id: String,
    pub id_score: f64,
    pub queue_length: usize,
    pub status: ReviewStatus,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleView {
    pub sample_id: String,
    pub image_path: String,
    pub image_url: String,
    pub in_queue: bool,
    /// Position in the review queue, when queued.
    pub queue_rank: Option<usize>,
    /// Flagged pairs this sample takes part in.
    pub frequency: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IdentityDetail {
    pub identity_id: String,
    pub id_score: f64,
    pub sample_count: usize,
    pub nop: usize,
    pub status: ReviewStatus,
    pub no_specific_pair: bool,
    pub samples: Vec<SampleView>,
    pub review_queue: Vec<String>,
    /// Sorted by distance, largest first.
    pub flagged_pairs: Vec<PairScore>,
    pub effective_verdict: Option<Verdict>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub identity_id: String,
    pub mislabel_type: MislabelType,
    #[serde(default)]
    pub removed_samples: Vec<String>,
    pub reviewer: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerdictResponse {
    pub ok: bool,
    pub effective_verdict: Verdict,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProgressTotals {
    pub flagged: usize,
    pub verdicts_recorded: usize,
    pub by_type: BTreeMap<MislabelType, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Progress {
    pub pending: usize,
    pub done: usize,
    pub totals: ProgressTotals,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ApplyRequest {
    pub min_remaining: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HistogramTable {
    pub rows: Vec<HistogramRow>,
    pub total: usize,
    pub pair_threshold: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RocRow {
    /// `None` for the leading point, whose threshold is negative infinity.
    pub threshold: Option<f64>,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RocTable {
    pub rows: Vec<RocRow>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
    pub seed: u64,
}

pub async fn queue(State(s): Session) -> Json<Vec<QueueEntry>> {
    let state = s.lock_verdicts();
    let entries = s
        .report
        .identities
        .iter()
        .map(|f| QueueEntry {
            identity_id: f.identity_id.clone(),
            id_score: f.id_score,
            queue_length: f.review_queue.len(),
            status: if state.log.effective(&f.identity_id).is_some() {
                ReviewStatus::Done
            } else {
                ReviewStatus::Pending
            },
        })
        .collect();
    Json(entries)
}

pub async fn identity(State(s): Session, Path(id): Path<String>) -> Result<Json<IdentityDetail>, ApiError> {
    let flagged = s.report.identity(&id).ok_or_else(|| ApiError::not_found(format!("identity {id:?} is not flagged")))?;
    let rank: BTreeMap<&str, usize> =
        flagged.review_queue.iter().enumerate().map(|(i, sid)| (sid.as_str(), i)).collect();
    let samples = s
        .manifest
        .positions(&id)
        .unwrap_or(&[])
        .iter()
        .map(|&p| {
            let rec = &s.manifest.samples()[p];
            let queue_rank = rank.get(rec.sample_id.as_str()).copied();
            SampleView {
                sample_id: rec.sample_id.clone(),
                image_path: rec.image_path.clone(),
                image_url: format!("/img/{}", rec.sample_id),
                in_queue: queue_rank.is_some(),
                queue_rank,
                frequency: flagged.image_frequency.get(&rec.sample_id).copied().unwrap_or(0),
            }
        })
        .collect();
    let mut flagged_pairs = flagged.flagged_pairs.clone();
    flagged_pairs.sort_by(|x, y| {
        y.distance.total_cmp(&x.distance).then_with(|| (&x.a, &x.b).cmp(&(&y.a, &y.b)))
    });
    let effective_verdict = s.lock_verdicts().log.effective(&id).cloned();
    Ok(Json(IdentityDetail {
        identity_id: id,
        id_score: flagged.id_score,
        sample_count: flagged.sample_count,
        nop: flagged.nop,
        status: if effective_verdict.is_some() { ReviewStatus::Done } else { ReviewStatus::Pending },
        no_specific_pair: flagged.no_specific_pair(),
        samples,
        review_queue: flagged.review_queue.clone(),
        flagged_pairs,
        effective_verdict,
    }))
}

pub async fn verdict(
    State(s): Session,
    body: Result<Json<VerdictRequest>, JsonRejection>,
) -> Result<Json<VerdictResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::unprocessable(e.body_text()))?;
    if req.reviewer.trim().is_empty() {
        return Err(ApiError::unprocessable("reviewer must not be empty"));
    }
    let verdict = Verdict {
        identity_id: req.identity_id,
        mislabel_type: req.mislabel_type,
        removed_samples: req.removed_samples.into_iter().collect(),
        reviewer: req.reviewer,
        timestamp: Utc::now(),
    };
    let session = s.clone();
    // Validate, persist, then update memory, all under the writer lock: the
    // log file and the in-memory log never disagree.
    let recorded = tokio::task::spawn_blocking(move || {
        let mut state = session.lock_verdicts();
        check_verdict(&verdict, &session.flagged, &session.manifest).map_err(|e| match e {
            VerdictError::UnknownIdentity(_) => ApiError::not_found(e.to_string()),
            _ => ApiError::unprocessable(e.to_string()),
        })?;
        state.file.append(&verdict).map_err(|e| ApiError::internal(e.to_string()))?;
        let v = state
            .log
            .record(verdict, &session.flagged, &session.manifest)
            .expect("verdict was checked before appending");
        Ok::<_, ApiError>(v.clone())
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(VerdictResponse { ok: true, effective_verdict: recorded }))
}

pub async fn progress(State(s): Session) -> Json<Progress> {
    let state = s.lock_verdicts();
    let done = s.flagged.iter().filter(|id| state.log.effective(id).is_some()).count();
    let mut by_type = BTreeMap::new();
    for v in state.log.effective_verdicts() {
        *by_type.entry(v.mislabel_type).or_insert(0) += 1;
    }
    Json(Progress {
        pending: s.flagged.len() - done,
        done,
        totals: ProgressTotals { flagged: s.flagged.len(), verdicts_recorded: state.log.len(), by_type },
    })
}

pub async fn apply(State(s): Session, body: Result<Json<ApplyRequest>, JsonRejection>) -> Result<Json<Census>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::unprocessable(e.body_text()))?;
    let min_remaining = req.min_remaining.unwrap_or(s.default_min_remaining);
    if min_remaining == 0 {
        return Err(ApiError::unprocessable("min_remaining must be at least 1"));
    }
    let _guard = s.try_begin_apply().ok_or_else(|| ApiError::conflict("an apply is already in progress"))?;
    let session = s.clone();
    let census = tokio::task::spawn_blocking(move || run_apply(&session, min_remaining))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(census))
}

fn run_apply(s: &ReviewSession, min_remaining: usize) -> Result<Census, ApiError> {
    let (log, provenance) = {
        let state = s.lock_verdicts();
        if state.log.effective_count() == 0 {
            return Err(ApiError::unprocessable("no verdicts recorded; nothing to apply"));
        }
        let mut prov = Provenance::new("apply").param("min_remaining", min_remaining);
        if let Some(path) = &s.manifest_path {
            prov = prov.input("manifest", path).map_err(|e| ApiError::internal(e.to_string()))?;
        }
        prov = prov.input("verdicts", state.file.path()).map_err(|e| ApiError::internal(e.to_string()))?;
        (state.log.clone(), prov)
    };
    let plan = compile_plan(&log, &s.manifest, min_remaining);
    let (cleaned, entries) = apply_plan(&s.manifest, &plan);
    write_cleaning_outputs(&s.outputs.manifest, &s.outputs.removals, &cleaned, &entries, &provenance)
        .map_err(|e| ApiError::internal(format!("writing outputs: {e}")))?;
    Ok(summary(&s.manifest, &cleaned, &entries, &log, s.report.identities.len()))
}

pub async fn histogram(State(s): Session) -> Result<Json<HistogramTable>, ApiError> {
    let scores = s.scores.as_ref().ok_or_else(|| ApiError::not_found("no score set loaded"))?;
    let h = id_score_histogram(scores, s.histogram_bins).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let rows = h
        .counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramRow { bin_lo: h.bin_edges[i], bin_hi: h.bin_edges[i + 1], count })
        .collect();
    Ok(Json(HistogramTable { rows, total: h.total, pair_threshold: s.report.header.pair_threshold }))
}

pub async fn roc(State(s): Session) -> Result<Json<RocTable>, ApiError> {
    if s.embeddings.is_none() {
        return Err(ApiError::not_found("no embeddings loaded"));
    }
    let session = s.clone();
    let curve = tokio::task::spawn_blocking(move || {
        session
            .roc
            .get_or_init(|| {
                let emb = session.embeddings.as_ref().expect("checked above");
                verification_roc(&session.manifest, emb, &session.roc_options).map_err(|e| e.to_string())
            })
            .clone()
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(ApiError::unprocessable)?;
    let rows = curve
        .points
        .iter()
        .map(|p| RocRow { threshold: p.threshold.is_finite().then_some(p.threshold), tpr: p.tpr, fpr: p.fpr })
        .collect();
    Ok(Json(RocTable {
        rows,
        auc: curve.auc,
        positives: curve.positives,
        negatives: curve.negatives,
        seed: curve.seed,
    }))
}

/// Resolve a manifest image path under `root`, refusing anything that could
/// leave it.
pub fn resolve_image(root: &FsPath, image_path: &str) -> Result<PathBuf, ApiError> {
    let rel = FsPath::new(image_path);
    if rel.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, format!("image path {image_path:?} escapes the image root")));
    }
    Ok(root.join(rel))
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

pub fn placeholder_svg(sample_id: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"160\" height=\"160\" viewBox=\"0 0 160 160\">\
<rect width=\"160\" height=\"160\" fill=\"#d0d0d0\"/>\
<text x=\"80\" y=\"84\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\" fill=\"#404040\">{sample_id}</text>\
</svg>"
    )
}

pub async fn image(State(s): Session, Path(sample_id): Path<String>) -> Result<Response, ApiError> {
    let rec = s.manifest.sample(&sample_id).ok_or_else(|| ApiError::not_found(format!("unknown sample {sample_id:?}")))?;
    if let Some(root) = &s.image_root {
        let path = resolve_image(root, &rec.image_path)?;
        if let (Ok(canon_root), Ok(canon)) = (root.canonicalize(), path.canonicalize()) {
            if !canon.starts_with(&canon_root) {
                return Err(ApiError::new(StatusCode::FORBIDDEN, "image resolves outside the image root"));
            }
            if let Ok(bytes) = tokio::fs::read(&canon).await {
                return Ok(([(header::CONTENT_TYPE, content_type(&canon))], bytes).into_response());
            }
        }
    }
    let mut resp = ([(header::CONTENT_TYPE, "image/svg+xml")], placeholder_svg(&sample_id)).into_response();
    resp.headers_mut().insert("x-idclean-placeholder", HeaderValue::from_static("1"));
    Ok(resp)
}

/// Rejects requests without the shared token when one is configured. The
/// token may also be given as a `token` query parameter so image tags work.
pub async fn require_token(State(s): Session, req: Request, next: Next) -> Response {
    if let Some(expected) = &s.token {
        let from_header = req.headers().get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        let from_query = req
            .uri()
            .query()
            .and_then(|q| q.split('&').find_map(|kv| kv.strip_prefix("token=")));
        if from_header != Some(expected.as_str()) && from_query != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong review token").into_response();
        }
    }
    next.run(req).await
}
