//! One function per subcommand. Each reads documented files, writes its
//! outputs atomically into the output directory and embeds provenance.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use idclean_core::cleaning::{read_verdicts, write_atomic, write_cleaning_outputs, RemovalEntry};
use idclean_core::dataset_io::{EmbeddingError, ManifestError};
use idclean_core::outlier::{assemble_report, decide_flags, OutlierError, DEFAULT_IDENTITY_FRACTION};
use idclean_core::provenance::{sha256_file, Provenance};
use idclean_core::reporting::{histogram_over, id_score_histogram, summary, verification_roc, RocOptions};
use idclean_core::scoring::{score_all, write_scores_csv};
use idclean_core::synth::{celeba_shaped, planted_noise, shuffle_labels, CelebaShapeConfig, PlantedNoiseConfig};
use idclean_core::{
    apply_plan, compile_plan, validate, Census, DatasetManifest, EmbeddingMatrix, FlagDecision, FlagSelection,
    Histogram, IdentityScore, MislabelType, OutlierReport, ReportOptions, RocCurve, ScoresFile,
    ThresholdPopulation, ValidationReport, VerdictLog,
};
use serde::{Deserialize, Serialize};

use crate::args::{ApplyArgs, DataArgs, FlagArgs, QueueArgs, ReportArgs, ScoreArgs, ServeArgs, SynthArgs, SynthKind};
use crate::error::{data, user, CliError};

pub const SCORES_CSV: &str = "scores.csv";
pub const SCORES_JSON: &str = "scores.json";
pub const FLAGGED_JSON: &str = "flagged.json";
pub const REPORT_JSONL: &str = "report.jsonl";
pub const CLEANED_MANIFEST: &str = "cleaned_manifest.csv";
pub const REMOVALS_CSV: &str = "removals.csv";

/// Output of the `flag` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagFile {
    pub provenance: Provenance,
    pub decision: FlagDecision,
}

// ---- input helpers -------------------------------------------------------

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(user(format!("{what} {} does not exist", path.display())))
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    require_file(path, "manifest")?;
    DatasetManifest::load(path).map_err(|e| match e {
        ManifestError::Io(e) => user(format!("reading manifest {}: {e}", path.display())),
        e => data(format!("manifest {}: {e}", path.display())),
    })
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix, CliError> {
    require_file(path, "embedding file")?;
    EmbeddingMatrix::load(path).map_err(|e| match e {
        EmbeddingError::Io(e) => user(format!("reading embeddings {}: {e}", path.display())),
        e => data(format!("embeddings {}: {e}", path.display())),
    })
}

fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    require_file(path, what)?;
    fs::read_to_string(path).map_err(|e| user(format!("reading {what} {}: {e}", path.display())))
}

pub fn load_scores(path: &Path) -> Result<ScoresFile, CliError> {
    let text = read_text(path, "score file")?;
    ScoresFile::from_json(&text).map_err(|e| data(format!("score file {}: {e}", path.display())))
}

pub fn load_flag_file(path: &Path) -> Result<FlagFile, CliError> {
    let text = read_text(path, "flag file")?;
    serde_json::from_str(&text).map_err(|e| data(format!("flag file {}: {e}", path.display())))
}

pub fn load_report(path: &Path) -> Result<OutlierReport, CliError> {
    require_file(path, "report")?;
    let f = File::open(path).map_err(|e| user(format!("reading report {}: {e}", path.display())))?;
    OutlierReport::read_jsonl(BufReader::new(f))
        .map(|(r, _)| r)
        .map_err(|e| data(format!("report {}: {e}", path.display())))
}

fn digest(path: &Path) -> Result<String, CliError> {
    sha256_file(path).map_err(|e| user(format!("reading {}: {e}", path.display())))
}

fn with_input(prov: Provenance, role: &str, path: &Path) -> Result<Provenance, CliError> {
    prov.input(role, path).map_err(|e| user(format!("reading {}: {e}", path.display())))
}

/// Refuse inputs that were not the ones an upstream stage recorded.
fn check_lineage(
    upstream: Option<&serde_json::Value>,
    upstream_name: &Path,
    role: &str,
    path: &Path,
    actual: &str,
) -> Result<(), CliError> {
    let recorded = upstream.and_then(|p| p["inputs"][role]["sha256"].as_str());
    match recorded {
        Some(recorded) if recorded != actual => Err(data(format!(
            "{} was produced from a different {role} than {}",
            upstream_name.display(),
            path.display()
        ))),
        _ => Ok(()),
    }
}

// ---- output helpers ------------------------------------------------------

fn out_path(out: &Path, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out).map_err(|e| user(format!("creating output directory {}: {e}", out.display())))?;
    Ok(out.join(name))
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| user(format!("writing {}: {e}", path.display())))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("output serializes");
    v.push(b'\n');
    v
}

fn csv_with_provenance(prov: &Provenance, body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Vec<u8> {
    let mut buf = prov.comment_line().into_bytes();
    body(&mut buf).expect("writing to memory");
    buf
}

/// Stream a large output through a temporary sibling and rename it into place.
fn write_streamed(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut w = BufWriter::with_capacity(1 << 20, File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        user(format!("writing {}: {e}", path.display()))
    })
}

fn write_sidecar(path: &Path, prov: &Provenance) -> Result<(), CliError> {
    write_out(&idclean_core::cleaning::provenance_sidecar(path), &json_bytes(prov))
}

fn prepared_embeddings(emb: EmbeddingMatrix, normalize: bool) -> EmbeddingMatrix {
    if normalize {
        emb.l2_normalized()
    } else {
        emb
    }
}

fn check_consistent(manifest: &DatasetManifest, emb: &EmbeddingMatrix) -> Result<(), CliError> {
    let report = validate(manifest, emb);
    if report.passed() {
        return Ok(());
    }
    Err(data(format!(
        "manifest and embeddings disagree ({} problems, first: {}); run `idclean validate` for the full list",
        report.violations.len(),
        serde_json::to_string(&report.violations[0]).expect("violation serializes")
    )))
}

// ---- stages --------------------------------------------------------------

#[derive(Serialize)]
struct ValidationFile<'a> {
    provenance: Provenance,
    report: &'a ValidationReport,
}

pub fn run_validate(out: &Path, args: &DataArgs) -> Result<ValidationReport, CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let emb = load_embeddings(&args.embeddings)?;
    let report = validate(&manifest, &emb);
    let prov = with_input(Provenance::new("validate"), "manifest", &args.manifest)?;
    let prov = with_input(prov, "embeddings", &args.embeddings)?;
    write_out(&out_path(out, "validation.json")?, &json_bytes(&ValidationFile { provenance: prov, report: &report }))?;
    if !report.passed() {
        return Err(data(format!("{} validation problems; see validation.json", report.violations.len())));
    }
    Ok(report)
}

pub fn run_score(out: &Path, args: &ScoreArgs) -> Result<Vec<IdentityScore>, CliError> {
    let manifest = load_manifest(&args.data.manifest)?;
    let emb = load_embeddings(&args.data.embeddings)?;
    check_consistent(&manifest, &emb)?;
    let emb = prepared_embeddings(emb, args.normalize);
    let scores: Vec<IdentityScore> = score_all(&manifest, &emb);
    drop(emb);
    let prov = Provenance::new("score").param("normalize", args.normalize);
    let prov = with_input(prov, "manifest", &args.data.manifest)?;
    let prov = with_input(prov, "embeddings", &args.data.embeddings)?;
    let csv = csv_with_provenance(&prov, |w| write_scores_csv(&scores, w));
    let file = ScoresFile { provenance: Some(prov.to_value()), normalize: args.normalize, scores };
    write_out(&out_path(out, SCORES_CSV)?, &csv)?;
    write_out(&out_path(out, SCORES_JSON)?, file.to_json().as_bytes())?;
    Ok(file.scores)
}

pub fn flag_options(args: &FlagArgs) -> Result<ReportOptions, CliError> {
    let selection = match (args.fraction, args.count) {
        (_, Some(k)) => FlagSelection::Count(k),
        (Some(f), None) => FlagSelection::Fraction(f),
        (None, None) => FlagSelection::Fraction(DEFAULT_IDENTITY_FRACTION),
    };
    selection.validate().map_err(|e| user(e.to_string()))?;
    if let Some(t) = args.pair_threshold {
        if !(t.is_finite() && t >= 0.0) {
            return Err(user(format!("--pair-threshold must be a finite non-negative number, got {t}")));
        }
    }
    Ok(ReportOptions {
        selection,
        pair_threshold: args.pair_threshold,
        population: if args.exclude_flagged {
            ThresholdPopulation::ExcludeFlagged
        } else {
            ThresholdPopulation::AllScorable
        },
    })
}

pub fn run_flag(out: &Path, args: &FlagArgs) -> Result<FlagDecision, CliError> {
    let options = flag_options(args)?;
    let scores_path = args.scores.clone().unwrap_or_else(|| out.join(SCORES_JSON));
    let scores = load_scores(&scores_path)?;
    let decision = decide_flags(&scores.scores, &options).map_err(|e| match e {
        OutlierError::NoScorableIdentities => data(format!("{}: {e}", scores_path.display())),
        e => user(e.to_string()),
    })?;
    let prov = Provenance::new("flag")
        .param("selection", options.selection)
        .param("pair_threshold", options.pair_threshold)
        .param("population", options.population);
    let prov = with_input(prov, "scores", &scores_path)?;
    let file = FlagFile { provenance: prov, decision };
    write_out(&out_path(out, FLAGGED_JSON)?, &json_bytes(&file))?;
    Ok(file.decision)
}

pub fn run_queue(out: &Path, args: &QueueArgs) -> Result<OutlierReport, CliError> {
    let scores_path = args.scores.clone().unwrap_or_else(|| out.join(SCORES_JSON));
    let flagged_path = args.flagged.clone().unwrap_or_else(|| out.join(FLAGGED_JSON));
    let flag_file = load_flag_file(&flagged_path)?;
    let scores = load_scores(&scores_path)?;
    let flag_prov = serde_json::to_value(&flag_file.provenance).expect("provenance serializes");
    let scores_digest = digest(&scores_path)?;
    let manifest_digest = digest(&args.data.manifest)?;
    let emb_digest = digest(&args.data.embeddings)?;
    check_lineage(Some(&flag_prov), &flagged_path, "scores", &scores_path, &scores_digest)?;
    let upstream = scores.provenance.as_ref();
    check_lineage(upstream, &scores_path, "manifest", &args.data.manifest, &manifest_digest)?;
    check_lineage(upstream, &scores_path, "embeddings", &args.data.embeddings, &emb_digest)?;
    let manifest = load_manifest(&args.data.manifest)?;
    let emb = load_embeddings(&args.data.embeddings)?;
    check_consistent(&manifest, &emb)?;
    let emb = prepared_embeddings(emb, scores.normalize);
    let report = assemble_report(&flag_file.decision, &scores.scores, &manifest, &emb)
        .map_err(|e| data(format!("{} does not match the manifest: {e}", flagged_path.display())))?;
    let prov = with_input(Provenance::new("queue"), "flagged", &flagged_path)?
        .input_digest("scores", &scores_path, scores_digest)
        .input_digest("manifest", &args.data.manifest, manifest_digest)
        .input_digest("embeddings", &args.data.embeddings, emb_digest);
    let mut buf = Vec::new();
    report.write_jsonl(&mut buf, Some(&prov.to_value())).expect("writing to memory");
    write_out(&out_path(out, REPORT_JSONL)?, &buf)?;
    Ok(report)
}

pub fn run_serve(out: &Path, seed: u64, args: &ServeArgs) -> Result<(), CliError> {
    use idclean_service::{router, ReviewSession, SessionConfig, SessionError};

    let mut config =
        SessionConfig::new(args.report.clone(), args.manifest.clone(), args.verdicts.clone(), out.to_path_buf());
    config.image_root = args.images.clone();
    config.scores = args.scores.clone();
    config.embeddings = args.embeddings.clone();
    config.token = args.token.clone();
    config.roc = RocOptions { seed, ..RocOptions::default() };
    require_file(&args.report, "report")?;
    require_file(&args.manifest, "manifest")?;
    fs::create_dir_all(out).map_err(|e| user(format!("creating output directory {}: {e}", out.display())))?;
    let session = ReviewSession::open(&config).map_err(|e| match e {
        SessionError::Io { .. } => user(e.to_string()),
        e => data(e.to_string()),
    })?;
    let app = router(std::sync::Arc::new(session), args.ui.as_deref());
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| user(format!("starting runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .map_err(|e| user(format!("binding {}: {e}", args.bind)))?;
        let addr = listener.local_addr().map_err(|e| user(e.to_string()))?;
        eprintln!("idclean: reviewing on http://{addr} (ctrl-c to stop)");
        idclean_service::serve(listener, app, idclean_service::ctrl_c())
            .await
            .map_err(|e| user(format!("server error: {e}")))
    })
}

/// Removed samples grouped by verdict type, then identity.
pub type RemovedByVerdict = BTreeMap<MislabelType, BTreeMap<String, Vec<String>>>;

pub fn group_removals(entries: &[RemovalEntry]) -> RemovedByVerdict {
    let mut out: RemovedByVerdict = BTreeMap::new();
    for e in entries {
        out.entry(e.mislabel_type)
            .or_default()
            .entry(e.identity_id.clone())
            .or_default()
            .push(e.sample_id.clone());
    }
    out
}

#[derive(Serialize)]
struct CensusFile<'a> {
    provenance: &'a Provenance,
    census: &'a Census,
}

#[derive(Serialize)]
struct RemovedFile<'a> {
    provenance: &'a Provenance,
    removed: RemovedByVerdict,
}

pub fn run_apply(out: &Path, args: &ApplyArgs) -> Result<Census, CliError> {
    if args.min_remaining == 0 {
        return Err(user("--min-remaining must be at least 1"));
    }
    if !args.verdicts.is_file() {
        return Err(user(format!(
            "verdict log {} does not exist; record verdicts with `idclean serve` first",
            args.verdicts.display()
        )));
    }
    let manifest = load_manifest(&args.manifest)?;
    let history = read_verdicts(&args.verdicts).map_err(|e| data(e.to_string()))?;
    if history.is_empty() {
        return Err(user(format!("verdict log {} has no verdicts; nothing to apply", args.verdicts.display())));
    }
    let log = VerdictLog::from_history(history);
    let flagged = match &args.report {
        Some(path) => load_report(path)?.identities.len(),
        None => log.effective_count(),
    };
    let plan = compile_plan(&log, &manifest, args.min_remaining);
    let (cleaned, entries) = apply_plan(&manifest, &plan);
    let census = summary(&manifest, &cleaned, &entries, &log, flagged);

    let prov = Provenance::new("apply").param("min_remaining", args.min_remaining);
    let prov = with_input(prov, "manifest", &args.manifest)?;
    let prov = with_input(prov, "verdicts", &args.verdicts)?;
    let prov = match &args.report {
        Some(path) => with_input(prov, "report", path)?,
        None => prov,
    };
    let manifest_out = out_path(out, CLEANED_MANIFEST)?;
    let removals_out = out_path(out, REMOVALS_CSV)?;
    write_cleaning_outputs(&manifest_out, &removals_out, &cleaned, &entries, &prov)
        .map_err(|e| user(format!("writing cleaning outputs: {e}")))?;
    write_out(
        &out_path(out, "removed_by_verdict.json")?,
        &json_bytes(&RemovedFile { provenance: &prov, removed: group_removals(&entries) }),
    )?;
    write_out(&out_path(out, "census.json")?, &json_bytes(&CensusFile { provenance: &prov, census: &census }))?;
    Ok(census)
}

/// Summary of one side (before or after cleaning) of a report run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideSummary {
    pub samples: usize,
    pub identities: usize,
    pub scorable_identities: usize,
    pub max_id_score: Option<f64>,
    pub mean_id_score: Option<f64>,
    pub top_occupied_bin: Option<usize>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub provenance: Provenance,
    pub before: SideSummary,
    pub after: Option<SideSummary>,
}

fn side_summary(manifest: &DatasetManifest, scores: &[IdentityScore], hist: &Histogram, roc: &RocCurve) -> SideSummary {
    let values: Vec<f64> = scores.iter().filter_map(|s| s.id_score).collect();
    let mean = idclean_core::outlier::compute_pair_threshold(scores, &Default::default()).ok();
    SideSummary {
        samples: manifest.sample_count(),
        identities: manifest.identity_count(),
        scorable_identities: values.len(),
        max_id_score: values.iter().copied().reduce(f64::max),
        mean_id_score: mean,
        top_occupied_bin: hist.max_occupied_bin(),
        auc: roc.auc,
        positives: roc.positives,
        negatives: roc.negatives,
    }
}

pub fn run_report(out: &Path, seed: u64, args: &ReportArgs) -> Result<ReportSummary, CliError> {
    let manifest = load_manifest(&args.data.manifest)?;
    let emb = load_embeddings(&args.data.embeddings)?;
    check_consistent(&manifest, &emb)?;
    let emb = prepared_embeddings(emb, args.normalize);
    let roc_options = RocOptions { negative_pairs: args.negative_pairs, positive_cap: args.positive_cap, seed };
    let stats_err = |e: idclean_core::reporting::ReportingError| data(e.to_string());

    let mut prov = Provenance::new("report")
        .param("normalize", args.normalize)
        .param("bins", args.bins)
        .param("roc", roc_options);
    prov = with_input(prov, "manifest", &args.data.manifest)?;
    prov = with_input(prov, "embeddings", &args.data.embeddings)?;
    let cleaned = match &args.cleaned_manifest {
        Some(path) => {
            prov = with_input(prov, "cleaned_manifest", path)?;
            let cleaned = load_manifest(path)?;
            if let Some(s) = cleaned.samples().iter().find(|s| manifest.sample(&s.sample_id) != Some(s)) {
                return Err(data(format!(
                    "cleaned manifest {} contains {} which is not in {}",
                    path.display(),
                    s.sample_id,
                    args.data.manifest.display()
                )));
            }
            Some(cleaned)
        }
        None => None,
    };
    if args.bins == 0 {
        return Err(user("--bins must be at least 1"));
    }

    let scores: Vec<IdentityScore> = score_all(&manifest, &emb);
    let hist = id_score_histogram(&scores, args.bins).map_err(stats_err)?;
    let roc = verification_roc(&manifest, &emb, &roc_options).map_err(stats_err)?;
    write_out(&out_path(out, "histogram.csv")?, &csv_with_provenance(&prov, |w| hist.write_csv(w)))?;
    write_out(&out_path(out, "roc.csv")?, &csv_with_provenance(&prov, |w| roc.write_csv(w)))?;
    let before = side_summary(&manifest, &scores, &hist, &roc);

    let after = match &cleaned {
        Some(cleaned) => {
            let scores_after: Vec<IdentityScore> = score_all(cleaned, &emb);
            let lo = hist.bin_edges[0];
            let hi = *hist.bin_edges.last().expect("histogram has edges");
            let hist_after = histogram_over(&scores_after, lo, hi, args.bins).map_err(stats_err)?;
            let roc_after = verification_roc(cleaned, &emb, &roc_options).map_err(stats_err)?;
            write_out(
                &out_path(out, "histogram_after.csv")?,
                &csv_with_provenance(&prov, |w| hist_after.write_csv(w)),
            )?;
            write_out(&out_path(out, "roc_after.csv")?, &csv_with_provenance(&prov, |w| roc_after.write_csv(w)))?;
            Some(side_summary(cleaned, &scores_after, &hist_after, &roc_after))
        }
        None => None,
    };
    let summary = ReportSummary { provenance: prov, before, after };
    write_out(&out_path(out, "report_summary.json")?, &json_bytes(&summary))?;
    Ok(summary)
}

pub fn run_synth(out: &Path, seed: u64, args: &SynthArgs) -> Result<(), CliError> {
    let (dataset, prov, truth) = match &args.kind {
        SynthKind::Planted(a) => {
            if a.identities < 2 || a.contaminated > a.identities || a.dim == 0 || a.samples_per_identity == 0 {
                return Err(user("planted fixture needs ≥2 identities, dim ≥1, ≥1 sample each, and contaminated ≤ identities"));
            }
            let cfg = PlantedNoiseConfig {
                identities: a.identities,
                samples_per_identity: a.samples_per_identity,
                dim: a.dim,
                contaminated: a.contaminated,
                imports_per_identity: a.imports,
                centroid_spread: a.centroid_spread,
                min_centroid_distance: a.min_centroid_distance,
                seed,
            };
            let mut d = planted_noise(&cfg);
            let prov = Provenance::new("synth")
                .param("kind", "planted")
                .param("config", &cfg)
                .param("shuffle_labels", a.shuffle_labels);
            if a.shuffle_labels {
                d.manifest = shuffle_labels(&d.manifest, seed);
                (d, prov, None)
            } else {
                let truth = d.truth.clone();
                (d, prov, Some(truth))
            }
        }
        SynthKind::Celeba(a) => {
            if a.identities == 0
                || a.min_size > a.max_size
                || a.dim == 0
                || a.samples < a.identities * a.min_size
                || a.samples > a.identities * a.max_size
            {
                return Err(user("celeba fixture: sample total must lie within identities × [min-size, max-size]"));
            }
            let cfg = CelebaShapeConfig {
                identities: a.identities,
                samples: a.samples,
                dim: a.dim,
                min_size: a.min_size,
                max_size: a.max_size,
                centroid_spread: a.centroid_spread,
                seed,
            };
            let d = celeba_shaped(&cfg);
            let prov = Provenance::new("synth").param("kind", "celeba").param("config", &cfg);
            (d, prov, None)
        }
    };
    let manifest_path = out_path(out, "manifest.csv")?;
    let emb_path = out_path(out, "embeddings.emb")?;
    write_streamed(&emb_path, |w| {
        dataset.embeddings.write_to(w).map_err(|e| match e {
            EmbeddingError::Io(e) => e,
            e => io::Error::other(e.to_string()),
        })
    })?;
    write_sidecar(&emb_path, &prov)?;
    write_out(&manifest_path, dataset.manifest.to_text().as_bytes())?;
    write_sidecar(&manifest_path, &prov)?;
    if let Some(truth) = truth {
        #[derive(Serialize)]
        struct TruthFile<'a, T> {
            provenance: &'a Provenance,
            truth: T,
        }
        write_out(&out_path(out, "truth.json")?, &json_bytes(&TruthFile { provenance: &prov, truth }))?;
    }
    Ok(())
}
