//! Semi-automatic label-noise cleaning for identity-labeled image datasets.
//!
//! Pipeline: [`scoring`] computes every intra-identity pair distance and the
//! worst one per identity; [`outlier`] flags the worst identities and, inside
//! them, the pairs above the mean-id-score threshold, then picks the samples
//! a human should look at; [`cleaning`] turns reviewer verdicts into removals;
//! [`reporting`] produces histograms, ROC tables and census records.
//!
//! The numeric core is generic over [`Real`]; the aliases below fix it to
//! `f64`, which is what the command-line tools and service use.

pub mod cleaning;
pub mod dataset_io;
pub mod outlier;
pub mod provenance;
pub mod reference;
pub mod reporting;
pub mod scalar;
pub mod scoring;
pub mod synth;

pub use cleaning::{
    apply_plan, compile_plan, CleaningPlan, MislabelType, RemovalAction, RemovalEntry, Verdict, VerdictError,
    VerdictLog, VerdictLogFile,
};
pub use dataset_io::{validate, DatasetManifest, EmbeddingMatrix, SampleRecord, ValidationReport};
pub use outlier::{FlagSelection, ThresholdPopulation};
pub use reporting::Census;
pub use scalar::Real;

pub type PairScore = scoring::PairScore<f64>;
pub type IdentityScore = scoring::IdentityScore<f64>;
pub type OutlierReport = outlier::OutlierReport<f64>;
pub type FlaggedIdentity = outlier::FlaggedIdentity<f64>;
pub type FlagDecision = outlier::FlagDecision<f64>;
pub type ReportOptions = outlier::ReportOptions<f64>;
pub type Histogram = reporting::Histogram<f64>;
pub type RocCurve = reporting::RocCurve<f64>;
pub type ScoresFile = scoring::ScoresFile<f64>;

pub type PairScoreF32 = scoring::PairScore<f32>;
pub type IdentityScoreF32 = scoring::IdentityScore<f32>;
pub type OutlierReportF32 = outlier::OutlierReport<f32>;
