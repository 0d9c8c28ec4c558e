//! Dataset manifests, embedding matrices and their interchange formats.

mod embeddings;
mod manifest;
mod validate;

pub use embeddings::{EmbeddingError, EmbeddingMatrix, EMBEDDING_MAGIC};
pub use manifest::{is_valid_identifier, DatasetManifest, ManifestError, SampleRecord, MANIFEST_HEADER};
pub use validate::{validate, ValidationReport, Violation};
