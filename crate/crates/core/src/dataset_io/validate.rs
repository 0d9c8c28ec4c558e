use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, EmbeddingMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    RowOutOfRange { sample_id: String, row: usize, count: usize },
    NonFiniteValue { sample_id: String, row: usize, col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowOutOfRange { sample_id, row, count } => {
                write!(f, "sample {sample_id}: row {row} out of range (matrix has {count} rows)")
            }
            Violation::NonFiniteValue { sample_id, row, col } => {
                write!(f, "sample {sample_id}: row {row} has a non-finite value at column {col}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub identities: usize,
    pub embedding_rows: usize,
    pub dim: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every manifest row reference against the matrix. All violations are
/// collected, in manifest order.
pub fn validate(manifest: &DatasetManifest, embeddings: &EmbeddingMatrix) -> ValidationReport {
    let mut violations = Vec::new();
    for s in manifest.samples() {
        if s.row >= embeddings.count() {
            violations.push(Violation::RowOutOfRange {
                sample_id: s.sample_id.clone(),
                row: s.row,
                count: embeddings.count(),
            });
            continue;
        }
        if let Some(col) = embeddings.row(s.row).iter().position(|v| !v.is_finite()) {
            violations.push(Violation::NonFiniteValue { sample_id: s.sample_id.clone(), row: s.row, col });
        }
    }
    ValidationReport {
        samples: manifest.sample_count(),
        identities: manifest.identity_count(),
        embedding_rows: embeddings.count(),
        dim: embeddings.dim(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_io::SampleRecord;

    fn manifest(rows: &[usize]) -> DatasetManifest {
        DatasetManifest::from_samples(
            rows.iter()
                .enumerate()
                .map(|(i, &row)| SampleRecord {
                    sample_id: format!("s{i}"),
                    identity_id: format!("id{}", i % 2),
                    image_path: format!("img/{i}.jpg"),
                    row,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn row_equal_to_count_is_out_of_range() {
        let emb = EmbeddingMatrix::new(3, 2, vec![0.0; 6]).unwrap();
        let report = validate(&manifest(&[0, 3]), &emb);
        assert_eq!(
            report.violations,
            vec![Violation::RowOutOfRange { sample_id: "s1".into(), row: 3, count: 3 }]
        );
        assert!(!report.passed());
    }

    #[test]
    fn all_valid_passes() {
        let emb = EmbeddingMatrix::new(3, 2, vec![0.0; 6]).unwrap();
        assert!(validate(&manifest(&[0, 1, 2, 1]), &emb).passed());
    }

    #[test]
    fn every_planted_violation_is_listed() {
        let emb = EmbeddingMatrix::new(4, 2, vec![0.5; 8]).unwrap();
        let report = validate(&manifest(&[0, 9, 1, 4, 2, 3, 100]), &emb);
        let rows: Vec<usize> = report
            .violations
            .iter()
            .map(|v| match v {
                Violation::RowOutOfRange { row, .. } => *row,
                Violation::NonFiniteValue { row, .. } => *row,
            })
            .collect();
        assert_eq!(rows, vec![9, 4, 100]);
    }
}
