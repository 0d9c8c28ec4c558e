use idclean_core::dataset_io::{DatasetManifest, EmbeddingMatrix, SampleRecord};
use idclean_core::synth::{celeba_shaped, CelebaShapeConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_100x512_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    // Arbitrary finite bit patterns, including subnormals and negative zero.
    let values: Vec<f32> = (0..100 * 512)
        .map(|_| loop {
            let v = f32::from_bits(rng.random());
            if v.is_finite() {
                break v;
            }
        })
        .collect();
    let m = EmbeddingMatrix::new(100, 512, values).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.emb");
    m.save(&path).unwrap();
    let back = EmbeddingMatrix::load(&path).unwrap();
    let bits = |m: &EmbeddingMatrix| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&m));
    assert_eq!(std::fs::read(&path).unwrap().len(), 12 + 100 * 512 * 4);
}

#[test]
fn celeba_shaped_manifest_census() {
    let cfg = CelebaShapeConfig { dim: 1, ..Default::default() };
    let ds = celeba_shaped(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    ds.manifest.save(&path).unwrap();
    let m = DatasetManifest::load(&path).unwrap();
    assert_eq!(m.sample_count(), 202_599);
    assert_eq!(m.identity_count(), 10_177);
    assert_eq!(m.rebuilt_index(), *m.identity_index());
}

fn ident() -> impl Strategy<Value = String> {
    "[A-Za-z0-9._/-]{1,12}"
}

fn manifest_strategy() -> impl Strategy<Value = Vec<SampleRecord>> {
    prop::collection::vec((ident(), ident(), ident(), 0usize..1_000_000), 0..40).prop_map(|rows| {
        let mut seen = std::collections::HashSet::new();
        rows.into_iter()
            .filter(|r| seen.insert(r.0.clone()))
            .map(|(sample_id, identity_id, image_path, row)| SampleRecord { sample_id, identity_id, image_path, row })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn manifest_save_load_is_byte_identical(samples in manifest_strategy()) {
        let m = DatasetManifest::from_samples(samples).unwrap();
        let text = m.to_text();
        let back = DatasetManifest::parse(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.rebuilt_index(), back.identity_index().clone());
        prop_assert_eq!(back, m);
    }

    #[test]
    fn embeddings_save_load_is_byte_identical(count in 0usize..20, dim in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..count * dim).map(|_| rng.random_range(-1e6f32..1e6)).collect();
        let m = EmbeddingMatrix::new(count, dim, values).unwrap();
        let bytes = m.to_bytes();
        let back = EmbeddingMatrix::read_from(&bytes[..]).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn identity_index_partitions_samples(samples in manifest_strategy()) {
        let m = DatasetManifest::from_samples(samples).unwrap();
        let mut covered: Vec<usize> = m.identity_index().values().flatten().copied().collect();
        covered.sort_unstable();
        prop_assert_eq!(covered, (0..m.sample_count()).collect::<Vec<_>>());
        for (id, positions) in m.identities() {
            for w in positions.windows(2) {
                prop_assert!(m.samples()[w[0]].sample_id < m.samples()[w[1]].sample_id);
            }
            for &p in positions {
                prop_assert_eq!(&m.samples()[p].identity_id, id);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scores_file_round_trips_exactly(values in proptest::collection::vec(0.0f64..1e6, 1..40)) {
        let scores: Vec<idclean_core::IdentityScore> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| idclean_core::IdentityScore {
                identity_id: format!("id{i}"),
                id_score: Some(v),
                worst_pair: Some(idclean_core::PairScore::new(&format!("id{i}_a"), &format!("id{i}_b"), v)),
                sample_count: 2,
                pair_count: 1,
            })
            .collect();
        let file = idclean_core::ScoresFile { provenance: None, normalize: false, scores };
        let back = idclean_core::ScoresFile::from_json(&file.to_json()).unwrap();
        for (a, b) in file.scores.iter().zip(&back.scores) {
            prop_assert_eq!(a.id_score.unwrap().to_bits(), b.id_score.unwrap().to_bits());
        }
        prop_assert_eq!(back, file);
    }
}
