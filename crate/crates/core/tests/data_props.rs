use std::fs;

use mpcd_core::data::{
    augment_noise, augment_roll, augment_set, chunk_sequence, gaussian_noise, load_pdp_csv, normalize_minmax,
    reassemble, split_alternating, AugmentConfig, ChunkConfig, ChunkPlan, NormalizedPdp, PdpRecord, PdpSet,
    REFERENCE_LENGTH, STANDARD_CHUNK_LENGTHS,
};
use mpcd_core::synth::{generate_dataset, SynthDatasetSpec, SynthParams};
use mpcd_core::CoreError;
use proptest::prelude::*;

fn write_pair(dir: &tempfile::TempDir, pdp: &str, labels: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let p = dir.path().join("pdp.csv");
    let l = dir.path().join("labels.csv");
    fs::write(&p, pdp).unwrap();
    fs::write(&l, labels).unwrap();
    (p, l)
}

#[test]
fn loads_minimal_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut pdp = String::from("id,index,power_db\n");
    for id in 0..2 {
        for i in 0..4 {
            pdp.push_str(&format!("{id},{i},-{}\n", 90 + i));
        }
    }
    let (p, l) = write_pair(&dir, &pdp, "id,peak_index\n0,2\n");
    let set = load_pdp_csv(&p, &l).unwrap();
    assert_eq!((set.len(), set.length()), (2, 4));
    assert_eq!(set.records()[0].labels(), &[2]);
    assert!(set.records()[1].labels().is_empty());
}

#[test]
fn loader_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut uneven = String::from("id,index,power_db\n");
    for i in 0..4 {
        uneven.push_str(&format!("0,{i},-90\n"));
    }
    for i in 0..5 {
        uneven.push_str(&format!("1,{i},-90\n"));
    }
    let (p, l) = write_pair(&dir, &uneven, "id,peak_index\n");
    assert!(matches!(load_pdp_csv(&p, &l), Err(CoreError::Schema(_))));

    let (p, l) = write_pair(&dir, "id,index,power_db\n0,0,-90\n0,1,oops\n", "id,peak_index\n");
    match load_pdp_csv(&p, &l) {
        Err(CoreError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }

    let (p, l) = write_pair(&dir, "id,index,power_db\n0,0,-90\n0,1,-80\n", "id,peak_index\n0,7\n");
    assert!(matches!(load_pdp_csv(&p, &l), Err(CoreError::Validation(_))));
}

#[test]
fn reference_fixture_roundtrips_through_csv() {
    let spec = SynthDatasetSpec::default();
    let set = generate_dataset(&spec).unwrap();
    assert_eq!((set.len(), set.length()), (80, REFERENCE_LENGTH));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pdp.csv");
    let l = dir.path().join("labels.csv");
    set.write_csv(&p, &l).unwrap();
    assert_eq!(load_pdp_csv(&p, &l).unwrap(), set);
}

#[test]
fn normalization_examples() {
    let r = PdpRecord::new(0, vec![-100.0, -90.0, -80.0], vec![]).unwrap();
    assert_eq!(normalize_minmax(&r).unwrap().values, vec![0.0, 0.5, 1.0]);
    let flat = PdpRecord::new(0, vec![-90.0, -90.0], vec![]).unwrap();
    assert!(matches!(normalize_minmax(&flat), Err(CoreError::Degenerate(_))));
}

#[test]
fn split_examples() {
    let mk = |ids: &[u64]| {
        PdpSet::new(ids.iter().map(|&i| PdpRecord::new(i, vec![0.0, 1.0], vec![]).unwrap()).collect()).unwrap()
    };
    let ids = |s: &PdpSet| s.records().iter().map(|r| r.id()).collect::<Vec<_>>();
    let (tr, te) = split_alternating(&mk(&[0, 1, 2, 3, 4, 5])).unwrap();
    assert_eq!((ids(&tr), ids(&te)), (vec![0, 2, 4], vec![1, 3, 5]));
    let (tr, te) = split_alternating(&mk(&[7, 9])).unwrap();
    assert_eq!((ids(&tr), ids(&te)), (vec![7], vec![9]));
    assert!(matches!(split_alternating(&mk(&[3])), Err(CoreError::InsufficientData(_))));
}

fn norm(values: Vec<f64>, labels: Vec<usize>) -> NormalizedPdp {
    NormalizedPdp {
        values,
        scale_min: -100.0,
        scale_max: -50.0,
        source_id: 0,
        variant: 0,
        labels,
    }
}

#[test]
fn roll_examples() {
    let x = norm(vec![0.1, 0.2, 0.3, 0.4], vec![1]);
    let r = augment_roll(&x, 1).unwrap();
    assert_eq!(r.values, vec![0.4, 0.1, 0.2, 0.3]);
    assert_eq!(r.labels, vec![2]);
    assert_eq!(augment_roll(&x, 0).unwrap(), x);
    assert_eq!(augment_roll(&x, 4).unwrap(), x);
}

#[test]
fn noise_statistics_and_determinism() {
    let n = gaussian_noise(1_000_000, 0.01, 3).unwrap();
    let mean = n.iter().sum::<f64>() / n.len() as f64;
    let std = (n.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.len() as f64).sqrt();
    assert!((0.0095..=0.0105).contains(&std), "std {std}");
    assert_eq!(gaussian_noise(100, 0.02, 9).unwrap(), gaussian_noise(100, 0.02, 9).unwrap());

    let x = norm(vec![0.5; 16], vec![]);
    assert_eq!(augment_noise(&x, 0.0, 1).unwrap(), x);
    assert!(matches!(augment_noise(&x, -0.1, 1), Err(CoreError::Param(_))));
}

#[test]
fn augmentation_is_reproducible() {
    let set = generate_dataset(&SynthDatasetSpec {
        n_records: 4,
        params: SynthParams::default(),
    })
    .unwrap();
    let recs: Vec<_> = set.records().iter().map(|r| normalize_minmax(r).unwrap()).collect();
    let cfg = AugmentConfig { seed: 5, ..AugmentConfig::default() };
    let a = augment_set(&recs, &cfg).unwrap();
    assert_eq!(a.len(), 44);
    assert_eq!(a, augment_set(&recs, &cfg).unwrap());
}

#[test]
fn chunk_plan_examples() {
    let p = ChunkPlan::new(820, ChunkConfig { chunk_length: 205 }).unwrap();
    assert_eq!(p.offsets, vec![0, 205, 410, 615]);
    let p = ChunkPlan::new(820, ChunkConfig { chunk_length: 85 }).unwrap();
    assert_eq!(p.offsets, vec![0, 85, 170, 255, 340, 425, 510, 595, 680, 735]);
    assert!(matches!(ChunkPlan::new(820, ChunkConfig { chunk_length: 821 }), Err(CoreError::Param(_))));
}

proptest! {
    #[test]
    fn chunk_roundtrip(values in prop::collection::vec(0.0f64..1.0, REFERENCE_LENGTH), pick in 0usize..4) {
        let cfg = ChunkConfig { chunk_length: STANDARD_CHUNK_LENGTHS[pick] };
        let (chunks, plan) = chunk_sequence(&values, cfg).unwrap();
        prop_assert_eq!(reassemble(&chunks, &plan).unwrap(), values);
    }

    #[test]
    fn chunk_roundtrip_any_length(len in 1usize..300, c in 1usize..300, seed in 0u64..1000) {
        prop_assume!(c <= len);
        let values = gaussian_noise(len, 1.0, seed).unwrap();
        let (chunks, plan) = chunk_sequence(&values, ChunkConfig { chunk_length: c }).unwrap();
        prop_assert_eq!(reassemble(&chunks, &plan).unwrap(), values);
    }

    #[test]
    fn rolls_compose(values in prop::collection::vec(0.0f64..1.0, 1..60), a in -60i64..60, b in -60i64..60, l in 0usize..60) {
        let len = values.len() as i64;
        prop_assume!(a.abs() <= len && b.abs() <= len);
        let x = norm(values, vec![l % len as usize]);
        let two = augment_roll(&augment_roll(&x, a).unwrap(), b).unwrap();
        let one = augment_roll(&x, (a + b).rem_euclid(len)).unwrap();
        prop_assert_eq!(two, one);
    }

    #[test]
    fn split_partitions(n in 2usize..40) {
        let set = PdpSet::new((0..n as u64).map(|i| PdpRecord::new(i * 3, vec![0.0, 1.0], vec![]).unwrap()).collect()).unwrap();
        let (tr, te) = split_alternating(&set).unwrap();
        let mut all: Vec<u64> = tr.records().iter().chain(te.records()).map(|r| r.id()).collect();
        prop_assert_eq!(tr.len() - te.len(), n % 2);
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), n);
    }

    #[test]
    fn normalized_bounds(powers in prop::collection::vec(-120.0f64..-30.0, 2..200)) {
        let r = PdpRecord::new(0, powers, vec![]).unwrap();
        prop_assume!(r.powers().iter().any(|&p| p != r.powers()[0]));
        let n = normalize_minmax(&r).unwrap();
        prop_assert!(n.values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(n.values.contains(&0.0) && n.values.contains(&1.0));
    }
}
