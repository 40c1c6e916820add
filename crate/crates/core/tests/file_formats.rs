use std::fs;

use segclass_core::dataset::{load_feature_table, load_labels, load_partitions, ClassVocabulary, Partition};
use segclass_core::ensemble::load_probabilities;
use segclass_core::feature_selection::{select, SelectionMode};
use segclass_core::synthetic::{gaussian_blobs, BlobSpec};

fn small() -> segclass_core::synthetic::SyntheticTask {
    gaussian_blobs(&BlobSpec {
        n_train: 20,
        n_test: 5,
        dims: 4,
        informative: 2,
        seed: 1,
        ..BlobSpec::default()
    })
    .unwrap()
}

#[test]
fn feature_and_label_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let t = small();
    let fp = dir.path().join("nested/features.csv");
    let lp = dir.path().join("labels.csv");
    t.train_x.write(&fp).unwrap();
    t.train_y.write(&lp).unwrap();
    assert_eq!(load_feature_table(&fp).unwrap(), t.train_x);
    assert_eq!(load_labels(&lp, t.train_y.vocab()).unwrap(), t.train_y);
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    fs::write(&p, "segment_id,a,b\ns1,1.0,2.0\ns2,1.0,oops\n").unwrap();
    let err = load_feature_table(&p).unwrap_err();
    assert!(err.to_string().contains(":3"), "{err}");
    assert_eq!(err.exit_code(), 3);

    fs::write(&p, "segment_id,a\ns1,NaN\n").unwrap();
    assert!(load_feature_table(&p).is_err());

    fs::write(&p, "segment_id,label\ns1,9\n").unwrap();
    let err = load_labels(&p, &ClassVocabulary::emotion_levels()).unwrap_err();
    assert!(err.to_string().contains("\"9\""), "{err}");
}

#[test]
fn partitions_split_a_single_table() {
    let dir = tempfile::tempdir().unwrap();
    let t = small();
    let fp = dir.path().join("all.csv");
    t.train_x.write(&fp).unwrap();
    let pp = dir.path().join("partitions.csv");
    let mut body = String::from("segment_id,partition\n");
    for (i, id) in t.train_x.segment_ids().iter().enumerate() {
        body.push_str(&format!("{id},{}\n", ["train", "devel", "test"][i % 3]));
    }
    fs::write(&pp, body).unwrap();
    let parts = load_partitions(&pp).unwrap();
    let table = load_feature_table(&fp).unwrap();
    let devel = parts.rows_of(&table, Partition::Devel);
    assert_eq!(devel, (0..20).filter(|i| i % 3 == 1).collect::<Vec<_>>());
}

#[test]
fn score_export_lists_every_feature() {
    let t = small();
    let report = select(&t.train_x, &t.train_y, SelectionMode::TopK { k: 2 }).unwrap();
    let csv = report.to_csv_string();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("feature_index,feature_name,f_score,selected"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",true")).count(), 2);
}

#[test]
fn probability_files_validate_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.csv");
    let vocab = ClassVocabulary::emotion_levels();
    fs::write(&p, "segment_id,0,1,2\ns1,0.2,0.3,0.5\n").unwrap();
    assert_eq!(load_probabilities(&p, &vocab).unwrap().n_rows(), 1);
    fs::write(&p, "segment_id,0,1,2\ns1,0.2,0.3,0.6\n").unwrap();
    assert!(load_probabilities(&p, &vocab).is_err());
    fs::write(&p, "segment_id,0,2,1\ns1,0.2,0.3,0.5\n").unwrap();
    assert!(load_probabilities(&p, &vocab).is_err());
}
