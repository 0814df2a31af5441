use std::fs;

use ot_orch::envs::dataset::{from_table, split_sizes};
use ot_orch::envs::{
    apply_shift, gen_surrogate_dataset, load_csv, read_csv, surrogate_table, CalibratedLogistic,
    CsvSchema, Dataset, ShiftConfig, TrainConfig,
};
use ot_orch::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOY: &str = "a,b,label\n\
1.5,-2,0\n\
0,3.25,1\n\
2,2,1\n\
-1,0.5,0\n\
4,1e-3,1\n\
3,-0.75,0\n\
0.125,7,1\n\
-2.5,6,0\n\
9,-9,1\n\
5,5,0\n";

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn toy_file_parses_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let t = read_csv(&write(&dir, "toy.csv", TOY), &CsvSchema::default()).unwrap();
    assert_eq!(t.feature_names, vec!["a", "b"]);
    assert_eq!(t.labels, vec![0, 1, 1, 0, 1, 0, 1, 0, 1, 0]);
    assert_eq!(t.rows[0], vec![1.5, -2.0]);
    assert_eq!(t.rows[4], vec![4.0, 0.001]);
    assert_eq!(t.rows[6], vec![0.125, 7.0]);
    assert_eq!(t.rows.len(), 10);
}

#[test]
fn label_column_and_feature_subset_are_configurable() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "y.csv", "y,u,v\n1,0.5,9\n0,1.5,8\n");
    let schema = CsvSchema { label_column: "y".into(), feature_columns: Some(vec!["v".into()]) };
    let t = read_csv(&p, &schema).unwrap();
    assert_eq!(t.rows, vec![vec![9.0], vec![8.0]]);
    assert_eq!(t.labels, vec![1, 0]);
}

fn parse_location(result: ot_orch::Result<ot_orch::envs::RawTable>) -> (usize, String) {
    match result {
        Err(Error::Parse { row, column, .. }) => (row, column),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn bad_cells_report_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let s = CsvSchema::default();
    let p = write(&dir, "nan.csv", "a,b,label\n1,2,0\n3,x,1\n");
    assert_eq!(parse_location(read_csv(&p, &s)), (3, "b".to_string()));
    let p = write(&dir, "lab.csv", "a,b,label\n1,2,0\n3,4,2\n");
    assert_eq!(parse_location(read_csv(&p, &s)), (3, "label".to_string()));
    let p = write(&dir, "nolabel.csv", "a,b\n1,2\n");
    assert!(matches!(read_csv(&p, &s), Err(Error::Parse { .. })));
    assert!(matches!(
        read_csv(&dir.path().join("missing.csv"), &s),
        Err(Error::Parse { .. })
    ));
}

#[test]
fn splits_partition_the_rows() {
    for n in [4, 10, 37, 569, 1000] {
        let sizes = split_sizes(n);
        assert_eq!(sizes.iter().sum::<usize>(), n);
        let table = surrogate_table(n, 3, 1).unwrap();
        let ds = from_table(table, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut all: Vec<usize> = ds.splits.all().iter().flat_map(|s| s.iter().copied()).collect();
        for (s, want) in ds.splits.all().iter().zip(sizes) {
            assert_eq!(s.len(), want);
        }
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
    assert_eq!(split_sizes(569), [341, 114, 57, 57]);
}

fn column_mean(ds: &Dataset, rows: &[usize], j: usize) -> f64 {
    rows.iter().map(|&i| ds.rows[i][j]).sum::<f64>() / rows.len() as f64
}

#[test]
fn train_columns_are_standardized() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    gen_surrogate_dataset(500, 4, 3, &p).unwrap();
    let ds = load_csv(&p, &CsvSchema::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    for j in 0..4 {
        let m = column_mean(&ds, &ds.splits.train, j);
        let var = ds.splits.train.iter().map(|&i| (ds.rows[i][j] - m).powi(2)).sum::<f64>()
            / ds.splits.train.len() as f64;
        assert!(m.abs() < 1e-9, "{m}");
        assert!((var - 1.0).abs() < 1e-9, "{var}");
    }
}

#[test]
fn shift_moves_only_the_shifted_rows() {
    let table = surrogate_table(100_000, 2, 5).unwrap();
    let ds = from_table(table, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(7);

    let none = ShiftConfig { features: Some(Vec::new()), ..ShiftConfig::default() };
    assert_eq!(apply_shift(&ds, &none, &mut r).unwrap(), ds);

    let shifted = apply_shift(&ds, &ShiftConfig::default(), &mut r).unwrap();
    for split in [&ds.splits.train, &ds.splits.calibration, &ds.splits.test_id] {
        for &i in split.iter() {
            assert_eq!(
                shifted.rows[i].iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                ds.rows[i].iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }
    let rows = &ds.splits.test_shift;
    let diffs: Vec<f64> = rows.iter().map(|&i| shifted.rows[i][0] - ds.rows[i][0]).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let se = 0.8 / n.sqrt();
    assert!((mean - 0.5).abs() < 3.0 * se, "{mean}");
    // Default subset is the first half of the features.
    assert!(rows.iter().all(|&i| shifted.rows[i][1] == ds.rows[i][1]));
    let bad = ShiftConfig { features: Some(vec![2]), ..ShiftConfig::default() };
    assert!(matches!(apply_shift(&ds, &bad, &mut r), Err(Error::InvalidConfig(_))));
}

#[test]
fn surrogate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    gen_surrogate_dataset(200, 5, 11, &a).unwrap();
    gen_surrogate_dataset(200, 5, 11, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    gen_surrogate_dataset(200, 5, 12, &b).unwrap();
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(matches!(surrogate_table(0, 3, 1), Err(Error::InvalidInput(_))));
}

#[test]
fn surrogate_labels_are_balanced() {
    let t = surrogate_table(1000, 10, 13).unwrap();
    let ones = t.labels.iter().filter(|&&l| l == 1).count() as f64 / 1000.0;
    assert!((ones - 0.5).abs() < 0.05, "{ones}");
}

#[test]
fn linear_model_fits_the_surrogate() {
    let ds = from_table(surrogate_table(1000, 10, 14).unwrap(), &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
    let model = CalibratedLogistic::fit(&ds, &ds.splits.train, &ds.splits.calibration, &TrainConfig::default()).unwrap();
    let acc = |rows: &[usize]| {
        rows.iter().filter(|&&i| model.predict(&ds.rows[i]) == ds.labels[i]).count() as f64 / rows.len() as f64
    };
    assert!(acc(&ds.splits.train) > 0.9, "{}", acc(&ds.splits.train));
    assert!(acc(&ds.splits.test_id) > 0.85);
    for &i in &ds.splits.test_id {
        let p = model.predict_proba(&ds.rows[i]);
        assert!((0.0..=1.0).contains(&p));
    }
}
