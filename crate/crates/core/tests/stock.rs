use std::fs;
use std::path::Path;

use wgp_bandit::envs::{load_price_environment, read_price_csv, synthetic_prices, write_price_csv};
use wgp_bandit::harness::{run_experiment, EnvKind, ExperimentConfig, PolicyEntry, PolicyName};
use wgp_bandit::Error;

fn ingestion_at(path: &Path) -> (usize, usize, String) {
    match read_price_csv(path) {
        Err(Error::Ingestion { row, column, message, .. }) => (row, column, message),
        other => panic!("expected an ingestion error, got {other:?}"),
    }
}

#[test]
fn small_file_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    fs::write(&path, "A,B,C\n1,2,3\n2,3,4\n3,3,5\n2,4,6\n1,5,7\n").unwrap();
    let env = load_price_environment(&path).unwrap();
    assert_eq!((env.horizon(), env.num_arms()), (5, 3));
    assert_eq!(env.kernel().gram().shape(), (3, 3));
    assert!(env.budget().is_none());
    // global min-max: 1 -> 0, 7 -> 1
    assert_eq!(env.reward_at(1, 0).unwrap(), 0.0);
    assert_eq!(env.reward_at(5, 2).unwrap(), 1.0);
    let diag_max = (0..3).map(|i| env.kernel().k(i, i)).fold(0.0, f64::max);
    assert!((diag_max - 1.0).abs() < 1e-12);
}

#[test]
fn missing_cell_names_its_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    fs::write(&path, "A,B,C\n1,2,3\n2,,4\n").unwrap();
    let (row, column, message) = ingestion_at(&path);
    assert_eq!((row, column), (3, 2));
    assert!(message.contains("missing"));
    let shown = read_price_csv(&path).unwrap_err().to_string();
    assert!(shown.contains("row 3") && shown.contains("column 2"));
}

#[test]
fn ragged_and_non_numeric_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "A,B,C\n1,2,3\n4,5\n").unwrap();
    assert_eq!(ingestion_at(&ragged).0, 3);
    let text = dir.path().join("text.csv");
    fs::write(&text, "A,B\n1,2\n3,4\n5,x\n").unwrap();
    let (row, column, _) = ingestion_at(&text);
    assert_eq!((row, column), (4, 2));
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "A,B\n").unwrap();
    assert!(matches!(read_price_csv(&empty), Err(Error::Ingestion { .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_price_csv(Path::new("/nonexistent/prices.csv")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn constant_prices_still_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    fs::write(&path, "A,B\n5,5\n5,5\n5,5\n").unwrap();
    let env = load_price_environment(&path).unwrap();
    assert_eq!(env.reward_at(2, 1).unwrap(), 0.0);
}

#[test]
fn synthetic_round_trip_at_full_size() {
    let table = synthetic_prices(823, 29, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prices.csv");
    write_price_csv(&path, &table).unwrap();
    let back = read_price_csv(&path).unwrap();
    assert_eq!(back.ids, table.ids);
    assert_eq!(back.prices.shape(), (823, 29));
    // written with six decimals
    assert!((back.prices.clone() - &table.prices).amax() < 1e-6);
    let env = load_price_environment(&path).unwrap();
    assert_eq!((env.horizon(), env.num_arms()), (823, 29));
}

#[test]
fn stock_experiment_runs_from_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prices.csv");
    write_price_csv(&path, &synthetic_prices(40, 6, 2)).unwrap();
    let mut config = ExperimentConfig::default();
    config.environment.kind = EnvKind::Stock;
    config.environment.price_file = Some(path);
    config.environment.horizon = 25;
    config.experiment.replicates = 2;
    config.experiment.output_dir = dir.path().join("out");
    config.policies = vec![PolicyEntry::new(PolicyName::Wgpucb), PolicyEntry::new(PolicyName::Igpucb)];
    let out = run_experiment(&config).unwrap();
    assert_eq!(out.records.len(), 2);
    assert!(out.records.iter().all(|r| r.iter().all(|e| e.rows.len() == 25)));
}
