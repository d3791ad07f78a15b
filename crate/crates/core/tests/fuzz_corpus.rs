//! Replays the checked-in fuzz corpus on stable, with the same round-trip
//! checks the fuzz targets make.

use std::path::PathBuf;

use tgnn::fdm::ReferenceSolution;
use tgnn::kle::FieldRealization;
use tgnn::net::NetworkParams;
use tgnn::physics::Dataset;
use tgnn::ExperimentConfig;

fn corpus(name: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(name);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus {name}");
    out
}

#[test]
fn config_seeds_round_trip() {
    for (p, text) in corpus("config") {
        let cfg = ExperimentConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn field_seeds_round_trip() {
    for (p, text) in corpus("field") {
        let f = FieldRealization::from_text(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(f.to_text(), text);
    }
}

#[test]
fn solution_seeds_round_trip() {
    for (p, text) in corpus("solution") {
        let s = ReferenceSolution::from_text(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(s.to_text(), text);
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for (p, text) in corpus("checkpoint") {
        let (params, it) = NetworkParams::from_checkpoint(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(params.to_checkpoint(it), text);
    }
}

#[test]
fn dataset_seeds_round_trip() {
    for (p, text) in corpus("dataset") {
        let ds = Dataset::from_csv(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(ds.to_csv(), text);
    }
}
