use tgnn::experiments::{build_scenario, prepare, run_method, standard_methods, ArtifactDir, Method};
use tgnn::fdm::GridSpec;
use tgnn::net::Architecture;
use tgnn::physics::SamplingSpec;
use tgnn::ExperimentConfig;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.grid = GridSpec {
        nx: 11,
        ny: 6,
        dt: 0.5,
        n_steps: 20,
        ..Default::default()
    };
    cfg.sampling = SamplingSpec {
        n_data: 40,
        n_ic: 10,
        n_bc: 10,
        n_pde: 60,
        n_ec: 20,
        n_ek: 20,
        train_window: 5.0,
        ic_bc_in_data: false,
    };
    cfg.model = Architecture {
        hidden_layers: 2,
        width: 6,
        ..Default::default()
    };
    cfg.trainer.max_epochs = 15;
    cfg
}

fn artifacts(cfg: &ExperimentConfig, seed: u64) -> Vec<String> {
    let sc = build_scenario(cfg, seed).unwrap();
    let prepared = prepare(cfg, &sc, 10.0).unwrap();
    let mut out = vec![sc.field.to_text(), sc.reference.to_text(), prepared.problem.dataset.to_csv()];
    for (label, method) in standard_methods() {
        let r = run_method(cfg, &sc, &prepared, label, method, cfg.trainer.max_epochs).unwrap();
        out.push(r.outcome.log.to_csv());
        out.push(r.outcome.params.to_checkpoint(r.epochs_run()));
        out.push(r.key_values());
    }
    out
}

#[test]
fn same_seed_reproduces_every_artifact_bit_exactly() {
    let cfg = tiny();
    assert_eq!(artifacts(&cfg, 7), artifacts(&cfg, 7));
}

#[test]
fn different_seeds_change_every_random_artifact() {
    let cfg = tiny();
    let a = artifacts(&cfg, 7);
    let b = artifacts(&cfg, 8);
    for (x, y) in a.iter().zip(&b) {
        assert_ne!(x, y);
    }
}

#[test]
fn methods_share_data_and_initialization() {
    let cfg = tiny();
    let sc = build_scenario(&cfg, 3).unwrap();
    let prepared = prepare(&cfg, &sc, 0.0).unwrap();
    let runs: Vec<_> = standard_methods()
        .into_iter()
        .map(|(l, m)| run_method(&cfg, &sc, &prepared, l, m, 1).unwrap())
        .collect();
    for r in &runs[1..] {
        assert_eq!(r.data_fingerprint, runs[0].data_fingerprint);
        assert_eq!(r.field_fingerprint, runs[0].field_fingerprint);
    }
    // One epoch from identical parameters: the first log rows share the data term.
    let first: Vec<f64> = runs.iter().map(|r| r.outcome.log.rows[0].breakdown.mse_data).collect();
    assert!(first.iter().all(|&v| v == first[0]));
}

#[test]
fn frozen_zero_multipliers_reduce_to_least_squares() {
    let mut cfg = tiny();
    cfg.constraints.enable_pde = false;
    cfg.constraints.enable_ec = false;
    cfg.constraints.enable_ek = false;
    let sc = build_scenario(&cfg, 5).unwrap();
    let prepared = prepare(&cfg, &sc, 0.0).unwrap();
    let frozen = run_method(&cfg, &sc, &prepared, "frozen", Method::Frozen([0.0; 3]), 10).unwrap();
    let plain = run_method(&cfg, &sc, &prepared, "plain", Method::Weighted([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]), 10).unwrap();
    assert_eq!(frozen.outcome.params, plain.outcome.params);
    for (a, b) in frozen.outcome.log.rows.iter().zip(&plain.outcome.log.rows) {
        assert_eq!(a.total, b.total);
    }
    assert!(frozen.final_multipliers().iter().all(|&m| m == 0.0));
}

#[test]
fn artifact_manifests_match_across_reruns() {
    let cfg = tiny();
    let write = |dir: &std::path::Path| {
        let sc = build_scenario(&cfg, 11).unwrap();
        let prepared = prepare(&cfg, &sc, 0.0).unwrap();
        let r = run_method(&cfg, &sc, &prepared, "TgNN-LD", Method::Dual, 5).unwrap();
        let mut out = ArtifactDir::create(dir).unwrap();
        out.write_header(&cfg, &[11]).unwrap();
        out.write_scenario("", &sc, true).unwrap();
        out.write_run("run/", &r).unwrap();
        let root = out.finish().unwrap();
        std::fs::read_to_string(root.join("manifest.txt")).unwrap()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = write(a.path());
    assert_eq!(ma, write(b.path()));
    assert!(ma.contains("run/log.csv") && !ma.contains("timing"));
}
