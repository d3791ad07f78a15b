//! Experiment pipelines: scenario construction, training runs in each
//! method, and the comparison studies built from them.
//!
//! Everything here is a pure function of the resolved configuration and
//! master seed. Wall-clock times are carried alongside results but written
//! to separate timing files so every other artifact is bit-reproducible.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fdm::{simulate, ReferenceSolution};
use crate::kle::FieldRealization;
use crate::metrics::{add_noise, evaluate, EvalReport};
use crate::net::NetworkParams;
use crate::physics::{sample_dataset, Problem};
use crate::seeds::{self, Purpose};
use crate::textio::{fmt_f64, sha256_hex, write_new};
use crate::trainer::{train_observed, Mode, TrainConfig, TrainOutcome, TrainSeeds, BASELINE_WEIGHTS, UNIT_WEIGHTS};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub master_seed: u64,
    pub field: FieldRealization,
    pub reference: ReferenceSolution,
}

pub fn build_scenario(cfg: &ExperimentConfig, master_seed: u64) -> Result<Scenario> {
    let s = &cfg.scenario;
    let field = FieldRealization::generate(&s.covariance, s.n_terms, seeds::derive(master_seed, Purpose::Field))?;
    let reference = simulate(&field, s.grid, s.boundary)?;
    Ok(Scenario {
        master_seed,
        field,
        reference,
    })
}

/// Training data for one scenario at one noise level.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub master_seed: u64,
    pub noise_percent: f64,
    pub problem: Problem,
    pub data_fingerprint: String,
}

pub fn prepare(cfg: &ExperimentConfig, scenario: &Scenario, noise_percent: f64) -> Result<Prepared> {
    let master = scenario.master_seed;
    let mut rng = seeds::rng(master, Purpose::Sampling);
    let mut data = sample_dataset(&scenario.reference, &cfg.sampling, &mut rng)?;
    if noise_percent > 0.0 {
        data.observations = add_noise(
            &scenario.reference,
            &data.observations,
            noise_percent,
            seeds::derive(master, Purpose::Noise),
        )?;
    }
    let data_fingerprint = data.fingerprint();
    let problem = Problem::new(data, &scenario.field, cfg.scenario.grid.specific_storage, cfg.constraints)?;
    Ok(Prepared {
        master_seed: master,
        noise_percent,
        problem,
        data_fingerprint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Lagrangian objective with dual ascent.
    Dual,
    /// Fixed weights on the six MSE terms.
    Weighted([f64; 6]),
    /// Lagrangian objective with the multipliers frozen.
    Frozen([f64; 3]),
}

pub const TGNN_LD: &str = "TgNN-LD";
pub const TGNN: &str = "TgNN";
pub const TGNN_1: &str = "TgNN-1";

/// The three methods of the comparison table, in report order.
pub fn standard_methods() -> [(&'static str, Method); 3] {
    [
        (TGNN_LD, Method::Dual),
        (TGNN, Method::Weighted(BASELINE_WEIGHTS)),
        (TGNN_1, Method::Weighted(UNIT_WEIGHTS)),
    ]
}

/// The method a plain `train` invocation uses.
pub fn configured_method(cfg: &TrainConfig) -> Method {
    match cfg.mode {
        Mode::Dual => Method::Dual,
        Mode::FixedWeights => Method::Weighted(cfg.weights),
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub label: String,
    pub method: Method,
    pub master_seed: u64,
    pub noise_percent: f64,
    pub max_epochs: usize,
    pub data_fingerprint: String,
    pub field_fingerprint: String,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
    pub checkpoints: Vec<(usize, String)>,
}

impl RunRecord {
    pub fn epochs_run(&self) -> usize {
        self.outcome.log.rows.len()
    }

    pub fn final_multipliers(&self) -> [f64; 3] {
        self.outcome.multipliers.values()
    }

    pub fn key_values(&self) -> String {
        let mut s = String::new();
        let m = self.final_multipliers();
        let _ = writeln!(s, "method={}", self.label);
        let _ = writeln!(s, "master_seed={}", self.master_seed);
        let _ = writeln!(s, "noise_percent={}", fmt_f64(self.noise_percent));
        let _ = writeln!(s, "max_epochs={}", self.max_epochs);
        let _ = writeln!(s, "epochs_run={}", self.epochs_run());
        let _ = writeln!(s, "stopped_at={}", self.outcome.stopped_at.map_or("none".into(), |e| e.to_string()));
        let _ = writeln!(s, "aborted={}", self.outcome.aborted.as_deref().unwrap_or("none"));
        let _ = writeln!(s, "lambda_pde={}", fmt_f64(m[0]));
        let _ = writeln!(s, "lambda_ec={}", fmt_f64(m[1]));
        let _ = writeln!(s, "lambda_ek={}", fmt_f64(m[2]));
        let _ = writeln!(s, "data_fingerprint={}", self.data_fingerprint);
        let _ = writeln!(s, "field_fingerprint={}", self.field_fingerprint);
        s.push_str(&self.report.to_key_values());
        s
    }

    pub const CSV_HEADER: &'static str =
        "seed,noise_percent,method,max_epochs,epochs_run,stopped_at,l2_mse,l2_relative,r2,n_points,lambda_pde,lambda_ec,lambda_ek,data_fingerprint";

    pub fn csv_row(&self) -> String {
        let m = self.final_multipliers();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.master_seed,
            fmt_f64(self.noise_percent),
            self.label,
            self.max_epochs,
            self.epochs_run(),
            self.outcome.stopped_at.map_or(String::new(), |e| e.to_string()),
            self.report.csv_row(),
            fmt_f64(m[0]),
            fmt_f64(m[1]),
            fmt_f64(m[2]),
            self.data_fingerprint
        )
    }

    pub const TIMING_HEADER: &'static str = "seed,noise_percent,method,max_epochs,train_wall_s,eval_wall_s";

    pub fn timing_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6}",
            self.master_seed,
            fmt_f64(self.noise_percent),
            self.label,
            self.max_epochs,
            self.outcome.wall_time_s,
            self.report.wall_time_s
        )
    }
}

/// Train one method on prepared data and score it on the reference grid.
pub fn run_method(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    prepared: &Prepared,
    label: &str,
    method: Method,
    max_epochs: usize,
) -> Result<RunRecord> {
    let master = prepared.master_seed;
    let train_seeds = TrainSeeds {
        init: seeds::derive(master, Purpose::Init),
        multipliers: seeds::derive(master, Purpose::Multipliers),
    };
    let mut tc = TrainConfig { max_epochs, ..cfg.trainer };
    let frozen = match method {
        Method::Dual => {
            tc.mode = Mode::Dual;
            None
        }
        Method::Weighted(w) => {
            tc.mode = Mode::FixedWeights;
            tc.weights = w;
            None
        }
        Method::Frozen(m) => Some(m),
    };
    let mut checkpoints = Vec::new();
    let outcome = train_observed(
        &tc,
        &prepared.problem,
        &cfg.model,
        train_seeds,
        frozen,
        &mut |epoch, p: &NetworkParams| {
            checkpoints.push((epoch, p.to_checkpoint(epoch)));
            Ok(())
        },
    )?;
    let start = Instant::now();
    let mut report = evaluate(&outcome.params, &scenario.reference, &cfg.metrics.eval)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(RunRecord {
        label: label.to_string(),
        method,
        master_seed: master,
        noise_percent: prepared.noise_percent,
        max_epochs,
        data_fingerprint: prepared.data_fingerprint.clone(),
        field_fingerprint: scenario.field.fingerprint(),
        outcome,
        report,
        checkpoints,
    })
}

/// Map `f` over `items` on up to `threads` worker threads, keeping order.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if k >= items.len() {
                    break;
                }
                let r = f(&items[k]);
                results.lock().unwrap()[k] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Job {
    seed_index: usize,
    noise_index: usize,
    method: usize,
    epochs: usize,
}

/// Scenarios and prepared data for every (seed, noise level) pair.
fn prepare_grid(cfg: &ExperimentConfig, seeds: &[u64], levels: &[f64]) -> Result<(Vec<Scenario>, Vec<Vec<Prepared>>)> {
    let mut scenarios = Vec::new();
    let mut prepared = Vec::new();
    for &s in seeds {
        let sc = build_scenario(cfg, s)?;
        prepared.push(levels.iter().map(|&a| prepare(cfg, &sc, a)).collect::<Result<Vec<_>>>()?);
        scenarios.push(sc);
    }
    Ok((scenarios, prepared))
}

fn run_jobs(
    cfg: &ExperimentConfig,
    scenarios: &[Scenario],
    prepared: &[Vec<Prepared>],
    methods: &[(&str, Method)],
    jobs: &[Job],
    threads: usize,
) -> Result<Vec<RunRecord>> {
    parallel_map(jobs, threads, |j| {
        let (label, method) = methods[j.method];
        run_method(
            cfg,
            &scenarios[j.seed_index],
            &prepared[j.seed_index][j.noise_index],
            label,
            method,
            j.epochs,
        )
    })
    .into_iter()
    .collect()
}

/// All three methods on each master seed's data, at the configured noise level.
pub fn compare_runs(cfg: &ExperimentConfig, seeds: &[u64], threads: usize) -> Result<(Vec<Scenario>, Vec<RunRecord>)> {
    let levels = [cfg.metrics.noise_percent];
    let (scenarios, prepared) = prepare_grid(cfg, seeds, &levels)?;
    let methods = standard_methods();
    let jobs: Vec<Job> = (0..seeds.len())
        .flat_map(|s| {
            (0..methods.len()).map(move |m| Job {
                seed_index: s,
                noise_index: 0,
                method: m,
                epochs: cfg.trainer.max_epochs,
            })
        })
        .collect();
    let runs = run_jobs(cfg, &scenarios, &prepared, &methods, &jobs, threads)?;
    Ok((scenarios, runs))
}

/// All three methods at each noise level, for each master seed.
pub fn noise_runs(cfg: &ExperimentConfig, seeds: &[u64], levels: &[f64], threads: usize) -> Result<(Vec<Scenario>, Vec<RunRecord>)> {
    let (scenarios, prepared) = prepare_grid(cfg, seeds, levels)?;
    let methods = standard_methods();
    let mut jobs = Vec::new();
    for s in 0..seeds.len() {
        for a in 0..levels.len() {
            for m in 0..methods.len() {
                jobs.push(Job {
                    seed_index: s,
                    noise_index: a,
                    method: m,
                    epochs: cfg.trainer.max_epochs,
                });
            }
        }
    }
    let runs = run_jobs(cfg, &scenarios, &prepared, &methods, &jobs, threads)?;
    Ok((scenarios, runs))
}

/// One dual run per epoch budget on shared data.
pub fn sweep_runs(cfg: &ExperimentConfig, seed: u64, epochs: &[usize], threads: usize) -> Result<(Scenario, Vec<RunRecord>)> {
    let (mut scenarios, prepared) = prepare_grid(cfg, &[seed], &[cfg.metrics.noise_percent])?;
    let methods = [(TGNN_LD, Method::Dual)];
    let jobs: Vec<Job> = epochs
        .iter()
        .map(|&e| Job {
            seed_index: 0,
            noise_index: 0,
            method: 0,
            epochs: e,
        })
        .collect();
    let runs = run_jobs(cfg, &scenarios, &prepared, &methods, &jobs, threads)?;
    Ok((scenarios.remove(0), runs))
}

/// A frozen-multiplier run and its paired dynamic run.
pub fn replay_runs(cfg: &ExperimentConfig, seed: u64, frozen: [f64; 3], threads: usize) -> Result<(Scenario, Vec<RunRecord>)> {
    let (mut scenarios, prepared) = prepare_grid(cfg, &[seed], &[cfg.metrics.noise_percent])?;
    let methods = [("fixed-multipliers", Method::Frozen(frozen)), ("dynamic-multipliers", Method::Dual)];
    let jobs: Vec<Job> = (0..2)
        .map(|m| Job {
            seed_index: 0,
            noise_index: 0,
            method: m,
            epochs: cfg.trainer.max_epochs,
        })
        .collect();
    let runs = run_jobs(cfg, &scenarios, &prepared, &methods, &jobs, threads)?;
    Ok((scenarios.remove(0), runs))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianRow {
    pub noise_percent: f64,
    pub method: String,
    pub n_runs: usize,
    pub l2_mse: f64,
    pub l2_relative: f64,
    pub r2: f64,
}

/// Per (noise level, method) medians over seeds, in first-seen order.
pub fn medians(runs: &[RunRecord]) -> Vec<MedianRow> {
    let mut keys: Vec<(u64, String)> = Vec::new();
    for r in runs {
        let k = (r.noise_percent.to_bits(), r.label.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(bits, label)| {
            let sel: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.noise_percent.to_bits() == bits && r.label == label)
                .collect();
            let col = |f: fn(&EvalReport) -> f64| median(&sel.iter().map(|r| f(&r.report)).collect::<Vec<_>>());
            MedianRow {
                noise_percent: f64::from_bits(bits),
                method: label,
                n_runs: sel.len(),
                l2_mse: col(|e| e.l2_mse),
                l2_relative: col(|e| e.l2_relative),
                r2: col(|e| e.r2),
            }
        })
        .collect()
}

pub const MEDIAN_HEADER: &str = "noise_percent,method,n_runs,median_l2_mse,median_l2_relative,median_r2";

pub fn medians_csv(rows: &[MedianRow]) -> String {
    let mut s = format!("{MEDIAN_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f64(r.noise_percent),
            r.method,
            r.n_runs,
            fmt_f64(r.l2_mse),
            fmt_f64(r.l2_relative),
            fmt_f64(r.r2)
        );
    }
    s
}

pub fn runs_csv(runs: &[RunRecord]) -> String {
    let mut s = format!("{}\n", RunRecord::CSV_HEADER);
    for r in runs {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn timing_csv(runs: &[RunRecord]) -> String {
    let mut s = format!("{}\n", RunRecord::TIMING_HEADER);
    for r in runs {
        s.push_str(&r.timing_row());
        s.push('\n');
    }
    s
}

pub fn seeds_text(masters: &[u64]) -> String {
    let mut s = String::new();
    for &m in masters {
        let _ = writeln!(s, "master={m}");
        for (name, p) in [
            ("field", Purpose::Field),
            ("sampling", Purpose::Sampling),
            ("init", Purpose::Init),
            ("multipliers", Purpose::Multipliers),
            ("noise", Purpose::Noise),
        ] {
            let _ = writeln!(s, "  {name}={} stream={}", seeds::derive(m, p), p as u64);
        }
    }
    s
}

/// Write-once output directory that fingerprints what it writes.
///
/// Files named `timing*` are excluded from the manifest: they hold wall
/// times and are the only artifacts that differ between reruns.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    manifest: Vec<(String, String)>,
}

impl ArtifactDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        Ok(ArtifactDir {
            root,
            manifest: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_new(&path, contents.as_bytes())?;
        let base = Path::new(name).file_name().and_then(|s| s.to_str()).unwrap_or("");
        if !base.starts_with("timing") {
            self.manifest.push((name.to_string(), sha256_hex(contents.as_bytes())));
        }
        Ok(())
    }

    /// Writes `manifest.txt` (`sha256  name` per deterministic file).
    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.sort();
        let mut s = String::new();
        for (name, hash) in &self.manifest {
            let _ = writeln!(s, "{hash}  {name}");
        }
        write_new(&self.root.join("manifest.txt"), s.as_bytes())?;
        Ok(self.root)
    }

    pub fn write_header(&mut self, cfg: &ExperimentConfig, masters: &[u64]) -> Result<()> {
        self.write("config.resolved.toml", &cfg.to_toml())?;
        self.write("seeds.txt", &seeds_text(masters))
    }

    pub fn write_scenario(&mut self, prefix: &str, sc: &Scenario, with_solution: bool) -> Result<()> {
        self.write(&format!("{prefix}field.txt"), &sc.field.to_text())?;
        if with_solution {
            self.write(&format!("{prefix}solution.txt"), &sc.reference.to_text())?;
            self.write(&format!("{prefix}solution.csv"), &sc.reference.to_csv())?;
        }
        Ok(())
    }

    pub fn write_run(&mut self, prefix: &str, run: &RunRecord) -> Result<()> {
        self.write(&format!("{prefix}report.txt"), &run.key_values())?;
        self.write(&format!("{prefix}log.csv"), &run.outcome.log.to_csv())?;
        self.write(&format!("{prefix}timing.csv"), &run.outcome.log.timing_csv())?;
        self.write(
            &format!("{prefix}checkpoint.txt"),
            &run.outcome.params.to_checkpoint(run.epochs_run()),
        )?;
        for (epoch, text) in &run.checkpoints {
            self.write(&format!("{prefix}checkpoint_{epoch:06}.txt"), text)?;
        }
        Ok(())
    }
}

/// First aborted run, as the numerical error it represents.
pub fn check_aborted(runs: &[RunRecord]) -> Result<()> {
    match runs.iter().find(|r| r.outcome.aborted.is_some()) {
        Some(r) => Err(Error::NonFinite(format!(
            "{} (seed {}): {}",
            r.label,
            r.master_seed,
            r.outcome.aborted.as_deref().unwrap_or("")
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..37).collect();
        let serial = parallel_map(&items, 1, |v| v * v);
        let parallel = parallel_map(&items, 4, |v| v * v);
        assert_eq!(serial, parallel);
        assert_eq!(parallel[36], 1296);
    }

    #[test]
    fn seeds_listing_is_stable() {
        let a = seeds_text(&[7, 8]);
        assert_eq!(a, seeds_text(&[7, 8]));
        assert_eq!(a.lines().count(), 12);
    }

    #[test]
    fn artifact_dir_is_write_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = ArtifactDir::create(dir.path()).unwrap();
        out.write("a/b.txt", "x").unwrap();
        out.write("a/timing.csv", "1").unwrap();
        assert!(matches!(out.write("a/b.txt", "y"), Err(Error::AlreadyExists(_))));
        let root = out.finish().unwrap();
        let manifest = std::fs::read_to_string(root.join("manifest.txt")).unwrap();
        assert_eq!(manifest.lines().count(), 1);
        assert!(manifest.ends_with("  a/b.txt\n"));
    }
}
