//! Max-min training loop.
//!
//! Each epoch evaluates the full-batch loss breakdown, forms the objective,
//! takes one Adam step on the network parameters, and in dual mode raises
//! every multiplier by `s_k · ν_i` where `ν_i ≥ 0` is that constraint's
//! aggregate violation from the same pass. Fixed-weight modes minimize the
//! plain weighted sum of the six MSE terms.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{init_params, Architecture, Gradient, NetworkParams};
use crate::physics::{LossBreakdown, Problem, TermWeights};
use crate::seeds;
use crate::textio::fmt_f64;

/// Weight vector of the hand-tuned baseline, `[data, ic, bc, pde, ec, ek]`.
pub const BASELINE_WEIGHTS: [f64; 6] = [1.0, 1.0, 1.0, 100.0, 1.0, 1.0];
/// Equal weights.
pub const UNIT_WEIGHTS: [f64; 6] = [1.0; 6];

/// `data + ic + bc + λ_pde ν_pde + λ_ec ν_ec + λ_ek ν_ek`.
pub fn lagrangian_loss(b: &LossBreakdown, m: &MultiplierState) -> f64 {
    TermWeights::lagrangian(m.values()).total(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierState {
    pub pde: f64,
    pub ec: f64,
    pub ek: f64,
    pub step_size: f64,
    pub seed: u64,
    pub history: Vec<[f64; 3]>,
}

impl MultiplierState {
    pub fn new(values: [f64; 3], step_size: f64, seed: u64) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "multipliers must be finite and nonnegative: {values:?}"
            )));
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {step_size}")));
        }
        Ok(MultiplierState {
            pde: values[0],
            ec: values[1],
            ek: values[2],
            step_size,
            seed,
            history: vec![values],
        })
    }

    /// Uniform draws in the open interval (0, 1).
    pub fn random(step_size: f64, seed: u64) -> Result<Self> {
        let mut rng = seeds::from_seed(seed);
        let mut draw = || loop {
            let v: f64 = rng.random();
            if v > 0.0 {
                break v;
            }
        };
        let values = [draw(), draw(), draw()];
        Self::new(values, step_size, seed)
    }

    pub fn values(&self) -> [f64; 3] {
        [self.pde, self.ec, self.ek]
    }
}

/// `λ_i ← λ_i + s_k ν_i`.
pub fn update_multipliers(state: &mut MultiplierState, nu_pde: f64, nu_ec: f64, nu_ek: f64) -> Result<()> {
    let nu = [nu_pde, nu_ec, nu_ek];
    if nu.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("violations must be finite and nonnegative: {nu:?}")));
    }
    state.pde += state.step_size * nu_pde;
    state.ec += state.step_size * nu_ec;
    state.ek += state.step_size * nu_ek;
    state.history.push(state.values());
    Ok(())
}

/// True when at least `window` losses exist and the last `window` are all
/// below `threshold`.
pub fn dynamic_stop(recent_losses: &[f64], window: usize, threshold: f64) -> bool {
    if window == 0 || recent_losses.len() < window {
        return false;
    }
    recent_losses[recent_losses.len() - window..].iter().all(|&l| l < threshold)
}

/// Variant on successive changes: the last `window` absolute loss differences
/// are all below `threshold`.
pub fn dynamic_stop_on_changes(recent_losses: &[f64], window: usize, threshold: f64) -> bool {
    if window == 0 || recent_losses.len() < window + 1 {
        return false;
    }
    let tail = &recent_losses[recent_losses.len() - window - 1..];
    tail.windows(2).all(|w| (w[1] - w[0]).abs() < threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidArgument("gradient not congruent with parameters".into()));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} = {}", grad[i])));
    }
    state.step += 1;
    let k = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(k);
    let c2 = 1.0 - cfg.beta2.powi(k);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Lagrangian objective with multiplier ascent.
    Dual,
    /// Weighted sum of the six MSE terms with `TrainConfig::weights`.
    FixedWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StoppingRule {
    Fixed,
    Dynamic {
        window: usize,
        threshold: f64,
        #[serde(default)]
        on_changes: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub weights: [f64; 6],
    pub max_epochs: usize,
    pub adam: AdamConfig,
    pub stopping: StoppingRule,
    pub step_size: f64,
    /// Write a checkpoint every this many epochs (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Dual,
            weights: BASELINE_WEIGHTS,
            max_epochs: 2000,
            adam: AdamConfig::default(),
            stopping: StoppingRule::Fixed,
            step_size: 1.25,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.epsilon > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("step_size must be positive".into()));
        }
        if let StoppingRule::Dynamic { window, threshold, .. } = self.stopping {
            if window == 0 || !(threshold > 0.0) {
                return Err(Error::Config("dynamic stopping needs window >= 1 and threshold > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSeeds {
    pub init: u64,
    pub multipliers: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub total: f64,
    pub breakdown: LossBreakdown,
    /// Multipliers after this epoch's update.
    pub multipliers: [f64; 3],
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationLog {
    pub rows: Vec<LogRow>,
}

pub const LOG_HEADER: &str = "epoch,total,mse_data,mse_ic,mse_bc,mse_pde,mse_ec,mse_ek,nu_pde,nu_ec,nu_ek,lambda_pde,lambda_ec,lambda_ek";

impl IterationLog {
    /// Deterministic columns only; wall time goes to [`timing_csv`](Self::timing_csv).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            let b = &r.breakdown;
            let vals = [
                r.total,
                b.mse_data,
                b.mse_ic,
                b.mse_bc,
                b.mse_pde,
                b.mse_ec,
                b.mse_ek,
                b.nu_pde,
                b.nu_ec,
                b.nu_ek,
                r.multipliers[0],
                r.multipliers[1],
                r.multipliers[2],
            ];
            let _ = write!(s, "{}", r.epoch);
            for v in vals {
                let _ = write!(s, ",{}", fmt_f64(v));
            }
            s.push('\n');
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,wall_s\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6}", r.epoch, r.wall_time_s);
        }
        s
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.total).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub multipliers: MultiplierState,
    pub log: IterationLog,
    /// Epoch at which a dynamic rule fired.
    pub stopped_at: Option<usize>,
    /// Set when a non-finite loss or gradient ended training; `params` are
    /// then the last finite parameters.
    pub aborted: Option<String>,
    pub wall_time_s: f64,
}

/// Train from freshly initialized parameters.
pub fn train(config: &TrainConfig, problem: &Problem, arch: &Architecture, seeds: TrainSeeds) -> Result<TrainOutcome> {
    let multipliers = MultiplierState::random(config.step_size, seeds.multipliers)?;
    run(config, problem, arch, seeds.init, multipliers, true, &mut |_, _| Ok(()))
}

/// Lagrangian objective with the multipliers held at `frozen` throughout.
pub fn train_fixed_multipliers(
    config: &TrainConfig,
    problem: &Problem,
    arch: &Architecture,
    seeds: TrainSeeds,
    frozen: [f64; 3],
) -> Result<TrainOutcome> {
    let multipliers = MultiplierState::new(frozen, config.step_size, seeds.multipliers)?;
    let cfg = TrainConfig {
        mode: Mode::Dual,
        ..*config
    };
    run(&cfg, problem, arch, seeds.init, multipliers, false, &mut |_, _| Ok(()))
}

/// Full training entry point with a checkpoint observer, called every
/// `checkpoint_every` epochs with the epoch and current parameters.
pub fn train_observed(
    config: &TrainConfig,
    problem: &Problem,
    arch: &Architecture,
    seeds: TrainSeeds,
    frozen: Option<[f64; 3]>,
    observer: &mut dyn FnMut(usize, &NetworkParams) -> Result<()>,
) -> Result<TrainOutcome> {
    match frozen {
        Some(m) => {
            let multipliers = MultiplierState::new(m, config.step_size, seeds.multipliers)?;
            let cfg = TrainConfig {
                mode: Mode::Dual,
                ..*config
            };
            run(&cfg, problem, arch, seeds.init, multipliers, false, observer)
        }
        None => {
            let multipliers = MultiplierState::random(config.step_size, seeds.multipliers)?;
            run(config, problem, arch, seeds.init, multipliers, true, observer)
        }
    }
}

fn run(
    config: &TrainConfig,
    problem: &Problem,
    arch: &Architecture,
    init_seed: u64,
    mut multipliers: MultiplierState,
    ascend: bool,
    observer: &mut dyn FnMut(usize, &NetworkParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    arch.validate()?;
    let start = Instant::now();
    let mut params = init_params(arch, init_seed);
    let mut adam = AdamState::new(params.len());
    let mut log = IterationLog::default();
    let mut totals = Vec::with_capacity(config.max_epochs);
    let mut stopped_at = None;
    let mut aborted = None;

    for epoch in 1..=config.max_epochs {
        let weights = match config.mode {
            Mode::Dual => TermWeights::lagrangian(multipliers.values()),
            Mode::FixedWeights => TermWeights::fixed(config.weights),
        };
        let mut grad = Gradient::zeros(&params);
        let breakdown = match problem.evaluate(&params, &weights, Some(&mut grad)) {
            Ok(b) => b,
            Err(Error::NonFinite(msg)) => {
                aborted = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let total = weights.total(&breakdown);
        if !total.is_finite() {
            aborted = Some(format!("epoch {epoch}: total loss {total}"));
            break;
        }
        let mut next = params.clone();
        if let Err(e) = adam_step(next.values_mut(), grad.as_slice(), &mut adam, &config.adam) {
            aborted = Some(format!("epoch {epoch}: {e}"));
            break;
        }
        if next.values().iter().any(|v| !v.is_finite()) {
            aborted = Some(format!("epoch {epoch}: non-finite parameters after update"));
            break;
        }
        params = next;
        if ascend && config.mode == Mode::Dual {
            update_multipliers(&mut multipliers, breakdown.nu_pde, breakdown.nu_ec, breakdown.nu_ek)?;
        }
        log.rows.push(LogRow {
            epoch,
            total,
            breakdown,
            multipliers: multipliers.values(),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        totals.push(total);
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            observer(epoch, &params)?;
        }
        let stop = match config.stopping {
            StoppingRule::Fixed => false,
            StoppingRule::Dynamic {
                window,
                threshold,
                on_changes: false,
            } => dynamic_stop(&totals, window, threshold),
            StoppingRule::Dynamic {
                window,
                threshold,
                on_changes: true,
            } => dynamic_stop_on_changes(&totals, window, threshold),
        };
        if stop {
            stopped_at = Some(epoch);
            break;
        }
    }
    Ok(TrainOutcome {
        params,
        multipliers,
        log,
        stopped_at,
        aborted,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
