//! Loss terms built from network evaluations.
//!
//! The flow residual at a collocation point is
//!
//! ```text
//! f = S_s ∂N/∂t - K (∂²N/∂x² + ∂²N/∂y²) - K (∂Z/∂x ∂N/∂x + ∂Z/∂y ∂N/∂y)
//! ```
//!
//! with `K = e^Z` from the KLE field (the product-rule expansion of the
//! divergence form). Inside the losses the residual is multiplied by
//! `residual_scale`, default `1 / S_s`, which turns it into the head-rate
//! form `∂N/∂t - ∇·(K∇N)/S_s` (head per unit time) so that its mean square
//! is comparable to the data misfit.
//!
//! Inequality constraints enter through ReLU violations:
//! engineering control `∂N/∂x ≤ 0` and expert knowledge `h_min ≤ N ≤ h_max`.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::ReferenceSolution;
use crate::kle::{FieldRealization, LogK};
use crate::net::{self, EvalBundle, Gradient, NetworkParams, Order};
use crate::textio::{fmt_f64, parse_f64, Lines};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub h: f64,
}

impl LabeledPoint {
    pub fn coords(&self) -> [f64; 3] {
        [self.t, self.x, self.y]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub observations: Vec<LabeledPoint>,
    pub initial: Vec<LabeledPoint>,
    pub boundary: Vec<LabeledPoint>,
    pub pde: Vec<[f64; 3]>,
    pub ec: Vec<[f64; 3]>,
    pub ek: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub n_data: usize,
    pub n_ic: usize,
    pub n_bc: usize,
    pub n_pde: usize,
    pub n_ec: usize,
    pub n_ek: usize,
    /// Observations are drawn from grid steps with `t ≤ train_window`.
    pub train_window: f64,
    /// Fold the IC and BC points into the observation set.
    #[serde(default)]
    pub ic_bc_in_data: bool,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            n_data: 500,
            n_ic: 500,
            n_bc: 500,
            n_pde: 10_000,
            n_ec: 2000,
            n_ek: 2000,
            train_window: 5.0,
            ic_bc_in_data: false,
        }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_window > 0.0 && self.train_window.is_finite()) {
            return Err(Error::Config("train_window must be positive".into()));
        }
        let total = [self.n_data, self.n_ic, self.n_bc, self.n_pde, self.n_ec, self.n_ek]
            .iter()
            .try_fold(0usize, |a, &b| a.checked_add(b));
        if total.is_none_or(|t| t > 50_000_000) {
            return Err(Error::Config("sampling counts too large".into()));
        }
        Ok(())
    }
}

/// Draw every point set for one reference solution.
///
/// Observation and IC points sit on grid nodes so their labels are exact
/// reference heads. BC points lie on the prescribed-head edges at uniform
/// times in `(0, T]`. Collocation points are uniform over the whole
/// space-time domain.
pub fn sample_dataset<R: Rng>(reference: &ReferenceSolution, spec: &SamplingSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let g = &reference.grid;
    let last_step = ((spec.train_window / g.dt) + 1e-9).floor() as usize;
    let last_step = last_step.min(g.n_steps);
    if spec.n_data > 0 && last_step == 0 {
        return Err(Error::Config("train_window shorter than one time step".into()));
    }
    let total = g.total_time();
    let mut ds = Dataset::default();
    for _ in 0..spec.n_data {
        let step = rng.random_range(1..=last_step);
        let i = rng.random_range(0..g.nx);
        let j = rng.random_range(0..g.ny);
        ds.observations.push(LabeledPoint {
            t: g.time(step),
            x: g.x(i),
            y: g.y(j),
            h: reference.head(step, j, i),
        });
    }
    for _ in 0..spec.n_ic {
        let i = rng.random_range(0..g.nx);
        let j = rng.random_range(0..g.ny);
        ds.initial.push(LabeledPoint {
            t: 0.0,
            x: g.x(i),
            y: g.y(j),
            h: reference.head(0, j, i),
        });
    }
    for _ in 0..spec.n_bc {
        let t = total * (1.0 - rng.random::<f64>());
        let y = g.length_y * rng.random::<f64>();
        let (x, h) = if rng.random::<bool>() {
            (0.0, reference.bcs.left_head)
        } else {
            (g.length_x, reference.bcs.right_head)
        };
        ds.boundary.push(LabeledPoint { t, x, y, h });
    }
    let mut collocation = |n: usize| -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                [
                    total * (1.0 - rng.random::<f64>()),
                    g.length_x * rng.random::<f64>(),
                    g.length_y * rng.random::<f64>(),
                ]
            })
            .collect()
    };
    ds.pde = collocation(spec.n_pde);
    ds.ec = collocation(spec.n_ec);
    ds.ek = collocation(spec.n_ek);
    if spec.ic_bc_in_data {
        let extra: Vec<LabeledPoint> = ds.initial.drain(..).chain(ds.boundary.drain(..)).collect();
        ds.observations.extend(extra);
    }
    Ok(ds)
}

const CATEGORIES: [&str; 6] = ["data", "ic", "bc", "pde", "ec", "ek"];

impl Dataset {
    /// `category,t,x,y,h` rows; `h` is empty for collocation points.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,t,x,y,h\n");
        for (cat, pts) in [("data", &self.observations), ("ic", &self.initial), ("bc", &self.boundary)] {
            for p in pts {
                let _ = writeln!(s, "{cat},{},{},{},{}", fmt_f64(p.t), fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.h));
            }
        }
        for (cat, pts) in [("pde", &self.pde), ("ec", &self.ec), ("ek", &self.ek)] {
            for p in pts {
                let _ = writeln!(s, "{cat},{},{},{},", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2]));
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = Lines::new("dataset", text);
        let head = lines.expect_line()?;
        if head.trim_end() != "category,t,x,y,h" {
            return Err(lines.err("expected header `category,t,x,y,h`"));
        }
        let mut ds = Dataset::default();
        while let Some(l) = lines.next_line() {
            if l.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = l.trim_end().split(',').collect();
            if cols.len() != 5 {
                return Err(lines.err(format!("expected 5 columns, found {}", cols.len())));
            }
            let num = |s: &str| parse_f64(s).ok_or_else(|| lines.err(format!("invalid number `{s}`")));
            let (t, x, y) = (num(cols[1])?, num(cols[2])?, num(cols[3])?);
            match cols[0] {
                "data" | "ic" | "bc" => {
                    let p = LabeledPoint { t, x, y, h: num(cols[4])? };
                    match cols[0] {
                        "data" => ds.observations.push(p),
                        "ic" => ds.initial.push(p),
                        _ => ds.boundary.push(p),
                    }
                }
                "pde" | "ec" | "ek" => {
                    if !cols[4].is_empty() {
                        return Err(lines.err("collocation rows carry no label"));
                    }
                    match cols[0] {
                        "pde" => ds.pde.push([t, x, y]),
                        "ec" => ds.ec.push([t, x, y]),
                        _ => ds.ek.push([t, x, y]),
                    }
                }
                other => return Err(lines.err(format!("unknown category `{other}` (expected one of {})", CATEGORIES.join(", ")))),
            }
        }
        Ok(ds)
    }

    /// Fingerprint of the canonical CSV form.
    pub fn fingerprint(&self) -> String {
        crate::textio::sha256_hex(self.to_csv().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub h_min: f64,
    pub h_max: f64,
    pub enable_pde: bool,
    pub enable_ec: bool,
    pub enable_ek: bool,
    /// Multiplier applied to the residual inside the loss; `None` means `1 / S_s`.
    #[serde(default)]
    pub residual_scale: Option<f64>,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec {
            h_min: 0.0,
            h_max: 1.0,
            enable_pde: true,
            enable_ec: true,
            enable_ek: true,
            residual_scale: None,
        }
    }
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_min < self.h_max) || !self.h_min.is_finite() || !self.h_max.is_finite() {
            return Err(Error::Config("constraints need finite h_min < h_max".into()));
        }
        if let Some(s) = self.residual_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config("residual_scale must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub mse_data: f64,
    pub mse_ic: f64,
    pub mse_bc: f64,
    pub mse_pde: f64,
    pub mse_ec: f64,
    pub mse_ek: f64,
    pub nu_pde: f64,
    pub nu_ec: f64,
    pub nu_ek: f64,
}

impl LossBreakdown {
    /// The six MSE terms in weight-vector order.
    pub fn mse_terms(&self) -> [f64; 6] {
        [self.mse_data, self.mse_ic, self.mse_bc, self.mse_pde, self.mse_ec, self.mse_ek]
    }

    pub fn is_finite(&self) -> bool {
        self.mse_terms()
            .iter()
            .chain(&[self.nu_pde, self.nu_ec, self.nu_ek])
            .all(|v| v.is_finite())
    }
}

/// Raw residual from a bundle and the local log-conductivity.
pub fn residual_from(b: &EvalBundle, k: &LogK, specific_storage: f64) -> f64 {
    let kk = k.conductivity();
    specific_storage * b.dt - kk * (b.dxx + b.dyy) - kk * (k.dz_dx * b.dx + k.dz_dy * b.dy)
}

/// `∂f/∂bundle`, scaled by `factor`.
fn residual_seed(k: &LogK, specific_storage: f64, factor: f64) -> EvalBundle {
    let kk = k.conductivity();
    EvalBundle {
        value: 0.0,
        dt: factor * specific_storage,
        dx: -factor * kk * k.dz_dx,
        dy: -factor * kk * k.dz_dy,
        dxx: -factor * kk,
        dyy: -factor * kk,
    }
}

type LabeledSet<'a> = (&'a [LabeledPoint], &'a [[f64; 3]], usize);

/// Flow residual of the network at one space-time point, physical units.
pub fn pde_residual(params: &NetworkParams, field: &FieldRealization, specific_storage: f64, point: [f64; 3]) -> Result<f64> {
    let k = field.eval_log_k(point[1], point[2])?;
    let b = net::forward_with_derivs(params, point[0], point[1], point[2]);
    Ok(residual_from(&b, &k, specific_storage))
}

fn ek_violation(n: f64, spec: &ConstraintSpec) -> (f64, f64) {
    // (violation, d violation / dN)
    if n > spec.h_max {
        (n - spec.h_max, 1.0)
    } else if n < spec.h_min {
        (spec.h_min - n, -1.0)
    } else {
        (0.0, 0.0)
    }
}

/// Relative weight of every loss term in one objective evaluation.
///
/// The objective is `Σ weight·term` over the six MSE terms plus the EC/EK
/// ReLU aggregates (`ν_pde` coincides with `mse_pde`).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TermWeights {
    pub mse: [f64; 6],
    pub nu_ec: f64,
    pub nu_ek: f64,
}

impl TermWeights {
    pub fn fixed(lambda: [f64; 6]) -> Self {
        TermWeights {
            mse: lambda,
            nu_ec: 0.0,
            nu_ek: 0.0,
        }
    }

    /// Dual-mode objective with multipliers `(λ_pde, λ_ec, λ_ek)`.
    pub fn lagrangian(lambda: [f64; 3]) -> Self {
        TermWeights {
            mse: [1.0, 1.0, 1.0, lambda[0], 0.0, 0.0],
            nu_ec: lambda[1],
            nu_ek: lambda[2],
        }
    }

    pub fn total(&self, b: &LossBreakdown) -> f64 {
        let m = b.mse_terms();
        let s: f64 = self.mse.iter().zip(&m).map(|(w, v)| w * v).sum();
        s + self.nu_ec * b.nu_ec + self.nu_ek * b.nu_ek
    }
}

/// Dataset plus the fixed quantities every loss evaluation needs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub dataset: Dataset,
    pub constraints: ConstraintSpec,
    pub specific_storage: f64,
    pub residual_scale: f64,
    pde_logk: Vec<LogK>,
    obs: Vec<[f64; 3]>,
    ic: Vec<[f64; 3]>,
    bc: Vec<[f64; 3]>,
}

impl Problem {
    pub fn new(dataset: Dataset, field: &FieldRealization, specific_storage: f64, constraints: ConstraintSpec) -> Result<Self> {
        constraints.validate()?;
        let residual_scale = constraints.residual_scale.unwrap_or(1.0 / specific_storage);
        let pde_logk = dataset
            .pde
            .iter()
            .map(|p| field.eval_log_k(p[1], p[2]))
            .collect::<Result<Vec<_>>>()?;
        for p in dataset.ec.iter().chain(&dataset.ek) {
            field.eval_log_k(p[1], p[2])?;
        }
        let coords = |v: &[LabeledPoint]| v.iter().map(LabeledPoint::coords).collect::<Vec<_>>();
        Ok(Problem {
            obs: coords(&dataset.observations),
            ic: coords(&dataset.initial),
            bc: coords(&dataset.boundary),
            dataset,
            constraints,
            specific_storage,
            residual_scale,
            pde_logk,
        })
    }

    /// Loss breakdown, and when `grad` is given, the gradient of
    /// `weights.total(breakdown)` accumulated into it.
    pub fn evaluate(&self, params: &NetworkParams, weights: &TermWeights, mut grad: Option<&mut Gradient>) -> Result<LossBreakdown> {
        let ds = &self.dataset;
        let c = &self.constraints;
        let mut out = LossBreakdown::default();

        let sets: [LabeledSet; 3] = [
            (&ds.observations, &self.obs, 0),
            (&ds.initial, &self.ic, 1),
            (&ds.boundary, &self.bc, 2),
        ];
        for (labels, pts, slot) in sets {
            if labels.is_empty() {
                if slot == 0 {
                    return Err(Error::InvalidArgument("observation set is empty".into()));
                }
                continue;
            }
            let n = labels.len() as f64;
            let w = weights.mse[slot];
            let mse = run(params, pts, Order::Value, grad.as_deref_mut().filter(|_| w != 0.0), |i, b| {
                let r = b.value - labels[i].h;
                (
                    r * r / n,
                    EvalBundle {
                        value: w * 2.0 * r / n,
                        ..Default::default()
                    },
                )
            });
            match slot {
                0 => out.mse_data = mse,
                1 => out.mse_ic = mse,
                _ => out.mse_bc = mse,
            }
        }

        if c.enable_pde {
            if ds.pde.is_empty() {
                return Err(Error::InvalidArgument("PDE collocation set is empty".into()));
            }
            let n = ds.pde.len() as f64;
            let w = weights.mse[3];
            let (ss, scale) = (self.specific_storage, self.residual_scale);
            let logk = &self.pde_logk;
            let mse = run(params, &ds.pde, Order::Full, grad.as_deref_mut().filter(|_| w != 0.0), |i, b| {
                let f = scale * residual_from(b, &logk[i], ss);
                (f * f / n, residual_seed(&logk[i], ss, w * 2.0 * f * scale / n))
            });
            out.mse_pde = mse;
            out.nu_pde = mse;
        }

        if c.enable_ec {
            if ds.ec.is_empty() {
                return Err(Error::InvalidArgument("EC collocation set is empty".into()));
            }
            let n = ds.ec.len() as f64;
            let (wm, wn) = (weights.mse[4], weights.nu_ec);
            let mut nu = 0.0;
            let g = grad.as_deref_mut().filter(|_| wm != 0.0 || wn != 0.0);
            let mse = run(params, &ds.ec, Order::Full, g, |_, b| {
                if b.dx > 0.0 {
                    nu += b.dx / n;
                    let d = (wm * 2.0 * b.dx + wn) / n;
                    (
                        b.dx * b.dx / n,
                        EvalBundle {
                            dx: d,
                            ..Default::default()
                        },
                    )
                } else {
                    (0.0, EvalBundle::default())
                }
            });
            out.mse_ec = mse;
            out.nu_ec = nu;
        }

        if c.enable_ek {
            if ds.ek.is_empty() {
                return Err(Error::InvalidArgument("EK collocation set is empty".into()));
            }
            let n = ds.ek.len() as f64;
            let (wm, wn) = (weights.mse[5], weights.nu_ek);
            let mut nu = 0.0;
            let g = grad.filter(|_| wm != 0.0 || wn != 0.0);
            let mse = run(params, &ds.ek, Order::Value, g, |_, b| {
                let (v, dv) = ek_violation(b.value, c);
                nu += v / n;
                (
                    v * v / n,
                    EvalBundle {
                        value: (wm * 2.0 * v + wn) * dv / n,
                        ..Default::default()
                    },
                )
            });
            out.mse_ek = mse;
            out.nu_ek = nu;
        }

        if !out.is_finite() {
            return Err(Error::NonFinite(format!("loss breakdown {out:?}")));
        }
        Ok(out)
    }
}

fn run<F>(params: &NetworkParams, pts: &[[f64; 3]], order: Order, grad: Option<&mut Gradient>, mut f: F) -> f64
where
    F: FnMut(usize, &EvalBundle) -> (f64, EvalBundle),
{
    match grad {
        Some(g) => net::accumulate(params, pts, order, g, f),
        None => net::evaluate_batch(params, pts, order)
            .iter()
            .enumerate()
            .map(|(i, b)| f(i, b).0)
            .sum(),
    }
}

/// The six MSE terms (and aggregates) of `params` on `problem`.
pub fn mse_terms(params: &NetworkParams, problem: &Problem) -> Result<LossBreakdown> {
    problem.evaluate(params, &TermWeights::default(), None)
}

/// `(ν_pde, ν_ec, ν_ek)`.
pub fn constraint_aggregates(params: &NetworkParams, problem: &Problem) -> Result<(f64, f64, f64)> {
    let b = mse_terms(params, problem)?;
    Ok((b.nu_pde, b.nu_ec, b.nu_ek))
}
