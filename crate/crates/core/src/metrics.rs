//! Prediction error against the reference heads, and observation noise.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::ReferenceSolution;
use crate::net::{predict, NetworkParams};
use crate::physics::LabeledPoint;
use crate::seeds;
use crate::textio::fmt_f64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Score only the last time step instead of every step.
    #[serde(default)]
    pub final_step_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub l2_mse: f64,
    pub l2_relative: f64,
    pub r2: f64,
    pub n_points: usize,
    pub wall_time_s: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "l2_mse,l2_relative,r2,n_points";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            fmt_f64(self.l2_mse),
            fmt_f64(self.l2_relative),
            fmt_f64(self.r2),
            self.n_points
        )
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "l2_mse={}", fmt_f64(self.l2_mse));
        let _ = writeln!(s, "l2_relative={}", fmt_f64(self.l2_relative));
        let _ = writeln!(s, "r2={}", fmt_f64(self.r2));
        let _ = writeln!(s, "n_points={}", self.n_points);
        s
    }
}

/// `(l2_mse, l2_relative, r2)` of `pred` against `reference`.
pub fn score(pred: &[f64], reference: &[f64]) -> Result<(f64, f64, f64)> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(
            "prediction and reference sets must be equal-sized and nonempty".into(),
        ));
    }
    let n = reference.len() as f64;
    let mean = reference.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut ss_ref = 0.0;
    for (p, r) in pred.iter().zip(reference) {
        ss_res += (p - r) * (p - r);
        ss_tot += (r - mean) * (r - mean);
        ss_ref += r * r;
    }
    if ss_tot == 0.0 {
        return Err(Error::InvalidArgument("reference has zero variance; R2 undefined".into()));
    }
    let rel = if ss_ref == 0.0 { f64::INFINITY } else { (ss_res / ss_ref).sqrt() };
    Ok((ss_res / n, rel, 1.0 - ss_res / ss_tot))
}

/// Evaluation points (all non-Dirichlet nodes at each scored step) and
/// their reference heads.
pub fn evaluation_set(reference: &ReferenceSolution, spec: &EvalSpec) -> (Vec<[f64; 3]>, Vec<f64>) {
    let g = &reference.grid;
    let first = if spec.final_step_only { g.n_steps } else { 1 };
    let mut pts = Vec::new();
    let mut refs = Vec::new();
    for step in first..=g.n_steps {
        for j in 0..g.ny {
            for i in 1..g.nx - 1 {
                pts.push([g.time(step), g.x(i), g.y(j)]);
                refs.push(reference.head(step, j, i));
            }
        }
    }
    (pts, refs)
}

pub fn evaluate(params: &NetworkParams, reference: &ReferenceSolution, spec: &EvalSpec) -> Result<EvalReport> {
    let (pts, refs) = evaluation_set(reference, spec);
    let pred = predict(params, &pts);
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network prediction".into()));
    }
    let (l2_mse, l2_relative, r2) = score(&pred, &refs)?;
    Ok(EvalReport {
        l2_mse,
        l2_relative,
        r2,
        n_points: refs.len(),
        wall_time_s: 0.0,
    })
}

/// `max_t h - min_t h` at every node, over the whole simulated window.
pub fn head_range(reference: &ReferenceSolution) -> Vec<f64> {
    let g = &reference.grid;
    let mut lo = reference.step_heads(0).to_vec();
    let mut hi = lo.clone();
    for step in 1..=g.n_steps {
        for (k, &h) in reference.step_heads(step).iter().enumerate() {
            lo[k] = lo[k].min(h);
            hi[k] = hi[k].max(h);
        }
    }
    hi.iter().zip(&lo).map(|(a, b)| a - b).collect()
}

/// `h* = h + h_diff(x, y) · α/100 · ε` with independent `ε ~ U(-1, 1)`.
///
/// Observations must sit on grid nodes; `h_diff` is looked up at the node.
pub fn add_noise(reference: &ReferenceSolution, observations: &[LabeledPoint], alpha_percent: f64, seed: u64) -> Result<Vec<LabeledPoint>> {
    if !(alpha_percent >= 0.0 && alpha_percent.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be nonnegative, got {alpha_percent}"
        )));
    }
    let g = &reference.grid;
    let range = head_range(reference);
    let mut rng = seeds::from_seed(seed);
    observations
        .iter()
        .map(|p| {
            let i = (p.x / g.dx()).round();
            let j = (p.y / g.dy()).round();
            if !(i >= 0.0 && j >= 0.0 && (i as usize) < g.nx && (j as usize) < g.ny) {
                return Err(Error::InvalidArgument(format!("observation ({}, {}) is not on the grid", p.x, p.y)));
            }
            let eps: f64 = rng.random_range(-1.0..1.0);
            let diff = range[j as usize * g.nx + i as usize];
            Ok(LabeledPoint {
                h: p.h + diff * alpha_percent / 100.0 * eps,
                ..*p
            })
        })
        .collect()
}
