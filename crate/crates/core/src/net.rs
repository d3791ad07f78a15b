//! Dense tanh network `N(t, x, y; θ)` with exact input derivatives.
//!
//! Each batch is propagated as up to six channels per unit: the value, the
//! three first derivatives with respect to the normalized inputs, and the
//! pure second derivatives in `x̂` and `ŷ`. For a hidden unit with
//! pre-activation `z` and `s = tanh(z)`:
//!
//! ```text
//! a    = s
//! a_i  = s'(z) z_i
//! a_ii = s''(z) z_i² + s'(z) z_ii
//! ```
//!
//! Linear layers map every channel with the same weight matrix (bias on the
//! value channel only), so one GEMM per layer covers all channels. Reverse
//! accumulation runs the transposed recurrences, which lets losses built on
//! any channel (including the second derivatives) be differentiated with
//! respect to the weights exactly.
//!
//! Parameters are stored flat, layer by layer, each layer as its row-major
//! `out × in` weight matrix followed by its bias vector.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::textio::{fmt_f64, parse_f64, Lines};

pub const CHECKPOINT_FORMAT: &str = "tgnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Points per forward/backward block.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Affine map of the raw `(t, x, y)` to `[0, 1]`: `(v - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNormalization {
    pub offset: [f64; 3],
    pub scale: [f64; 3],
}

impl Default for InputNormalization {
    fn default() -> Self {
        InputNormalization {
            offset: [0.0; 3],
            scale: [10.0, 1020.0, 1020.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    #[serde(default)]
    pub normalization: InputNormalization,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden_layers: 4,
            width: 50,
            activation: Activation::Tanh,
            normalization: InputNormalization::default(),
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers > 0 && self.width == 0 {
            return Err(Error::Config("width must be positive".into()));
        }
        if self.hidden_layers > 64 || self.width > 4096 {
            return Err(Error::Config("network too large".into()));
        }
        let n = &self.normalization;
        if n.scale.iter().chain(&n.offset).any(|v| !v.is_finite()) || n.scale.contains(&0.0) {
            return Err(Error::Config("input normalization needs finite, nonzero scales".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every linear layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = 3;
        for _ in 0..self.hidden_layers {
            shapes.push((fan_in, self.width));
            fan_in = self.width;
        }
        shapes.push((fan_in, 1));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        let n = &self.normalization;
        [
            (p[0] - n.offset[0]) / n.scale[0],
            (p[1] - n.offset[1]) / n.scale[1],
            (p[2] - n.offset[2]) / n.scale[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    seed: u64,
    values: Vec<f64>,
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> NetworkParams {
    let mut rng = seeds::from_seed(seed);
    let mut values = Vec::with_capacity(arch.n_params());
    for (fan_in, fan_out) in arch.layer_shapes() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(rng.random_range(-bound..bound));
        }
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    NetworkParams { arch: *arch, seed, values }
}

impl NetworkParams {
    pub fn from_values(arch: Architecture, seed: u64, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.n_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                arch.n_params(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(NetworkParams { arch, seed, values })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(weights, bias)` slices of every layer, input to output.
    pub fn layers(&self) -> Vec<(&[f64], &[f64])> {
        let mut out = Vec::new();
        let mut off = 0;
        for (i, o) in self.arch.layer_shapes() {
            let w = &self.values[off..off + i * o];
            let b = &self.values[off + i * o..off + i * o + o];
            out.push((w, b));
            off += i * o + o;
        }
        out
    }

    pub fn to_checkpoint(&self, iteration: usize) -> String {
        let a = &self.arch;
        let n = &a.normalization;
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}");
        let _ = writeln!(s, "hidden_layers {}", a.hidden_layers);
        let _ = writeln!(s, "width {}", a.width);
        let _ = writeln!(s, "activation {}", a.activation.name());
        let _ = writeln!(
            s,
            "input_offset {} {} {}",
            fmt_f64(n.offset[0]),
            fmt_f64(n.offset[1]),
            fmt_f64(n.offset[2])
        );
        let _ = writeln!(
            s,
            "input_scale {} {} {}",
            fmt_f64(n.scale[0]),
            fmt_f64(n.scale[1]),
            fmt_f64(n.scale[2])
        );
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "iteration {iteration}");
        let _ = writeln!(s, "n_params {}", self.values.len());
        for v in &self.values {
            s.push_str(&fmt_f64(*v));
            s.push('\n');
        }
        s
    }

    /// Parse a checkpoint; returns the parameters and the stored iteration.
    pub fn from_checkpoint(text: &str) -> Result<(Self, usize)> {
        let mut lines = Lines::new("checkpoint", text);
        let head = lines.expect_line()?;
        let expected = format!("{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}");
        if head.trim_end() != expected {
            return Err(lines.err(format!("expected header `{expected}`")));
        }
        let hidden_layers = lines.key_usize("hidden_layers")?;
        let width = lines.key_usize("width")?;
        let act = lines.expect_key("activation")?;
        let activation = Activation::from_name(act).ok_or_else(|| lines.err(format!("unknown activation `{act}`")))?;
        let triple = |lines: &mut Lines<'_>, key: &str| -> Result<[f64; 3]> {
            let v = lines.expect_key(key)?;
            let parts: Vec<f64> = v.split_whitespace().filter_map(parse_f64).collect();
            if parts.len() != 3 || v.split_whitespace().count() != 3 {
                return Err(lines.err(format!("`{key}` needs three numbers")));
            }
            Ok([parts[0], parts[1], parts[2]])
        };
        let offset = triple(&mut lines, "input_offset")?;
        let scale = triple(&mut lines, "input_scale")?;
        let seed = lines.key_u64("seed")?;
        let iteration = lines.key_usize("iteration")?;
        let n_params = lines.key_usize("n_params")?;
        let arch = Architecture {
            hidden_layers,
            width,
            activation,
            normalization: InputNormalization { offset, scale },
        };
        arch.validate().map_err(|e| lines.err(e.to_string()))?;
        if n_params != arch.n_params() {
            return Err(lines.err(format!("n_params {n_params} does not match architecture ({})", arch.n_params())));
        }
        let mut values = Vec::with_capacity(n_params.min(text.len() / 2));
        while let Some(l) = lines.next_line() {
            let l = l.trim();
            if l.is_empty() {
                continue;
            }
            if values.len() == n_params {
                return Err(lines.err("more values than n_params"));
            }
            values.push(parse_f64(l).ok_or_else(|| lines.err(format!("invalid number `{l}`")))?);
        }
        if values.len() != n_params {
            return Err(lines.err(format!("expected {n_params} values, found {}", values.len())));
        }
        Ok((NetworkParams { arch, seed, values }, iteration))
    }
}

/// Network value and the input derivatives the flow residual needs, in
/// physical units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalBundle {
    pub value: f64,
    pub dt: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dyy: f64,
}

impl EvalBundle {
    pub fn is_finite(&self) -> bool {
        [self.value, self.dt, self.dx, self.dy, self.dxx, self.dyy]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Which channels a batch carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    /// Value only.
    Value,
    /// Value, three first derivatives, `∂²/∂x²` and `∂²/∂y²`.
    Full,
}

impl Order {
    fn channels(self) -> usize {
        match self {
            Order::Value => 1,
            Order::Full => 6,
        }
    }
}

// Channel indices for `Order::Full`.
const CH_T: usize = 1;
const CH_X: usize = 2;
const CH_Y: usize = 3;
const CH_XX: usize = 4;
const CH_YY: usize = 5;

/// Stored activations of one forward pass, for reverse accumulation.
///
/// Every matrix is row-major `units × (channels · batch)` with channel `c`
/// of point `p` in column `c · batch + p`.
struct Trace {
    order: Order,
    batch: usize,
    /// Input-layer activations followed by every hidden layer's.
    acts: Vec<Vec<f64>>,
    /// Hidden-layer pre-activations.
    pre: Vec<Vec<f64>>,
    /// Output channels, `channels · batch`.
    out: Vec<f64>,
}

fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    // c (m×n) = a (m×k) · b (k×n), all row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn gemm_at_b(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    // c (m×n) = aᵀ · b with a stored row-major as (k×m).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn gemm_a_bt_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    // c (m×n) += a (m×k) · bᵀ with b stored row-major as (n×k).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn forward(params: &NetworkParams, points: &[[f64; 3]], order: Order) -> Trace {
    let arch = &params.arch;
    let batch = points.len();
    let ch = order.channels();
    let cols = ch * batch;

    let mut input = vec![0.0; 3 * cols];
    for (p, pt) in points.iter().enumerate() {
        let u = arch.normalize(*pt);
        for (r, &v) in u.iter().enumerate() {
            input[r * cols + p] = v;
        }
        if order == Order::Full {
            for r in 0..3 {
                input[r * cols + (1 + r) * batch + p] = 1.0;
            }
        }
    }

    let layers = params.layers();
    let shapes = arch.layer_shapes();
    let mut acts = vec![input];
    let mut pre = Vec::with_capacity(arch.hidden_layers);
    for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let (w, b) = layers[l];
        let mut z = vec![0.0; fan_out * cols];
        gemm(fan_out, fan_in, cols, w, &acts[l], &mut z);
        for (u, &bu) in b.iter().enumerate() {
            for v in &mut z[u * cols..u * cols + batch] {
                *v += bu;
            }
        }
        if l == shapes.len() - 1 {
            return Trace {
                order,
                batch,
                acts,
                pre,
                out: z,
            };
        }
        let mut a = vec![0.0; fan_out * cols];
        for u in 0..fan_out {
            let zr = &z[u * cols..(u + 1) * cols];
            let ar = &mut a[u * cols..(u + 1) * cols];
            for p in 0..batch {
                let s = zr[p].tanh();
                ar[p] = s;
                if order == Order::Full {
                    let s1 = 1.0 - s * s;
                    let s2 = -2.0 * s * s1;
                    for c in [CH_T, CH_X, CH_Y] {
                        ar[c * batch + p] = s1 * zr[c * batch + p];
                    }
                    for (c2, c1) in [(CH_XX, CH_X), (CH_YY, CH_Y)] {
                        let zi = zr[c1 * batch + p];
                        ar[c2 * batch + p] = s2 * zi * zi + s1 * zr[c2 * batch + p];
                    }
                }
            }
        }
        pre.push(z);
        acts.push(a);
    }
    unreachable!("layer_shapes always ends with the output layer")
}

impl Trace {
    fn bundle(&self, arch: &Architecture, p: usize) -> EvalBundle {
        let b = self.batch;
        let mut e = EvalBundle {
            value: self.out[p],
            ..Default::default()
        };
        if self.order == Order::Full {
            let s = arch.normalization.scale;
            e.dt = self.out[CH_T * b + p] / s[0];
            e.dx = self.out[CH_X * b + p] / s[1];
            e.dy = self.out[CH_Y * b + p] / s[2];
            e.dxx = self.out[CH_XX * b + p] / (s[1] * s[1]);
            e.dyy = self.out[CH_YY * b + p] / (s[2] * s[2]);
        }
        e
    }

    /// Accumulate `Σ_p ⟨seed_p, bundle_p⟩` differentiated w.r.t. θ into `grad`.
    fn backward(&self, params: &NetworkParams, seeds: &[EvalBundle], grad: &mut [f64]) {
        let arch = &params.arch;
        let batch = self.batch;
        let ch = self.order.channels();
        let cols = ch * batch;
        let s = arch.normalization.scale;

        // Seeds in normalized-input units.
        let mut d = vec![0.0; cols];
        for (p, sd) in seeds.iter().enumerate() {
            d[p] = sd.value;
            if self.order == Order::Full {
                d[CH_T * batch + p] = sd.dt / s[0];
                d[CH_X * batch + p] = sd.dx / s[1];
                d[CH_Y * batch + p] = sd.dy / s[2];
                d[CH_XX * batch + p] = sd.dxx / (s[1] * s[1]);
                d[CH_YY * batch + p] = sd.dyy / (s[2] * s[2]);
            }
        }

        let shapes = arch.layer_shapes();
        let layers = params.layers();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for &(i, o) in &shapes {
            offsets.push(off);
            off += i * o + o;
        }

        // `d` holds ∂L/∂(pre-activation) of layer l on entry to each pass.
        for l in (0..shapes.len()).rev() {
            let (fan_in, fan_out) = shapes[l];
            let off = offsets[l];
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                gemm_a_bt_acc(fan_out, cols, fan_in, &d, &self.acts[l], gw);
                for (u, g) in gb.iter_mut().enumerate() {
                    *g += d[u * cols..u * cols + batch].iter().sum::<f64>();
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = layers[l];
            let mut da = vec![0.0; fan_in * cols];
            gemm_at_b(fan_in, fan_out, cols, w, &d, &mut da);

            // Through the activation of hidden layer l-1.
            let z = &self.pre[l - 1];
            let a = &self.acts[l];
            let mut dz = vec![0.0; fan_in * cols];
            for u in 0..fan_in {
                let zr = &z[u * cols..(u + 1) * cols];
                let sr = &a[u * cols..u * cols + batch];
                let dar = &da[u * cols..(u + 1) * cols];
                let dzr = &mut dz[u * cols..(u + 1) * cols];
                for p in 0..batch {
                    let sv = sr[p];
                    let s1 = 1.0 - sv * sv;
                    if self.order == Order::Value {
                        dzr[p] = dar[p] * s1;
                        continue;
                    }
                    let s2 = -2.0 * sv * s1;
                    let s3 = -2.0 * s1 * (s1 - 2.0 * sv * sv);
                    let mut dv = dar[p] * s1;
                    for c in [CH_T, CH_X, CH_Y] {
                        let zi = zr[c * batch + p];
                        dv += dar[c * batch + p] * s2 * zi;
                        dzr[c * batch + p] = dar[c * batch + p] * s1;
                    }
                    for (c2, c1) in [(CH_XX, CH_X), (CH_YY, CH_Y)] {
                        let zi = zr[c1 * batch + p];
                        let zii = zr[c2 * batch + p];
                        let g = dar[c2 * batch + p];
                        dv += g * (s3 * zi * zi + s2 * zii);
                        dzr[c1 * batch + p] += g * 2.0 * s2 * zi;
                        dzr[c2 * batch + p] = g * s1;
                    }
                    dzr[p] = dv;
                }
            }
            d = dz;
        }
    }
}

/// Value and derivatives at a single point.
pub fn forward_with_derivs(params: &NetworkParams, t: f64, x: f64, y: f64) -> EvalBundle {
    let tr = forward(params, &[[t, x, y]], Order::Full);
    tr.bundle(&params.arch, 0)
}

/// Bundles for many points, computed in blocks of [`CHUNK`].
pub fn evaluate_batch(params: &NetworkParams, points: &[[f64; 3]], order: Order) -> Vec<EvalBundle> {
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(CHUNK) {
        let tr = forward(params, chunk, order);
        out.extend((0..chunk.len()).map(|p| tr.bundle(&params.arch, p)));
    }
    out
}

/// Network values only.
pub fn predict(params: &NetworkParams, points: &[[f64; 3]]) -> Vec<f64> {
    evaluate_batch(params, points, Order::Value).into_iter().map(|b| b.value).collect()
}

/// Gradient with the same flat layout as [`NetworkParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros(params: &NetworkParams) -> Self {
        Gradient(vec![0.0; params.len()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Sum of a per-point scalar over `points`, with its parameter gradient.
///
/// `point_loss(index, bundle)` returns the point's contribution and its
/// partial derivatives with respect to each bundle entry. Blocks are
/// processed in order, so the reduction is deterministic.
pub fn accumulate<F>(params: &NetworkParams, points: &[[f64; 3]], order: Order, grad: &mut Gradient, mut point_loss: F) -> f64
where
    F: FnMut(usize, &EvalBundle) -> (f64, EvalBundle),
{
    let mut total = 0.0;
    let mut base = 0;
    let mut seeds = Vec::with_capacity(CHUNK);
    for chunk in points.chunks(CHUNK) {
        let tr = forward(params, chunk, order);
        seeds.clear();
        for p in 0..chunk.len() {
            let (l, s) = point_loss(base + p, &tr.bundle(&params.arch, p));
            total += l;
            seeds.push(s);
        }
        tr.backward(params, &seeds, &mut grad.0);
        base += chunk.len();
    }
    total
}

/// Gradient of an arbitrary differentiable scalar of the bundles at `points`.
///
/// `loss` receives every bundle and returns the scalar and `∂loss/∂bundle_p`
/// for each point.
pub fn param_grad<F>(params: &NetworkParams, points: &[[f64; 3]], loss: F) -> Result<(f64, Gradient)>
where
    F: FnOnce(&[EvalBundle]) -> (f64, Vec<EvalBundle>),
{
    let bundles = evaluate_batch(params, points, Order::Full);
    let (value, seeds) = loss(&bundles);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss = {value}")));
    }
    if seeds.len() != points.len() {
        return Err(Error::InvalidArgument("one seed per point required".into()));
    }
    let mut grad = Gradient::zeros(params);
    for (chunk, sd) in points.chunks(CHUNK).zip(seeds.chunks(CHUNK)) {
        forward(params, chunk, Order::Full).backward(params, sd, &mut grad.0);
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((value, grad))
}
