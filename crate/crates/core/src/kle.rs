//! Log-conductivity random field by truncated Karhunen–Loève expansion.
//!
//! The covariance is the separable exponential kernel
//! `σ² exp(-|x1-x2|/η - |y1-y2|/η)`. Its 1-D eigenproblem on `[0, L]` has a
//! closed form: the frequencies `w` are the positive roots of
//!
//! ```text
//! (η²w² - 1) sin(wL) = 2ηw cos(wL)
//! ```
//!
//! with eigenvalues `2η / (η²w² + 1)` and orthonormal eigenfunctions
//! `[ηw cos(wx) + sin(wx)] / sqrt((η²w² + 1) L / 2 + η)`. Exactly one root
//! lies in each interval `((k-1)π/L, kπ/L)`; it is found by bisection.
//!
//! 2-D modes are tensor products of 1-D modes; the `n_terms` largest products
//! are kept. A realization is `Z(x,y) = Z̄ + Σ √λ_i f_i(x,y) ξ_i`, `K = e^Z`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::textio::{fmt_f64, parse_f64, sha256_hex, Lines};

pub const FIELD_FORMAT: &str = "tgnn-kle-field";
pub const FIELD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    pub length_x: f64,
    pub length_y: f64,
    pub correlation_length: f64,
    pub variance: f64,
    pub mean: f64,
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        CovarianceSpec {
            length_x: 1020.0,
            length_y: 1020.0,
            correlation_length: 408.0,
            variance: 1.0,
            mean: 0.0,
        }
    }
}

impl CovarianceSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.length_x, self.length_y, self.correlation_length, self.variance, self.mean]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("covariance parameters must be finite".into()));
        }
        if self.length_x <= 0.0 || self.length_y <= 0.0 {
            return Err(Error::Config("domain lengths must be positive".into()));
        }
        if self.correlation_length <= 0.0 {
            return Err(Error::Config("correlation_length must be positive".into()));
        }
        if self.variance < 0.0 {
            return Err(Error::Config("variance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One 1-D eigenpair of the unit-variance exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenpair1d {
    pub eigenvalue: f64,
    pub frequency: f64,
}

/// `(η²w² - 1) sin(wL) - 2ηw cos(wL)`, the raw transcendental function.
pub fn characteristic(w: f64, length: f64, eta: f64) -> f64 {
    let ew = eta * w;
    (ew * ew - 1.0) * (w * length).sin() - 2.0 * ew * (w * length).cos()
}

/// The characteristic function divided by `η²w² + 1`.
///
/// This equals `sin(wL - φ(w))` for a phase `φ`, so its magnitude is at most
/// one and its value at a computed root measures the root error in units of
/// `wL`.
pub fn normalized_characteristic(w: f64, length: f64, eta: f64) -> f64 {
    let ew = eta * w;
    characteristic(w, length, eta) / (ew * ew + 1.0)
}

fn eigenvalue_for(w: f64, eta: f64) -> f64 {
    2.0 * eta / (eta * eta * w * w + 1.0)
}

/// The `n` leading eigenpairs of the 1-D exponential kernel on `[0, length]`.
pub fn solve_1d_eigenpairs(length: f64, eta: f64, n: usize) -> Result<Vec<Eigenpair1d>> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidArgument(format!("length must be positive, got {length}")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("correlation length must be positive, got {eta}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one eigenpair".into()));
    }
    let width = PI / length;
    let tol = 1e-14 * width;
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let lo = (k - 1) as f64 * width;
        let hi = k as f64 * width;
        let w = bisect(lo, hi, tol, |w| normalized_characteristic(w, length, eta))?;
        out.push(Eigenpair1d {
            eigenvalue: eigenvalue_for(w, eta),
            frequency: w,
        });
    }
    Ok(out)
}

fn bisect(lo: f64, hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    // The characteristic function vanishes at w = 0 itself, so the first
    // bracket is probed just inside its left end.
    let mut a = if lo == 0.0 { tol.max(f64::MIN_POSITIVE) } else { lo };
    let mut b = hi;
    let mut fa = f(a);
    let fb = f(b);
    if !(fa.is_finite() && fb.is_finite()) {
        return Err(Error::RootBracket {
            lo,
            hi,
            msg: "non-finite function value at bracket end".into(),
        });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::RootBracket {
            lo,
            hi,
            msg: format!("no sign change (f(lo) = {fa:e}, f(hi) = {fb:e})"),
        });
    }
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if b - a <= tol || m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KleTerm {
    /// 2-D eigenvalue `σ² λ_m^x λ_n^y`.
    pub eigenvalue: f64,
    /// 1-based mode index along x.
    pub mode_x: usize,
    /// 1-based mode index along y.
    pub mode_y: usize,
    pub freq_x: f64,
    pub freq_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KleBasis {
    pub length_x: f64,
    pub length_y: f64,
    pub correlation_length: f64,
    pub variance: f64,
    terms: Vec<KleTerm>,
    /// Retained unit-variance energy over `L_x L_y`.
    retained_energy: f64,
}

/// Keep the `n_terms` largest tensor products of two 1-D spectra.
pub fn build_2d_basis(pairs_x: &[Eigenpair1d], pairs_y: &[Eigenpair1d], spec: &CovarianceSpec, n_terms: usize) -> Result<KleBasis> {
    spec.validate()?;
    if n_terms == 0 {
        return Err(Error::InvalidArgument("n_terms must be at least 1".into()));
    }
    let available = pairs_x.len() * pairs_y.len();
    if n_terms > available {
        return Err(Error::InvalidArgument(format!(
            "n_terms = {n_terms} exceeds the {available} available products"
        )));
    }
    let mut products = Vec::with_capacity(available);
    for (i, px) in pairs_x.iter().enumerate() {
        for (j, py) in pairs_y.iter().enumerate() {
            products.push((px.eigenvalue * py.eigenvalue, i, j));
        }
    }
    products.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    products.truncate(n_terms);

    let retained: f64 = products.iter().map(|p| p.0).sum();
    let terms = products
        .into_iter()
        .map(|(unit, i, j)| KleTerm {
            eigenvalue: spec.variance * unit,
            mode_x: i + 1,
            mode_y: j + 1,
            freq_x: pairs_x[i].frequency,
            freq_y: pairs_y[j].frequency,
        })
        .collect();
    Ok(KleBasis {
        length_x: spec.length_x,
        length_y: spec.length_y,
        correlation_length: spec.correlation_length,
        variance: spec.variance,
        terms,
        retained_energy: retained / (spec.length_x * spec.length_y),
    })
}

impl KleBasis {
    /// Basis for `spec` with `n_terms` modes.
    pub fn new(spec: &CovarianceSpec, n_terms: usize) -> Result<Self> {
        spec.validate()?;
        let n1 = n_terms.max(1);
        let px = solve_1d_eigenpairs(spec.length_x, spec.correlation_length, n1)?;
        let py = solve_1d_eigenpairs(spec.length_y, spec.correlation_length, n1)?;
        build_2d_basis(&px, &py, spec, n_terms)
    }

    pub fn terms(&self) -> &[KleTerm] {
        &self.terms
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Fraction of the total variance `σ² L_x L_y` held by the retained modes.
    pub fn retained_energy(&self) -> f64 {
        self.retained_energy
    }

    /// Pointwise variance of the truncated field, `Σ λ_i f_i(x,y)²`.
    pub fn pointwise_variance(&self, x: f64, y: f64) -> f64 {
        let eta = self.correlation_length;
        self.terms
            .iter()
            .map(|t| {
                let (fx, _) = eigenfunction(t.freq_x, eta, self.length_x, x);
                let (fy, _) = eigenfunction(t.freq_y, eta, self.length_y, y);
                t.eigenvalue * fx * fx * fy * fy
            })
            .sum()
    }
}

/// Orthonormal 1-D eigenfunction and its derivative at `x`.
pub fn eigenfunction(w: f64, eta: f64, length: f64, x: f64) -> (f64, f64) {
    let norm = ((eta * eta * w * w + 1.0) * length / 2.0 + eta).sqrt();
    let (s, c) = (w * x).sin_cos();
    let value = (eta * w * c + s) / norm;
    let deriv = (-eta * w * w * s + w * c) / norm;
    (value, deriv)
}

/// `n_terms` standard-normal draws from a ChaCha8 stream seeded by `seed`.
pub fn sample_xi(seed: u64, n_terms: usize) -> Vec<f64> {
    let mut rng = seeds::from_seed(seed);
    (0..n_terms).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Value and gradient of the log-conductivity at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogK {
    pub z: f64,
    pub dz_dx: f64,
    pub dz_dy: f64,
}

impl LogK {
    pub fn conductivity(&self) -> f64 {
        self.z.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRealization {
    basis: KleBasis,
    xi: Vec<f64>,
    mean: f64,
    seed: u64,
}

impl FieldRealization {
    pub fn new(basis: KleBasis, xi: Vec<f64>, mean: f64, seed: u64) -> Result<Self> {
        if xi.len() != basis.n_terms() {
            return Err(Error::InvalidArgument(format!(
                "xi has {} entries but the basis has {} terms",
                xi.len(),
                basis.n_terms()
            )));
        }
        if !mean.is_finite() || xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field coefficients".into()));
        }
        Ok(FieldRealization { basis, xi, mean, seed })
    }

    /// Basis from `spec` plus `ξ` drawn with `seed`.
    pub fn generate(spec: &CovarianceSpec, n_terms: usize, seed: u64) -> Result<Self> {
        let basis = KleBasis::new(spec, n_terms)?;
        let xi = sample_xi(seed, n_terms);
        Self::new(basis, xi, spec.mean, seed)
    }

    pub fn basis(&self) -> &KleBasis {
        &self.basis
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn eval_log_k(&self, x: f64, y: f64) -> Result<LogK> {
        let (lx, ly) = (self.basis.length_x, self.basis.length_y);
        if !(x >= 0.0 && x <= lx && y >= 0.0 && y <= ly) {
            return Err(Error::OutsideDomain { x, y, lx, ly });
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Same as [`eval_log_k`](Self::eval_log_k) without the domain check;
    /// the expansion is smooth everywhere, which finite-difference probes
    /// near the boundary rely on.
    pub fn eval_unchecked(&self, x: f64, y: f64) -> LogK {
        let eta = self.basis.correlation_length;
        let mut out = LogK {
            z: self.mean,
            dz_dx: 0.0,
            dz_dy: 0.0,
        };
        for (t, &xi) in self.basis.terms.iter().zip(&self.xi) {
            let amp = t.eigenvalue.sqrt() * xi;
            if amp == 0.0 {
                continue;
            }
            let (fx, dfx) = eigenfunction(t.freq_x, eta, self.basis.length_x, x);
            let (fy, dfy) = eigenfunction(t.freq_y, eta, self.basis.length_y, y);
            out.z += amp * fx * fy;
            out.dz_dx += amp * dfx * fy;
            out.dz_dy += amp * fx * dfy;
        }
        out
    }

    pub fn conductivity(&self, x: f64, y: f64) -> Result<f64> {
        Ok(self.eval_log_k(x, y)?.conductivity())
    }

    pub fn to_text(&self) -> String {
        let b = &self.basis;
        let mut s = String::new();
        let _ = writeln!(s, "{FIELD_FORMAT} {FIELD_VERSION}");
        let _ = writeln!(s, "length_x {}", fmt_f64(b.length_x));
        let _ = writeln!(s, "length_y {}", fmt_f64(b.length_y));
        let _ = writeln!(s, "correlation_length {}", fmt_f64(b.correlation_length));
        let _ = writeln!(s, "variance {}", fmt_f64(b.variance));
        let _ = writeln!(s, "mean {}", fmt_f64(self.mean));
        let _ = writeln!(s, "retained_energy {}", fmt_f64(b.retained_energy));
        let _ = writeln!(s, "n_terms {}", b.n_terms());
        let _ = writeln!(s, "seed {}", self.seed);
        for (t, xi) in b.terms.iter().zip(&self.xi) {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                fmt_f64(t.eigenvalue),
                t.mode_x,
                t.mode_y,
                fmt_f64(t.freq_x),
                fmt_f64(t.freq_y),
                fmt_f64(*xi)
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new("field", text);
        let head = lines.expect_line()?;
        let expected = format!("{FIELD_FORMAT} {FIELD_VERSION}");
        if head.trim_end() != expected {
            return Err(lines.err(format!("expected header `{expected}`")));
        }
        let spec = CovarianceSpec {
            length_x: lines.key_f64("length_x")?,
            length_y: lines.key_f64("length_y")?,
            correlation_length: lines.key_f64("correlation_length")?,
            variance: lines.key_f64("variance")?,
            mean: lines.key_f64("mean")?,
        };
        spec.validate().map_err(|e| lines.err(e.to_string()))?;
        let retained_energy = lines.key_f64("retained_energy")?;
        let n_terms = lines.key_usize("n_terms")?;
        let seed = lines.key_u64("seed")?;
        if n_terms == 0 {
            return Err(lines.err("n_terms must be at least 1"));
        }
        let mut terms = Vec::new();
        let mut xi = Vec::new();
        while let Some(l) = lines.next_line() {
            if l.trim().is_empty() {
                continue;
            }
            if terms.len() == n_terms {
                return Err(lines.err("more term lines than n_terms"));
            }
            let cols: Vec<&str> = l.split_whitespace().collect();
            if cols.len() != 6 {
                return Err(lines.err(format!("expected 6 columns, found {}", cols.len())));
            }
            let num = |s: &str| parse_f64(s).ok_or_else(|| lines.err(format!("invalid number `{s}`")));
            let idx = |s: &str| {
                s.parse::<usize>()
                    .ok()
                    .filter(|&m| m >= 1)
                    .ok_or_else(|| lines.err(format!("invalid mode index `{s}`")))
            };
            let term = KleTerm {
                eigenvalue: num(cols[0])?,
                mode_x: idx(cols[1])?,
                mode_y: idx(cols[2])?,
                freq_x: num(cols[3])?,
                freq_y: num(cols[4])?,
            };
            if term.eigenvalue < 0.0 {
                return Err(lines.err("negative eigenvalue"));
            }
            if let Some(prev) = terms.last() {
                let prev: &KleTerm = prev;
                if term.eigenvalue > prev.eigenvalue {
                    return Err(lines.err("eigenvalues must be non-increasing"));
                }
            }
            terms.push(term);
            xi.push(num(cols[5])?);
        }
        if terms.len() != n_terms {
            return Err(lines.err(format!("expected {n_terms} term lines, found {}", terms.len())));
        }
        let basis = KleBasis {
            length_x: spec.length_x,
            length_y: spec.length_y,
            correlation_length: spec.correlation_length,
            variance: spec.variance,
            terms,
            retained_energy,
        };
        FieldRealization::new(basis, xi, spec.mean, seed)
    }

    /// SHA-256 of the canonical text form.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}
