//! Reference heads from a fully implicit five-point finite-difference scheme.
//!
//! Nodes sit at `x_i = i·L_x/(n_x-1)`, `y_j = j·L_y/(n_y-1)`, so the first and
//! last columns lie exactly on the prescribed-head boundaries `x = 0` and
//! `x = L_x`. Each node owns a `dx × dy` control volume. Face conductivities
//! are harmonic means of the nodal `K`; the faces beyond the first and last
//! rows carry no flux. Each backward-Euler step solves
//!
//! ```text
//! (S_s/dt) h' - Σ_faces a_f (h'_nb - h') = (S_s/dt) h
//! ```
//!
//! over the non-Dirichlet nodes with Jacobi-preconditioned conjugate gradient.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kle::FieldRealization;
use crate::textio::{fmt_f64, parse_f64, Lines};

pub const SOLUTION_FORMAT: &str = "tgnn-solution";
pub const SOLUTION_VERSION: u32 = 1;

const CG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub length_x: f64,
    pub length_y: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub specific_storage: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nx: 51,
            ny: 51,
            length_x: 1020.0,
            length_y: 1020.0,
            dt: 0.2,
            n_steps: 50,
            specific_storage: 1e-4,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 2 {
            return Err(Error::Config(format!(
                "grid needs nx >= 3 and ny >= 2, got {}x{}",
                self.nx, self.ny
            )));
        }
        for (name, v) in [
            ("length_x", self.length_x),
            ("length_y", self.length_y),
            ("dt", self.dt),
            ("specific_storage", self.specific_storage),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.length_x / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        self.length_y / (self.ny - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.nx - 1 {
            self.length_x
        } else {
            i as f64 * self.dx()
        }
    }

    pub fn y(&self, j: usize) -> f64 {
        if j == self.ny - 1 {
            self.length_y
        } else {
            j as f64 * self.dy()
        }
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn total_time(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConditions {
    pub left_head: f64,
    pub right_head: f64,
}

impl Default for BoundaryConditions {
    fn default() -> Self {
        BoundaryConditions {
            left_head: 1.0,
            right_head: 0.0,
        }
    }
}

impl BoundaryConditions {
    /// Head at `x = 0` at `t = 0` is `left_head`, zero elsewhere.
    pub fn initial_heads(&self, grid: &GridSpec) -> Vec<f64> {
        let mut h = vec![0.0; grid.n_nodes()];
        for j in 0..grid.ny {
            h[j * grid.nx] = self.left_head;
            h[j * grid.nx + grid.nx - 1] = self.right_head;
        }
        h
    }
}

/// Face conductivities on the node lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceConductivities {
    /// `ny` rows of `nx - 1` faces between `(i, j)` and `(i + 1, j)`.
    pub x_faces: Vec<f64>,
    /// `ny - 1` rows of `nx` faces between `(i, j)` and `(i, j + 1)`.
    pub y_faces: Vec<f64>,
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

pub fn nodal_conductivity(field: &FieldRealization, grid: &GridSpec) -> Result<Vec<f64>> {
    let mut k = Vec::with_capacity(grid.n_nodes());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            k.push(field.conductivity(grid.x(i), grid.y(j))?);
        }
    }
    Ok(k)
}

pub fn interface_conductivities(field: &FieldRealization, grid: &GridSpec) -> Result<FaceConductivities> {
    Ok(faces_from_nodal(&nodal_conductivity(field, grid)?, grid))
}

pub fn faces_from_nodal(k: &[f64], grid: &GridSpec) -> FaceConductivities {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut x_faces = Vec::with_capacity(ny * (nx - 1));
    for j in 0..ny {
        for i in 0..nx - 1 {
            x_faces.push(harmonic_mean(k[j * nx + i], k[j * nx + i + 1]));
        }
    }
    let mut y_faces = Vec::with_capacity((ny - 1) * nx);
    for j in 0..ny - 1 {
        for i in 0..nx {
            y_faces.push(harmonic_mean(k[j * nx + i], k[(j + 1) * nx + i]));
        }
    }
    FaceConductivities { x_faces, y_faces }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub heads: Vec<f64>,
    pub cg_iterations: usize,
    pub relative_residual: f64,
    /// Volume entering through the Dirichlet faces during the step.
    pub boundary_inflow: f64,
    /// `S_s Σ Δh dx dy` over the non-Dirichlet nodes.
    pub storage_change: f64,
}

impl StepOutcome {
    pub fn mass_balance_error(&self) -> f64 {
        let scale = self.boundary_inflow.abs().max(self.storage_change.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.boundary_inflow - self.storage_change).abs() / scale
        }
    }
}

/// Backward-Euler stepper for one conductivity field and boundary set.
#[derive(Debug, Clone)]
pub struct Simulator {
    grid: GridSpec,
    bcs: BoundaryConditions,
    faces: FaceConductivities,
}

impl Simulator {
    pub fn new(grid: GridSpec, bcs: BoundaryConditions, faces: FaceConductivities) -> Result<Self> {
        grid.validate()?;
        if faces.x_faces.len() != grid.ny * (grid.nx - 1) || faces.y_faces.len() != (grid.ny - 1) * grid.nx {
            return Err(Error::InvalidArgument("face arrays do not match grid".into()));
        }
        Ok(Simulator { grid, bcs, faces })
    }

    pub fn for_field(field: &FieldRealization, grid: GridSpec, bcs: BoundaryConditions) -> Result<Self> {
        grid.validate()?;
        let faces = interface_conductivities(field, &grid)?;
        Self::new(grid, bcs, faces)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn coefficients(&self, dt: f64) -> Coefficients<'_> {
        let g = &self.grid;
        Coefficients {
            nx: g.nx,
            ny: g.ny,
            storage: g.specific_storage / dt,
            ax: 1.0 / (g.dx() * g.dx()),
            ay: 1.0 / (g.dy() * g.dy()),
            faces: &self.faces,
        }
    }

    /// One implicit step of length `dt` from `heads`.
    pub fn step(&self, heads: &[f64], dt: f64) -> Result<StepOutcome> {
        let g = &self.grid;
        if heads.len() != g.n_nodes() {
            return Err(Error::InvalidArgument("heads length does not match grid".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let (nx, ny) = (g.nx, g.ny);
        let coef = self.coefficients(dt);

        let mut next = heads.to_vec();
        for j in 0..ny {
            next[j * nx] = self.bcs.left_head;
            next[j * nx + nx - 1] = self.bcs.right_head;
        }

        // Unknowns: interior columns 1..nx-1, packed row-major.
        let m = nx - 2;
        let n = m * ny;
        let mut rhs = vec![0.0; n];
        for j in 0..ny {
            for i in 1..nx - 1 {
                let mut b = coef.storage * heads[j * nx + i];
                if i == 1 {
                    b += coef.ax * coef.faces.x_faces[j * (nx - 1)] * next[j * nx];
                }
                if i == nx - 2 {
                    b += coef.ax * coef.faces.x_faces[j * (nx - 1) + nx - 2] * next[j * nx + nx - 1];
                }
                rhs[j * m + i - 1] = b;
            }
        }
        let mut x: Vec<f64> = (0..n).map(|k| heads[(k / m) * nx + k % m + 1]).collect();
        let (iterations, residual) = conjugate_gradient(&coef, &rhs, &mut x, 10 * g.n_nodes())?;

        let mut storage_change = 0.0;
        for j in 0..ny {
            for i in 1..nx - 1 {
                let v = x[j * m + i - 1];
                storage_change += v - heads[j * nx + i];
                next[j * nx + i] = v;
            }
        }
        let (dx, dy) = (g.dx(), g.dy());
        storage_change *= g.specific_storage * dx * dy;

        let mut inflow = 0.0;
        for j in 0..ny {
            let left = self.faces.x_faces[j * (nx - 1)];
            let right = self.faces.x_faces[j * (nx - 1) + nx - 2];
            inflow += left * (next[j * nx] - next[j * nx + 1]) / dx * dy;
            inflow += right * (next[j * nx + nx - 1] - next[j * nx + nx - 2]) / dx * dy;
        }
        Ok(StepOutcome {
            heads: next,
            cg_iterations: iterations,
            relative_residual: residual,
            boundary_inflow: inflow * dt,
            storage_change,
        })
    }

    pub fn run(&self, field_fingerprint: String) -> Result<ReferenceSolution> {
        let g = self.grid;
        let mut heads = Vec::with_capacity((g.n_steps + 1) * g.n_nodes());
        let mut h = self.bcs.initial_heads(&g);
        heads.extend_from_slice(&h);
        for _ in 0..g.n_steps {
            h = self.step(&h, g.dt)?.heads;
            heads.extend_from_slice(&h);
        }
        Ok(ReferenceSolution {
            grid: g,
            bcs: self.bcs,
            field_fingerprint,
            heads,
        })
    }
}

/// Run the default scenario for a field: IC, then `n_steps` implicit steps.
pub fn simulate(field: &FieldRealization, grid: GridSpec, bcs: BoundaryConditions) -> Result<ReferenceSolution> {
    Simulator::for_field(field, grid, bcs)?.run(field.fingerprint())
}

struct Coefficients<'a> {
    nx: usize,
    ny: usize,
    storage: f64,
    ax: f64,
    ay: f64,
    faces: &'a FaceConductivities,
}

impl Coefficients<'_> {
    fn unknowns(&self) -> usize {
        (self.nx - 2) * self.ny
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let m = nx - 2;
        for j in 0..ny {
            for c in 0..m {
                let i = c + 1;
                let k = j * m + c;
                let mut diag = self.storage;
                let mut acc = 0.0;
                let west = self.ax * self.faces.x_faces[j * (nx - 1) + i - 1];
                let east = self.ax * self.faces.x_faces[j * (nx - 1) + i];
                diag += west + east;
                if c > 0 {
                    acc -= west * v[k - 1];
                }
                if c + 1 < m {
                    acc -= east * v[k + 1];
                }
                if j > 0 {
                    let s = self.ay * self.faces.y_faces[(j - 1) * nx + i];
                    diag += s;
                    acc -= s * v[k - m];
                }
                if j + 1 < ny {
                    let n = self.ay * self.faces.y_faces[j * nx + i];
                    diag += n;
                    acc -= n * v[k + m];
                }
                out[k] = diag * v[k] + acc;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let m = nx - 2;
        let mut d = vec![0.0; self.unknowns()];
        for j in 0..ny {
            for c in 0..m {
                let i = c + 1;
                let mut v = self.storage + self.ax * (self.faces.x_faces[j * (nx - 1) + i - 1] + self.faces.x_faces[j * (nx - 1) + i]);
                if j > 0 {
                    v += self.ay * self.faces.y_faces[(j - 1) * nx + i];
                }
                if j + 1 < ny {
                    v += self.ay * self.faces.y_faces[j * nx + i];
                }
                d[j * m + c] = v;
            }
        }
        d
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG; returns iterations and final relative residual.
fn conjugate_gradient(op: &Coefficients<'_>, b: &[f64], x: &mut [f64], max_iter: usize) -> Result<(usize, f64)> {
    let n = b.len();
    let inv_diag: Vec<f64> = op.diagonal().iter().map(|d| 1.0 / d).collect();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((0, 0.0));
    }
    let mut ap = vec![0.0; n];
    op.apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    if rel < CG_TOLERANCE {
        return Ok((0, rel));
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverDiverged {
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if !rel.is_finite() {
            return Err(Error::SolverDiverged {
                iterations: it,
                residual: rel,
            });
        }
        if rel < CG_TOLERANCE {
            return Ok((it, rel));
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::SolverDiverged {
        iterations: max_iter,
        residual: rel,
    })
}

/// Heads at every node for steps `0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub grid: GridSpec,
    pub bcs: BoundaryConditions,
    pub field_fingerprint: String,
    heads: Vec<f64>,
}

impl ReferenceSolution {
    pub fn head(&self, step: usize, j: usize, i: usize) -> f64 {
        let g = &self.grid;
        self.heads[step * g.n_nodes() + j * g.nx + i]
    }

    pub fn step_heads(&self, step: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.heads[step * n..(step + 1) * n]
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut s = String::new();
        let _ = writeln!(s, "{SOLUTION_FORMAT} {SOLUTION_VERSION}");
        let _ = writeln!(s, "nx {}", g.nx);
        let _ = writeln!(s, "ny {}", g.ny);
        let _ = writeln!(s, "length_x {}", fmt_f64(g.length_x));
        let _ = writeln!(s, "length_y {}", fmt_f64(g.length_y));
        let _ = writeln!(s, "dt {}", fmt_f64(g.dt));
        let _ = writeln!(s, "n_steps {}", g.n_steps);
        let _ = writeln!(s, "specific_storage {}", fmt_f64(g.specific_storage));
        let _ = writeln!(s, "left_head {}", fmt_f64(self.bcs.left_head));
        let _ = writeln!(s, "right_head {}", fmt_f64(self.bcs.right_head));
        let _ = writeln!(s, "field_fingerprint {}", self.field_fingerprint);
        for step in 0..=g.n_steps {
            for j in 0..g.ny {
                let _ = write!(s, "{step} {j}");
                for i in 0..g.nx {
                    let _ = write!(s, " {}", fmt_f64(self.head(step, j, i)));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new("solution", text);
        let head = lines.expect_line()?;
        let expected = format!("{SOLUTION_FORMAT} {SOLUTION_VERSION}");
        if head.trim_end() != expected {
            return Err(lines.err(format!("expected header `{expected}`")));
        }
        let grid = GridSpec {
            nx: lines.key_usize("nx")?,
            ny: lines.key_usize("ny")?,
            length_x: lines.key_f64("length_x")?,
            length_y: lines.key_f64("length_y")?,
            dt: lines.key_f64("dt")?,
            n_steps: lines.key_usize("n_steps")?,
            specific_storage: lines.key_f64("specific_storage")?,
        };
        grid.validate().map_err(|e| lines.err(e.to_string()))?;
        let rows = grid
            .n_steps
            .checked_add(1)
            .and_then(|s| s.checked_mul(grid.ny))
            .filter(|r| r.checked_mul(grid.nx).is_some_and(|n| n <= 1 << 28))
            .ok_or_else(|| lines.err("grid too large"))?;
        let bcs = BoundaryConditions {
            left_head: lines.key_f64("left_head")?,
            right_head: lines.key_f64("right_head")?,
        };
        let field_fingerprint = lines.expect_key("field_fingerprint")?.to_string();
        // Every value takes at least two bytes of input.
        let mut heads = Vec::with_capacity((rows * grid.nx).min(text.len() / 2));
        for r in 0..rows {
            let l = lines.expect_line()?;
            let mut cols = l.split_whitespace();
            let (step, row) = (r / grid.ny, r % grid.ny);
            let s: Option<usize> = cols.next().and_then(|c| c.parse().ok());
            let j: Option<usize> = cols.next().and_then(|c| c.parse().ok());
            if s != Some(step) || j != Some(row) {
                return Err(lines.err(format!("expected record for step {step}, row {row}")));
            }
            let before = heads.len();
            for c in cols {
                heads.push(parse_f64(c).ok_or_else(|| lines.err(format!("invalid number `{c}`")))?);
            }
            if heads.len() - before != grid.nx {
                return Err(lines.err(format!("expected {} head values", grid.nx)));
            }
        }
        while let Some(l) = lines.next_line() {
            if !l.trim().is_empty() {
                return Err(lines.err("trailing data after last record"));
            }
        }
        Ok(ReferenceSolution {
            grid,
            bcs,
            field_fingerprint,
            heads,
        })
    }

    /// Flat `t,x,y,h` table over every node and step.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut s = String::from("t,x,y,h\n");
        for step in 0..=g.n_steps {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let _ = writeln!(
                        s,
                        "{},{},{},{}",
                        fmt_f64(g.time(step)),
                        fmt_f64(g.x(i)),
                        fmt_f64(g.y(j)),
                        fmt_f64(self.head(step, j, i))
                    );
                }
            }
        }
        s
    }
}
