//! Crank–Nicolson solver for `∂_t u = ½Δu - V u`, in one dimension on a full
//! grid and for radial potentials with the source at the origin in `d = 2, 3`.
//!
//! The initial datum is the mollified delta `q(ε, x₀, ·) e^{-ε(V(x₀)+V(·))/2}`,
//! evolved over `t - ε`. The exponential factor makes the start exact for
//! constant potentials and first-order accurate otherwise. The first two time
//! steps are replaced by four implicit-Euler half steps to damp the
//! high-frequency content of the narrow initial Gaussian.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Error, Result};
use crate::freekernel::q_sq;
use crate::potentials::PotentialSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    DirichletTruncation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Half-width (1-d, around `x₀`) or outer radius; `None` selects `8√t + 2`.
    pub extent: Option<f64>,
    pub n_space: usize,
    pub n_time: usize,
    /// Mollifier width `ε`; `None` selects `t/1000`.
    pub delta_init_width: Option<f64>,
    pub boundary: Boundary,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            extent: None,
            n_space: 2048,
            n_time: 2000,
            delta_init_width: None,
            boundary: Boundary::DirichletTruncation,
        }
    }
}

impl GridConfig {
    fn resolve(&self, t: f64, offset: f64) -> Result<(f64, f64)> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(domain(format!("time must be positive, got {t}")));
        }
        if self.n_space < 16 || self.n_time < 2 {
            return Err(precondition("grid needs n_space >= 16 and n_time >= 2"));
        }
        let eps = self.delta_init_width.unwrap_or(t / 1000.0);
        if !(eps > 0.0 && eps < t / 10.0) {
            return Err(precondition(format!("mollifier width {eps} must lie in (0, t/10)")));
        }
        let extent = self.extent.unwrap_or(8.0 * t.sqrt() + 2.0);
        if extent < 6.0 * t.sqrt() {
            return Err(precondition(format!(
                "truncation {extent} is below 6·sqrt(t) = {}",
                6.0 * t.sqrt()
            )));
        }
        let _ = offset;
        Ok((eps, extent))
    }

    /// Same physical grid with both resolutions doubled.
    pub fn refined(&self) -> Self {
        Self {
            n_space: 2 * self.n_space,
            n_time: 2 * self.n_time,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Grid `x₀ - L .. x₀ + L` on the line.
    Line { x0: f64 },
    /// Radius grid `0 .. r_max` in dimension `dim`, source at the origin.
    Radial { dim: usize },
}

/// `u(t, ·) = p(t, x₀, ·)` on the grid nodes, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSlice {
    pub geometry: Geometry,
    pub t: f64,
    pub eps: f64,
    pub n_space: usize,
    pub n_time: usize,
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
    /// `∫ u` at the final time (surface measure in the radial case).
    pub mass: f64,
    /// Largest mass seen over all time steps.
    pub max_mass: f64,
    /// No node went below `-1e-12 · max u` during the run.
    pub positive: bool,
    /// The time step exceeds the space step, where Crank–Nicolson damps poorly.
    pub coarse_time: bool,
    /// Time histories at requested probe coordinates.
    #[serde(skip)]
    pub history: Option<ProbeHistory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHistory {
    pub probes: Vec<f64>,
    /// Elapsed times (starting at `ε`).
    pub times: Vec<f64>,
    /// `values[k][j]` at `times[k]`, probe `j`.
    pub values: Vec<Vec<f64>>,
}

impl ProbeHistory {
    /// Linear interpolation in time; `None` before the first record.
    pub fn at(&self, s: f64, probe: usize) -> Option<f64> {
        if s < self.times[0] || s > *self.times.last()? {
            return None;
        }
        let k = self.times.partition_point(|&v| v <= s).min(self.times.len() - 1).max(1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (v0, v1) = (self.values[k - 1][probe], self.values[k][probe]);
        Some(v0 + (v1 - v0) * (s - t0) / (t1 - t0))
    }
}

impl KernelSlice {
    fn spacing(&self) -> f64 {
        self.coords[1] - self.coords[0]
    }

    /// Four-point Lagrange interpolation; zero beyond the truncation.
    pub fn value_at(&self, z: f64) -> f64 {
        interpolate(&self.coords, &self.values, self.spacing(), z, matches!(self.geometry, Geometry::Radial { .. }))
    }

    /// Writes a header comment with run metadata and columns `x` (or `r`), `value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let (column, d) = match self.geometry {
            Geometry::Line { .. } => ("x", 1),
            Geometry::Radial { dim } => ("r", dim),
        };
        writeln!(
            out,
            "# t={} d={} eps={} n_space={} n_time={}",
            self.t, d, self.eps, self.n_space, self.n_time
        )?;
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record([column, "value"])?;
        for (c, v) in self.coords.iter().zip(&self.values) {
            writer.write_record([c.to_string(), v.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn interpolate(coords: &[f64], values: &[f64], h: f64, z: f64, radial: bool) -> f64 {
    let z = if radial { z.abs() } else { z };
    let n = coords.len();
    let pos = (z - coords[0]) / h;
    if pos < 0.0 || pos > (n - 1) as f64 {
        return 0.0;
    }
    let i = (pos.floor() as usize).min(n - 2);
    // stencil i-1..i+2, mirrored through r = 0 for radial profiles
    let at = |j: isize| -> f64 {
        if j < 0 {
            if radial {
                values[(-j) as usize]
            } else {
                0.0
            }
        } else if j as usize >= n {
            0.0
        } else {
            values[j as usize]
        }
    };
    let s = pos - i as f64;
    let i = i as isize;
    let (f0, f1, f2, f3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    let w0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
    let w1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
    let w2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
    let w3 = (s + 1.0) * s * (s - 1.0) / 6.0;
    w0 * f0 + w1 * f1 + w2 * f2 + w3 * f3
}

/// Tridiagonal generator `L = ½Δ_h - V` on the unknowns.
struct Operator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Operator {
    fn apply_explicit(&self, u: &[f64], factor: f64, out: &mut [f64]) {
        let n = u.len();
        for i in 0..n {
            let mut v = u[i] + factor * self.diag[i] * u[i];
            if i > 0 {
                v += factor * self.lower[i] * u[i - 1];
            }
            if i + 1 < n {
                v += factor * self.upper[i] * u[i + 1];
            }
            out[i] = v;
        }
    }
}

/// Thomas factorization of `I - factor · L`.
struct Factorized {
    lower: Vec<f64>,
    upper_mod: Vec<f64>,
    denom: Vec<f64>,
}

impl Factorized {
    fn new(op: &Operator, factor: f64) -> Self {
        let n = op.diag.len();
        let a: Vec<f64> = op.lower.iter().map(|l| -factor * l).collect();
        let b: Vec<f64> = op.diag.iter().map(|d| 1.0 - factor * d).collect();
        let c: Vec<f64> = op.upper.iter().map(|u| -factor * u).collect();
        let mut upper_mod = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = b[0];
        upper_mod[0] = c[0] / denom[0];
        for i in 1..n {
            denom[i] = b[i] - a[i] * upper_mod[i - 1];
            upper_mod[i] = c[i] / denom[i];
        }
        Self {
            lower: a,
            upper_mod,
            denom,
        }
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] /= self.denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper_mod[i] * rhs[i + 1];
        }
    }
}

struct Problem {
    geometry: Geometry,
    /// Grid coordinates including the Dirichlet node(s).
    coords: Vec<f64>,
    /// Index range of the unknowns inside `coords`.
    first: usize,
    op: Operator,
    weights: Vec<f64>,
}

fn surface_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => f64::NAN,
    }
}

fn potential_values(pot: &PotentialSpec, radii: impl Iterator<Item = f64>) -> Result<Vec<f64>> {
    radii.map(|r| pot.radial(r)).collect()
}

fn line_problem(pot: &PotentialSpec, x0: f64, extent: f64, n: usize) -> Result<Problem> {
    let h = 2.0 * extent / n as f64;
    let coords: Vec<f64> = (0..=n).map(|i| x0 - extent + i as f64 * h).collect();
    let interior = &coords[1..n];
    let v = potential_values(pot, interior.iter().map(|x| x.abs()))?;
    let m = interior.len();
    let k = 0.5 / (h * h);
    Ok(Problem {
        geometry: Geometry::Line { x0 },
        first: 1,
        op: Operator {
            lower: vec![k; m],
            diag: v.iter().map(|vi| -2.0 * k - vi).collect(),
            upper: vec![k; m],
        },
        weights: vec![h; m],
        coords,
    })
}

fn radial_problem(pot: &PotentialSpec, dim: usize, extent: f64, n: usize) -> Result<Problem> {
    let h = extent / n as f64;
    let coords: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
    let unknowns = &coords[..n];
    let v = potential_values(pot, unknowns.iter().copied())?;
    let d = dim as f64;
    let k = 0.5 / (h * h);
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    // regularity at r = 0: Δu ≈ d · u_rr ≈ 2d (u₁ - u₀)/h²
    diag[0] = -2.0 * d * k - v[0];
    upper[0] = 2.0 * d * k;
    for i in 1..n {
        let drift = 0.5 * (d - 1.0) / (2.0 * unknowns[i] * h);
        lower[i] = k - drift;
        diag[i] = -2.0 * k - v[i];
        upper[i] = k + drift;
    }
    let area = surface_area(dim);
    // trapezoid weights for ∫ u r^{d-1} dr; the r = 0 node has zero weight for d >= 2
    let weights = unknowns
        .iter()
        .map(|&r| area * h * r.powi(dim as i32 - 1))
        .collect();
    Ok(Problem {
        geometry: Geometry::Radial { dim },
        first: 0,
        op: Operator { lower, diag, upper },
        weights,
        coords,
    })
}

struct Run {
    values: Vec<f64>,
    max_mass: f64,
    positive: bool,
    history: Option<ProbeHistory>,
}

fn mass(u: &[f64], weights: &[f64]) -> f64 {
    u.iter().zip(weights).map(|(a, w)| a * w).sum()
}

fn evolve(
    problem: &Problem,
    mut u: Vec<f64>,
    start: f64,
    duration: f64,
    n_time: usize,
    rannacher: bool,
    probes: &[f64],
) -> Run {
    let dt = duration / n_time as f64;
    // an implicit-Euler half step and the Crank–Nicolson solve share `I - (dt/2) L`
    let implicit = Factorized::new(&problem.op, 0.5 * dt);
    let mut scratch = vec![0.0; u.len()];
    let mut max_mass = mass(&u, &problem.weights);
    let mut positive = true;
    let h = problem.coords[1] - problem.coords[0];
    let radial = matches!(problem.geometry, Geometry::Radial { .. });
    let record = |u: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; problem.coords.len()];
        full[problem.first..problem.first + u.len()].copy_from_slice(u);
        probes
            .iter()
            .map(|&z| interpolate(&problem.coords, &full, h, z, radial))
            .collect()
    };
    let mut history = (!probes.is_empty()).then(|| ProbeHistory {
        probes: probes.to_vec(),
        times: vec![start],
        values: vec![record(&u)],
    });
    let mut elapsed = start;
    let mut track = |u: &[f64], elapsed: f64, history: &mut Option<ProbeHistory>| {
        let m = mass(u, &problem.weights);
        max_mass = max_mass.max(m);
        let top = u.iter().copied().fold(0.0, f64::max);
        if u.iter().any(|&v| v < -1e-12 * top) {
            positive = false;
        }
        if let Some(h) = history.as_mut() {
            h.times.push(elapsed);
            h.values.push(record(u));
        }
    };
    let startup = if rannacher { 2.min(n_time) } else { 0 };
    for _ in 0..startup {
        // two implicit-Euler half steps per Crank–Nicolson step
        for _ in 0..2 {
            implicit.solve(&mut u);
        }
        elapsed += dt;
        track(&u, elapsed, &mut history);
    }
    for _ in startup..n_time {
        problem.op.apply_explicit(&u, 0.5 * dt, &mut scratch);
        implicit.solve(&mut scratch);
        std::mem::swap(&mut u, &mut scratch);
        elapsed += dt;
        track(&u, elapsed, &mut history);
    }
    Run {
        values: u,
        max_mass,
        positive,
        history,
    }
}

fn check_kind(pot: &PotentialSpec, dim: usize) -> Result<()> {
    if pot.dim() != dim {
        return Err(domain(format!(
            "potential has dimension {}, solver needs {dim}",
            pot.dim()
        )));
    }
    Ok(())
}

fn initial_datum(pot: &PotentialSpec, problem: &Problem, eps: f64, source: f64, dim: usize) -> Result<Vec<f64>> {
    let n_unknown = problem.op.diag.len();
    let v0 = pot.radial(source.abs())?;
    problem.coords[problem.first..problem.first + n_unknown]
        .iter()
        .map(|&z| {
            let vz = pot.radial(z.abs())?;
            Ok(q_sq(eps, (z - source) * (z - source), dim) * (-0.5 * eps * (v0 + vz)).exp())
        })
        .collect()
}

fn assemble(problem: Problem, run: Run, t: f64, eps: f64, n_time: usize) -> KernelSlice {
    let n_space = problem.coords.len() - 1;
    let mut values = vec![0.0; problem.coords.len()];
    values[problem.first..problem.first + run.values.len()].copy_from_slice(&run.values);
    let dt = (t - eps) / n_time as f64;
    let h = problem.coords[1] - problem.coords[0];
    KernelSlice {
        geometry: problem.geometry,
        t,
        eps,
        n_space,
        n_time,
        mass: mass(&run.values, &problem.weights),
        max_mass: run.max_mass,
        positive: run.positive,
        coarse_time: dt > h,
        coords: problem.coords,
        values,
        history: run.history,
    }
}

/// `p(t, x₀, ·)` in one dimension.
pub fn solve_1d(pot: &PotentialSpec, t: f64, x0: f64, cfg: &GridConfig) -> Result<KernelSlice> {
    solve_1d_with_probes(pot, t, x0, cfg, &[])
}

/// As [`solve_1d`], also recording `u(s, z)` at each probe `z` after every step.
pub fn solve_1d_with_probes(
    pot: &PotentialSpec,
    t: f64,
    x0: f64,
    cfg: &GridConfig,
    probes: &[f64],
) -> Result<KernelSlice> {
    check_kind(pot, 1)?;
    let (eps, extent) = cfg.resolve(t, x0)?;
    let problem = line_problem(pot, x0, extent, cfg.n_space)?;
    let u = initial_datum(pot, &problem, eps, x0, 1)?;
    let run = evolve(&problem, u, eps, t - eps, cfg.n_time, true, probes);
    Ok(assemble(problem, run, t, eps, cfg.n_time))
}

/// `p(t, 0, r)` for a radial potential in `d ∈ {2, 3}`.
pub fn solve_radial(pot: &PotentialSpec, t: f64, cfg: &GridConfig) -> Result<KernelSlice> {
    let dim = pot.dim();
    if !(dim == 2 || dim == 3) {
        return Err(Error::Unsupported(format!("radial solver covers d = 2, 3, got {dim}")));
    }
    let (eps, extent) = cfg.resolve(t, 0.0)?;
    let problem = radial_problem(pot, dim, extent, cfg.n_space)?;
    let u = initial_datum(pot, &problem, eps, 0.0, dim)?;
    let run = evolve(&problem, u, eps, t - eps, cfg.n_time, true, &[]);
    Ok(assemble(problem, run, t, eps, cfg.n_time))
}

/// Evolves an existing slice for a further `extra` time units on the same grid.
pub fn continue_solve(pot: &PotentialSpec, slice: &KernelSlice, extra: f64, n_time: usize) -> Result<KernelSlice> {
    let n = slice.n_space;
    let (problem, first_len) = match slice.geometry {
        Geometry::Line { x0 } => {
            check_kind(pot, 1)?;
            let extent = 0.5 * (slice.coords[n] - slice.coords[0]);
            (line_problem(pot, x0, extent, n)?, n - 1)
        }
        Geometry::Radial { dim } => (radial_problem(pot, dim, slice.coords[n], n)?, n),
    };
    let u = slice.values[problem.first..problem.first + first_len].to_vec();
    let run = evolve(&problem, u, slice.t, extra, n_time, false, &[]);
    let mut out = assemble(problem, run, slice.t + extra, slice.eps, n_time);
    out.max_mass = out.max_mass.max(slice.max_mass);
    out.positive &= slice.positive;
    Ok(out)
}

/// A grid value together with its Richardson error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdeValue {
    /// Extrapolated value `fine + (fine - coarse)/3`.
    pub value: f64,
    /// `|fine - coarse| / 3`.
    pub error: f64,
    pub coarse: f64,
    pub fine: f64,
}

impl PdeValue {
    fn from_pair(coarse: f64, fine: f64) -> Self {
        let diff = (fine - coarse) / 3.0;
        Self {
            value: fine + diff,
            error: diff.abs(),
            coarse,
            fine,
        }
    }
}

/// `p(t, x₀, y)` at each `y`, from `cfg` and its doubled refinement.
pub fn richardson_1d(pot: &PotentialSpec, t: f64, x0: f64, ys: &[f64], cfg: &GridConfig) -> Result<Vec<PdeValue>> {
    let coarse = solve_1d(pot, t, x0, cfg)?;
    let fine = solve_1d(pot, t, x0, &cfg.refined())?;
    Ok(ys
        .iter()
        .map(|&y| PdeValue::from_pair(coarse.value_at(y), fine.value_at(y)))
        .collect())
}

/// `p(t, 0, y)` at each radius `|y|`, from `cfg` and its doubled refinement.
pub fn richardson_radial(pot: &PotentialSpec, t: f64, radii: &[f64], cfg: &GridConfig) -> Result<Vec<PdeValue>> {
    let coarse = solve_radial(pot, t, cfg)?;
    let fine = solve_radial(pot, t, &cfg.refined())?;
    Ok(radii
        .iter()
        .map(|&r| PdeValue::from_pair(coarse.value_at(r), fine.value_at(r)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Sign;
    use approx::assert_relative_eq;

    fn grid(n_space: usize, n_time: usize) -> GridConfig {
        GridConfig {
            n_space,
            n_time,
            ..GridConfig::default()
        }
    }

    #[test]
    fn free_line_kernel_is_gaussian() {
        let pot = PotentialSpec::zero(1);
        let s = solve_1d(&pot, 2.0, 0.5, &grid(2048, 1000)).unwrap();
        let exact = q_sq(2.0, 0.0, 1);
        assert_relative_eq!(s.value_at(0.5), exact, max_relative = 1e-3);
        assert_relative_eq!(s.value_at(1.5), q_sq(2.0, 1.0, 1), max_relative = 1e-3);
        assert!((s.mass - 1.0).abs() < 1e-6);
        assert!(s.positive);
    }

    #[test]
    fn constant_potential_line_kernel() {
        let pot = PotentialSpec::constant(0.5, 1);
        let s = solve_1d(&pot, 5.0, 0.0, &grid(2048, 1000)).unwrap();
        assert_relative_eq!(s.value_at(0.0), (-2.5f64).exp() * q_sq(5.0, 0.0, 1), max_relative = 1e-3);
    }

    #[test]
    fn free_radial_kernel_is_gaussian() {
        for dim in [2, 3] {
            let pot = PotentialSpec::zero(dim);
            let s = solve_radial(&pot, 3.0, &grid(2048, 1000)).unwrap();
            for r in [0.0, 1.0, 2.5] {
                assert_relative_eq!(s.value_at(r), q_sq(3.0, r * r, dim), max_relative = 1e-3);
            }
            // the origin row is not flux-conservative, so mass drifts at O(h)
            assert!((s.mass - 1.0).abs() < 2e-3, "{}", s.mass);
        }
    }

    #[test]
    fn positive_potential_loses_mass() {
        let pot = PotentialSpec::power_decay(Sign::Positive, 1.0, 1.0, 2).unwrap();
        let s = solve_radial(&pot, 10.0, &grid(1024, 800)).unwrap();
        let ratio = s.value_at(0.0) / q_sq(10.0, 0.0, 2);
        assert!(ratio > 0.0 && ratio < 1.0);
        assert!(s.max_mass <= 1.0 + 1e-9 && s.mass < 1.0);
        assert!(s.positive);
    }

    #[test]
    fn semigroup_restart() {
        let pot = PotentialSpec::power_decay(Sign::Positive, 1.0, 1.0, 1).unwrap();
        let cfg = GridConfig {
            extent: Some(30.0),
            ..grid(4096, 1000)
        };
        let direct = solve_1d(&pot, 5.0, 0.0, &cfg).unwrap();
        let half = solve_1d(&pot, 2.0, 0.0, &GridConfig { n_time: 400, ..cfg.clone() }).unwrap();
        let restarted = continue_solve(&pot, &half, 3.0, 600).unwrap();
        assert_relative_eq!(restarted.value_at(0.0), direct.value_at(0.0), max_relative = 1e-3);
    }

    #[test]
    fn second_order_convergence() {
        let pot = PotentialSpec::constant(0.3, 1);
        let exact = (-0.6f64).exp() * q_sq(2.0, 0.0, 1);
        let cfg = GridConfig {
            extent: Some(14.0),
            delta_init_width: Some(0.05),
            ..grid(200, 50)
        };
        let e1 = (solve_1d(&pot, 2.0, 0.0, &cfg).unwrap().value_at(0.0) - exact).abs();
        let e2 = (solve_1d(&pot, 2.0, 0.0, &cfg.refined()).unwrap().value_at(0.0) - exact).abs();
        assert!(e1 / e2 >= 3.0, "{e1} {e2}");
    }

    #[test]
    fn richardson_reports_small_error() {
        let pot = PotentialSpec::power_decay(Sign::Positive, 1.0, 1.0, 3).unwrap();
        let v = richardson_radial(&pot, 1.0, &[0.0, 0.5], &grid(1024, 500)).unwrap();
        for pv in v {
            assert!(pv.error < 1e-3 * pv.value);
        }
    }

    #[test]
    fn probes_follow_the_solution() {
        let pot = PotentialSpec::zero(1);
        let s = solve_1d_with_probes(&pot, 4.0, 0.0, &grid(2048, 800), &[1.0, -2.0]).unwrap();
        let h = s.history.unwrap();
        assert_relative_eq!(h.at(2.0, 0).unwrap(), q_sq(2.0, 1.0, 1), max_relative = 2e-3);
        assert_relative_eq!(h.at(4.0, 1).unwrap(), q_sq(4.0, 4.0, 1), max_relative = 2e-3);
        assert!(h.at(0.0, 0).is_none());
    }

    #[test]
    fn grid_preconditions() {
        let pot = PotentialSpec::zero(1);
        assert!(solve_1d(&pot, 1.0, 0.0, &grid(8, 10)).is_err());
        let narrow = GridConfig { extent: Some(2.0), ..grid(64, 10) };
        assert!(solve_1d(&pot, 1.0, 0.0, &narrow).is_err());
        let wide_eps = GridConfig { delta_init_width: Some(0.5), ..grid(64, 10) };
        assert!(solve_1d(&pot, 1.0, 0.0, &wide_eps).is_err());
        assert!(solve_radial(&PotentialSpec::zero(1), 1.0, &grid(64, 10)).is_err());
    }

    #[test]
    fn csv_has_metadata_header() {
        let s = solve_radial(&PotentialSpec::zero(2), 1.0, &grid(32, 10)).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# t=1 d=2"));
        assert_eq!(text.lines().nth(1), Some("r,value"));
    }
}
