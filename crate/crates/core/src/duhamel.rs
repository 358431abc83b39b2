//! Perturbation series `p = Σ pₙ` for non-positive potentials, and numeric
//! checks of the two convolution bounds behind its convergence.
//!
//! Terms are carried in ratio form `hₙ(t, x) = pₙ(t, x, y)/q(t, x, y)`. Dividing
//! the recursion by `q(t,x,y)` turns the space-time convolution into an average
//! over the Brownian bridge from `x` to `y`:
//!
//! `hₙ(t, x) = ∫₀ᵗ E[-V(Z) hₙ₋₁(s, Z)] ds`, with
//! `Z ~ N(y + (s/t)(x - y), s(t - s)/t · I)`.
//!
//! The Gaussian singularities of the original form cancel, so the time
//! integrand is bounded; the remaining square-root behaviour at both ends is
//! removed by splitting at `t/2` and substituting `s = u²`, `t - s = u²`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, precondition, Error, Result};
use crate::freekernel::q_sq;
use crate::potentials::PotentialSpec;
use crate::quadrature::Rule;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
/// Gaussian averages are truncated at this many standard deviations.
const SPREAD: f64 = 9.0;

/// `E[f(|m + σG|)]` for a standard Gaussian `G` in `dim ∈ {1, 3}` with `|m| = mu`.
pub(crate) fn radial_gaussian_mean(rule: &Rule, mu: f64, sigma: f64, dim: usize, f: impl Fn(f64) -> f64) -> f64 {
    if sigma <= 0.0 {
        return f(mu);
    }
    match dim {
        1 => gaussian_mean_1d(rule, mu, sigma, |z| f(z.abs())),
        3 => {
            let lo = (mu - SPREAD * sigma).max(0.0);
            let hi = mu + SPREAD * sigma;
            let density = |rho: f64| -> f64 {
                if mu < 1e-12 * sigma {
                    // Maxwell law
                    let u = rho / sigma;
                    2.0 * u * u * (-0.5 * u * u).exp() / (SQRT_2PI * sigma)
                } else {
                    let gap = (rho - mu) / sigma;
                    rho / (mu * sigma * SQRT_2PI) * (-0.5 * gap * gap).exp() * -(-2.0 * rho * mu / (sigma * sigma)).exp_m1()
                }
            };
            rule.composite(lo, hi, 3, |rho| density(rho) * f(rho))
        }
        _ => f64::NAN,
    }
}

/// `E[f(μ + σG)]` in one dimension, with a panel break at the potential cusp `z = 0`.
pub(crate) fn gaussian_mean_1d(rule: &Rule, mu: f64, sigma: f64, f: impl Fn(f64) -> f64) -> f64 {
    if sigma <= 0.0 {
        return f(mu);
    }
    let lo = mu - SPREAD * sigma;
    let hi = mu + SPREAD * sigma;
    let g = |z: f64| {
        let u = (z - mu) / sigma;
        (-0.5 * u * u).exp() / (SQRT_2PI * sigma) * f(z)
    };
    if lo < 0.0 && hi > 0.0 {
        rule.piecewise(&[lo, 0.0, hi], 2, g)
    } else {
        rule.composite(lo, hi, 3, g)
    }
}

/// `∫₀ᵗ F(s) ds` split at `t/2` with square-root substitutions at both ends.
fn split_time_integral(rule: &Rule, t: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let u_max = (0.5 * t).sqrt();
    let head = rule.integrate(0.0, u_max, |u| 2.0 * u * f(u * u));
    let tail = rule.integrate(0.0, u_max, |u| 2.0 * u * f(t - u * u));
    head + tail
}

/// Four-point Lagrange interpolation on a uniform grid, with shifted stencils at
/// the ends and constant extension outside.
fn lagrange_uniform(start: f64, h: f64, values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let pos = ((x - start) / h).clamp(0.0, (n - 1) as f64);
    let base = (pos.floor() as usize).saturating_sub(1).min(n - 4);
    let s = pos - base as f64;
    let w0 = -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0;
    let w1 = s * (s - 2.0) * (s - 3.0) / 2.0;
    let w2 = -s * (s - 1.0) * (s - 3.0) / 2.0;
    let w3 = s * (s - 1.0) * (s - 2.0) / 6.0;
    w0 * values[base] + w1 * values[base + 1] + w2 * values[base + 2] + w3 * values[base + 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DuhamelConfig {
    /// 1 (full line) or 3 (radial, target at the origin).
    pub dim: usize,
    pub t_max: f64,
    /// Time nodes are uniform in `√t`.
    pub n_time: usize,
    pub n_space: usize,
    /// Spatial truncation; `None` selects `6√t_max`.
    pub extent: Option<f64>,
    /// Target point `y` (one-dimensional grids only).
    pub target: f64,
    /// Gauss–Legendre points per time half-interval.
    pub time_points: usize,
    /// Gauss–Legendre points per spatial panel.
    pub space_points: usize,
}

impl Default for DuhamelConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            t_max: 10.0,
            n_time: 40,
            n_space: 96,
            extent: None,
            target: 0.0,
            time_points: 12,
            space_points: 16,
        }
    }
}

impl DuhamelConfig {
    pub fn refined(&self) -> Self {
        Self {
            n_time: 2 * self.n_time,
            n_space: 2 * self.n_space,
            time_points: 2 * self.time_points,
            space_points: 2 * self.space_points,
            ..self.clone()
        }
    }
}

/// Space-time nodes shared by every term of one series.
#[derive(Debug, Clone)]
pub struct SpaceTimeGrid {
    cfg: DuhamelConfig,
    /// `√t` spacing of the time nodes.
    root_step: f64,
    times: Vec<f64>,
    space_start: f64,
    space_step: f64,
    coords: Vec<f64>,
    time_rule: Rule,
    space_rule: Rule,
}

impl SpaceTimeGrid {
    pub fn new(cfg: &DuhamelConfig) -> Result<Self> {
        if !(cfg.dim == 1 || cfg.dim == 3) {
            return Err(Error::Unsupported(format!("series grids cover d = 1, 3, got {}", cfg.dim)));
        }
        if cfg.dim == 3 && cfg.target != 0.0 {
            return Err(Error::Unsupported("radial series grids need the target at the origin".into()));
        }
        if !(cfg.t_max > 0.0 && cfg.t_max.is_finite()) {
            return Err(domain("t_max must be positive"));
        }
        if cfg.n_time < 4 || cfg.n_space < 4 || cfg.time_points < 2 || cfg.space_points < 2 {
            return Err(precondition("series grid needs at least 4 nodes per axis"));
        }
        let extent = cfg.extent.unwrap_or(6.0 * cfg.t_max.sqrt());
        if extent <= 0.0 {
            return Err(domain("spatial extent must be positive"));
        }
        let root_step = cfg.t_max.sqrt() / cfg.n_time as f64;
        let times = (0..=cfg.n_time).map(|k| (k as f64 * root_step).powi(2)).collect();
        let (space_start, space_step) = if cfg.dim == 1 {
            (cfg.target - extent, 2.0 * extent / cfg.n_space as f64)
        } else {
            (0.0, extent / cfg.n_space as f64)
        };
        let coords = (0..=cfg.n_space).map(|j| space_start + j as f64 * space_step).collect();
        Ok(Self {
            cfg: cfg.clone(),
            root_step,
            times,
            space_start,
            space_step,
            coords,
            time_rule: Rule::new(cfg.time_points),
            space_rule: Rule::new(cfg.space_points),
        })
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn target(&self) -> f64 {
        self.cfg.target
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Signed positions in 1-d, radii in 3-d.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    fn width(&self) -> usize {
        self.coords.len()
    }

    /// Interpolates a `[time][space]` table at `(t, coord)`.
    fn interpolate(&self, table: &[f64], t: f64, coord: f64) -> f64 {
        let column = self.column_at(table, t);
        lagrange_uniform(self.space_start, self.space_step, &column, coord)
    }

    /// Cubic Lagrange in `t` on the four nodes around `√t`, so terms that are
    /// polynomial in time (constant potentials) are reproduced exactly.
    fn column_at(&self, table: &[f64], t: f64) -> Vec<f64> {
        let w = self.width();
        let last = self.times.len() - 1;
        let pos = (t.max(0.0).sqrt() / self.root_step).clamp(0.0, last as f64);
        let base = (pos.floor() as usize).saturating_sub(1).min(last - 3);
        let nodes = &self.times[base..base + 4];
        let t = t.clamp(0.0, self.times[last]);
        let weights: Vec<f64> = (0..4)
            .map(|a| {
                (0..4)
                    .filter(|&b| b != a)
                    .map(|b| (t - nodes[b]) / (nodes[a] - nodes[b]))
                    .product()
            })
            .collect();
        (0..w)
            .map(|j| (0..4).map(|a| weights[a] * table[(base + a) * w + j]).sum())
            .collect()
    }
}

/// One term `hₙ = pₙ/q` on the grid, stored `[time][space]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DuhamelTerm {
    pub n: usize,
    pub ratio: Vec<f64>,
    /// Largest value over the grid.
    pub sup: f64,
}

impl DuhamelTerm {
    /// `h₀ ≡ 1`.
    pub fn base(grid: &SpaceTimeGrid) -> Self {
        Self {
            n: 0,
            ratio: vec![1.0; grid.times.len() * grid.width()],
            sup: 1.0,
        }
    }

    /// `hₙ(t, coord)` by interpolation.
    pub fn ratio_at(&self, grid: &SpaceTimeGrid, t: f64, coord: f64) -> f64 {
        grid.interpolate(&self.ratio, t, coord)
    }

    /// `pₙ(t, x, y)` at grid node `(i, j)`.
    pub fn kernel(&self, grid: &SpaceTimeGrid, i: usize, j: usize) -> f64 {
        let t = grid.times[i];
        let dist = grid.coords[j] - grid.target();
        self.ratio[i * grid.width() + j] * q_sq(t, dist * dist, grid.dim())
    }
}

fn require_nonpositive(pot: &PotentialSpec, grid: &SpaceTimeGrid) -> Result<()> {
    if !pot.is_nonpositive() {
        return Err(Error::Unsupported(
            "the series is built for non-positive potentials".into(),
        ));
    }
    if pot.dim() != grid.dim() {
        return Err(domain(format!(
            "potential has dimension {}, grid has {}",
            pot.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// `hₙ` from `hₙ₋₁` on the shared grid.
pub fn duhamel_term(pot: &PotentialSpec, n: usize, grid: &SpaceTimeGrid, prev: &DuhamelTerm) -> Result<DuhamelTerm> {
    require_nonpositive(pot, grid)?;
    if n == 0 || prev.n + 1 != n {
        return Err(precondition(format!("term {n} needs term {} as input", n.saturating_sub(1))));
    }
    let w = grid.width();
    let y = grid.target();
    let first = prev.n == 0;
    let rows: Vec<Vec<f64>> = grid
        .times
        .par_iter()
        .map(|&t| {
            if t == 0.0 {
                return vec![0.0; w];
            }
            let mut row = vec![0.0; w];
            let mut accumulate = |s: f64, weight: f64| {
                let column = if first { Vec::new() } else { grid.column_at(&prev.ratio, s) };
                let prev_at = |z: f64| {
                    if first {
                        1.0
                    } else {
                        // terms are nonnegative; clip cubic overshoot where they are tiny
                        lagrange_uniform(grid.space_start, grid.space_step, &column, z).max(0.0)
                    }
                };
                let sigma = (s * (t - s) / t).sqrt();
                for (j, &x) in grid.coords.iter().enumerate() {
                    let mean = y + (s / t) * (x - y);
                    let e = if grid.dim() == 1 {
                        gaussian_mean_1d(&grid.space_rule, mean, sigma, |z| {
                            -pot.radial_unchecked(z.abs()) * prev_at(z)
                        })
                    } else {
                        radial_gaussian_mean(&grid.space_rule, mean.abs(), sigma, 3, |rho| {
                            -pot.radial_unchecked(rho) * prev_at(rho)
                        })
                    };
                    row[j] += weight * e;
                }
            };
            // Same nodes as split_time_integral, unrolled so each time slice of
            // the previous term is interpolated once per node.
            let u_max = (0.5 * t).sqrt();
            for (u, wu) in grid.time_rule.nodes(0.0, u_max) {
                accumulate(u * u, 2.0 * u * wu);
                accumulate(t - u * u, 2.0 * u * wu);
            }
            row
        })
        .collect();
    let ratio: Vec<f64> = rows.into_iter().flatten().collect();
    if ratio.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRange {
            radius: grid.coords.last().copied().unwrap_or(0.0).abs() + SPREAD * grid.cfg.t_max.sqrt(),
            r_max: f64::NAN,
        });
    }
    let sup = ratio.iter().copied().fold(0.0, f64::max);
    Ok(DuhamelTerm { n, ratio, sup })
}

#[derive(Debug, Clone, Serialize)]
pub struct DuhamelSeries {
    /// `sup hₙ` for `n = 0, 1, …` (the first entry is 1).
    pub term_sups: Vec<f64>,
    /// `sup hₙ₊₁ / sup hₙ` for consecutive terms.
    pub ratios: Vec<f64>,
    /// Largest observed ratio.
    pub r_hat: f64,
    /// Three consecutive ratios ≥ 1.
    pub diverged: bool,
    /// The last term fell below the tolerance.
    pub converged: bool,
    /// `p/q = Σ hₙ` on the grid, `[time][space]`.
    #[serde(skip)]
    pub total: Vec<f64>,
    #[serde(skip)]
    pub terms: Vec<DuhamelTerm>,
}

impl DuhamelSeries {
    /// `p(t,x,y)/q(t,x,y)` by interpolation; `coord` is a position in 1-d and `|x|` in 3-d.
    pub fn ratio_at(&self, grid: &SpaceTimeGrid, t: f64, coord: f64) -> f64 {
        grid.interpolate(&self.total, t, coord)
    }

    /// `p(t,x,y)` by interpolation.
    pub fn kernel_at(&self, grid: &SpaceTimeGrid, t: f64, coord: f64) -> f64 {
        let dist = if grid.dim() == 1 { coord - grid.target() } else { coord };
        q_sq(t, dist * dist, grid.dim()) * self.ratio_at(grid, t, coord)
    }

    /// Partial sum `Σ_{n ≤ upto} hₙ` at a grid node.
    pub fn partial_sum(&self, upto: usize, index: usize) -> f64 {
        self.terms.iter().take(upto + 1).map(|term| term.ratio[index]).sum()
    }
}

/// Sums terms until `sup hₙ < tol`, `n_max` terms, or three consecutive ratios ≥ 1.
pub fn duhamel_sum(pot: &PotentialSpec, grid: &SpaceTimeGrid, n_max: usize, tol: f64) -> Result<DuhamelSeries> {
    require_nonpositive(pot, grid)?;
    if !(tol > 0.0) {
        return Err(domain("tolerance must be positive"));
    }
    let mut terms = vec![DuhamelTerm::base(grid)];
    let mut ratios = Vec::new();
    let mut diverged = false;
    let mut converged = false;
    let mut run_above_one = 0;
    for n in 1..=n_max {
        let term = duhamel_term(pot, n, grid, terms.last().expect("base term present"))?;
        let prev_sup = terms.last().map(|t| t.sup).unwrap_or(1.0);
        let small = term.sup < tol;
        if prev_sup > 0.0 {
            let ratio = term.sup / prev_sup;
            ratios.push(ratio);
            run_above_one = if ratio >= 1.0 { run_above_one + 1 } else { 0 };
        }
        terms.push(term);
        if run_above_one >= 3 {
            diverged = true;
            break;
        }
        if small {
            converged = true;
            break;
        }
    }
    let mut total = vec![0.0; terms[0].ratio.len()];
    for term in &terms {
        for (acc, v) in total.iter_mut().zip(&term.ratio) {
            *acc += v;
        }
    }
    Ok(DuhamelSeries {
        term_sups: terms.iter().map(|t| t.sup).collect(),
        r_hat: ratios.iter().copied().fold(0.0, f64::max),
        ratios,
        diverged,
        converged,
        total,
        terms,
    })
}

/// One sample of a bound check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    /// `s` for the single-Gaussian bound, `t` for the convolution bound.
    pub time: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    pub dist: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// `lhs ≤ C·rhs` over all rows with a single fitted `C`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    /// Fitted constant: the largest ratio.
    pub constant: f64,
    pub ratio_min: f64,
    /// `constant / ratio_min`.
    pub band: f64,
    pub band_ceiling: f64,
    pub pass: bool,
}

impl BoundReport {
    fn from_rows(rows: Vec<BoundRow>, band_ceiling: f64) -> Self {
        let constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        let ratio_min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        let band = constant / ratio_min;
        let pass = rows.iter().all(|r| r.ratio.is_finite() && r.ratio > 0.0) && band <= band_ceiling;
        Self {
            rows,
            constant,
            ratio_min,
            band,
            band_ceiling,
            pass,
        }
    }
}

/// `∫ s^{-d/2} (1+|z|)^{-α} exp(-|x-z|²/s) dz` by radial reduction.
pub fn equ1_lhs(alpha: f64, dim: usize, s: f64, x_norm: f64) -> f64 {
    let rule = Rule::new(24);
    let mean = radial_gaussian_mean(&rule, x_norm, (0.5 * s).sqrt(), dim, |rho| (1.0 + rho).powf(-alpha));
    std::f64::consts::PI.powf(0.5 * dim as f64) * mean
}

/// Right side of the single-Gaussian bound, without its constant.
pub fn equ1_rhs(alpha: f64, dim: usize, s: f64, x_norm: f64) -> f64 {
    let d = dim as f64;
    let critical = (d - alpha).abs() < 1e-12;
    let p = d.min(alpha);
    if s < (1.0 + x_norm).powi(2) {
        let log = if critical { (2.0 + x_norm).ln() } else { 0.0 };
        (1.0 + log) / (1.0 + x_norm).powf(p)
    } else {
        let log = if critical { (1.0 + s).ln() } else { 0.0 };
        s.powf(-0.5 * p) * (1.0 + log)
    }
}

/// Checks the single-Gaussian bound over samples `(s, |x|)`.
pub fn check_equ1(alpha: f64, dim: usize, samples: &[(f64, f64)], band_ceiling: f64) -> Result<BoundReport> {
    if !(alpha > 2.0) {
        return Err(domain(format!("bound needs alpha > 2, got {alpha}")));
    }
    if !(dim == 1 || dim == 3) {
        return Err(Error::Unsupported(format!("radial reduction covers d = 1, 3, got {dim}")));
    }
    if samples.iter().any(|&(s, x)| !(s > 0.0) || !(x >= 0.0)) {
        return Err(domain("samples need s > 0 and |x| >= 0"));
    }
    let rows = samples
        .par_iter()
        .map(|&(s, x)| {
            let lhs = equ1_lhs(alpha, dim, s, x);
            let rhs = equ1_rhs(alpha, dim, s, x);
            BoundRow {
                time: s,
                x_norm: x,
                y_norm: 0.0,
                dist: x,
                lhs,
                rhs,
                ratio: lhs / rhs,
            }
        })
        .collect();
    Ok(BoundReport::from_rows(rows, band_ceiling))
}

/// The space-time convolution of two Gaussians (widths `b`, `a`) through
/// `(1+|z|)^{-α}` in `d = 3`.
///
/// Completing the square in `z` reduces the inner integral to a Gaussian
/// average centred at `(b s x + a (t-s) y)/(b s + a (t-s))`, leaving a
/// bounded time integrand.
pub fn convolution_lhs(alpha: f64, a: f64, b: f64, t: f64, x: &[f64], y: &[f64]) -> f64 {
    let rule = Rule::new(24);
    let time_rule = Rule::new(24);
    let dist_sq: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
    let integrand = |s: f64| {
        let mix = b * s + a * (t - s);
        let center_sq: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| ((b * s * xi + a * (t - s) * yi) / mix).powi(2))
            .sum();
        let sigma = (s * (t - s) / (2.0 * mix)).sqrt();
        let mean = radial_gaussian_mean(&rule, center_sq.sqrt(), sigma, 3, |rho| (1.0 + rho).powf(-alpha));
        std::f64::consts::PI.powf(1.5) * mix.powf(-1.5) * (-a * b * dist_sq / mix).exp() * mean
    };
    split_time_integral(&time_rule, t, integrand)
}

/// Checks the space-time convolution bound against `t^{-3/2} exp(-a|x-y|²/t)`.
pub fn check_convolution_bound(
    alpha: f64,
    a: f64,
    b: f64,
    samples: &[(f64, [f64; 3], [f64; 3])],
    band_ceiling: f64,
) -> Result<BoundReport> {
    if !(alpha > 2.0) {
        return Err(domain(format!("bound needs alpha > 2, got {alpha}")));
    }
    if !(a > 0.0 && a < b) {
        return Err(domain(format!("bound needs 0 < a < b, got a = {a}, b = {b}")));
    }
    if samples.iter().any(|s| !(s.0 > 0.0)) {
        return Err(domain("sample times must be positive"));
    }
    let rows = samples
        .par_iter()
        .map(|(t, x, y)| {
            let dist_sq: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            let lhs = convolution_lhs(alpha, a, b, *t, x, y);
            let rhs = t.powf(-1.5) * (-a * dist_sq / t).exp();
            BoundRow {
                time: *t,
                x_norm: crate::potentials::norm(x),
                y_norm: crate::potentials::norm(y),
                dist: dist_sq.sqrt(),
                lhs,
                rhs,
                ratio: lhs / rhs,
            }
        })
        .collect();
    Ok(BoundReport::from_rows(rows, band_ceiling))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Sign;
    use approx::assert_relative_eq;

    fn small_grid(dim: usize, t_max: f64) -> SpaceTimeGrid {
        SpaceTimeGrid::new(&DuhamelConfig {
            dim,
            t_max,
            n_time: 16,
            n_space: 32,
            ..DuhamelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn gaussian_means_match_closed_forms() {
        let rule = Rule::new(16);
        // E|Z|² = μ² + dσ²
        for dim in [1, 3] {
            let v = radial_gaussian_mean(&rule, 1.3, 0.7, dim, |r| r * r);
            assert_relative_eq!(v, 1.69 + dim as f64 * 0.49, max_relative = 1e-10);
            let v0 = radial_gaussian_mean(&rule, 0.0, 0.7, dim, |r| r * r);
            assert_relative_eq!(v0, dim as f64 * 0.49, max_relative = 1e-10);
        }
        assert_relative_eq!(radial_gaussian_mean(&rule, 2.0, 0.0, 3, |r| r), 2.0);
    }

    #[test]
    fn constant_potential_factorial_terms() {
        let c = 0.4;
        let pot = PotentialSpec::constant(-c, 3);
        let grid = small_grid(3, 2.0);
        let mut term = DuhamelTerm::base(&grid);
        let mut factorial = 1.0;
        for n in 1..=3 {
            term = duhamel_term(&pot, n, &grid, &term).unwrap();
            factorial *= n as f64;
            for (i, &t) in grid.times().iter().enumerate().step_by(5) {
                let j = 7;
                let expected = (c * t).powi(n as i32) / factorial;
                let got = term.ratio[i * grid.width() + j];
                assert!((got - expected).abs() <= 1e-3 * expected.max(1e-12), "n={n} t={t} {got} {expected}");
                let p = term.kernel(&grid, i, j);
                if t > 0.0 {
                    let qv = q_sq(t, grid.coords()[j].powi(2), 3);
                    assert_relative_eq!(p, expected * qv, max_relative = 1e-3);
                }
            }
        }
    }

    #[test]
    fn constant_potential_sum_is_exponential() {
        let pot = PotentialSpec::constant(-0.2, 1);
        let grid = SpaceTimeGrid::new(&DuhamelConfig {
            dim: 1,
            t_max: 1.0,
            n_time: 16,
            n_space: 32,
            target: 0.5,
            ..DuhamelConfig::default()
        })
        .unwrap();
        let series = duhamel_sum(&pot, &grid, 30, 1e-12).unwrap();
        assert!(series.converged && !series.diverged);
        assert_relative_eq!(series.ratio_at(&grid, 1.0, 0.0), 0.2f64.exp(), max_relative = 1e-3);
    }

    #[test]
    fn terms_positive_and_partial_sums_monotone() {
        let pot = PotentialSpec::power_decay(Sign::Negative, 3.0, 0.5, 3).unwrap();
        let grid = small_grid(3, 4.0);
        let series = duhamel_sum(&pot, &grid, 6, 1e-10).unwrap();
        for term in &series.terms {
            let lo = term.ratio.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(lo >= 0.0, "n={} min={lo} sup={}", term.n, term.sup);
        }
        for idx in (0..series.total.len()).step_by(37) {
            for n in 1..series.terms.len() {
                assert!(series.partial_sum(n, idx) >= series.partial_sum(n - 1, idx));
            }
        }
    }

    #[test]
    fn first_term_matches_direct_space_time_quadrature() {
        // Unnormalized form ∫₀ᵗ ∫ q(t-s,0,z) K(1+|z|)^{-3} q(s,z,0) dz ds with
        // the Gaussian singularities handled by the substitution r = √(s(t-s)/t)·u.
        let (k, t) = (0.05, 1.0);
        let pot = PotentialSpec::power_decay(Sign::Negative, 3.0, k, 3).unwrap();
        let grid = SpaceTimeGrid::new(&DuhamelConfig {
            dim: 3,
            t_max: t,
            n_time: 8,
            n_space: 24,
            ..DuhamelConfig::default()
        })
        .unwrap();
        let h1 = duhamel_term(&pot, 1, &grid, &DuhamelTerm::base(&grid)).unwrap();
        let rule = Rule::new(40);
        let direct = rule.composite(0.0, 1.0, 8, |v| {
            // s = t·v² near 0 and s = t(1 - w²) mirrored: use the symmetric map s = t·sin²(πv/2)
            let s = t * (0.5 * std::f64::consts::PI * v).sin().powi(2);
            let ds = t * std::f64::consts::PI * (0.5 * std::f64::consts::PI * v).sin() * (0.5 * std::f64::consts::PI * v).cos();
            let scale = (s * (t - s) / t).sqrt();
            let inner = rule.composite(0.0, 12.0, 6, |u| {
                let r = scale * u;
                let jac = 4.0 * std::f64::consts::PI * r * r * scale;
                q_sq(t - s, r * r, 3) * k * (1.0 + r).powi(-3) * q_sq(s, r * r, 3) * jac
            });
            inner * ds
        }) / q_sq(t, 0.0, 3);
        assert_relative_eq!(h1.ratio_at(&grid, t, 0.0), direct, max_relative = 1e-6);
    }

    #[test]
    fn strong_coupling_trips_divergence() {
        let pot = PotentialSpec::power_decay(Sign::Negative, 3.0, 5.0, 3).unwrap();
        let grid = small_grid(3, 10.0);
        let series = duhamel_sum(&pot, &grid, 10, 1e-8).unwrap();
        assert!(series.diverged, "{:?}", series.ratios);
    }

    #[test]
    fn positive_potential_is_unsupported() {
        let pot = PotentialSpec::power_decay(Sign::Positive, 3.0, 1.0, 3).unwrap();
        let grid = small_grid(3, 1.0);
        assert!(matches!(duhamel_sum(&pot, &grid, 3, 1e-6), Err(Error::Unsupported(_))));
    }

    #[test]
    fn single_gaussian_bound_examples() {
        // x = 0, s = 1, d = α = 3: right side 1 + log 2, left side by quadrature
        let lhs = equ1_lhs(3.0, 3, 1.0, 0.0);
        let rule = Rule::new(40);
        let direct = rule.composite(0.0, 12.0, 8, |r| 4.0 * std::f64::consts::PI * r * r * (1.0 + r).powi(-3) * (-r * r).exp());
        assert_relative_eq!(lhs, direct, max_relative = 1e-8);
        assert_relative_eq!(equ1_rhs(3.0, 3, 1.0, 0.0), 1.0 + 2f64.ln());
        // s → 0 with x fixed: π^{d/2}(1+|x|)^{-α}
        let small = equ1_lhs(3.0, 3, 1e-8, 2.0);
        assert_relative_eq!(small, std::f64::consts::PI.powf(1.5) / 27.0, max_relative = 1e-3);
    }

    #[test]
    fn single_gaussian_constant_stable_across_switch() {
        for x in [1.0f64, 5.0, 20.0] {
            let edge = (1.0 + x).powi(2);
            let below = equ1_lhs(3.0, 3, 0.9 * edge, x) / equ1_rhs(3.0, 3, 0.9 * edge, x);
            let above = equ1_lhs(3.0, 3, 1.1 * edge, x) / equ1_rhs(3.0, 3, 1.1 * edge, x);
            assert!(below / above < 2.0 && above / below < 2.0, "{x}: {below} {above}");
        }
    }

    #[test]
    fn convolution_degenerate_and_direct() {
        // x = y = 0: compare with brute-force radial × time quadrature of the
        // original double integral (t-s)^{-3/2} e^{-b r²/(t-s)} (1+r)^{-α} s^{-3/2} e^{-a r²/s}.
        let (alpha, a, b, t) = (3.0, 0.25, 0.5, 2.0);
        let lhs = convolution_lhs(alpha, a, b, t, &[0.0; 3], &[0.0; 3]);
        let rule = Rule::new(40);
        let direct = rule.composite(0.0, 1.0, 8, |v| {
            let half = 0.5 * std::f64::consts::PI;
            let s = t * (half * v).sin().powi(2);
            let ds = t * 2.0 * half * (half * v).sin() * (half * v).cos();
            let scale = (s * (t - s) / t).sqrt();
            let inner = rule.composite(0.0, 15.0, 6, |u| {
                let r = scale * u;
                4.0 * std::f64::consts::PI * r * r * scale
                    * (t - s).powf(-1.5) * (-b * r * r / (t - s)).exp()
                    * (1.0 + r).powf(-alpha)
                    * s.powf(-1.5) * (-a * r * r / s).exp()
            });
            inner * ds
        });
        assert_relative_eq!(lhs, direct, max_relative = 1e-6);
        let report = check_convolution_bound(alpha, a, b, &[(t, [0.0; 3], [0.0; 3])], 10.0).unwrap();
        assert_relative_eq!(report.rows[0].rhs, t.powf(-1.5));
    }

    #[test]
    fn bound_checks_reject_bad_inputs() {
        assert!(check_equ1(1.5, 3, &[(1.0, 0.0)], 10.0).is_err());
        assert!(check_convolution_bound(3.0, 0.5, 0.25, &[], 10.0).is_err());
    }
}
