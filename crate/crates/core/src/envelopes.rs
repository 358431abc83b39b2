//! Closed-form two-sided bounds with explicit constant slots.
//!
//! The bare weight functions take their constants as arguments. The
//! [`Envelope`] families wrap them in log form with named argument constants
//! so that `verify` can search those constants.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::freekernel::{sq_dist, t0};
use crate::potentials::{norm, Sign};

/// Multiplicative and argument constants `c₁..c₄` of `c₁f(c₂·) ≤ g ≤ c₃f(c₄·)`.
///
/// Envelopes may carry several named argument constants; the fitter shares
/// them between the two sides, so `arg_lower == arg_upper` for fitted params.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeParams {
    pub mult_lower: f64,
    pub arg_lower: Vec<ArgConstant>,
    pub mult_upper: f64,
    pub arg_upper: Vec<ArgConstant>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArgConstant {
    pub name: String,
    pub value: f64,
}

impl EnvelopeParams {
    pub fn new(
        mult_lower: f64,
        arg_lower: Vec<ArgConstant>,
        mult_upper: f64,
        arg_upper: Vec<ArgConstant>,
    ) -> Result<Self> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(mult_lower)
            || !positive(mult_upper)
            || !arg_lower.iter().chain(&arg_upper).all(|a| positive(a.value))
        {
            return Err(domain("envelope constants must be positive and finite"));
        }
        Ok(Self {
            mult_lower,
            arg_lower,
            mult_upper,
            arg_upper,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    DiagonalLocal,
    OffdiagGaussian,
    LargeTimeGlobal,
    GrowthLocal,
    GrowthSpatial,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::DiagonalLocal => "diagonal_local",
            RegimeLabel::OffdiagGaussian => "offdiag_gaussian",
            RegimeLabel::LargeTimeGlobal => "large_time_global",
            RegimeLabel::GrowthLocal => "growth_local",
            RegimeLabel::GrowthSpatial => "growth_spatial",
        }
    }
}

/// Which term of the positive-case weight attains the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositiveBranch {
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("time must be positive, got {t}")))
    }
}

fn check_long_range(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 2.0 {
        Ok(())
    } else {
        Err(domain(format!("alpha must lie in (0, 2), got {alpha}")))
    }
}

/// Large-time stretched exponent `(2-α)/(2+α)`.
pub fn stretched_exponent(alpha: f64) -> f64 {
    (2.0 - alpha) / (2.0 + alpha)
}

/// Local term `t/(1+m)^α` and global term `t^{(2-α)/(2+α)}` of the positive weight.
pub fn positive_branches(t: f64, max_norm: f64, alpha: f64) -> (f64, f64) {
    (
        t / (1.0 + max_norm).powf(alpha),
        t.powf(stretched_exponent(alpha)),
    )
}

pub fn positive_branch(t: f64, max_norm: f64, alpha: f64) -> PositiveBranch {
    let (local, global) = positive_branches(t, max_norm, alpha);
    if local <= global {
        PositiveBranch::Local
    } else {
        PositiveBranch::Global
    }
}

/// `exp(-min(t/(1+max(|x|,|y|))^α, t^{(2-α)/(2+α)}))`.
pub fn weight_pos(t: f64, x: &[f64], y: &[f64], alpha: f64) -> Result<f64> {
    check_time(t)?;
    check_long_range(alpha)?;
    let (local, global) = positive_branches(t, norm(x).max(norm(y)), alpha);
    Ok((-local.min(global)).exp())
}

/// Growth term `C t/(1+m)^α` and spatial term `C t - C'(1+m)²/t` of the negative weight.
pub fn negative_branches(t: f64, min_norm: f64, alpha: f64, growth_c: f64, spatial_c: f64) -> (f64, f64) {
    let base = 1.0 + min_norm;
    (
        growth_c * t / base.powf(alpha),
        growth_c * t - spatial_c * base * base / t,
    )
}

/// `exp(max(C t/(1+m)^α, C t - C'(1+m)²/t))` with `m = min(|x|,|y|)`.
pub fn weight_neg(
    t: f64,
    x: &[f64],
    y: &[f64],
    alpha: f64,
    growth_c: f64,
    spatial_c: f64,
) -> Result<f64> {
    check_time(t)?;
    let (growth, spatial) = negative_branches(t, norm(x).min(norm(y)), alpha, growth_c, spatial_c);
    Ok(growth.max(spatial).exp())
}

/// `C₁[exp(-C₂ t/(1+|x|)^α) + exp(-C₂ t^{(2-α)/(2+α)})]`.
pub fn survival_bound_pos(t: f64, x: &[f64], alpha: f64, c1: f64, c2: f64) -> Result<f64> {
    check_time(t)?;
    check_long_range(alpha)?;
    let (local, global) = positive_branches(t, norm(x), alpha);
    Ok(c1 * ((-c2 * local).exp() + (-c2 * global).exp()))
}

/// Local term `t/(1+|x|)^α` and growth term `t - (1+|x|²)/t` of the negative survival bound.
pub fn survival_neg_branches(t: f64, x_norm: f64, alpha: f64) -> (f64, f64) {
    (
        t / (1.0 + x_norm).powf(alpha),
        t - (1.0 + x_norm * x_norm) / t,
    )
}

/// `C₁ exp(C₂ max{t/(1+|x|)^α, t - (1+|x|²)/t})`.
pub fn survival_bound_neg(t: f64, x: &[f64], alpha: f64, c1: f64, c2: f64) -> Result<f64> {
    check_time(t)?;
    if !(alpha > 0.0) {
        return Err(domain("alpha must be positive"));
    }
    let (local, growth) = survival_neg_branches(t, norm(x), alpha);
    Ok(c1 * (c2 * local.max(growth)).exp())
}

/// The `d = 2` factor `1 + log₊((1+m)^{α/2}/|x-y|)`.
pub fn green_log_factor(dist: f64, max_norm: f64, alpha: f64) -> f64 {
    1.0 + ((1.0 + max_norm).powf(alpha / 2.0) / dist).ln().max(0.0)
}

/// `|x-y|^{-(d-2)} exp(-|x-y|/(1+m)^{α/2})`, times the log factor when `d = 2`.
pub fn green_envelope(x: &[f64], y: &[f64], alpha: f64) -> Result<f64> {
    check_long_range(alpha)?;
    let d = x.len();
    if d < 2 || y.len() != d {
        return Err(domain("Green envelope needs matching points in dimension d >= 2"));
    }
    let dist = sq_dist(x, y).sqrt();
    if dist == 0.0 {
        return Err(Error::Singular);
    }
    Ok(green_envelope_scalar(dist, norm(x).max(norm(y)), alpha, d))
}

/// The Green envelope as a function of `|x-y|` and `max(|x|,|y|)`.
pub fn green_envelope_scalar(dist: f64, max_norm: f64, alpha: f64, dim: usize) -> f64 {
    let mut value = dist.powi(2 - dim as i32) * (-dist / (1.0 + max_norm).powf(alpha / 2.0)).exp();
    if dim == 2 {
        value *= green_log_factor(dist, max_norm, alpha);
    }
    value
}

/// Older weights: lower `exp(-C t/(1+m)^α)`, upper `exp(-C (t/(1+m)^α)^{(2-α)/4})`.
pub fn weight_zhang(t: f64, x: &[f64], y: &[f64], alpha: f64, side: Side, c: f64) -> Result<f64> {
    check_time(t)?;
    check_long_range(alpha)?;
    let u = t / (1.0 + norm(x).max(norm(y))).powf(alpha);
    Ok(match side {
        Side::Lower => (-c * u).exp(),
        Side::Upper => (-c * u.powf((2.0 - alpha) / 4.0)).exp(),
    })
}

/// Critical-case polynomial weight `max(t/(1+|x|)², 1)^{-θ}` (display only).
pub fn weight_critical(t: f64, x: &[f64], theta: f64) -> f64 {
    (t / (1.0 + norm(x)).powi(2)).max(1.0).powf(-theta)
}

/// Envelope branch attaining the min (positive case) or max (negative case).
///
/// Off-diagonal Gaussian dominance is the cut `t < |x-y| (1+m)^{α/2}`, i.e.
/// `|x-y|²/t` exceeds the local potential exponent `t/(1+m)^α`.
pub fn regime(t: f64, x: &[f64], y: &[f64], alpha: f64, case: Sign) -> Result<RegimeLabel> {
    check_time(t)?;
    let dist = sq_dist(x, y).sqrt();
    match case {
        Sign::Positive => {
            let max_norm = norm(x).max(norm(y));
            if t > t0(max_norm, alpha) {
                Ok(RegimeLabel::LargeTimeGlobal)
            } else if t < dist * (1.0 + max_norm).powf(alpha / 2.0) {
                Ok(RegimeLabel::OffdiagGaussian)
            } else {
                Ok(RegimeLabel::DiagonalLocal)
            }
        }
        Sign::Negative => {
            let min_norm = norm(x).min(norm(y));
            if t < dist * (1.0 + min_norm).powf(alpha / 2.0) {
                return Ok(RegimeLabel::OffdiagGaussian);
            }
            let (growth, spatial) = negative_branches(t, min_norm, alpha, 1.0, 1.0);
            Ok(if growth >= spatial {
                RegimeLabel::GrowthLocal
            } else {
                RegimeLabel::GrowthSpatial
            })
        }
    }
}

/// A sample location `(t, x, y)`; Green-function samples ignore `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SamplePoint {
    pub fn new(t: f64, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { t, x, y }
    }

    pub fn x_norm(&self) -> f64 {
        norm(&self.x)
    }

    pub fn y_norm(&self) -> f64 {
        norm(&self.y)
    }

    pub fn dist(&self) -> f64 {
        sq_dist(&self.x, &self.y).sqrt()
    }
}

/// A finite set of sample locations in dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub dim: usize,
    pub points: Vec<SamplePoint>,
}

impl SampleGrid {
    pub fn new(dim: usize, points: Vec<SamplePoint>) -> Result<Self> {
        if points.iter().any(|p| p.x.len() != dim || p.y.len() != dim) {
            return Err(domain("all grid points must have the grid dimension"));
        }
        Ok(Self { dim, points })
    }
}

/// A closed-form bound family `f(point; a₁..a_k)` with named argument constants.
pub trait Envelope: Sync {
    fn name(&self) -> &str;

    /// Names of the argument constants, in the order `log_eval` expects them.
    fn slots(&self) -> &[&'static str];

    /// `log f(point; args)`.
    fn log_eval(&self, point: &SamplePoint, args: &[f64]) -> f64;

    fn regime(&self, point: &SamplePoint) -> RegimeLabel;
}

fn log_gauss(t: f64, dist_sq: f64, dim: usize, gauss: f64) -> f64 {
    -0.5 * dim as f64 * (2.0 * PI * t).ln() - gauss * dist_sq / (2.0 * t)
}

/// `q(t,x,y)·weight_pos` with a Gaussian constant and one weight constant
/// scaling both terms of the minimum.
#[derive(Debug, Clone)]
pub struct PositiveKernelEnvelope {
    pub alpha: f64,
    pub dim: usize,
}

impl Envelope for PositiveKernelEnvelope {
    fn name(&self) -> &str {
        "q_weight_pos"
    }

    fn slots(&self) -> &[&'static str] {
        &["gauss", "weight"]
    }

    fn log_eval(&self, p: &SamplePoint, args: &[f64]) -> f64 {
        let (local, global) = positive_branches(p.t, p.x_norm().max(p.y_norm()), self.alpha);
        log_gauss(p.t, sq_dist(&p.x, &p.y), self.dim, args[0]) - args[1] * local.min(global)
    }

    fn regime(&self, p: &SamplePoint) -> RegimeLabel {
        regime(p.t, &p.x, &p.y, self.alpha, Sign::Positive).unwrap_or(RegimeLabel::DiagonalLocal)
    }
}

/// `q(t,x,y)·weight_neg` with Gaussian, growth and spatial constants.
#[derive(Debug, Clone)]
pub struct NegativeKernelEnvelope {
    pub alpha: f64,
    pub dim: usize,
}

impl Envelope for NegativeKernelEnvelope {
    fn name(&self) -> &str {
        "q_weight_neg"
    }

    fn slots(&self) -> &[&'static str] {
        &["gauss", "growth", "spatial"]
    }

    fn log_eval(&self, p: &SamplePoint, args: &[f64]) -> f64 {
        let min_norm = p.x_norm().min(p.y_norm());
        let (growth, spatial) = negative_branches(p.t, min_norm, self.alpha, args[1], args[2]);
        log_gauss(p.t, sq_dist(&p.x, &p.y), self.dim, args[0]) + growth.max(spatial)
    }

    fn regime(&self, p: &SamplePoint) -> RegimeLabel {
        regime(p.t, &p.x, &p.y, self.alpha, Sign::Negative).unwrap_or(RegimeLabel::GrowthLocal)
    }
}

/// Plain Gaussian `t^{-d/2} exp(-a|x-y|²/t)`.
#[derive(Debug, Clone)]
pub struct GaussianEnvelope {
    pub dim: usize,
}

impl Envelope for GaussianEnvelope {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn slots(&self) -> &[&'static str] {
        &["gauss"]
    }

    fn log_eval(&self, p: &SamplePoint, args: &[f64]) -> f64 {
        -0.5 * self.dim as f64 * p.t.ln() - args[0] * sq_dist(&p.x, &p.y) / p.t
    }

    fn regime(&self, _p: &SamplePoint) -> RegimeLabel {
        RegimeLabel::OffdiagGaussian
    }
}

/// Green envelope with the decay constant `a` in `exp(-a|x-y|/(1+m)^{α/2})`.
#[derive(Debug, Clone)]
pub struct GreenEnvelope {
    pub alpha: f64,
}

impl Envelope for GreenEnvelope {
    fn name(&self) -> &str {
        "green"
    }

    fn slots(&self) -> &[&'static str] {
        &["decay"]
    }

    fn log_eval(&self, p: &SamplePoint, args: &[f64]) -> f64 {
        let d = p.x.len() as f64;
        let dist = p.dist();
        let max_norm = p.x_norm().max(p.y_norm());
        let mut value = -(d - 2.0) * dist.ln() - args[0] * dist / (1.0 + max_norm).powf(self.alpha / 2.0);
        if p.x.len() == 2 {
            value += green_log_factor(dist, max_norm, self.alpha).ln();
        }
        value
    }

    fn regime(&self, p: &SamplePoint) -> RegimeLabel {
        let max_norm = p.x_norm().max(p.y_norm());
        if p.dist() > (1.0 + max_norm).powf(self.alpha / 2.0) {
            RegimeLabel::OffdiagGaussian
        } else {
            RegimeLabel::DiagonalLocal
        }
    }
}

/// Ball Dirichlet kernel form `t^{-d/2} exp(-c(|y-z|²/t + t/R²))`.
#[derive(Debug, Clone)]
pub struct DirichletBallEnvelope {
    pub dim: usize,
    pub radius: f64,
}

impl Envelope for DirichletBallEnvelope {
    fn name(&self) -> &str {
        "dirichlet_ball"
    }

    fn slots(&self) -> &[&'static str] {
        &["scale"]
    }

    fn log_eval(&self, p: &SamplePoint, args: &[f64]) -> f64 {
        let r2 = self.radius * self.radius;
        -0.5 * self.dim as f64 * p.t.ln() - args[0] * (sq_dist(&p.x, &p.y) / p.t + p.t / r2)
    }

    fn regime(&self, p: &SamplePoint) -> RegimeLabel {
        if p.t > self.radius * self.radius {
            RegimeLabel::LargeTimeGlobal
        } else if sq_dist(&p.x, &p.y) > p.t {
            RegimeLabel::OffdiagGaussian
        } else {
            RegimeLabel::DiagonalLocal
        }
    }
}

/// One side of the older bound, `q`-type Gaussian times the Zhang weight.
#[derive(Debug, Clone)]
pub struct ZhangEnvelope {
    pub alpha: f64,
    pub dim: usize,
    pub side: Side,
}

impl Envelope for ZhangEnvelope {
    fn name(&self) -> &str {
        match self.side {
            Side::Lower => "zhang_lower",
            Side::Upper => "zhang_upper",
        }
    }

    fn slots(&self) -> &[&'static str] {
        &["gauss", "weight"]
    }

    fn log_eval(&self, p: &SamplePoint, args: &[f64]) -> f64 {
        let u = p.t / (1.0 + p.x_norm().max(p.y_norm())).powf(self.alpha);
        let exponent = match self.side {
            Side::Lower => u,
            Side::Upper => u.powf((2.0 - self.alpha) / 4.0),
        };
        log_gauss(p.t, sq_dist(&p.x, &p.y), self.dim, args[0]) - args[1] * exponent
    }

    fn regime(&self, p: &SamplePoint) -> RegimeLabel {
        regime(p.t, &p.x, &p.y, self.alpha, Sign::Positive).unwrap_or(RegimeLabel::DiagonalLocal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PathRng;
    use approx::assert_relative_eq;

    fn radial(r: f64) -> Vec<f64> {
        vec![r, 0.0]
    }

    #[test]
    fn positive_weight_examples() {
        assert_eq!(stretched_exponent(1.0), 1.0 / 3.0);
        for &t in &[0.01, 0.3, 1.0] {
            let w = weight_pos(t, &[0.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
            assert_relative_eq!(w, (-t).exp(), max_relative = 1e-15);
        }
        let (local, global) = positive_branches(27.0, 8.0, 1.0);
        assert_relative_eq!(local, 3.0, max_relative = 1e-15);
        assert_relative_eq!(global, 3.0, max_relative = 1e-15);
        assert!(weight_pos(1.0, &[0.0], &[0.0], 2.0).is_err());
        assert!(weight_pos(1.0, &[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn branches_meet_at_transition_time() {
        let mut rng = PathRng::new(40, 0);
        for _ in 0..100 {
            let m = 50.0 * rng.uniform();
            let alpha = 0.05 + 1.9 * rng.uniform();
            let (local, global) = positive_branches(t0(m, alpha), m, alpha);
            assert!((local - global).abs() <= 1e-12 * global, "m={m} alpha={alpha}");
        }
    }

    #[test]
    fn positive_weight_monotonicity() {
        let ts: Vec<f64> = (0..60).map(|i| 0.05 * 1.2f64.powi(i)).collect();
        for &r in &[0.0, 1.0, 7.5, 40.0] {
            let ws: Vec<f64> = ts.iter().map(|&t| weight_pos(t, &radial(r), &radial(0.0), 1.3).unwrap()).collect();
            assert!(ws.iter().all(|&w| w > 0.0 && w <= 1.0));
            assert!(ws.windows(2).all(|w| w[1] <= w[0]));
        }
        for &t in &[0.5, 5.0, 500.0] {
            let ws: Vec<f64> = (0..50).map(|i| weight_pos(t, &radial(i as f64), &radial(0.0), 0.5).unwrap()).collect();
            assert!(ws.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn negative_weight_examples() {
        for &t in &[0.5, 3.0, 12.0] {
            let w = weight_neg(t, &[0.0], &[0.0], 1.0, 1.0, 2.0).unwrap();
            assert_relative_eq!(w, t.exp(), max_relative = 1e-14);
        }
        let far = weight_neg(2.0, &radial(1e6), &radial(1e6), 1.0, 1.0, 1.0).unwrap();
        assert!((far - 1.0).abs() < 1e-5);
    }

    #[test]
    fn negative_branch_crossover_root() {
        // growth and spatial terms meet where g t/(1+m)^α = g t - s(1+m)²/t
        let (t, alpha, g, s) = (6.0, 1.0, 1.0, 0.5);
        let gap = |m: f64| {
            let (a, b) = negative_branches(t, m, alpha, g, s);
            a - b
        };
        let (mut lo, mut hi) = (1.0, 50.0);
        assert!(gap(lo) < 0.0 && gap(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (a, b) = negative_branches(t, lo, alpha, g, s);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn negative_weight_grows_in_time() {
        for &r in &[0.0, 2.0, 10.0] {
            let ws: Vec<f64> = (1..80)
                .map(|i| weight_neg(0.25 * i as f64, &radial(r), &radial(r + 1.0), 1.0, 0.8, 1.5).unwrap())
                .collect();
            assert!(ws.windows(2).all(|w| w[1] >= w[0]));
        }
        // growth term dominates near the origin, so the weight is at least 1
        assert!(weight_neg(4.0, &radial(0.5), &radial(0.5), 1.0, 1.0, 1.0).unwrap() >= 1.0);
    }

    #[test]
    fn survival_bounds() {
        let small = survival_bound_pos(1e-30, &[0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(small, 2.0, max_relative = 1e-9);
        let b = survival_bound_pos(1.0, &[0.0, 0.0], 1.0, 0.7, 1.0).unwrap();
        assert_relative_eq!(b, 0.7 * 2.0 * (-1.0f64).exp(), max_relative = 1e-15);
        let n = survival_bound_neg(2.0, &[0.0], 1.0, 1.5, 1.0).unwrap();
        assert_relative_eq!(n, 1.5 * 2.0f64.exp(), max_relative = 1e-15);
        let tiny = survival_bound_neg(1e-9, &[0.0], 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(tiny, 1.0, max_relative = 1e-8);
    }

    #[test]
    fn survival_branch_selection_matches_weight() {
        let mut rng = PathRng::new(41, 0);
        for _ in 0..100 {
            let r = 30.0 * rng.uniform();
            let t = 200.0 * rng.uniform() + 1e-3;
            let alpha = 0.1 + 1.8 * rng.uniform();
            let x = radial(r);
            let local_term = (-positive_branches(t, r, alpha).0).exp();
            let global_term = (-positive_branches(t, r, alpha).1).exp();
            let first_dominates = local_term >= global_term;
            assert_eq!(first_dominates, t <= t0(r, alpha) * (1.0 + 1e-12));
            let w = weight_pos(t, &x, &x, alpha).unwrap();
            assert_relative_eq!(w, local_term.max(global_term), max_relative = 1e-12);
        }
    }

    #[test]
    fn survival_neg_branch_scan() {
        // the growth term wins exactly when t² (1 - (1+r)^{-α}) > 1 + r²
        for i in 0..50 {
            for j in 0..40 {
                let (t, r) = (0.5 * (i + 1) as f64, 0.5 * j as f64);
                let (local, growth) = survival_neg_branches(t, r, 1.0);
                let predicted = t * t * (1.0 - 1.0 / (1.0 + r)) > 1.0 + r * r;
                assert_eq!(growth > local, predicted);
            }
        }
    }

    #[test]
    fn green_envelope_examples() {
        let v = green_envelope(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 1.0);
        // max(|x|,|y|) = 1 here, so the scale is sqrt(2)
        assert_relative_eq!(v.unwrap(), (-1.0 / 2f64.sqrt()).exp(), max_relative = 1e-15);
        let v = green_envelope(&[0.0, 0.0, 0.5], &[0.0, 0.0, -0.5], 1.0).unwrap();
        assert_relative_eq!(v, (-1.0 / 1.5f64.sqrt()).exp(), max_relative = 1e-15);
        assert_relative_eq!(green_log_factor(1.0, 0.0, 1.0), 1.0);
        assert_relative_eq!(green_log_factor(0.3, 8.0, 1.0), 1.0 + 10f64.ln(), max_relative = 1e-14);
        assert_eq!(green_log_factor(5.0, 8.0, 1.0), 1.0);
        assert!(matches!(green_envelope(&[1.0, 1.0], &[1.0, 1.0], 1.0), Err(Error::Singular)));
    }

    #[test]
    fn green_formula_in_scalar_form() {
        assert_relative_eq!(green_envelope_scalar(1.0, 0.0, 1.0, 3), (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(green_envelope_scalar(2.0, 3.0, 1.0, 3), 0.5 * (-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn green_log_factor_is_continuous() {
        let m: f64 = 8.0;
        let cut = (1.0 + m).powf(0.5);
        let below = green_log_factor(cut * (1.0 - 1e-12), m, 1.0);
        let above = green_log_factor(cut * (1.0 + 1e-12), m, 1.0);
        assert!((below - above).abs() < 1e-10 && below >= 1.0);
    }

    #[test]
    fn zhang_weights_bracket_new_weight() {
        let alpha = 1.0;
        // the three weights coincide at t/(1+m)^α = 1, which calibrates C = 1
        let at = |t: f64, m: f64, side| weight_zhang(t, &radial(m), &radial(0.0), alpha, side, 1.0).unwrap();
        let pos = |t: f64, m: f64| weight_pos(t, &radial(m), &radial(0.0), alpha).unwrap();
        assert_relative_eq!(at(3.0, 2.0, Side::Lower), pos(3.0, 2.0), max_relative = 1e-15);
        assert_relative_eq!(at(3.0, 2.0, Side::Upper), pos(3.0, 2.0), max_relative = 1e-15);
        let mut checked = 0;
        for i in 0..40 {
            for j in 0..25 {
                let m = 2.0 * j as f64;
                let t = (1.0 + m) * 1.3f64.powi(i);
                let w = pos(t, m);
                assert!(at(t, m, Side::Lower) <= w * (1.0 + 1e-12));
                assert!(w <= at(t, m, Side::Upper) * (1.0 + 1e-12));
                checked += 1;
            }
        }
        assert_eq!(checked, 1000);
        // at t = 10⁴ on the diagonal the older exponent t^{1/4} is far below t^{1/3}
        let older = at(1e4, 0.0, Side::Upper);
        assert_relative_eq!(older, (-10.0f64).exp(), max_relative = 1e-12);
        assert!(older > pos(1e4, 0.0) * 1e5);
    }

    #[test]
    fn regime_labels() {
        let origin = [0.0, 0.0];
        assert_eq!(regime(2.0, &origin, &origin, 1.0, Sign::Positive).unwrap(), RegimeLabel::LargeTimeGlobal);
        assert_eq!(regime(0.5, &origin, &origin, 1.0, Sign::Positive).unwrap(), RegimeLabel::DiagonalLocal);
        assert_eq!(
            regime(1.0, &radial(8.0), &radial(-8.0), 1.0, Sign::Positive).unwrap(),
            RegimeLabel::OffdiagGaussian
        );
        assert_eq!(regime(30.0, &radial(8.0), &radial(8.0), 1.0, Sign::Positive).unwrap(), RegimeLabel::LargeTimeGlobal);
        assert_eq!(regime(20.0, &radial(8.0), &radial(8.0), 1.0, Sign::Positive).unwrap(), RegimeLabel::DiagonalLocal);
        assert_eq!(regime(5.0, &origin, &origin, 1.0, Sign::Negative).unwrap(), RegimeLabel::GrowthLocal);
        assert_eq!(regime(5.0, &radial(10.0), &radial(10.0), 1.0, Sign::Negative).unwrap(), RegimeLabel::GrowthLocal);
        assert_eq!(regime(40.0, &radial(10.0), &radial(10.0), 1.0, Sign::Negative).unwrap(), RegimeLabel::GrowthSpatial);
    }

    #[test]
    fn envelope_families_agree_with_bare_weights() {
        let p = SamplePoint::new(7.0, radial(3.0), vec![-1.0, 2.0]);
        let q = crate::freekernel::q(p.t, &p.x, &p.y).unwrap();
        let pos = PositiveKernelEnvelope { alpha: 1.0, dim: 2 };
        let expect = q * weight_pos(p.t, &p.x, &p.y, 1.0).unwrap();
        assert_relative_eq!(pos.log_eval(&p, &[1.0, 1.0]).exp(), expect, max_relative = 1e-13);
        let neg = NegativeKernelEnvelope { alpha: 1.0, dim: 2 };
        let expect = q * weight_neg(p.t, &p.x, &p.y, 1.0, 0.7, 1.2).unwrap();
        assert_relative_eq!(neg.log_eval(&p, &[1.0, 0.7, 1.2]).exp(), expect, max_relative = 1e-13);
        let green = GreenEnvelope { alpha: 1.0 };
        let expect = green_envelope(&p.x, &p.y, 1.0).unwrap();
        assert_relative_eq!(green.log_eval(&p, &[1.0]).exp(), expect, max_relative = 1e-13);
    }

    #[test]
    fn params_must_be_positive() {
        let arg = |v| vec![ArgConstant { name: "a".into(), value: v }];
        assert!(EnvelopeParams::new(1.0, arg(1.0), 2.0, arg(1.0)).is_ok());
        assert!(EnvelopeParams::new(0.0, arg(1.0), 2.0, arg(1.0)).is_err());
        assert!(EnvelopeParams::new(1.0, arg(-1.0), 2.0, arg(1.0)).is_err());
    }
}
