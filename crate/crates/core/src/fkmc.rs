//! Feynman–Kac Monte Carlo for `p(t,x,y)`, `T_t^V 1(x)` and `G(x,y)`.
//!
//! The kernel estimator conditions Brownian motion on `B_t = y`:
//! `p(t,x,y) = q(t,x,y) · E[exp(-∫₀ᵗ V(X_s) ds)]` over the bridge `X` from
//! `x` to `y`, which removes any density-estimation error.
//!
//! Paths are grouped into fixed chunks of consecutive path indices. Each chunk
//! is reduced sequentially (Welford, or compensated two-pass when
//! `McConfig::compensated` is set) and the chunk moments are merged in index
//! order, so the floating-point result does not depend on the number of
//! worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::exponential::integral as exp_integral;
use statrs::function::gamma::{gamma, gamma_li, gamma_ui};

use crate::envelopes::stretched_exponent;
use crate::error::{domain, precondition, Error, Result};
use crate::freekernel::{q, sq_dist, walk_bm, walk_bridge, Path};
use crate::potentials::{norm, PotentialKind, PotentialSpec};
use crate::quadrature::Rule;
use crate::rng::{derive_seed, PathRng};

/// Paths per reduction chunk; fixed so that results are thread-count independent.
pub const CHUNK: u64 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    Left,
    /// `V` at the spatial midpoint of each step.
    Midpoint,
    #[default]
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_paths: u64,
    pub n_steps: usize,
    pub seed: u64,
    pub quadrature: Quadrature,
    pub antithetic: bool,
    pub step_halving_check: bool,
    /// Compensated (two-pass Neumaier) reduction inside each chunk.
    pub compensated: bool,
    /// Largest time accepted for negative potentials.
    pub t_cap: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 64,
            seed: 0,
            quadrature: Quadrature::Trapezoid,
            antithetic: false,
            step_halving_check: false,
            compensated: false,
            t_cap: 30.0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(domain("n_paths and n_steps must be at least 1"));
        }
        if !(self.t_cap > 0.0) {
            return Err(domain("t_cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BridgeMonteCarlo,
    FreePathMonteCarlo,
    GreenTimeQuadrature,
    KilledBridgeMonteCarlo,
    ExitDecomposition,
    FiniteDifference,
    DuhamelSeries,
    EigenSeries,
}

/// A numerical value with its statistical and discretization diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelEstimate {
    pub value: f64,
    /// Sample standard deviation over `√n` (zero for deterministic methods).
    pub stderr: f64,
    pub n_paths: u64,
    pub n_steps: usize,
    /// The same estimate at `2·n_steps`, when requested.
    pub bias_probe: Option<f64>,
    pub method: Method,
}

impl KernelEstimate {
    pub fn relative_stderr(&self) -> f64 {
        self.stderr / self.value.abs()
    }
}

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        Moments {
            count,
            mean: self.mean + delta * nb / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
        }
    }

    fn from_values_compensated(values: &[f64]) -> Moments {
        let n = values.len() as f64;
        let mean = neumaier_sum(values.iter().copied()) / n;
        let m2 = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        Moments {
            count: values.len() as u64,
            mean,
            m2,
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m2.max(0.0) / (n - 1.0) / n).sqrt()
    }
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0_f64, 0.0_f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Mean of `sample(scratch, i)` over `i in 0..n`, reduced chunk by chunk in index order.
pub(crate) fn sample_moments<S, I, F>(n: u64, compensated: bool, init: I, sample: F) -> Moments
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, u64) -> f64 + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    let chunks: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut scratch = init();
            let range = c * CHUNK..((c + 1) * CHUNK).min(n);
            if compensated {
                let values: Vec<f64> = range.map(|i| sample(&mut scratch, i)).collect();
                Moments::from_values_compensated(&values)
            } else {
                let mut m = Moments::default();
                for i in range {
                    m.push(sample(&mut scratch, i));
                }
                m
            }
        })
        .collect();
    chunks.into_iter().fold(Moments::default(), Moments::merge)
}

/// Accumulates `∫ V(X_s) ds` while a path is streamed node by node.
pub(crate) struct PathIntegral<'a> {
    pot: &'a PotentialSpec,
    quadrature: Quadrature,
    n_steps: usize,
    sum: f64,
    prev: Vec<f64>,
    mid: Vec<f64>,
}

impl<'a> PathIntegral<'a> {
    pub fn new(pot: &'a PotentialSpec, quadrature: Quadrature, n_steps: usize, dim: usize) -> Self {
        Self {
            pot,
            quadrature,
            n_steps,
            sum: 0.0,
            prev: vec![0.0; dim],
            mid: vec![0.0; dim],
        }
    }

    pub fn reset(&mut self) {
        self.sum = 0.0;
    }

    #[inline]
    fn v(&self, p: &[f64]) -> f64 {
        self.pot.radial_unchecked(norm(p))
    }

    #[inline]
    pub fn visit(&mut self, k: usize, p: &[f64]) {
        match self.quadrature {
            Quadrature::Left => {
                if k < self.n_steps {
                    self.sum += self.v(p);
                }
            }
            Quadrature::Trapezoid => {
                let v = self.v(p);
                self.sum += if k == 0 || k == self.n_steps { 0.5 * v } else { v };
            }
            Quadrature::Midpoint => {
                if k > 0 {
                    for ((m, a), b) in self.mid.iter_mut().zip(&self.prev).zip(p) {
                        *m = 0.5 * (a + b);
                    }
                    self.sum += self.pot.radial_unchecked(norm(&self.mid));
                }
                self.prev.copy_from_slice(p);
            }
        }
    }

    /// `Δ · Σ`, i.e. the quadrature of `s ↦ V(X_s)`.
    pub fn integral(&self, dt: f64) -> f64 {
        dt * self.sum
    }
}

fn out_of_range(pot: &PotentialSpec) -> Error {
    let r_max = match pot.kind() {
        PotentialKind::CustomRadial(p) => p.r_max(),
        _ => f64::INFINITY,
    };
    Error::OutOfRange {
        radius: f64::NAN,
        r_max,
    }
}

/// `exp(-Q)` with `Q` the chosen quadrature of `V` along the path nodes.
pub fn path_weight(pot: &PotentialSpec, path: &Path, quadrature: Quadrature) -> Result<f64> {
    if path.is_empty() {
        return Err(domain("path is empty"));
    }
    if path.len() == 1 {
        return Ok(1.0);
    }
    let n_steps = path.len() - 1;
    let dt = path.times()[n_steps] / n_steps as f64;
    let mut acc = PathIntegral::new(pot, quadrature, n_steps, path.dim());
    for (k, p) in path.points().enumerate() {
        acc.visit(k, p);
    }
    let w = (-acc.integral(dt)).exp();
    if w.is_nan() {
        return Err(out_of_range(pot));
    }
    Ok(w)
}

fn check_time(pot: &PotentialSpec, t: f64, cfg: &McConfig) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("time must be positive, got {t}")));
    }
    if !pot.is_nonnegative() && t > cfg.t_cap {
        return Err(precondition(format!(
            "t = {t} exceeds t_cap = {} for a negative potential",
            cfg.t_cap
        )));
    }
    Ok(())
}

struct Scratch<'a> {
    state: Vec<f64>,
    acc: PathIntegral<'a>,
}

/// Sample count and per-sample path indices under the antithetic setting.
fn sample_count(cfg: &McConfig) -> (u64, u64) {
    if cfg.antithetic {
        let pairs = cfg.n_paths.div_ceil(2);
        (pairs, 2 * pairs)
    } else {
        (cfg.n_paths, cfg.n_paths)
    }
}

/// Mean bridge weight from `x` to `y` over `n_steps` steps.
fn bridge_moments(
    pot: &PotentialSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    n_steps: usize,
    cfg: &McConfig,
) -> Moments {
    let dim = x.len();
    let dt = t / n_steps as f64;
    let (n_samples, _) = sample_count(cfg);
    let one = |s: &mut Scratch, mut rng: PathRng| {
        s.acc.reset();
        let Scratch { state, acc } = s;
        walk_bridge(t, x, y, n_steps, &mut rng, state, |k, p| acc.visit(k, p));
        (-acc.integral(dt)).exp()
    };
    sample_moments(
        n_samples,
        cfg.compensated,
        || Scratch {
            state: vec![0.0; dim],
            acc: PathIntegral::new(pot, cfg.quadrature, n_steps, dim),
        },
        |s, i| {
            if cfg.antithetic {
                let a = one(s, PathRng::new(cfg.seed, i));
                let b = one(s, PathRng::antithetic(cfg.seed, i));
                0.5 * (a + b)
            } else {
                one(s, PathRng::new(cfg.seed, i))
            }
        },
    )
}

fn free_moments(pot: &PotentialSpec, t: f64, x: &[f64], n_steps: usize, cfg: &McConfig) -> Moments {
    let dim = x.len();
    let dt = t / n_steps as f64;
    let (n_samples, _) = sample_count(cfg);
    let one = |s: &mut Scratch, mut rng: PathRng| {
        s.acc.reset();
        let Scratch { state, acc } = s;
        walk_bm(t, x, n_steps, &mut rng, state, |k, p| acc.visit(k, p));
        (-acc.integral(dt)).exp()
    };
    sample_moments(
        n_samples,
        cfg.compensated,
        || Scratch {
            state: vec![0.0; dim],
            acc: PathIntegral::new(pot, cfg.quadrature, n_steps, dim),
        },
        |s, i| {
            if cfg.antithetic {
                let a = one(s, PathRng::new(cfg.seed, i));
                let b = one(s, PathRng::antithetic(cfg.seed, i));
                0.5 * (a + b)
            } else {
                one(s, PathRng::new(cfg.seed, i))
            }
        },
    )
}

fn finish(
    pot: &PotentialSpec,
    m: Moments,
    scale: f64,
    n_paths: u64,
    n_steps: usize,
    bias_probe: Option<f64>,
    method: Method,
) -> Result<KernelEstimate> {
    if m.mean.is_nan() {
        return Err(out_of_range(pot));
    }
    Ok(KernelEstimate {
        value: scale * m.mean,
        stderr: scale * m.stderr(),
        n_paths,
        n_steps,
        bias_probe,
        method,
    })
}

fn check_point(pot: &PotentialSpec, x: &[f64]) -> Result<()> {
    if x.len() != pot.dim() {
        return Err(domain(format!(
            "point has dimension {}, potential has {}",
            x.len(),
            pot.dim()
        )));
    }
    if x.iter().any(|c| !c.is_finite()) {
        return Err(domain("point must be finite"));
    }
    Ok(())
}

/// `T_t^V 1(x) = E_x[exp(-∫₀ᵗ V(B_s) ds)]` over free Brownian paths.
pub fn estimate_survival(pot: &PotentialSpec, t: f64, x: &[f64], cfg: &McConfig) -> Result<KernelEstimate> {
    cfg.validate()?;
    check_time(pot, t, cfg)?;
    check_point(pot, x)?;
    let m = free_moments(pot, t, x, cfg.n_steps, cfg);
    let probe = if cfg.step_halving_check {
        Some(free_moments(pot, t, x, 2 * cfg.n_steps, cfg).mean)
    } else {
        None
    };
    let (_, n_paths) = sample_count(cfg);
    finish(pot, m, 1.0, n_paths, cfg.n_steps, probe, Method::FreePathMonteCarlo)
}

/// `p(t,x,y) = q(t,x,y) · E[weight]` over Brownian bridges from `x` to `y`.
pub fn estimate_kernel(
    pot: &PotentialSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    cfg: &McConfig,
) -> Result<KernelEstimate> {
    cfg.validate()?;
    check_time(pot, t, cfg)?;
    check_point(pot, x)?;
    check_point(pot, y)?;
    let scale = q(t, x, y)?;
    estimate_kernel_steps(pot, t, x, y, cfg.n_steps, scale, cfg)
}

/// The bridge average `p/q = E[weight]` alone, which stays representable
/// where `q` underflows.
pub fn estimate_bridge_ratio(
    pot: &PotentialSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    cfg: &McConfig,
) -> Result<KernelEstimate> {
    cfg.validate()?;
    check_time(pot, t, cfg)?;
    check_point(pot, x)?;
    check_point(pot, y)?;
    estimate_kernel_steps(pot, t, x, y, cfg.n_steps, 1.0, cfg)
}

fn estimate_kernel_steps(
    pot: &PotentialSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
    n_steps: usize,
    scale: f64,
    cfg: &McConfig,
) -> Result<KernelEstimate> {
    let m = bridge_moments(pot, t, x, y, n_steps, cfg);
    let probe = if cfg.step_halving_check {
        Some(scale * bridge_moments(pot, t, x, y, 2 * n_steps, cfg).mean)
    } else {
        None
    };
    let (_, n_paths) = sample_count(cfg);
    finish(pot, m, scale, n_paths, n_steps, probe, Method::BridgeMonteCarlo)
}

/// Time grid and tail settings of the Green quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreenConfig {
    pub t_min: f64,
    pub t_max: f64,
    /// Total number of log-spaced nodes; `0` selects 40 per decade.
    pub n_time_nodes: usize,
    /// Per-node step count is at least `steps_per_sqrt_time · √t`.
    pub steps_per_sqrt_time: f64,
}

impl Default for GreenConfig {
    fn default() -> Self {
        Self {
            t_min: 1e-3,
            t_max: 2e3,
            n_time_nodes: 0,
            steps_per_sqrt_time: 16.0,
        }
    }
}

impl GreenConfig {
    pub fn nodes(&self) -> Vec<f64> {
        let decades = (self.t_max / self.t_min).log10();
        let n = if self.n_time_nodes == 0 {
            (40.0 * decades).ceil() as usize + 1
        } else {
            self.n_time_nodes.max(2)
        };
        let (lo, hi) = (self.t_min.ln(), self.t_max.ln());
        let mut nodes: Vec<f64> = (0..n)
            .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
            .collect();
        nodes[0] = self.t_min;
        nodes[n - 1] = self.t_max;
        nodes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenEstimate {
    /// Quadrature over `[t_min, t_max]` plus both tails.
    pub estimate: KernelEstimate,
    /// Quadrature part only.
    pub bulk: f64,
    /// `∫₀^{t_min} q dt`, an upper bound of the small-time part.
    pub tail_small: f64,
    /// `∫_{t_max}^∞ q · w dt` with the large-time weight of the potential.
    pub tail_large: f64,
    pub n_time_nodes: usize,
}

/// `∫_a^b q(t,x,y) dt` for `|x-y| = r > 0` in dimension `d`, with `b` possibly infinite.
pub fn free_time_integral(r: f64, dim: usize, a: f64, b: f64) -> f64 {
    // t = r²/(2u): ∫ q dt = r^{2-d}/(2π^{d/2}) ∫ u^{d/2-2} e^{-u} du over [r²/2b, r²/2a]
    let pref = r.powi(2 - dim as i32) / (2.0 * std::f64::consts::PI.powf(dim as f64 / 2.0));
    let (u_lo, u_hi) = (
        if b.is_infinite() { 0.0 } else { r * r / (2.0 * b) },
        if a == 0.0 { f64::INFINITY } else { r * r / (2.0 * a) },
    );
    let s = dim as f64 / 2.0 - 1.0;
    let upper = |u: f64| -> f64 {
        if u.is_infinite() {
            0.0
        } else if s == 0.0 {
            exp_integral(u, 1).unwrap_or(0.0)
        } else {
            gamma_ui(s, u)
        }
    };
    let part = if s > 0.0 && u_lo == 0.0 {
        if u_hi.is_infinite() {
            gamma(s)
        } else {
            gamma_li(s, u_hi)
        }
    } else {
        upper(u_lo) - upper(u_hi)
    };
    pref * part
}

/// `∫_{t_max}^∞ q(t,x,y) w(t) dt` with the large-time weight implied by the potential.
fn large_time_tail(pot: &PotentialSpec, r: f64, dim: usize, t_max: f64) -> Result<f64> {
    let weight: Box<dyn Fn(f64) -> f64> = match pot.kind() {
        PotentialKind::Constant(c) if *c == 0.0 => {
            if dim <= 2 {
                return Err(Error::Unsupported("the free Green function diverges in d <= 2".into()));
            }
            return Ok(free_time_integral(r, dim, t_max, f64::INFINITY));
        }
        PotentialKind::Constant(c) => {
            let c = *c;
            Box::new(move |t| (-c * t).exp())
        }
        _ => {
            let gamma = stretched_exponent(pot.alpha().min(1.999));
            Box::new(move |t: f64| (-t.powf(gamma)).exp())
        }
    };
    // integrate in log t until the integrand is negligible
    let rule = Rule::new(16);
    let f = |u: f64| {
        let t = u.exp();
        t * crate::freekernel::q_sq(t, r * r, dim) * weight(t)
    };
    let mut total = 0.0;
    let mut lo = t_max.ln();
    for _ in 0..400 {
        let piece = rule.integrate(lo, lo + 0.5, f);
        total += piece;
        lo += 0.5;
        if piece.abs() < 1e-16 * total.abs().max(1e-300) {
            break;
        }
    }
    Ok(total)
}

/// `G(x,y) = ∫₀^∞ p(t,x,y) dt` by log-spaced trapezoid quadrature in time
/// over `[t_min, t_max]` plus analytic tails.
pub fn estimate_green(
    pot: &PotentialSpec,
    x: &[f64],
    y: &[f64],
    cfg: &McConfig,
    green: &GreenConfig,
) -> Result<GreenEstimate> {
    cfg.validate()?;
    check_point(pot, x)?;
    check_point(pot, y)?;
    if !pot.is_nonnegative() {
        return Err(Error::Unsupported(
            "Green function estimates need a nonnegative potential".into(),
        ));
    }
    let dim = x.len();
    if dim < 2 {
        return Err(Error::Unsupported("Green function estimates need d >= 2".into()));
    }
    let r = sq_dist(x, y).sqrt();
    if r == 0.0 {
        return Err(Error::Singular);
    }
    if !(green.t_min > 0.0 && green.t_min < green.t_max) {
        return Err(domain("need 0 < t_min < t_max"));
    }
    let tail_large = large_time_tail(pot, r, dim, green.t_max)?;
    let nodes = green.nodes();
    let estimates: Vec<KernelEstimate> = nodes
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let n_steps = cfg.n_steps.max((green.steps_per_sqrt_time * t.sqrt()).ceil() as usize);
            let node_cfg = McConfig {
                seed: derive_seed(cfg.seed, i as u64),
                step_halving_check: false,
                ..cfg.clone()
            };
            estimate_kernel_steps(pot, t, x, y, n_steps, q(t, x, y)?, &node_cfg)
        })
        .collect::<Result<_>>()?;
    // trapezoid in u = log t: ∫ p dt = ∫ p(e^u) e^u du
    let h = (nodes[nodes.len() - 1] / nodes[0]).ln() / (nodes.len() - 1) as f64;
    let (mut bulk, mut var) = (0.0, 0.0);
    for (i, (t, e)) in nodes.iter().zip(&estimates).enumerate() {
        let w = if i == 0 || i == nodes.len() - 1 { 0.5 * h * t } else { h * t };
        bulk += w * e.value;
        var += (w * e.stderr).powi(2);
    }
    let tail_small = free_time_integral(r, dim, 0.0, green.t_min);
    let (_, n_paths) = sample_count(cfg);
    Ok(GreenEstimate {
        estimate: KernelEstimate {
            value: bulk + tail_small + tail_large,
            stderr: var.sqrt(),
            n_paths,
            n_steps: cfg.n_steps,
            bias_probe: None,
            method: Method::GreenTimeQuadrature,
        },
        bulk,
        tail_small,
        tail_large,
        n_time_nodes: nodes.len(),
    })
}

/// Closed-form Green function of `½Δ` in `d ≥ 3`: `Γ(d/2-1)/(2π^{d/2}) |x-y|^{2-d}`.
pub fn free_green(x: &[f64], y: &[f64]) -> Result<f64> {
    let d = x.len();
    if d < 3 {
        return Err(Error::Unsupported("the free Green function diverges in d <= 2".into()));
    }
    let r = sq_dist(x, y).sqrt();
    if r == 0.0 {
        return Err(Error::Singular);
    }
    Ok(gamma(d as f64 / 2.0 - 1.0) / (2.0 * std::f64::consts::PI.powf(d as f64 / 2.0)) * r.powi(2 - d as i32))
}
