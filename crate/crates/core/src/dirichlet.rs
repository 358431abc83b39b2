//! Heat kernels of Brownian motion killed on leaving a ball.
//!
//! The killed-bridge estimator multiplies `q(t,x,y)` by the probability that
//! the bridge stays inside. Between grid nodes `u, v` at distances `δ_u, δ_v`
//! from the boundary, the bridge crosses a flat boundary with probability
//! `exp(-2 δ_u δ_v / Δ)`; this is exact for the two ends of an interval and a
//! tangent-plane approximation on spheres.

use serde::Serialize;

use crate::error::{domain, precondition, Error, Result};
use crate::fkmc::{estimate_kernel, sample_moments, KernelEstimate, McConfig, Method, Moments};
use crate::freekernel::{q, q_sq, walk_bm, walk_bridge};
use crate::pde::{solve_1d_with_probes, GridConfig};
use crate::potentials::PotentialSpec;
use crate::rng::{derive_seed, PathRng};
use crate::verify::linear_fit;

const TAIL_TOLERANCE: f64 = 1e-12;
const MAX_TERMS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(domain(format!("ball radius must be positive, got {radius}")));
        }
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(domain("ball center must be a finite point"));
        }
        Ok(Self { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Signed distance to the boundary, positive inside.
    pub fn depth(&self, p: &[f64]) -> f64 {
        let r: f64 = p
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            .sqrt();
        self.radius - r
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.depth(p) > 0.0
    }
}

/// Number of series terms whose neglected tail is below `1e-12`.
fn auto_terms(t: f64, radius: f64) -> usize {
    let a = std::f64::consts::PI.powi(2) * t / (8.0 * radius * radius);
    // Σ_{n>N} e^{-a n²}/R ≤ e^{-a N²}/(2 a N R)
    let mut n = 1usize;
    while n < MAX_TERMS {
        let nf = n as f64;
        if (-a * nf * nf).exp() / (2.0 * a * nf * radius) < TAIL_TOLERANCE {
            return n;
        }
        n = (n as f64 * 1.25).ceil() as usize;
    }
    MAX_TERMS
}

/// Sine series of the Dirichlet kernel of `½∂²` on `(-R, R)`; `n_terms = None`
/// picks the count from a tail bound.
pub fn interval_kernel_exact(t: f64, x: f64, y: f64, radius: f64, n_terms: Option<usize>) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("time must be positive, got {t}")));
    }
    if !(radius > 0.0) {
        return Err(domain("interval half-width must be positive"));
    }
    if x.abs() >= radius || y.abs() >= radius {
        return Err(domain(format!("points must lie in (-{radius}, {radius})")));
    }
    let n_terms = n_terms.unwrap_or_else(|| auto_terms(t, radius));
    let k = std::f64::consts::PI / (2.0 * radius);
    let sum: f64 = (1..=n_terms)
        .map(|n| {
            let nk = n as f64 * k;
            (nk * (x + radius)).sin() * (nk * (y + radius)).sin() * (-0.5 * nk * nk * t).exp()
        })
        .sum();
    Ok(sum / radius)
}

/// Probability that the bridge between two interior nodes stays inside.
#[inline]
fn step_survival(ball: &Ball, u: &[f64], v: &[f64], dt: f64) -> f64 {
    let du = ball.depth(u);
    let dv = ball.depth(v);
    if du <= 0.0 || dv <= 0.0 {
        return 0.0;
    }
    if ball.dim() == 1 {
        // both ends of the interval
        let c = ball.center[0];
        let (a, b) = (c - ball.radius, c + ball.radius);
        let lo = (-2.0 * (u[0] - a) * (v[0] - a) / dt).exp();
        let hi = (-2.0 * (b - u[0]) * (b - v[0]) / dt).exp();
        (1.0 - lo) * (1.0 - hi)
    } else {
        1.0 - (-2.0 * du * dv / dt).exp()
    }
}

fn check_inside(ball: &Ball, p: &[f64], label: &str) -> Result<()> {
    if p.len() != ball.dim() {
        return Err(domain(format!("{label} has dimension {}, ball has {}", p.len(), ball.dim())));
    }
    if !ball.contains(p) {
        return Err(domain(format!("{label} must lie inside the ball")));
    }
    Ok(())
}

struct Killed {
    state: Vec<f64>,
    prev: Vec<f64>,
}

fn killed_mean(t: f64, x: &[f64], y: &[f64], ball: &Ball, n_steps: usize, cfg: &McConfig) -> Moments {
    let dim = x.len();
    let dt = t / n_steps as f64;
    let one = |s: &mut Killed, mut rng: PathRng| {
        let Killed { state, prev } = s;
        let mut alive = 1.0;
        walk_bridge(t, x, y, n_steps, &mut rng, state, |k, p| {
            if k > 0 && alive > 0.0 {
                alive *= step_survival(ball, prev, p, dt);
            }
            prev.copy_from_slice(p);
        });
        alive
    };
    sample_moments(
        if cfg.antithetic { cfg.n_paths.div_ceil(2) } else { cfg.n_paths },
        cfg.compensated,
        || Killed {
            state: vec![0.0; dim],
            prev: vec![0.0; dim],
        },
        |s, i| {
            if cfg.antithetic {
                0.5 * (one(s, PathRng::new(cfg.seed, i)) + one(s, PathRng::antithetic(cfg.seed, i)))
            } else {
                one(s, PathRng::new(cfg.seed, i))
            }
        },
    )
}

/// `q_B(t,x,y) = q(t,x,y) · P(bridge from x to y stays in B)`.
pub fn estimate_killed_kernel(t: f64, x: &[f64], y: &[f64], ball: &Ball, cfg: &McConfig) -> Result<KernelEstimate> {
    cfg.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("time must be positive, got {t}")));
    }
    check_inside(ball, x, "x")?;
    check_inside(ball, y, "y")?;
    let scale = q(t, x, y)?;
    let m = killed_mean(t, x, y, ball, cfg.n_steps, cfg);
    let bias_probe = cfg
        .step_halving_check
        .then(|| scale * killed_mean(t, x, y, ball, 2 * cfg.n_steps, cfg).mean);
    let n_paths = if cfg.antithetic {
        2 * cfg.n_paths.div_ceil(2)
    } else {
        cfg.n_paths
    };
    Ok(KernelEstimate {
        value: scale * m.mean,
        stderr: scale * m.stderr(),
        n_paths,
        n_steps: cfg.n_steps,
        bias_probe,
        method: Method::KilledBridgeMonteCarlo,
    })
}

/// Least-squares rate `c` in `value ≈ A exp(-c t/R²)`, with the fit's R².
pub fn fit_decay_rate(radius: f64, series: &[(f64, f64)]) -> Result<(f64, f64)> {
    if series.len() < 3 {
        return Err(precondition("decay fit needs at least 3 points"));
    }
    if series.iter().any(|&(_, v)| !(v > 0.0)) {
        return Err(domain("decay fit needs positive values"));
    }
    let xs: Vec<f64> = series.iter().map(|&(t, _)| t / (radius * radius)).collect();
    let ys: Vec<f64> = series.iter().map(|&(_, v)| v.ln()).collect();
    let (slope, _, r2) = linear_fit(&xs, &ys);
    Ok((-slope, r2))
}

/// Both sides of the first-exit decomposition of `p(t,x,y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitIdentityReport {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub center: f64,
    pub radius: f64,
    /// Bridge estimate of `p(t,x,y)`.
    pub direct: KernelEstimate,
    /// `E_x[exp(-∫₀^τ V) p(t-τ, B_τ, y); τ < t]`.
    pub decomposed: KernelEstimate,
    pub combined_stderr: f64,
    pub pass: bool,
}

/// Checks the exit decomposition on an interval `U = (c - R, c + R)` with `x ∈ U`, `y ∉ Ū`.
///
/// The exit time is taken at the midpoint of the step in which the path
/// leaves, and `p(t - τ, B_τ, y)` comes from a one-dimensional solve started
/// at `y` and probed at both ends of `U`.
pub fn check_exit_identity(
    pot: &PotentialSpec,
    t: f64,
    x: f64,
    y: f64,
    ball: &Ball,
    cfg: &McConfig,
    grid: &GridConfig,
) -> Result<ExitIdentityReport> {
    if ball.dim() != 1 || pot.dim() != 1 {
        return Err(Error::Unsupported("the exit decomposition is implemented for d = 1".into()));
    }
    if !ball.contains(&[x]) {
        return Err(precondition("x must lie inside U"));
    }
    if ball.depth(&[y]) >= 0.0 {
        return Err(precondition("y must lie outside the closure of U"));
    }
    cfg.validate()?;
    let c = ball.center[0];
    let ends = [c - ball.radius, c + ball.radius];
    let direct = estimate_kernel(
        pot,
        t,
        &[x],
        &[y],
        &McConfig {
            seed: derive_seed(cfg.seed, 1),
            ..cfg.clone()
        },
    )?;
    let solve = solve_1d_with_probes(pot, t, y, grid, &ends)?;
    let history = solve.history.expect("probes were requested");
    let v_y = pot.radial(y.abs())?;
    let v_ends = [pot.radial(ends[0].abs())?, pot.radial(ends[1].abs())?];
    // p(s, end, y) for s in (0, t]
    let kernel_to_y = |s: f64, side: usize| -> f64 {
        history.at(s, side).unwrap_or_else(|| {
            let d = ends[side] - y;
            q_sq(s, d * d, 1) * (-0.5 * s * (v_y + v_ends[side])).exp()
        })
    };

    let n_steps = cfg.n_steps;
    let dt = t / n_steps as f64;
    let exit_seed = derive_seed(cfg.seed, 2);
    let m = sample_moments(
        cfg.n_paths,
        cfg.compensated,
        || vec![0.0; 1],
        |state, i| {
            let mut rng = PathRng::new(exit_seed, i);
            let mut integral = 0.0;
            let mut prev = x;
            let mut prev_v = pot.radial_unchecked(x.abs());
            let mut result = 0.0;
            let mut done = false;
            // uniforms for crossing tests come from a second stream of the same path
            let mut coin = PathRng::new(derive_seed(exit_seed, 7), i);
            walk_bm(t, &[x], n_steps, &mut rng, state, |k, p| {
                if done || k == 0 {
                    return;
                }
                let v = p[0];
                let tau = (k as f64 - 0.5) * dt;
                let exit_side = if v <= ends[0] {
                    Some(0)
                } else if v >= ends[1] {
                    Some(1)
                } else {
                    let lo = (-2.0 * (prev - ends[0]) * (v - ends[0]) / dt).exp();
                    let hi = (-2.0 * (ends[1] - prev) * (ends[1] - v) / dt).exp();
                    let u = coin.uniform();
                    if u < lo {
                        Some(0)
                    } else if u < lo + hi * (1.0 - lo) {
                        Some(1)
                    } else {
                        None
                    }
                };
                if let Some(side) = exit_side {
                    let partial = integral + 0.5 * dt * prev_v;
                    result = (-partial).exp() * kernel_to_y(t - tau, side);
                    done = true;
                    return;
                }
                let vv = pot.radial_unchecked(v.abs());
                integral += 0.5 * dt * (prev_v + vv);
                prev = v;
                prev_v = vv;
            });
            result
        },
    );
    if m.mean.is_nan() {
        return Err(Error::OutOfRange {
            radius: f64::NAN,
            r_max: f64::NAN,
        });
    }
    let decomposed = KernelEstimate {
        value: m.mean,
        stderr: m.stderr(),
        n_paths: cfg.n_paths,
        n_steps,
        bias_probe: None,
        method: Method::ExitDecomposition,
    };
    let combined_stderr = direct.stderr.hypot(decomposed.stderr);
    let pass = (direct.value - decomposed.value).abs() <= 3.0 * combined_stderr;
    Ok(ExitIdentityReport {
        t,
        x,
        y,
        center: c,
        radius: ball.radius,
        direct,
        decomposed,
        combined_stderr,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Sign;
    use approx::assert_relative_eq;

    fn mc(n_paths: u64, n_steps: usize, seed: u64) -> McConfig {
        McConfig {
            n_paths,
            n_steps,
            seed,
            ..McConfig::default()
        }
    }

    #[test]
    fn series_below_free_kernel() {
        for &(t, x, y) in &[(0.1, 0.0, 0.2), (1.0, -0.5, 0.5), (3.0, 0.9, -0.9), (0.01, 0.3, 0.31)] {
            let v = interval_kernel_exact(t, x, y, 1.0, None).unwrap();
            assert!(v >= 0.0 && v <= q_sq(t, (x - y) * (x - y), 1) * (1.0 + 1e-9), "{t} {x} {y} {v}");
        }
    }

    #[test]
    fn series_long_time_rate() {
        let (t, step) = (50.0, 1.0);
        let a = interval_kernel_exact(t, 0.1, -0.3, 1.0, None).unwrap();
        let b = interval_kernel_exact(t + step, 0.1, -0.3, 1.0, None).unwrap();
        let rate = std::f64::consts::PI.powi(2) / 8.0;
        assert!((a.ln() - b.ln() - rate * step).abs() < 1e-6);
    }

    #[test]
    fn series_free_limit() {
        let v = interval_kernel_exact(1.0, 0.3, -0.4, 100.0, None).unwrap();
        assert_relative_eq!(v, q_sq(1.0, 0.49, 1), max_relative = 1e-6);
    }

    #[test]
    fn series_rejects_outside_points() {
        assert!(interval_kernel_exact(1.0, 1.0, 0.0, 1.0, None).is_err());
    }

    #[test]
    fn killed_matches_series_in_one_dimension() {
        let ball = Ball::new(vec![0.0], 1.0).unwrap();
        for (i, &(t, x, y)) in [(0.2, 0.0, 0.3), (0.5, -0.6, 0.4), (1.0, 0.5, 0.5)].iter().enumerate() {
            let est = estimate_killed_kernel(t, &[x], &[y], &ball, &mc(40_000, 64, i as u64)).unwrap();
            let exact = interval_kernel_exact(t, x, y, 1.0, None).unwrap();
            assert!((est.value - exact).abs() <= 3.0 * est.stderr + 1e-12, "{t}: {} vs {exact} ± {}", est.value, est.stderr);
        }
    }

    #[test]
    fn killed_kernel_orders() {
        let small = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let large = Ball::new(vec![0.0, 0.0], 2.0).unwrap();
        let (x, y) = ([0.2, 0.0], [-0.1, 0.3]);
        let cfg = mc(20_000, 64, 3);
        let a = estimate_killed_kernel(0.5, &x, &y, &small, &cfg).unwrap();
        let b = estimate_killed_kernel(0.5, &x, &y, &large, &cfg).unwrap();
        let free = q(0.5, &x, &y).unwrap();
        assert!(a.value <= b.value + 3.0 * (a.stderr + b.stderr));
        assert!(b.value - 3.0 * b.stderr <= free);
        let rev = estimate_killed_kernel(0.5, &y, &x, &small, &mc(20_000, 64, 4)).unwrap();
        assert!((a.value - rev.value).abs() <= 3.0 * a.stderr.hypot(rev.stderr));
    }

    #[test]
    fn killed_kernel_preconditions() {
        let ball = Ball::new(vec![0.0], 1.0).unwrap();
        assert!(estimate_killed_kernel(1.0, &[1.5], &[0.0], &ball, &mc(10, 4, 0)).is_err());
        assert!(Ball::new(vec![0.0], 0.0).is_err());
    }

    #[test]
    fn decay_rate_recovers_planted_rate() {
        let series: Vec<(f64, f64)> = (1..6).map(|k| (k as f64, 2.0 * (-1.3 * k as f64 / 4.0).exp())).collect();
        let (c, r2) = fit_decay_rate(2.0, &series).unwrap();
        assert_relative_eq!(c, 1.3, max_relative = 1e-12);
        assert_relative_eq!(r2, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn exit_identity_free_case() {
        let pot = PotentialSpec::zero(1);
        let ball = Ball::new(vec![0.0], 1.0).unwrap();
        let report = check_exit_identity(&pot, 2.0, 0.2, 1.8, &ball, &mc(40_000, 400, 5), &GridConfig::default()).unwrap();
        assert_relative_eq!(report.direct.value, q_sq(2.0, 2.56, 1), max_relative = 1e-12);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn exit_identity_positive_potential() {
        let pot = PotentialSpec::power_decay(Sign::Positive, 1.0, 1.0, 1).unwrap();
        let ball = Ball::new(vec![0.0], 1.0).unwrap();
        let report = check_exit_identity(&pot, 2.0, 0.0, 2.0, &ball, &mc(40_000, 400, 6), &GridConfig::default()).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn exit_identity_preconditions() {
        let pot = PotentialSpec::zero(1);
        let ball = Ball::new(vec![0.0], 1.0).unwrap();
        let cfg = mc(10, 10, 0);
        let grid = GridConfig::default();
        assert!(check_exit_identity(&pot, 1.0, 0.0, 0.5, &ball, &cfg, &grid).is_err());
        assert!(check_exit_identity(&pot, 1.0, 1.5, 2.0, &ball, &cfg, &grid).is_err());
    }
}
