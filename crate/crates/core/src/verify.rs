//! Fitting two-sided envelopes to estimates, stretched-exponent fits and
//! regime scans.
//!
//! `f ≍ g` allows rescaling both the argument and the value. The fitter
//! searches the argument constants on a log grid and reads the multiplicative
//! constants off the extreme ratios; the resulting band `max/min` of
//! `value/envelope` is the testable quantity. Band ceilings are engineering
//! choices, not constants taken from any theorem.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelopes::{
    negative_branches, positive_branch, ArgConstant, Envelope, EnvelopeParams, PositiveBranch, RegimeLabel,
    SampleGrid, SamplePoint,
};
use crate::error::{domain, precondition, Error, Result};
use crate::fkmc::{estimate_bridge_ratio, McConfig};
use crate::freekernel::{q, t0};
use crate::pde::{solve_1d, solve_radial, GridConfig};
use crate::potentials::{PotentialSpec, Sign};
use crate::rng::derive_seed;

/// A point estimate at `(t, x, y)`: the quantity is `value · e^{log_scale}`.
///
/// The scale keeps far off-diagonal kernels representable: a bridge estimate
/// stores `p/q` in `value` and `log q` in `log_scale`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub point: SamplePoint,
    pub value: f64,
    pub stderr: f64,
    pub log_scale: f64,
}

impl Estimate {
    pub fn new(point: SamplePoint, value: f64, stderr: f64) -> Self {
        Self {
            point,
            value,
            stderr,
            log_scale: 0.0,
        }
    }

    /// `p = q · ratio` with `ratio ± ratio_se`, kept in log scale.
    pub fn from_ratio(point: SamplePoint, ratio: f64, ratio_se: f64) -> Self {
        let log_q = -0.5 * point.x.len() as f64 * (2.0 * std::f64::consts::PI * point.t).ln()
            - crate::freekernel::sq_dist(&point.x, &point.y) / (2.0 * point.t);
        Self {
            point,
            value: ratio,
            stderr: ratio_se,
            log_scale: log_q,
        }
    }

    pub fn ln(&self) -> f64 {
        self.value.ln() + self.log_scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Grid points per argument constant.
    pub grid_points: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub band_ceiling: f64,
    /// Points with `value < min_snr · stderr` are left out of the fit.
    pub min_snr: f64,
    /// Tolerance, in standard errors, for points checked against the band.
    pub sigma: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grid_points: 17,
            grid_min: 0.125,
            grid_max: 8.0,
            band_ceiling: 25.0,
            min_snr: 10.0,
            sigma: 3.0,
        }
    }
}

impl FitConfig {
    pub fn with_ceiling(band_ceiling: f64) -> Self {
        Self {
            band_ceiling,
            ..Self::default()
        }
    }

    fn grid(&self) -> Result<Vec<f64>> {
        if self.grid_points < 2 || !(self.grid_min > 0.0 && self.grid_max > self.grid_min) {
            return Err(domain("argument grid needs >= 2 points on a positive range"));
        }
        let (lo, hi) = (self.grid_min.ln(), self.grid_max.ln());
        let step = (hi - lo) / (self.grid_points - 1) as f64;
        Ok((0..self.grid_points).map(|k| (lo + k as f64 * step).exp()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub t: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    pub dist: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// Envelope value at the fitted argument constants.
    pub envelope: f64,
    pub ratio: f64,
    pub regime: RegimeLabel,
    /// Whether the point entered the fit.
    pub fitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub envelope: String,
    pub fitted: EnvelopeParams,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub band: f64,
    pub band_ceiling: f64,
    pub n_points: usize,
    /// Nonpositive estimates.
    pub n_rejected: usize,
    /// Estimates below `min_snr · stderr`.
    pub n_excluded: usize,
    /// Fewer than 20% rejects and at least one fitted point.
    pub valid: bool,
    /// Every non-rejected point lies within `sigma` standard errors of the band.
    pub within_noise: bool,
    pub pass: bool,
    pub table: Vec<TableRow>,
}

impl VerifyReport {
    /// Columns `t, x_norm, y_norm, dist, estimate, stderr, envelope, ratio, regime`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x_norm", "y_norm", "dist", "estimate", "stderr", "envelope", "ratio", "regime"])?;
        for r in &self.table {
            w.write_record([
                r.t.to_string(),
                r.x_norm.to_string(),
                r.y_norm.to_string(),
                r.dist.to_string(),
                r.estimate.to_string(),
                r.stderr.to_string(),
                r.envelope.to_string(),
                r.ratio.to_string(),
                r.regime.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Odometer over `k` slots of a grid with `n` points each.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let total = n.pow(k as u32);
    (0..total)
        .map(|mut idx| {
            let mut c = vec![0; k];
            for slot in (0..k).rev() {
                c[slot] = idx % n;
                idx /= n;
            }
            c
        })
        .collect()
}

/// Fits `envelope` to `estimates` and reports the band of `value/envelope`.
pub fn fit_sandwich(estimates: &[Estimate], envelope: &dyn Envelope, cfg: &FitConfig) -> Result<VerifyReport> {
    if estimates.len() < 10 {
        return Err(precondition(format!("fit needs at least 10 points, got {}", estimates.len())));
    }
    let grid = cfg.grid()?;
    let slots = envelope.slots();
    let n_rejected = estimates.iter().filter(|e| !(e.value > 0.0)).count();
    let usable: Vec<&Estimate> = estimates.iter().filter(|e| e.value > 0.0).collect();
    let fit_set: Vec<&Estimate> = usable
        .iter()
        .copied()
        .filter(|e| e.value >= cfg.min_snr * e.stderr)
        .collect();
    let n_excluded = usable.len() - fit_set.len();
    let valid = (n_rejected as f64) <= 0.2 * estimates.len() as f64 && !fit_set.is_empty();

    let log_values: Vec<f64> = fit_set.iter().map(|e| e.ln()).collect();
    let band_of = |args: &[f64]| -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (e, lv) in fit_set.iter().zip(&log_values) {
            let r = lv - envelope.log_eval(&e.point, args);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        hi - lo
    };
    let candidates = combinations(grid.len(), slots.len());
    let scored: Vec<f64> = candidates
        .par_iter()
        .map(|c| {
            let args: Vec<f64> = c.iter().map(|&i| grid[i]).collect();
            band_of(&args)
        })
        .collect();
    // first minimum in odometer order keeps ties deterministic
    let mut best = 0;
    for (i, s) in scored.iter().enumerate() {
        if *s < scored[best] || scored[best].is_nan() {
            best = i;
        }
    }
    let args: Vec<f64> = candidates[best].iter().map(|&i| grid[i]).collect();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (e, lv) in fit_set.iter().zip(&log_values) {
        let r = lv - envelope.log_eval(&e.point, &args);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    let (ratio_min, ratio_max) = if fit_set.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (lo.exp(), hi.exp())
    };
    let band = (hi - lo).exp();

    // band edges in the units of each estimate's own scale
    let within_noise = usable.iter().all(|e| {
        let env = (envelope.log_eval(&e.point, &args) - e.log_scale).exp();
        e.value + cfg.sigma * e.stderr >= ratio_min * env && e.value - cfg.sigma * e.stderr <= ratio_max * env
    });
    let table: Vec<TableRow> = estimates
        .iter()
        .map(|e| {
            let log_env = envelope.log_eval(&e.point, &args);
            let scale = e.log_scale.exp();
            TableRow {
                t: e.point.t,
                x_norm: e.point.x_norm(),
                y_norm: e.point.y_norm(),
                dist: e.point.dist(),
                estimate: e.value * scale,
                stderr: e.stderr * scale,
                envelope: log_env.exp(),
                ratio: if e.value > 0.0 { (e.ln() - log_env).exp() } else { f64::NAN },
                regime: envelope.regime(&e.point),
                fitted: e.value > 0.0 && e.value >= cfg.min_snr * e.stderr,
            }
        })
        .collect();
    let arg = |v: &[f64]| -> Vec<ArgConstant> {
        slots
            .iter()
            .zip(v)
            .map(|(name, &value)| ArgConstant {
                name: name.to_string(),
                value,
            })
            .collect()
    };
    let fitted = EnvelopeParams {
        mult_lower: ratio_min,
        arg_lower: arg(&args),
        mult_upper: ratio_max,
        arg_upper: arg(&args),
    };
    Ok(VerifyReport {
        envelope: envelope.name().to_string(),
        fitted,
        ratio_min,
        ratio_max,
        band,
        band_ceiling: cfg.band_ceiling,
        n_points: estimates.len(),
        n_rejected,
        n_excluded,
        valid,
        within_noise,
        pass: valid && within_noise && band <= cfg.band_ceiling,
        table,
    })
}

/// Ordinary least squares `y ≈ a x + b`; returns `(a, b, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// How the prefactor of a stretched exponential is removed before the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Multiply the values by this constant.
    Fixed(f64),
    /// Choose the constant maximizing the R² of the log-log fit.
    Fitted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    /// Fitted exponent `β` in `value ≈ A exp(-b t^β)`.
    pub slope: f64,
    pub r2: f64,
    /// The constant the values were multiplied by.
    pub normalizer: f64,
    /// `-log(value)` increases with `t` and stays positive after normalization.
    pub valid: bool,
}

fn slope_with_shift(log_t: &[f64], decay: &[f64], shift: f64) -> Option<(f64, f64)> {
    let ys: Vec<f64> = decay.iter().map(|l| l + shift).collect();
    if ys.iter().any(|&y| !(y > 0.0)) {
        return None;
    }
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (slope, _, r2) = linear_fit(log_t, &logs);
    Some((slope, r2))
}

/// Regresses `log(-log(value · normalizer))` on `log t`.
pub fn slope_fit(series: &[(f64, f64)], normalizer: Normalizer) -> Result<SlopeFit> {
    if series.len() < 5 {
        return Err(precondition(format!("slope fit needs at least 5 points, got {}", series.len())));
    }
    if series.iter().any(|&(t, v)| !(t > 0.0) || !(v > 0.0)) {
        return Err(domain("slope fit needs positive times and values"));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (t_lo, t_hi) = (sorted[0].0, sorted[sorted.len() - 1].0);
    if t_hi < 10.0 * t_lo {
        return Err(precondition("slope fit needs the times to span a decade"));
    }
    let log_t: Vec<f64> = sorted.iter().map(|p| p.0.ln()).collect();
    let decay: Vec<f64> = sorted.iter().map(|p| -p.1.ln()).collect();
    let monotone = decay.windows(2).all(|w| w[1] > w[0]);
    let (shift, slope, r2) = match normalizer {
        Normalizer::Fixed(n) => {
            if !(n > 0.0) {
                return Err(domain("normalizer must be positive"));
            }
            let shift = -n.ln();
            match slope_with_shift(&log_t, &decay, shift) {
                Some((s, r)) => (shift, s, r),
                None => (shift, f64::NAN, f64::NAN),
            }
        }
        Normalizer::Fitted => {
            // search the smallest shifted value ℓ_min + c on a log scale relative to the spread
            let min = decay.iter().copied().fold(f64::INFINITY, f64::min);
            let max = decay.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let spread = (max - min).max(1e-12);
            let (lo, hi) = ((1e-4 * spread).ln(), (1e4 * spread).ln());
            let score = |u: f64| -> (f64, f64) {
                slope_with_shift(&log_t, &decay, u.exp() - min).unwrap_or((f64::NAN, f64::NEG_INFINITY))
            };
            let n = 2000;
            let step = (hi - lo) / n as f64;
            let mut best_u = lo;
            let mut best_r2 = f64::NEG_INFINITY;
            for k in 0..=n {
                let u = lo + k as f64 * step;
                let (_, r2) = score(u);
                if r2 > best_r2 {
                    best_r2 = r2;
                    best_u = u;
                }
            }
            // golden-section refinement inside the bracketing cells
            let (mut a, mut b) = (best_u - step, best_u + step);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..80 {
                let c = b - g * (b - a);
                let d = a + g * (b - a);
                if score(c).1 >= score(d).1 {
                    b = d;
                } else {
                    a = c;
                }
            }
            let u = 0.5 * (a + b);
            let u = if score(u).1 >= best_r2 { u } else { best_u };
            let (s, r) = score(u);
            (u.exp() - min, s, r)
        }
    };
    Ok(SlopeFit {
        slope,
        r2,
        normalizer: (-shift).exp(),
        valid: monotone && slope.is_finite(),
    })
}

/// Which estimator fills a regime scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanEstimator {
    /// Bridge Monte Carlo with `max(mc.n_steps, ⌈steps_per_time · t⌉)` steps.
    Fkmc { mc: McConfig, steps_per_time: f64 },
    /// Radial solve (`x = 0`, `d ∈ {2, 3}`) or a 1-d solve.
    Pde(GridConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub t: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    pub log_ratio: f64,
    /// Standard error of `log(p/q)` (delta method; zero for the PDE).
    pub stderr: f64,
    /// Branch of the envelope weight that is active at unit constants.
    pub branch: &'static str,
    pub regime: RegimeLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeScan {
    pub alpha: f64,
    pub rows: Vec<ScanRow>,
    /// Transition time `t0(max(|x|,|y|))` of the first configuration.
    pub t0: f64,
    /// Time at which the local slope of `-log(p/q)` against `t` crosses `(1+γ)/2`.
    pub switch_time: Option<f64>,
    pub within_window: bool,
    /// `log(p/q) ≡ 0`: nothing to detect.
    pub degenerate: bool,
}

impl RegimeScan {
    /// Columns `t, x_norm, y_norm, log_ratio, stderr, branch, regime`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x_norm", "y_norm", "log_ratio", "stderr", "branch", "regime"])?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.x_norm.to_string(),
                r.y_norm.to_string(),
                r.log_ratio.to_string(),
                r.stderr.to_string(),
                r.branch.to_string(),
                r.regime.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn branch_name(pot: &PotentialSpec, alpha: f64, p: &SamplePoint) -> &'static str {
    if pot.is_nonnegative() {
        match positive_branch(p.t, p.x_norm().max(p.y_norm()), alpha) {
            PositiveBranch::Local => "local",
            PositiveBranch::Global => "global",
        }
    } else {
        let (growth, spatial) = negative_branches(p.t, p.x_norm().min(p.y_norm()), alpha, 1.0, 1.0);
        if growth >= spatial {
            "growth"
        } else {
            "spatial"
        }
    }
}

/// Time at which the centred log-log slope of `decay` falls through `level`.
fn detect_switch(times: &[f64], decay: &[f64], level: f64) -> Option<f64> {
    if times.len() < 3 {
        return None;
    }
    // slopes between neighbours, located at the geometric midpoints
    let slopes: Vec<(f64, f64)> = times
        .windows(2)
        .zip(decay.windows(2))
        .map(|(t, l)| {
            let s = (l[1].ln() - l[0].ln()) / (t[1].ln() - t[0].ln());
            (0.5 * (t[0].ln() + t[1].ln()), s)
        })
        .collect();
    for w in slopes.windows(2) {
        let ((a, sa), (b, sb)) = (w[0], w[1]);
        if sa >= level && sb < level {
            let frac = (sa - level) / (sa - sb);
            return Some((a + frac * (b - a)).exp());
        }
    }
    None
}

/// Tabulates `log(p/q)` along `grid` and locates the switch of the decay law.
///
/// The switch is detected on points sharing the first point's `(x, y)`,
/// ordered by time; the scan is meant for one spatial configuration at a time.
pub fn regime_scan(pot: &PotentialSpec, alpha: f64, grid: &SampleGrid, estimator: &ScanEstimator) -> Result<RegimeScan> {
    if grid.points.is_empty() {
        return Err(precondition("scan grid is empty"));
    }
    if grid.dim != pot.dim() {
        return Err(domain("scan grid and potential dimensions differ"));
    }
    let case = if pot.is_nonnegative() { Sign::Positive } else { Sign::Negative };
    let estimates: Vec<(f64, f64)> = match estimator {
        ScanEstimator::Fkmc { mc, steps_per_time } => grid
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let cfg = McConfig {
                    seed: derive_seed(mc.seed, i as u64),
                    n_steps: mc.n_steps.max((steps_per_time * p.t).ceil() as usize),
                    ..mc.clone()
                };
                let est = estimate_bridge_ratio(pot, p.t, &p.x, &p.y, &cfg)?;
                Ok((est.value, est.stderr))
            })
            .collect::<Result<_>>()?,
        ScanEstimator::Pde(gcfg) => grid
            .points
            .iter()
            .map(|p| {
                let value = if pot.dim() == 1 {
                    solve_1d(pot, p.t, p.x[0], gcfg)?.value_at(p.y[0])
                } else {
                    if p.x.iter().any(|&c| c != 0.0) {
                        return Err(Error::Unsupported("radial solves need x = 0".into()));
                    }
                    solve_radial(pot, p.t, gcfg)?.value_at(p.y_norm())
                };
                Ok((value / q(p.t, &p.x, &p.y)?, 0.0))
            })
            .collect::<Result<_>>()?,
    };
    let rows: Vec<ScanRow> = grid
        .points
        .iter()
        .zip(&estimates)
        .map(|(p, &(ratio, se))| {
            Ok(ScanRow {
                t: p.t,
                x_norm: p.x_norm(),
                y_norm: p.y_norm(),
                log_ratio: ratio.ln(),
                stderr: se / ratio,
                branch: branch_name(pot, alpha, p),
                regime: crate::envelopes::regime(p.t, &p.x, &p.y, alpha, case)?,
            })
        })
        .collect::<Result<_>>()?;
    let first = &grid.points[0];
    let t0v = t0(first.x_norm().max(first.y_norm()), alpha);
    let degenerate = rows.iter().all(|r| r.log_ratio.abs() < 1e-12);
    let mut series: Vec<(f64, f64)> = grid
        .points
        .iter()
        .zip(&rows)
        .filter(|(p, _)| p.x == first.x && p.y == first.y)
        .map(|(p, r)| (p.t, -r.log_ratio))
        .collect();
    series.sort_by(|a, b| a.0.total_cmp(&b.0));
    let switch_time = if degenerate || case != Sign::Positive || series.iter().any(|s| !(s.1 > 0.0)) {
        None
    } else {
        let gamma = crate::envelopes::stretched_exponent(alpha);
        let times: Vec<f64> = series.iter().map(|s| s.0).collect();
        let decay: Vec<f64> = series.iter().map(|s| s.1).collect();
        detect_switch(&times, &decay, 0.5 * (1.0 + gamma))
    };
    let within_window = switch_time.is_some_and(|s| s >= t0v / 3.0 && s <= 3.0 * t0v);
    Ok(RegimeScan {
        alpha,
        rows,
        t0: t0v,
        switch_time,
        within_window,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelopes::{GaussianEnvelope, PositiveKernelEnvelope, weight_pos};
    use crate::freekernel::q_sq;
    use approx::assert_relative_eq;

    fn points(n: usize) -> Vec<SamplePoint> {
        (0..n)
            .map(|i| {
                let t = 0.5 * 1.5f64.powi(i as i32);
                let x = (i % 4) as f64;
                let y = ((i * 7) % 5) as f64 * 0.5;
                SamplePoint::new(t, vec![x, 0.0], vec![0.0, y])
            })
            .collect()
    }

    fn planted(env: &dyn Envelope, args: &[f64], scale: f64) -> Vec<Estimate> {
        points(24)
            .into_iter()
            .map(|p| Estimate {
                value: scale * env.log_eval(&p, args).exp(),
                stderr: 0.0,
                log_scale: 0.0,
                point: p,
            })
            .collect()
    }

    #[test]
    fn planted_envelope_recovered() {
        let env = PositiveKernelEnvelope { alpha: 1.0, dim: 2 };
        let grid = FitConfig::default().grid().unwrap();
        let args = [grid[10], grid[5]];
        let est = planted(&env, &args, 3.0);
        let r = fit_sandwich(&est, &env, &FitConfig::default()).unwrap();
        assert_relative_eq!(r.band, 1.0, max_relative = 1e-9);
        assert_relative_eq!(r.ratio_min, 3.0, max_relative = 1e-9);
        assert_eq!(r.fitted.arg_lower[0].value, args[0]);
        assert_eq!(r.fitted.arg_lower[1].value, args[1]);
        assert!(r.pass);
    }

    #[test]
    fn noisy_kernel_stays_in_narrow_band() {
        let env = PositiveKernelEnvelope { alpha: 1.0, dim: 2 };
        let est: Vec<Estimate> = points(30)
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let noise = 1.0 + 0.1 * ((i as f64) * 2.3).sin();
                let exact = q(p.t, &p.x, &p.y).unwrap() * weight_pos(p.t, &p.x, &p.y, 1.0).unwrap();
                Estimate {
                    value: exact * noise,
                    stderr: 0.0,
                    log_scale: 0.0,
                    point: p,
                }
            })
            .collect();
        let r = fit_sandwich(&est, &env, &FitConfig::default()).unwrap();
        assert!(r.band <= 1.5, "{}", r.band);
    }

    fn quarter_law(decades: (f64, f64)) -> Vec<Estimate> {
        (0..13)
            .map(|k| {
                let t = 10f64.powf(decades.0 + (decades.1 - decades.0) * k as f64 / 12.0);
                Estimate {
                    value: q_sq(t, 0.0, 2) * (-t.powf(0.25)).exp(),
                    stderr: 0.0,
                    log_scale: 0.0,
                    point: SamplePoint::new(t, vec![0.0, 0.0], vec![0.0, 0.0]),
                }
            })
            .collect()
    }

    #[test]
    fn exponent_mismatch_detected() {
        // exp(-t^{1/4}) against the t^{1/3} branch. Over [10, 10⁴] the weight
        // constant absorbs most of the mismatch (band ≈ 2.6, well above the
        // planted-match band of 1); over [10, 10⁸] the ceiling is exceeded.
        let env = PositiveKernelEnvelope { alpha: 1.0, dim: 2 };
        let short = fit_sandwich(&quarter_law((1.0, 4.0)), &env, &FitConfig::default()).unwrap();
        assert!(short.band > 2.0 && short.band < 25.0, "{}", short.band);
        let long = fit_sandwich(&quarter_law((1.0, 8.0)), &env, &FitConfig::default()).unwrap();
        assert!(!long.pass && long.band > 25.0, "{}", long.band);
    }

    #[test]
    fn scale_equivariance() {
        let env = GaussianEnvelope { dim: 2 };
        let base: Vec<Estimate> = points(20)
            .into_iter()
            .enumerate()
            .map(|(i, p)| Estimate {
                value: q(p.t, &p.x, &p.y).unwrap() * (1.0 + 0.3 * (i as f64).cos()),
                stderr: 0.0,
                log_scale: 0.0,
                point: p,
            })
            .collect();
        let scaled: Vec<Estimate> = base
            .iter()
            .map(|e| Estimate {
                value: 8.0 * e.value,
                ..e.clone()
            })
            .collect();
        let a = fit_sandwich(&base, &env, &FitConfig::default()).unwrap();
        let b = fit_sandwich(&scaled, &env, &FitConfig::default()).unwrap();
        assert_eq!(a.fitted.arg_lower, b.fitted.arg_lower);
        assert_relative_eq!(a.band, b.band, max_relative = 1e-12);
        assert_relative_eq!(8.0 * a.ratio_min, b.ratio_min, max_relative = 1e-12);
        assert_relative_eq!(8.0 * a.ratio_max, b.ratio_max, max_relative = 1e-12);
    }

    #[test]
    fn log_scaled_estimates_survive_underflow() {
        // |x-y| = 40 at t = 0.5: q itself is below the smallest f64
        let env = GaussianEnvelope { dim: 2 };
        let a = FitConfig::default().grid().unwrap()[5];
        let mut est = planted(&env, &[a], 1.0);
        let far = SamplePoint::new(0.5, vec![20.0, 0.0], vec![-20.0, 0.0]);
        assert_eq!(q(far.t, &far.x, &far.y).unwrap(), 0.0);
        let log_q = Estimate::from_ratio(far.clone(), 1.0, 0.0).log_scale;
        est.push(Estimate::from_ratio(far.clone(), (env.log_eval(&far, &[a]) - log_q).exp(), 0.0));
        let r = fit_sandwich(&est, &env, &FitConfig::default()).unwrap();
        assert_eq!(r.n_rejected, 0);
        assert_relative_eq!(r.band, 1.0, max_relative = 1e-9);
        assert_relative_eq!(r.table.last().unwrap().ratio, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn rejects_and_exclusions_counted() {
        let env = GaussianEnvelope { dim: 2 };
        let mut est = planted(&env, &[1.0], 1.0);
        est[0].value = -1.0;
        est[1].stderr = est[1].value;
        let r = fit_sandwich(&est, &env, &FitConfig::default()).unwrap();
        assert_eq!((r.n_rejected, r.n_excluded), (1, 1));
        assert!(r.valid && r.within_noise);
        for e in est.iter_mut().take(6) {
            e.value = 0.0;
        }
        let r = fit_sandwich(&est, &env, &FitConfig::default()).unwrap();
        assert!(!r.valid && !r.pass);
        assert!(fit_sandwich(&est[..5], &env, &FitConfig::default()).is_err());
    }

    #[test]
    fn regime_rows_match_envelope_regimes() {
        let env = PositiveKernelEnvelope { alpha: 1.0, dim: 2 };
        let est = planted(&env, &[1.0, 1.0], 1.0);
        let r = fit_sandwich(&est, &env, &FitConfig::default()).unwrap();
        for (row, e) in r.table.iter().zip(&est) {
            assert_eq!(row.regime, env.regime(&e.point));
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,x_norm,y_norm,dist,estimate,stderr,envelope,ratio,regime"));
    }

    fn synthetic(exponent: f64, scale: f64) -> Vec<(f64, f64)> {
        (0..9).map(|k| {
            let t = 2f64.powi(k + 1);
            (t, scale * (-t.powf(exponent)).exp())
        })
        .collect()
    }

    #[test]
    fn slope_of_planted_stretched_exponentials() {
        for &e in &[1.0 / 3.0, 1.0] {
            let fit = slope_fit(&synthetic(e, 1.0), Normalizer::Fitted).unwrap();
            assert!((fit.slope - e).abs() <= 0.02, "{e}: {fit:?}");
            let fixed = slope_fit(&synthetic(e, 1.0), Normalizer::Fixed(1.0)).unwrap();
            assert_relative_eq!(fixed.slope, e, max_relative = 1e-10);
            assert!(fit.valid && fixed.valid);
        }
    }

    #[test]
    fn slope_invariant_to_constant_factor() {
        let a = slope_fit(&synthetic(1.0 / 3.0, 1.0), Normalizer::Fitted).unwrap();
        let b = slope_fit(&synthetic(1.0 / 3.0, 0.05), Normalizer::Fitted).unwrap();
        assert!((a.slope - b.slope).abs() < 1e-6, "{a:?} {b:?}");
        assert_relative_eq!(b.normalizer, 20.0 * a.normalizer, max_relative = 1e-4);
    }

    #[test]
    fn slope_fit_flags_nonmonotone_and_rejects_short_series() {
        let mut s = synthetic(0.5, 1.0);
        s[3].1 = 1e-30;
        assert!(!slope_fit(&s, Normalizer::Fixed(1.0)).unwrap().valid);
        assert!(slope_fit(&s[..4], Normalizer::Fitted).is_err());
        let narrow: Vec<(f64, f64)> = (0..6).map(|k| (1.0 + k as f64, 0.5)).collect();
        assert!(slope_fit(&narrow, Normalizer::Fitted).is_err());
    }

    #[test]
    fn switch_detection_on_synthetic_decay() {
        // ℓ(t) = t/9 until 27, then continues as a t^{1/3} law matched at 27
        let times: Vec<f64> = (0..30).map(|k| 0.5 * 1.3f64.powi(k)).collect();
        let decay: Vec<f64> = times
            .iter()
            .map(|&t| if t < 27.0 { t / 9.0 } else { 3.0 * (t / 27.0).powf(1.0 / 3.0) })
            .collect();
        let s = detect_switch(&times, &decay, 2.0 / 3.0).unwrap();
        assert!(s > 27.0 / 1.3 && s < 27.0 * 1.3, "{s}");
    }

    #[test]
    fn free_scan_is_degenerate() {
        let pot = PotentialSpec::zero(2);
        let pts = (0..5)
            .map(|k| SamplePoint::new(2f64.powi(k), vec![0.0, 0.0], vec![0.0, 0.0]))
            .collect();
        let grid = SampleGrid::new(2, pts).unwrap();
        let scan = regime_scan(&pot, 1.0, &grid, &ScanEstimator::Fkmc { mc: McConfig::default(), steps_per_time: 8.0 }).unwrap();
        assert!(scan.degenerate && scan.switch_time.is_none() && !scan.within_window);
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }
}
