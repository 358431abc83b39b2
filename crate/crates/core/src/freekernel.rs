//! Free Gaussian kernel, Brownian and Brownian-bridge path samplers.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{domain, Result};
use crate::rng::PathRng;

/// Gaussian transition density `(2πt)^{-d/2} exp(-|x-y|²/2t)`.
pub fn q(t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("time must be positive, got {t}")));
    }
    if x.len() != y.len() || x.is_empty() {
        return Err(domain("x and y must share a positive dimension"));
    }
    Ok(q_sq(t, sq_dist(x, y), x.len()))
}

/// `q` from the squared distance; no argument checks.
#[inline]
pub fn q_sq(t: f64, dist_sq: f64, dim: usize) -> f64 {
    (2.0 * PI * t).powf(-(dim as f64) / 2.0) * (-dist_sq / (2.0 * t)).exp()
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Transition time `t₀(s) = (1+s)^{1+α/2}`.
pub fn t0(s: f64, alpha: f64) -> f64 {
    (1.0 + s).powf(1.0 + alpha / 2.0)
}

/// Sampled path on the uniform grid `s_k = k t / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dim: usize,
    times: Vec<f64>,
    points: Vec<f64>,
}

impl Path {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Writes columns `s, x_1..x_d`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["s".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x_{i}")));
        writer.write_record(&header)?;
        for (s, p) in self.times.iter().zip(self.points()) {
            let mut row = vec![s.to_string()];
            row.extend(p.iter().map(|c| c.to_string()));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub(crate) fn uniform_times(t: f64, n_steps: usize) -> Vec<f64> {
    let mut times: Vec<f64> = (0..=n_steps).map(|k| t * k as f64 / n_steps as f64).collect();
    times[n_steps] = t;
    times
}

fn check_inputs(t: f64, n_steps: usize) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("time must be positive, got {t}")));
    }
    if n_steps == 0 {
        return Err(domain("n_steps must be at least 1"));
    }
    Ok(())
}

/// Streams a Brownian path from `x`: calls `visit(k, point_k)` for `k = 0..=n_steps`.
///
/// `state` is scratch space of length `d`; on return it holds the endpoint.
#[inline]
pub(crate) fn walk_bm(
    t: f64,
    x: &[f64],
    n_steps: usize,
    rng: &mut PathRng,
    state: &mut [f64],
    mut visit: impl FnMut(usize, &[f64]),
) {
    let sd = (t / n_steps as f64).sqrt();
    state.copy_from_slice(x);
    visit(0, state);
    for k in 1..=n_steps {
        for c in state.iter_mut() {
            *c += sd * rng.normal();
        }
        visit(k, state);
    }
}

/// Streams a Brownian bridge from `x` at time 0 to `y` at time `t`.
///
/// Uses the exact conditional recursion
/// `z_{k+1} = z_k + (y - z_k) Δ/(t - s_k) + sqrt(Δ (t - s_{k+1})/(t - s_k)) ξ`;
/// the last node is set to `y` without consuming a draw.
#[inline]
pub(crate) fn walk_bridge(
    t: f64,
    x: &[f64],
    y: &[f64],
    n_steps: usize,
    rng: &mut PathRng,
    state: &mut [f64],
    mut visit: impl FnMut(usize, &[f64]),
) {
    let n = n_steps as f64;
    state.copy_from_slice(x);
    visit(0, state);
    for k in 0..n_steps.saturating_sub(1) {
        // remaining steps m = n - k, pull = 1/m, variance Δ (m-1)/m
        let m = n - k as f64;
        let pull = 1.0 / m;
        let sd = (t / n * (m - 1.0) / m).sqrt();
        for (c, &target) in state.iter_mut().zip(y) {
            *c += (target - *c) * pull + sd * rng.normal();
        }
        visit(k + 1, state);
    }
    state.copy_from_slice(y);
    visit(n_steps, state);
}

/// Brownian path from `x` on a uniform grid of `n_steps` steps.
pub fn sample_bm(t: f64, x: &[f64], n_steps: usize, rng: &mut PathRng) -> Result<Path> {
    check_inputs(t, n_steps)?;
    let dim = x.len();
    let mut points = Vec::with_capacity((n_steps + 1) * dim);
    let mut state = vec![0.0; dim];
    walk_bm(t, x, n_steps, rng, &mut state, |_, p| points.extend_from_slice(p));
    Ok(Path {
        dim,
        times: uniform_times(t, n_steps),
        points,
    })
}

/// Brownian bridge from `x` to `y` over `[0, t]`, endpoints bit-exact.
pub fn sample_bridge(
    t: f64,
    x: &[f64],
    y: &[f64],
    n_steps: usize,
    rng: &mut PathRng,
) -> Result<Path> {
    check_inputs(t, n_steps)?;
    if x.len() != y.len() {
        return Err(domain("bridge endpoints must share a dimension"));
    }
    let dim = x.len();
    let mut points = Vec::with_capacity((n_steps + 1) * dim);
    let mut state = vec![0.0; dim];
    walk_bridge(t, x, y, n_steps, rng, &mut state, |_, p| points.extend_from_slice(p));
    Ok(Path {
        dim,
        times: uniform_times(t, n_steps),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn gaussian_kernel_values() {
        assert_relative_eq!(q(1.0, &[0.0], &[0.0]).unwrap(), 0.398_942_280_401_432_7, max_relative = 1e-15);
        assert_relative_eq!(q(1.0, &[0.0], &[1.0]).unwrap(), 0.241_970_724_519_143_37, max_relative = 1e-15);
        assert_relative_eq!(q(1.0, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.159_154_943_091_895_35, max_relative = 1e-15);
        assert!(q(0.0, &[0.0], &[0.0]).is_err());
        assert!(q(-1.0, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn transition_time_values() {
        assert_eq!(t0(0.0, 0.7), 1.0);
        assert_eq!(t0(3.0, 2.0), 16.0);
        assert_relative_eq!(t0(8.0, 1.0), 27.0, max_relative = 1e-15);
    }

    fn trapezoid_line(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (hi - lo) / n as f64;
        let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
        h * (inner + 0.5 * (f(lo) + f(hi)))
    }

    #[test]
    fn kernel_integrates_to_one() {
        let t = 0.7;
        let one_d = trapezoid_line(-15.0, 15.0, 3000, |y| q_sq(t, (y - 0.4) * (y - 0.4), 1));
        assert!((one_d - 1.0).abs() < 1e-8, "{one_d}");
        let two_d = trapezoid_line(-15.0, 15.0, 600, |a| {
            trapezoid_line(-15.0, 15.0, 600, |b| q(t, &[0.3, -0.2], &[a, b]).unwrap())
        });
        assert!((two_d - 1.0).abs() < 1e-8, "{two_d}");
    }

    #[test]
    fn chapman_kolmogorov() {
        let (t, s, x, y) = (0.6, 1.3, -0.5, 0.9);
        let lhs = q(t + s, &[x], &[y]).unwrap();
        let rhs = trapezoid_line(-20.0, 20.0, 4000, |z| {
            q(t, &[x], &[z]).unwrap() * q(s, &[z], &[y]).unwrap()
        });
        assert!((lhs - rhs).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(t in 1e-3..50.0_f64, a in -10.0..10.0_f64, b in -10.0..10.0_f64, c in -10.0..10.0_f64) {
            prop_assert_eq!(q(t, &[a, c], &[b, a]).unwrap(), q(t, &[b, a], &[a, c]).unwrap());
        }
    }

    #[test]
    fn bm_endpoint_mean() {
        let n = 1_000_000;
        let x = 0.75;
        let t = 2.0;
        let mut state = [0.0];
        let mut sum = 0.0;
        for i in 0..n {
            let mut rng = PathRng::new(5, i);
            walk_bm(t, &[x], 1, &mut rng, &mut state, |_, _| {});
            sum += state[0];
        }
        let mean = sum / n as f64;
        assert!((mean - x).abs() < 4.0 * (t / n as f64).sqrt());
    }

    #[test]
    fn bm_stays_near_start_for_small_time() {
        // reflection: P(sup |B - x| > a) <= 2 erfc(a / sqrt(2t)) ~ 1e-6 at a = 5 sqrt(t)
        let t: f64 = 1e-4;
        let a = 5.0 * t.sqrt();
        for i in 0..10_000 {
            let mut rng = PathRng::new(6, i);
            let path = sample_bm(t, &[1.0], 64, &mut rng).unwrap();
            let max = path.points().map(|p| (p[0] - 1.0).abs()).fold(0.0, f64::max);
            assert!(max < a);
        }
    }

    #[test]
    fn bm_is_deterministic() {
        let a = sample_bm(1.0, &[0.0, 1.0], 10, &mut PathRng::new(3, 9)).unwrap();
        let b = sample_bm(1.0, &[0.0, 1.0], 10, &mut PathRng::new(3, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_step_bridge_is_endpoints() {
        let p = sample_bridge(1.0, &[0.1, 0.2], &[3.0, -1.0], 1, &mut PathRng::new(0, 0)).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.point(0), &[0.1, 0.2]);
        assert_eq!(p.point(1), &[3.0, -1.0]);
        assert_eq!(p.times(), &[0.0, 1.0]);
    }

    #[test]
    fn bridge_endpoints_are_exact() {
        let x = [0.123_456_789, -2.5];
        let y = [1.0 / 3.0, 7.1];
        let p = sample_bridge(3.7, &x, &y, 17, &mut PathRng::new(1, 1)).unwrap();
        assert_eq!(p.point(0), &x);
        assert_eq!(p.point(17), &y);
        assert_eq!(*p.times().last().unwrap(), 3.7);
    }

    #[test]
    fn bridge_midpoint_variance() {
        let n = 1_000_000;
        let t = 2.0;
        let mut state = [0.0];
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let mut rng = PathRng::new(8, i);
            let mut mid = 0.0;
            walk_bridge(t, &[0.0], &[0.0], 4, &mut rng, &mut state, |k, p| {
                if k == 2 {
                    mid = p[0];
                }
            });
            s1 += mid;
            s2 += mid * mid;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((var / (t / 4.0) - 1.0).abs() < 0.01, "{var}");
        assert!(mean.abs() < 4.0 * (t / 4.0 / n as f64).sqrt());
    }

    #[test]
    fn bridge_marginal_is_shifted_mean() {
        let n = 200_000;
        let (t, x, y) = (1.0, 1.0, 3.0);
        let mut state = [0.0];
        let mut sum = 0.0;
        for i in 0..n {
            let mut rng = PathRng::new(12, i);
            walk_bridge(t, &[x], &[y], 5, &mut rng, &mut state, |k, p| {
                if k == 1 {
                    sum += p[0];
                }
            });
        }
        // s = t/5: mean x + (y - x)/5, variance s (t - s)/t = 0.16
        let mean = sum / n as f64;
        assert!((mean - 1.4).abs() < 4.0 * (0.16 / n as f64).sqrt());
    }

    fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn bridge_matches_conditioned_bm() {
        let target = 100_000;
        let (t, y, half_width) = (1.0, 0.5, 0.02);
        let mut state = [0.0];
        let mut conditioned = Vec::with_capacity(target);
        let mut i = 0;
        while conditioned.len() < target {
            let mut rng = PathRng::new(21, i);
            i += 1;
            let mut mid = 0.0;
            walk_bm(t, &[0.0], 2, &mut rng, &mut state, |k, p| {
                if k == 1 {
                    mid = p[0];
                }
            });
            if (state[0] - y).abs() < half_width {
                conditioned.push(mid);
            }
        }
        let bridged: Vec<f64> = (0..target as u64)
            .map(|i| {
                let p = sample_bridge(t, &[0.0], &[y], 2, &mut PathRng::new(22, i)).unwrap();
                p.point(1)[0]
            })
            .collect();
        let d = ks_statistic(conditioned, bridged);
        let n = target as f64;
        let critical = 1.628 * (2.0 / n).sqrt();
        assert!(d < critical, "KS {d} vs {critical}");
    }

    #[test]
    fn path_csv_has_header_and_rows() {
        let p = sample_bm(1.0, &[0.0, 0.0], 3, &mut PathRng::new(0, 0)).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,x_1,x_2\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
