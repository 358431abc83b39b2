//! Radial decaying potentials `V(x) = ±K (1+|x|)^{-α}` and their envelope classes.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Error, Result};
use crate::rng::PathRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

/// Tabulated radial magnitude `r -> |V|`, linearly interpolated between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    radii: Vec<f64>,
    values: Vec<f64>,
}

impl RadialProfile {
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.len() < 2 || radii.len() != values.len() {
            return Err(precondition(
                "radial profile needs at least two (r, value) rows of equal length",
            ));
        }
        if radii[0] != 0.0 {
            return Err(precondition("radial profile must start at r = 0"));
        }
        if radii.windows(2).any(|w| w[1] <= w[0] || !w[1].is_finite()) {
            return Err(precondition("profile radii must be finite and strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(precondition("profile values must be finite"));
        }
        Ok(Self { radii, values })
    }

    /// Samples `f` on a uniform radius grid of `n + 1` nodes over `[0, r_max]`.
    pub fn from_fn(r_max: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let radii: Vec<f64> = (0..=n).map(|i| r_max * i as f64 / n as f64).collect();
        let values = radii.iter().map(|&r| f(r)).collect();
        Self::new(radii, values)
    }

    /// Reads a CSV file with header `r,value`.
    pub fn from_csv(path: impl AsRef<FsPath>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            r: f64,
            value: f64,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut radii = Vec::new();
        let mut values = Vec::new();
        for row in reader.deserialize() {
            let row: Row = row?;
            radii.push(row.r);
            values.push(row.value);
        }
        Self::new(radii, values)
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interpolated value, or NaN beyond `r_max`.
    #[inline]
    fn interpolate(&self, r: f64) -> f64 {
        if !(0.0..=self.r_max()).contains(&r) {
            return f64::NAN;
        }
        let i = self.radii.partition_point(|&node| node <= r);
        if i >= self.radii.len() {
            return *self.values.last().unwrap();
        }
        let (r0, r1) = (self.radii[i - 1], self.radii[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (r - r0) / (r1 - r0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    PowerDecay,
    CustomRadial(RadialProfile),
    /// Spatially constant `V ≡ c`; used as an exact oracle.
    Constant(f64),
}

#[derive(Debug, Clone, Copy)]
enum DecayLaw {
    One,
    Two,
    Three,
    General,
}

/// A radial potential together with the envelope class `K₁ ≤ |V|(1+|x|)^α ≤ K₂`.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    sign: Sign,
    alpha: f64,
    amplitude: f64,
    class_lower: f64,
    class_upper: f64,
    dim: usize,
    kind: PotentialKind,
    law: DecayLaw,
}

fn law_for(alpha: f64) -> DecayLaw {
    if alpha == 1.0 {
        DecayLaw::One
    } else if alpha == 2.0 {
        DecayLaw::Two
    } else if alpha == 3.0 {
        DecayLaw::Three
    } else {
        DecayLaw::General
    }
}

impl PotentialSpec {
    /// `V(x) = sign·K·(1+|x|)^{-α}` with class constants `K₁ = K₂ = K`.
    pub fn power_decay(sign: Sign, alpha: f64, amplitude: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(domain(format!("alpha must be positive, got {alpha}")));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(domain(format!("amplitude must be positive, got {amplitude}")));
        }
        if dim == 0 {
            return Err(domain("dimension must be at least 1"));
        }
        Ok(Self {
            sign,
            alpha,
            amplitude,
            class_lower: amplitude,
            class_upper: amplitude,
            dim,
            kind: PotentialKind::PowerDecay,
            law: law_for(alpha),
        })
    }

    /// Tabulated radial magnitude; `eval` returns `sign·profile(|x|)`.
    pub fn custom_radial(
        sign: Sign,
        alpha: f64,
        profile: RadialProfile,
        class_lower: f64,
        class_upper: f64,
        dim: usize,
    ) -> Result<Self> {
        if !(alpha > 0.0) || dim == 0 {
            return Err(domain("alpha must be positive and dim at least 1"));
        }
        if !(class_lower > 0.0 && class_lower <= class_upper) {
            return Err(domain("class constants must satisfy 0 < K1 <= K2"));
        }
        let amplitude = profile.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(Self {
            sign,
            alpha,
            amplitude,
            class_lower,
            class_upper,
            dim,
            kind: PotentialKind::CustomRadial(profile),
            law: law_for(alpha),
        })
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        Self {
            sign: if value < 0.0 { Sign::Negative } else { Sign::Positive },
            alpha: 1.0,
            amplitude: value.abs(),
            class_lower: value.abs(),
            class_upper: value.abs(),
            dim,
            kind: PotentialKind::Constant(value),
            law: DecayLaw::One,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(0.0, dim)
    }

    /// Replaces the class constants; power-decay models need `K₁ ≤ K ≤ K₂`.
    pub fn with_class(mut self, class_lower: f64, class_upper: f64) -> Result<Self> {
        if !(class_lower > 0.0 && class_lower <= class_upper) {
            return Err(domain("class constants must satisfy 0 < K1 <= K2"));
        }
        if matches!(self.kind, PotentialKind::PowerDecay)
            && !(class_lower <= self.amplitude && self.amplitude <= class_upper)
        {
            return Err(domain(format!(
                "amplitude {} must lie in [K1, K2] = [{class_lower}, {class_upper}]",
                self.amplitude
            )));
        }
        self.class_lower = class_lower;
        self.class_upper = class_upper;
        Ok(self)
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
    pub fn class_lower(&self) -> f64 {
        self.class_lower
    }
    pub fn class_upper(&self) -> f64 {
        self.class_upper
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, PotentialKind::Constant(c) if c == 0.0)
    }

    /// `true` when `V ≥ 0` everywhere.
    pub fn is_nonnegative(&self) -> bool {
        match self.kind {
            PotentialKind::Constant(c) => c >= 0.0,
            _ => self.sign == Sign::Positive,
        }
    }

    pub fn is_nonpositive(&self) -> bool {
        match self.kind {
            PotentialKind::Constant(c) => c <= 0.0,
            _ => self.sign == Sign::Negative,
        }
    }

    /// Value at radius `r`, NaN when a tabulated profile is queried out of range.
    #[inline]
    pub(crate) fn radial_unchecked(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::PowerDecay => {
                let base = 1.0 + r;
                let decay = match self.law {
                    DecayLaw::One => 1.0 / base,
                    DecayLaw::Two => 1.0 / (base * base),
                    DecayLaw::Three => 1.0 / (base * base * base),
                    DecayLaw::General => base.powf(-self.alpha),
                };
                self.sign.factor() * self.amplitude * decay
            }
            PotentialKind::CustomRadial(profile) => self.sign.factor() * profile.interpolate(r),
            PotentialKind::Constant(c) => *c,
        }
    }

    /// Value at radius `r ≥ 0`.
    pub fn radial(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(domain(format!("radius must be nonnegative, got {r}")));
        }
        let v = self.radial_unchecked(r);
        if v.is_nan() {
            let r_max = match &self.kind {
                PotentialKind::CustomRadial(p) => p.r_max(),
                _ => f64::INFINITY,
            };
            return Err(Error::OutOfRange { radius: r, r_max });
        }
        Ok(v)
    }

    /// `V(x)` for a point of the configured dimension.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(domain(format!(
                "point has dimension {}, potential has {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(domain("point must be finite"));
        }
        self.radial(norm(x))
    }

    /// Exact `(inf, sup)` of `V` over the closed ball `B(center, radius)`.
    pub fn bounds_on_ball(&self, center: &[f64], radius: f64) -> Result<(f64, f64)> {
        if !(radius >= 0.0) {
            return Err(domain("ball radius must be nonnegative"));
        }
        let c = norm(center);
        let r_lo = (c - radius).max(0.0);
        let r_hi = c + radius;
        let mut candidates = vec![self.radial(r_lo)?, self.radial(r_hi)?];
        if let PotentialKind::CustomRadial(profile) = &self.kind {
            for (&r, _) in profile.radii.iter().zip(&profile.values) {
                if r > r_lo && r < r_hi {
                    candidates.push(self.radial(r)?);
                }
            }
        }
        let lo = candidates.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((lo, hi))
    }

    /// `(inf, sup)` of `V` over all of `R^d`.
    pub fn global_bounds(&self) -> (f64, f64) {
        match &self.kind {
            PotentialKind::Constant(c) => (*c, *c),
            PotentialKind::PowerDecay => match self.sign {
                Sign::Positive => (0.0, self.amplitude),
                Sign::Negative => (-self.amplitude, 0.0),
            },
            PotentialKind::CustomRadial(profile) => {
                let s = self.sign.factor();
                profile.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(s * v), hi.max(s * v))
                })
            }
        }
    }

    /// Samples `n_samples` radii uniformly in `[0, r_max]` and checks the class
    /// inequalities `K₁(1+r)^{-α} ≤ |V| ≤ K₂(1+r)^{-α}` (with the right sign).
    pub fn validate_class(&self, n_samples: usize, r_max: f64, seed: u64) -> Result<ClassCheck> {
        if n_samples == 0 {
            return Err(precondition("validate_class needs at least one sample"));
        }
        let mut rng = PathRng::new(seed, 0);
        let mut worst = 0.0_f64;
        let mut worst_radius = 0.0;
        for _ in 0..n_samples {
            let r = rng.uniform() * r_max;
            let v = self.radial(r)?;
            let envelope = (1.0 + r).powf(-self.alpha);
            let lower = self.class_lower * envelope;
            let upper = self.class_upper * envelope;
            let signed_ok = match self.sign {
                Sign::Positive => v >= 0.0,
                Sign::Negative => v <= 0.0,
            };
            let mag = v.abs();
            let violation = if !signed_ok {
                1.0 + mag / lower
            } else if mag < lower {
                (lower - mag) / lower
            } else if mag > upper {
                (mag - upper) / upper
            } else {
                0.0
            };
            if violation > worst {
                worst = violation;
                worst_radius = r;
            }
        }
        Ok(ClassCheck {
            pass: worst <= CLASS_TOLERANCE,
            worst_violation: worst,
            worst_radius,
        })
    }
}

/// Relative slack granted to tabulated profiles, whose linear interpolation
/// can overshoot a convex envelope between nodes.
pub const CLASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassCheck {
    pub pass: bool,
    /// Largest relative violation of the class inequalities.
    pub worst_violation: f64,
    pub worst_radius: f64,
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pos(alpha: f64, k: f64) -> PotentialSpec {
        PotentialSpec::power_decay(Sign::Positive, alpha, k, 3).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(pos(1.0, 1.0).eval(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(pos(2.0, 1.0).eval(&[1.0, 0.0, 0.0]).unwrap(), 0.25);
        let neg = PotentialSpec::power_decay(Sign::Negative, 1.0, 2.0, 3).unwrap();
        assert_eq!(neg.eval(&[0.0, 3.0, 0.0]).unwrap(), -0.5);
    }

    #[test]
    fn general_alpha_matches_powf() {
        let v = pos(1.5, 2.0);
        assert_relative_eq!(v.radial(3.0).unwrap(), 2.0 * 4.0_f64.powf(-1.5), max_relative = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(pos(1.0, 1.0).eval(&[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn ball_bounds_examples() {
        let v = pos(1.0, 1.0);
        assert_eq!(v.bounds_on_ball(&[0.0, 0.0, 0.0], 1.0).unwrap(), (0.5, 1.0));
        let (lo, hi) = v.bounds_on_ball(&[4.0, 0.0, 0.0], 2.0).unwrap();
        assert_relative_eq!(lo, 1.0 / 7.0);
        assert_relative_eq!(hi, 1.0 / 3.0);
        let c = [0.3, -1.2, 2.0];
        let at = v.eval(&c).unwrap();
        assert_eq!(v.bounds_on_ball(&c, 0.0).unwrap(), (at, at));
    }

    #[test]
    fn ball_bounds_negative_sign_swaps_extremes() {
        let v = PotentialSpec::power_decay(Sign::Negative, 1.0, 1.0, 1).unwrap();
        assert_eq!(v.bounds_on_ball(&[0.0], 1.0).unwrap(), (-1.0, -0.5));
    }

    #[test]
    fn ball_bounds_see_interior_profile_extrema() {
        // a bump at r = 1 must be found even though both radial ends are low
        let p = RadialProfile::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.1, 0.9, 0.1, 0.1]).unwrap();
        let v = PotentialSpec::custom_radial(Sign::Positive, 1.0, p, 0.05, 5.0, 1).unwrap();
        let (lo, hi) = v.bounds_on_ball(&[1.0], 0.8).unwrap();
        assert_relative_eq!(hi, 0.9);
        assert_relative_eq!(lo, 0.1 + 0.8 * 0.2, max_relative = 1e-12);
    }

    #[test]
    fn custom_profile_out_of_range() {
        let p = RadialProfile::from_fn(5.0, 50, |r| 1.0 / (1.0 + r)).unwrap();
        let v = PotentialSpec::custom_radial(Sign::Positive, 1.0, p, 1.0, 1.0, 2).unwrap();
        assert!(v.eval(&[3.0, 0.0]).is_ok());
        assert!(matches!(v.eval(&[6.0, 0.0]), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn custom_profile_is_exact_on_nodes_and_linear_between() {
        let p = RadialProfile::new(vec![0.0, 1.0, 3.0], vec![2.0, 1.0, 0.0]).unwrap();
        let v = PotentialSpec::custom_radial(Sign::Negative, 1.0, p, 0.1, 3.0, 1).unwrap();
        assert_eq!(v.radial(1.0).unwrap(), -1.0);
        assert_eq!(v.radial(2.0).unwrap(), -0.5);
        assert_eq!(v.radial(3.0).unwrap(), -0.0);
    }

    #[test]
    fn class_validation_examples() {
        let exact = pos(1.0, 1.0);
        let check = exact.validate_class(1000, 50.0, 1).unwrap();
        assert!(check.pass);
        assert_eq!(check.worst_violation, 0.0);

        let too_big = RadialProfile::from_fn(20.0, 400, |r| 2.0 / (1.0 + r)).unwrap();
        let v = PotentialSpec::custom_radial(Sign::Positive, 1.0, too_big, 1.0, 1.5, 2).unwrap();
        let check = v.validate_class(200, 20.0, 2).unwrap();
        assert!(!check.pass);
        // linear interpolation of a convex profile overshoots slightly between nodes
        assert_relative_eq!(check.worst_violation, 1.0 / 3.0, max_relative = 5e-3);

        let wiggly =
            RadialProfile::from_fn(30.0, 30_000, |r| (1.0 + 0.1 * r.sin()) / (1.0 + r)).unwrap();
        let v = PotentialSpec::custom_radial(Sign::Positive, 1.0, wiggly, 0.9, 1.1, 2).unwrap();
        assert!(v.validate_class(5000, 30.0, 3).unwrap().pass);
    }

    #[test]
    fn class_requires_amplitude_inside() {
        assert!(pos(1.0, 1.0).with_class(0.5, 2.0).is_ok());
        assert!(pos(1.0, 1.0).with_class(1.5, 2.0).is_err());
        assert!(PotentialSpec::power_decay(Sign::Positive, 0.0, 1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn eval_is_radial(r in 0.0..100.0_f64, theta in 0.0..6.283_f64, alpha in 0.1..4.0_f64) {
            let v = PotentialSpec::power_decay(Sign::Positive, alpha, 1.3, 2).unwrap();
            let a = v.eval(&[r, 0.0]).unwrap();
            let b = v.eval(&[r * theta.cos(), r * theta.sin()]).unwrap();
            prop_assert!((a - b).abs() <= 1e-13 * a.abs());
        }

        #[test]
        fn magnitude_decreases_with_radius(r in 0.0..1e3_f64, dr in 1e-6..1e3_f64, alpha in 0.1..4.0_f64) {
            let v = PotentialSpec::power_decay(Sign::Negative, alpha, 2.0, 1).unwrap();
            prop_assert!(v.radial(r + dr).unwrap().abs() <= v.radial(r).unwrap().abs());
        }

        #[test]
        fn degenerate_ball_brackets_center(x in -50.0..50.0_f64, y in -50.0..50.0_f64) {
            let v = PotentialSpec::power_decay(Sign::Positive, 0.7, 1.0, 2).unwrap();
            let at = v.eval(&[x, y]).unwrap();
            let (lo, hi) = v.bounds_on_ball(&[x, y], 0.0).unwrap();
            prop_assert_eq!(lo, at);
            prop_assert_eq!(hi, at);
        }
    }

    #[test]
    fn magnitude_tends_to_zero() {
        let v = pos(0.5, 1.0);
        let mut last = f64::INFINITY;
        for k in 0..12 {
            let r = 10f64.powi(k);
            let m = v.radial(r).unwrap();
            assert!(m < last);
            last = m;
        }
        assert!(last < 1e-5);
    }
}
