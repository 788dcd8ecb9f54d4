//! Angle arithmetic, line-of-sight geometry and the LRP measure.
//!
//! Angles follow the mathematical convention: counterclockwise from +x (east),
//! in radians, at double precision.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite angle {0}")]
    NonFinite(f64),
    #[error("degenerate geometry: coincident points ({x}, {y})")]
    Coincident { x: f64, y: f64 },
    #[error("profile has no target response (all values zero or empty)")]
    NoTarget,
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

/// An angle in radians, always in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AngleRad(f64);

impl AngleRad {
    pub const ZERO: AngleRad = AngleRad(0.0);

    /// Wraps any finite real into `[0, 2π)` via `r − 2π·floor(r/2π)`.
    pub fn new(r: f64) -> Result<Self, GeometryError> {
        wrap_angle(r)
    }

    pub fn from_degrees(deg: f64) -> Result<Self, GeometryError> {
        wrap_angle(deg.to_radians())
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }
}

impl TryFrom<f64> for AngleRad {
    type Error = GeometryError;
    fn try_from(r: f64) -> Result<Self, Self::Error> {
        wrap_angle(r)
    }
}

impl From<AngleRad> for f64 {
    fn from(a: AngleRad) -> f64 {
        a.0
    }
}

impl fmt::Display for AngleRad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} rad", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint {
    /// East, meters.
    pub x: f64,
    /// North, meters.
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn offset(&self, dx: f64, dy: f64) -> PlanarPoint {
        PlanarPoint::new(self.x + dx, self.y + dy)
    }
}

pub fn wrap_angle(r: f64) -> Result<AngleRad, GeometryError> {
    if !r.is_finite() {
        return Err(GeometryError::NonFinite(r));
    }
    let w = r - TAU * (r / TAU).floor();
    // Rounding can land exactly on 2π for tiny negative inputs.
    let w = if !(0.0..TAU).contains(&w) { 0.0 } else { w };
    Ok(AngleRad(w))
}

/// Distance on the circle, in `[0, π]`.
pub fn wrapped_error(a: AngleRad, b: AngleRad) -> f64 {
    let d = (a.0 - b.0).abs() % TAU;
    d.min(TAU - d)
}

/// Azimuth from the radar to the target: `atan2(y_t − y_r, x_t − x_r)`.
pub fn los_azimuth(target: PlanarPoint, radar: PlanarPoint) -> Result<AngleRad, GeometryError> {
    let dx = target.x - radar.x;
    let dy = target.y - radar.y;
    if dx == 0.0 && dy == 0.0 {
        return Err(GeometryError::Coincident {
            x: target.x,
            y: target.y,
        });
    }
    wrap_angle(dy.atan2(dx))
}

/// Aspect angle `wrap(hdg − θ)`.
pub fn aspect_angle(heading: AngleRad, los: AngleRad) -> AngleRad {
    // Both inputs are finite, so wrapping cannot fail.
    wrap_angle(heading.0 - los.0).unwrap_or(AngleRad::ZERO)
}

/// Default LRP detection threshold, as a fraction of the profile peak.
pub const LRP_THRESHOLD_FRAC: f64 = 0.1;

/// Length on Range Profile: the range extent between the first and last bins
/// at or above `threshold_frac · max(profile)`, inclusive.
pub fn lrp(profile: &[f64], delta_r: f64, threshold_frac: f64) -> Result<f64, GeometryError> {
    if !(threshold_frac > 0.0 && threshold_frac < 1.0) {
        return Err(GeometryError::InvalidProfile(format!(
            "threshold fraction {threshold_frac} outside (0, 1)"
        )));
    }
    if profile.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(GeometryError::InvalidProfile(
            "profile must be finite and non-negative".into(),
        ));
    }
    let peak = profile.iter().copied().fold(0.0_f64, f64::max);
    if peak <= 0.0 {
        return Err(GeometryError::NoTarget);
    }
    let level = threshold_frac * peak;
    let first = profile.iter().position(|v| *v >= level);
    let last = profile.iter().rposition(|v| *v >= level);
    match (first, last) {
        (Some(f), Some(l)) => Ok((l - f + 1) as f64 * delta_r),
        _ => Err(GeometryError::NoTarget),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn a(r: f64) -> AngleRad {
        AngleRad::new(r).unwrap()
    }

    #[test]
    fn wrap_examples() {
        assert_abs_diff_eq!(a(-PI / 2.0).value(), 3.0 * PI / 2.0, epsilon = 1e-15);
        assert_eq!(a(TAU).value(), 0.0);
        assert_abs_diff_eq!(a(7.0).value(), 0.716815, epsilon = 1e-6);
        assert_abs_diff_eq!(a(7.0).value(), 7.0 - TAU, epsilon = 1e-15);
        assert!(a(-1e-300).value() < TAU);
        assert!(AngleRad::new(f64::NAN).is_err());
        assert!(AngleRad::new(f64::INFINITY).is_err());
    }

    #[test]
    fn wrapped_error_examples() {
        assert_abs_diff_eq!(wrapped_error(a(0.0), a(TAU - 0.1)), 0.1, epsilon = 1e-12);
        assert_eq!(wrapped_error(a(PI / 2.0), a(PI / 2.0)), 0.0);
        assert_abs_diff_eq!(wrapped_error(a(0.2), a(6.0)), 0.483185, epsilon = 1e-6);
    }

    #[test]
    fn los_examples() {
        let o = PlanarPoint::new(0.0, 0.0);
        assert_eq!(los_azimuth(PlanarPoint::new(1.0, 0.0), o).unwrap().value(), 0.0);
        assert_abs_diff_eq!(
            los_azimuth(PlanarPoint::new(0.0, 5.0), o).unwrap().value(),
            PI / 2.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            los_azimuth(PlanarPoint::new(-1.0, -1.0), o).unwrap().value(),
            5.0 * PI / 4.0,
            epsilon = 1e-15
        );
        assert!(matches!(los_azimuth(o, o), Err(GeometryError::Coincident { .. })));
    }

    #[test]
    fn aspect_examples() {
        assert_eq!(aspect_angle(a(0.0), a(0.0)).value(), 0.0);
        assert_abs_diff_eq!(
            aspect_angle(a(PI / 4.0), a(PI / 2.0)).value(),
            7.0 * PI / 4.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            aspect_angle(a(3.0 * PI / 2.0), a(PI / 2.0)).value(),
            PI,
            epsilon = 1e-15
        );
    }

    /// Independent bracketing oracle: scan every (i, j) pair and keep the widest
    /// span whose endpoints both clear the threshold.
    fn lrp_oracle(profile: &[f64], delta_r: f64, frac: f64) -> f64 {
        let peak = profile.iter().cloned().fold(0.0, f64::max);
        let mut best = 0usize;
        for i in 0..profile.len() {
            for j in i..profile.len() {
                if profile[i] >= frac * peak && profile[j] >= frac * peak {
                    best = best.max(j - i + 1);
                }
            }
        }
        best as f64 * delta_r
    }

    #[test]
    fn lrp_examples() {
        assert_eq!(lrp(&[0.0, 0.0, 5.0, 4.0, 0.0, 0.0], 1.0, 0.5).unwrap(), 2.0);
        assert_eq!(lrp(&[1.0, 1.0, 1.0, 1.0], 0.5, 0.1).unwrap(), 2.0);
        let p = [0.0, 3.0, 0.0, 0.0, 3.0, 0.0];
        assert_eq!(lrp_oracle(&p, 1.0, 0.5), 4.0);
        assert_eq!(lrp(&p, 1.0, 0.5).unwrap(), 4.0);
        assert_eq!(lrp(&[0.0; 5], 1.0, 0.5), Err(GeometryError::NoTarget));
        assert_eq!(lrp(&[], 1.0, 0.5), Err(GeometryError::NoTarget));
        assert!(lrp(&[1.0, -1.0], 1.0, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_in_range(r in -1e6f64..1e6) {
            let w = a(r);
            prop_assert!(w.value() >= 0.0 && w.value() < TAU);
            prop_assert_eq!(a(w.value()), w);
            let k = ((r - w.value()) / TAU).round();
            prop_assert!((r - w.value() - k * TAU).abs() <= 1e-9 * r.abs().max(1.0));
        }

        #[test]
        fn wrapped_error_symmetric_and_bounded(x in 0.0f64..TAU, y in 0.0f64..TAU) {
            let (p, q) = (a(x), a(y));
            prop_assert_eq!(wrapped_error(p, q), wrapped_error(q, p));
            prop_assert!(wrapped_error(p, q) <= PI);
        }

        #[test]
        fn aspect_plus_los_recovers_heading(h in 0.0f64..TAU, t in 0.0f64..TAU) {
            let phi = aspect_angle(a(h), a(t));
            prop_assert!(wrapped_error(a(phi.value() + t), a(h)) <= 1e-12);
        }

        #[test]
        fn lrp_scale_invariant(p in proptest::collection::vec(0.0f64..10.0, 1..40), s in 0.01f64..100.0) {
            prop_assume!(p.iter().any(|v| *v > 0.0));
            let scaled: Vec<f64> = p.iter().map(|v| v * s).collect();
            // Power-of-two scaling is exact; for general factors compare with the oracle.
            prop_assert_eq!(lrp(&p, 1.0, 0.5).unwrap(), lrp_oracle(&p, 1.0, 0.5));
            prop_assert_eq!(lrp(&scaled, 1.0, 0.5).unwrap(), lrp_oracle(&scaled, 1.0, 0.5));
            let pow2: Vec<f64> = p.iter().map(|v| v * 8.0).collect();
            prop_assert_eq!(lrp(&p, 1.0, 0.1).unwrap(), lrp(&pow2, 1.0, 0.1).unwrap());
        }
    }
}
