use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// Along-ship offset from the centroid, meters (positive toward the bow).
    pub dx: f64,
    /// Cross-ship offset, meters (positive to port).
    pub dy: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub class_id: usize,
    pub length: f64,
    pub width: f64,
    pub scatterers: Vec<Scatterer>,
}

/// Fraction of the half-length a scatterer must reach to count as an end.
const END_FRACTION: f64 = 0.4;

impl TargetModel {
    pub fn new(class_id: usize, length: f64, width: f64, scatterers: Vec<Scatterer>) -> Result<Self, SimError> {
        let t = Self {
            class_id,
            length,
            width,
            scatterers,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidTarget(m));
        if !(self.length > 0.0 && self.width > 0.0) {
            return bad(format!("dimensions {}x{} must be positive", self.length, self.width));
        }
        if self.scatterers.len() < 3 {
            return bad(format!("{} scatterers, need at least 3", self.scatterers.len()));
        }
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let tol = 1e-9;
        for s in &self.scatterers {
            if !(s.dx.is_finite() && s.dy.is_finite() && s.amplitude.is_finite()) {
                return bad("non-finite scatterer".into());
            }
            if s.dx.abs() > hl + tol || s.dy.abs() > hw + tol {
                return bad(format!("scatterer ({}, {}) outside hull", s.dx, s.dy));
            }
            if s.amplitude < 0.0 {
                return bad(format!("negative amplitude {}", s.amplitude));
            }
        }
        let reach = END_FRACTION * hl;
        let bow = self.scatterers.iter().any(|s| s.dx >= reach);
        let stern = self.scatterers.iter().any(|s| s.dx <= -reach);
        if !(bow && stern) {
            return bad("needs a scatterer near each ship end".into());
        }
        Ok(())
    }

    /// Largest distance of any scatterer from the centroid; bounds the
    /// projected range offset at every aspect.
    pub fn max_extent(&self) -> f64 {
        self.scatterers.iter().map(|s| s.dx.hypot(s.dy)).fold(0.0, f64::max)
    }

    /// Four equal scatterers on the hull corners; its projected extent is
    /// exactly `L·|cos φ| + W·|sin φ|`.
    pub fn corners(class_id: usize, length: f64, width: f64) -> Result<Self, SimError> {
        let (hl, hw) = (length / 2.0, width / 2.0);
        let s = |dx, dy| Scatterer { dx, dy, amplitude: 1.0 };
        Self::new(
            class_id,
            length,
            width,
            vec![s(hl, hw), s(hl, -hw), s(-hl, hw), s(-hl, -hw)],
        )
    }

    /// Bow and stern returns plus `interior` random scatterers, one of which
    /// is a dominant superstructure return.
    pub fn random<R: Rng + ?Sized>(
        class_id: usize,
        length: f64,
        width: f64,
        interior: usize,
        rng: &mut R,
    ) -> Result<Self, SimError> {
        let (hl, hw) = (length / 2.0, width / 2.0);
        let mut sc = Vec::with_capacity(interior + 2);
        sc.push(Scatterer {
            dx: hl * rng.random_range(0.9..=1.0),
            dy: 0.0,
            amplitude: rng.random_range(0.6..1.0),
        });
        sc.push(Scatterer {
            dx: -hl * rng.random_range(0.9..=1.0),
            dy: hw * rng.random_range(-0.8..0.8),
            amplitude: rng.random_range(0.6..1.0),
        });
        for i in 0..interior {
            let amplitude = if i == 0 {
                rng.random_range(1.0..2.0)
            } else {
                rng.random_range(0.2..1.0)
            };
            sc.push(Scatterer {
                dx: hl * rng.random_range(-0.8..0.8),
                dy: hw * rng.random_range(-1.0..=1.0),
                amplitude,
            });
        }
        Self::new(class_id, length, width, sc)
    }

    /// Port/starboard mirror image. Its profile at aspect `φ` equals the
    /// original's at `−φ`, so the two are separable only given the angle.
    pub fn mirrored(&self, class_id: usize) -> Self {
        Self {
            class_id,
            length: self.length,
            width: self.width,
            scatterers: self.scatterers.iter().map(|s| Scatterer { dy: -s.dy, ..*s }).collect(),
        }
    }
}
