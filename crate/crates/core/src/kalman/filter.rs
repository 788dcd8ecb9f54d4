use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::KalmanError;
use crate::geometry::{wrap_angle, AngleRad, PlanarPoint};

/// Below this speed (m/s) the velocity direction is treated as noise.
pub const LOW_SPEED_FLOOR: f64 = 0.2;
/// Smallest admissible measurement variance, so noiseless runs stay well posed.
const R_FLOOR: f64 = 1e-2;
/// Velocity variance multiplier at initialization (velocity unknown).
const VELOCITY_INFLATION: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KfParams {
    /// White-acceleration intensity, m²/s³.
    pub q: f64,
    /// Measurement variance per axis, m².
    pub r: f64,
    /// Initial covariance scale.
    pub p0: f64,
}

impl Default for KfParams {
    fn default() -> Self {
        Self::for_meas_sigma(crate::simulator::TrajectoryConfig::default().meas_sigma)
    }
}

impl KfParams {
    /// `q = 0.05`, `r = σ²` (floored), `p0 = 10`.
    pub fn for_meas_sigma(meas_sigma: f64) -> Self {
        Self {
            q: 0.05,
            r: (meas_sigma * meas_sigma).max(R_FLOOR),
            p0: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), KalmanError> {
        if self.q > 0.0 && self.r > 0.0 && self.p0 > 0.0 {
            Ok(())
        } else {
            Err(KalmanError::InvalidParams(format!("{self:?}: q, r, p0 must be > 0")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState {
    /// `(x, y, vx, vy)`
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl TrackState {
    pub fn position(&self) -> PlanarPoint {
        PlanarPoint::new(self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.mean[2], self.mean[3])
    }

    pub fn speed(&self) -> f64 {
        self.mean[2].hypot(self.mean[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: TrackState,
    /// Measurement was non-finite; only the prediction was applied.
    pub rejected: bool,
}

pub fn kf_init(first_meas: PlanarPoint, params: &KfParams) -> TrackState {
    let mut cov = Matrix4::identity() * params.p0;
    cov[(2, 2)] *= VELOCITY_INFLATION;
    cov[(3, 3)] *= VELOCITY_INFLATION;
    TrackState {
        mean: Vector4::new(first_meas.x, first_meas.y, 0.0, 0.0),
        cov,
    }
}

fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

pub fn kf_predict(state: &TrackState, dt: f64, params: &KfParams) -> Result<TrackState, KalmanError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KalmanError::NonPositiveDt(dt));
    }
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    let (d3, d2) = (dt * dt * dt / 3.0, dt * dt / 2.0);
    let mut q = Matrix4::zeros();
    for axis in 0..2 {
        let (p, v) = (axis, axis + 2);
        q[(p, p)] = d3;
        q[(p, v)] = d2;
        q[(v, p)] = d2;
        q[(v, v)] = dt;
    }
    q *= params.q;
    Ok(TrackState {
        mean: f * state.mean,
        cov: symmetrize(&(f * state.cov * f.transpose() + q)),
    })
}

/// Position-only update in Joseph form.
pub fn kf_update(state: &TrackState, meas: PlanarPoint, params: &KfParams) -> TrackState {
    let mut h = Matrix2x4::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    let r = Matrix2::identity() * params.r;
    let s = h * state.cov * h.transpose() + r;
    // S is the sum of a PSD block and r·I with r > 0, so it is invertible.
    let s_inv = s.try_inverse().unwrap_or_else(Matrix2::zeros);
    let k = state.cov * h.transpose() * s_inv;
    let innovation = Vector2::new(meas.x, meas.y) - h * state.mean;
    let ikh = Matrix4::identity() - k * h;
    TrackState {
        mean: state.mean + k * innovation,
        cov: symmetrize(&(ikh * state.cov * ikh.transpose() + k * r * k.transpose())),
    }
}

pub fn kf_step(state: &TrackState, dt: f64, meas: PlanarPoint, params: &KfParams) -> Result<StepOutcome, KalmanError> {
    let predicted = kf_predict(state, dt, params)?;
    if meas.is_finite() {
        Ok(StepOutcome {
            state: kf_update(&predicted, meas, params),
            rejected: false,
        })
    } else {
        Ok(StepOutcome {
            state: predicted,
            rejected: true,
        })
    }
}

/// Heading from the filtered velocity, `atan2(vy, vx)`.
pub fn estimate_heading(state: &TrackState) -> Result<AngleRad, KalmanError> {
    let speed = state.speed();
    if !(speed >= LOW_SPEED_FLOOR) {
        return Err(KalmanError::LowSpeed {
            speed,
            floor: LOW_SPEED_FLOOR,
        });
    }
    wrap_angle(state.mean[3].atan2(state.mean[2])).map_err(|_| KalmanError::Degenerate)
}

/// Heading from two successive positions.
pub fn heading_from_positions(prev: PlanarPoint, curr: PlanarPoint) -> Result<AngleRad, KalmanError> {
    let (dx, dy) = (curr.x - prev.x, curr.y - prev.y);
    if dx == 0.0 && dy == 0.0 {
        return Err(KalmanError::Degenerate);
    }
    wrap_angle(dy.atan2(dx)).map_err(|_| KalmanError::Degenerate)
}
