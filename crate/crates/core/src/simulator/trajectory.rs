use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{AngleRad, PlanarPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// Seconds; strictly increasing within a trajectory.
    pub t: f64,
    pub pos: PlanarPoint,
    pub meas: PlanarPoint,
    pub hdg_true: AngleRad,
}

/// A constant turn rate starting at `start` seconds after the trajectory begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnLeg {
    pub start: f64,
    /// rad/s, positive counterclockwise.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub t0: f64,
    pub start: PlanarPoint,
    pub heading0: AngleRad,
    /// m/s
    pub speed: f64,
    /// Piecewise-constant turn rate; legs sorted by start, first leg at 0.
    pub turns: Vec<TurnLeg>,
    pub duration: f64,
    pub dt: f64,
    /// Isotropic measurement noise std, meters.
    pub meas_sigma: f64,
}

fn advance(pos: PlanarPoint, psi: f64, speed: f64, rate: f64, dt: f64) -> (PlanarPoint, f64) {
    if rate == 0.0 {
        let (s, c) = psi.sin_cos();
        (pos.offset(speed * dt * c, speed * dt * s), psi)
    } else {
        let psi1 = psi + rate * dt;
        let r = speed / rate;
        (
            pos.offset(r * (psi1.sin() - psi.sin()), -r * (psi1.cos() - psi.cos())),
            psi1,
        )
    }
}

/// Constant-speed path with piecewise-constant turn rate, sampled every `dt`
/// seconds, exact arc integration between samples.
pub fn gen_trajectory<R: Rng + ?Sized>(spec: &TrajectorySpec, rng: &mut R) -> Result<Vec<TrajectorySample>, SimError> {
    if !(spec.dt > 0.0) {
        return Err(SimError::Config(format!("dt = {} must be > 0", spec.dt)));
    }
    if !(spec.duration >= 2.0 * spec.dt) {
        return Err(SimError::Config(format!(
            "duration {} shorter than two steps of {}",
            spec.duration, spec.dt
        )));
    }
    if !(spec.speed >= 0.0 && spec.meas_sigma >= 0.0) {
        return Err(SimError::Config("speed and meas_sigma must be >= 0".into()));
    }
    if spec.turns.windows(2).any(|w| w[1].start < w[0].start) {
        return Err(SimError::Config("turn legs must be sorted by start".into()));
    }
    let n = (spec.duration / spec.dt + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut pos = spec.start;
    let mut psi = spec.heading0.value();
    let mut tau = 0.0;
    for i in 0..n {
        let target_tau = i as f64 * spec.dt;
        while tau < target_tau {
            let idx = spec.turns.partition_point(|l| l.start <= tau);
            let rate = if idx == 0 { 0.0 } else { spec.turns[idx - 1].rate };
            let end = match spec.turns.get(idx) {
                Some(leg) if leg.start < target_tau => leg.start,
                _ => target_tau,
            };
            let (p, h) = advance(pos, psi, spec.speed, rate, end - tau);
            pos = p;
            psi = h;
            tau = end;
        }
        let meas = if spec.meas_sigma > 0.0 {
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            pos.offset(spec.meas_sigma * zx, spec.meas_sigma * zy)
        } else {
            pos
        };
        out.push(TrajectorySample {
            t: spec.t0 + target_tau,
            pos,
            meas,
            hdg_true: AngleRad::new(psi).map_err(|e| SimError::Config(e.to_string()))?,
        });
    }
    Ok(out)
}

/// Kinematic and noise knobs for randomly drawn ship tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub samples: usize,
    pub dt: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub meas_sigma: f64,
    /// Probability that a leg is straight.
    pub p_straight: f64,
    pub turn_rate_min: f64,
    pub turn_rate_max: f64,
    pub leg_min: f64,
    pub leg_max: f64,
    /// Start distance from the radar, meters.
    pub range_min: f64,
    pub range_max: f64,
    /// Idle time between consecutive trajectories of one ship, seconds.
    pub gap: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            samples: 60,
            dt: 10.0,
            speed_min: 3.0,
            speed_max: 12.0,
            meas_sigma: 15.0,
            p_straight: 0.75,
            turn_rate_min: 0.002,
            turn_rate_max: 0.015,
            leg_min: 120.0,
            leg_max: 600.0,
            range_min: 5_000.0,
            range_max: 20_000.0,
            gap: 3_600.0,
        }
    }
}

impl TrajectoryConfig {
    pub fn duration(&self) -> f64 {
        (self.samples.saturating_sub(1)) as f64 * self.dt
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.samples >= 3
            && self.dt > 0.0
            && self.speed_min > 0.0
            && self.speed_max >= self.speed_min
            && self.meas_sigma >= 0.0
            && (0.0..=1.0).contains(&self.p_straight)
            && self.turn_rate_min >= 0.0
            && self.turn_rate_max >= self.turn_rate_min
            && self.leg_min > 0.0
            && self.leg_max >= self.leg_min
            && self.range_min > 0.0
            && self.range_max >= self.range_min
            && self.gap >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid trajectory config {self:?}")))
        }
    }

    /// Draws a start point on a ring around `radar`, a heading, a speed and a
    /// turn schedule.
    pub fn draw<R: Rng + ?Sized>(&self, radar: PlanarPoint, t0: f64, rng: &mut R) -> TrajectorySpec {
        let range = rng.random_range(self.range_min..=self.range_max);
        let bearing: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let start = radar.offset(range * bearing.cos(), range * bearing.sin());
        let heading0 = AngleRad::new(rng.random_range(0.0..std::f64::consts::TAU)).unwrap_or_default();
        let speed = rng.random_range(self.speed_min..=self.speed_max);
        let duration = self.duration();
        let turns = random_turn_schedule(self, duration, rng);
        TrajectorySpec {
            t0,
            start,
            heading0,
            speed,
            turns,
            duration,
            dt: self.dt,
            meas_sigma: self.meas_sigma,
        }
    }
}

pub fn random_turn_schedule<R: Rng + ?Sized>(cfg: &TrajectoryConfig, duration: f64, rng: &mut R) -> Vec<TurnLeg> {
    let mut legs = Vec::new();
    let mut start = 0.0;
    while start <= duration {
        let rate = if rng.random_bool(cfg.p_straight) {
            0.0
        } else {
            let mag = rng.random_range(cfg.turn_rate_min..=cfg.turn_rate_max);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        };
        legs.push(TurnLeg { start, rate });
        start += rng.random_range(cfg.leg_min..=cfg.leg_max);
    }
    legs
}

const CSV_COLUMNS: [&str; 6] = ["t", "x_meas", "y_meas", "x_true", "y_true", "hdg_true"];

pub fn write_trajectory_csv<W: Write>(w: W, samples: &[TrajectorySample]) -> Result<(), SimError> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| SimError::Csv(e.to_string());
    wr.write_record(CSV_COLUMNS).map_err(err)?;
    for s in samples {
        wr.write_record([
            s.t.to_string(),
            s.meas.x.to_string(),
            s.meas.y.to_string(),
            s.pos.x.to_string(),
            s.pos.y.to_string(),
            s.hdg_true.value().to_string(),
        ])
        .map_err(err)?;
    }
    wr.flush().map_err(|e| SimError::Csv(e.to_string()))?;
    Ok(())
}

/// Reads `t,x_meas,y_meas,x_true,y_true,hdg_true` (columns located by name).
pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Vec<TrajectorySample>, SimError> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers().map_err(|e| SimError::Csv(e.to_string()))?.clone();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| SimError::Csv(format!("missing column `{name}`")))?;
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| SimError::Csv(e.to_string()))?;
        let field = |k: usize| -> Result<f64, SimError> {
            let raw = rec.get(idx[k]).unwrap_or("");
            raw.trim()
                .parse::<f64>()
                .map_err(|_| SimError::Csv(format!("row {}: bad `{}` value {raw:?}", line + 2, CSV_COLUMNS[k])))
        };
        out.push(TrajectorySample {
            t: field(0)?,
            meas: PlanarPoint::new(field(1)?, field(2)?),
            pos: PlanarPoint::new(field(3)?, field(4)?),
            hdg_true: AngleRad::new(field(5)?).map_err(|e| SimError::Csv(format!("row {}: {e}", line + 2)))?,
        });
    }
    Ok(out)
}
