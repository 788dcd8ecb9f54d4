use serde::{Deserialize, Serialize};

use super::{estimate_heading, heading_from_positions, kf_init, kf_step, KalmanError, KfParams, TrackState};
use crate::geometry::{aspect_angle, los_azimuth, wrapped_error, AngleRad, PlanarPoint};
use crate::simulator::TrajectorySample;

/// Trajectories are split where consecutive samples are more than 20 minutes apart.
pub const DEFAULT_MAX_GAP: f64 = 1200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingMode {
    /// `atan2(vy, vx)` of the filtered velocity.
    #[default]
    Velocity,
    /// `atan2` of the step between successive filtered positions.
    PositionDifference,
}

impl std::str::FromStr for HeadingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "velocity" => Ok(HeadingMode::Velocity),
            "position" | "position_difference" => Ok(HeadingMode::PositionDifference),
            other => Err(format!("unknown heading mode `{other}` (velocity|position)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectEstimate {
    pub t: f64,
    /// `None` until a first valid heading exists.
    pub aspect: Option<AngleRad>,
    /// The measurement at this step was non-finite and skipped.
    pub rejected: bool,
}

fn check_order(samples: &[TrajectorySample]) -> Result<(), KalmanError> {
    for (i, w) in samples.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(KalmanError::Ordering {
                index: i + 1,
                prev: w[0].t,
                next: w[1].t,
            });
        }
    }
    Ok(())
}

/// Runs the filter over `samples` in time order and emits, at each step, the
/// aspect from the current heading and filtered position. The estimate at step
/// `i` depends only on samples `0..=i`. When the heading is unavailable (speed
/// below the floor, coincident positions) the last valid heading is held.
pub fn estimate_aspect_series(
    samples: &[TrajectorySample],
    radar: PlanarPoint,
    params: &KfParams,
    mode: HeadingMode,
) -> Result<Vec<AspectEstimate>, KalmanError> {
    params.validate()?;
    if samples.len() < 2 {
        return Err(KalmanError::TooShort {
            needed: 2,
            got: samples.len(),
        });
    }
    check_order(samples)?;
    if !samples[0].meas.is_finite() {
        return Err(KalmanError::NonFiniteInit);
    }
    let mut out = Vec::with_capacity(samples.len());
    let mut state: TrackState = kf_init(samples[0].meas, params);
    let mut heading: Option<AngleRad> = None;
    let mut prev_pos = state.position();
    for (i, s) in samples.iter().enumerate() {
        let mut rejected = false;
        if i > 0 {
            let step = kf_step(&state, s.t - samples[i - 1].t, s.meas, params)?;
            state = step.state;
            rejected = step.rejected;
            let fresh = match mode {
                HeadingMode::Velocity => estimate_heading(&state).ok(),
                HeadingMode::PositionDifference => heading_from_positions(prev_pos, state.position()).ok(),
            };
            if fresh.is_some() {
                heading = fresh;
            }
            prev_pos = state.position();
        }
        let aspect = match (heading, los_azimuth(state.position(), radar)) {
            (Some(h), Ok(los)) => Some(aspect_angle(h, los)),
            _ => None,
        };
        out.push(AspectEstimate {
            t: s.t,
            aspect,
            rejected,
        });
    }
    Ok(out)
}

/// Splits a time-sorted track wherever consecutive samples are more than
/// `max_gap` seconds apart.
pub fn segment_trajectory(samples: &[TrajectorySample], max_gap: f64) -> Result<Vec<&[TrajectorySample]>, KalmanError> {
    check_order(samples)?;
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..samples.len() {
        if samples[i].t - samples[i - 1].t > max_gap {
            out.push(&samples[start..i]);
            start = i;
        }
    }
    if start < samples.len() {
        out.push(&samples[start..]);
    }
    Ok(out)
}

/// Cuts each segment into consecutive non-overlapping windows of `len`
/// samples, advancing by `stride`. Windows never cross segment boundaries.
pub fn contiguous_windows<'a>(
    segments: &[&'a [TrajectorySample]],
    len: usize,
    stride: usize,
) -> Vec<&'a [TrajectorySample]> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for seg in segments {
        let mut start = 0;
        while start + len <= seg.len() {
            out.push(&seg[start..start + len]);
            start += stride;
        }
    }
    out
}

fn reference_aspect(s: &TrajectorySample, radar: PlanarPoint) -> Option<AngleRad> {
    los_azimuth(s.pos, radar).ok().map(|los| aspect_angle(s.hdg_true, los))
}

/// Linear-interpolated percentile of sorted data, `p` in `[0, 1]`.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean_deg: f64,
    pub median_deg: f64,
    /// 10th, 20th, …, 90th percentiles.
    pub deciles_deg: Vec<f64>,
    /// Mean of the largest 10% of values.
    pub worst_decile_mean_deg: f64,
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            sorted.iter().sum::<f64>() / n as f64
        };
        let worst_n = n.div_ceil(10);
        let worst = &sorted[n - worst_n..];
        Self {
            count: n,
            mean_deg: mean,
            median_deg: percentile(&sorted, 0.5),
            deciles_deg: (1..10).map(|d| percentile(&sorted, d as f64 / 10.0)).collect(),
            worst_decile_mean_deg: if worst.is_empty() {
                f64::NAN
            } else {
                worst.iter().sum::<f64>() / worst.len() as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStats {
    pub k: usize,
    pub all: Summary,
    /// Mean error at this `k` over the worst-decile segments (by segment score).
    pub worst_segments_mean_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub segment: usize,
    pub t_start: f64,
    /// Errors at `k = k_min..=k_max`, degrees.
    pub errors_deg: Vec<f64>,
    /// Mean over `k`.
    pub score_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub k_min: usize,
    pub k_max: usize,
    pub segments_total: usize,
    pub segments_evaluated: usize,
    pub skipped_short: usize,
    pub skipped_no_estimate: usize,
    pub per_k: Vec<KStats>,
    /// Segment-level scores (error averaged over `k`).
    pub segment: Summary,
    #[serde(skip)]
    pub scores: Vec<SegmentScore>,
}

/// Wrapped aspect error as a function of context length. For every segment and
/// every `k` in `k_min..=k_max`, the error is measured at the segment's `k`-th
/// sample, i.e. the latest causal estimate after `k` measurements. Because the
/// estimator is causal, one run over the first `k_max` samples yields the same
/// estimates as separate runs truncated at each `k`.
pub fn evaluate_estimator(
    segments: &[&[TrajectorySample]],
    radar: PlanarPoint,
    params: &KfParams,
    k_min: usize,
    k_max: usize,
    mode: HeadingMode,
) -> Result<EstimatorReport, KalmanError> {
    if k_min < 2 || k_max < k_min {
        return Err(KalmanError::InvalidRange { k_min, k_max });
    }
    params.validate()?;
    let mut scores = Vec::new();
    let (mut skipped_short, mut skipped_no_estimate) = (0, 0);
    'segments: for (idx, seg) in segments.iter().enumerate() {
        if seg.len() < k_max {
            skipped_short += 1;
            continue;
        }
        let head = &seg[..k_max];
        let est = estimate_aspect_series(head, radar, params, mode)?;
        let mut errors = Vec::with_capacity(k_max - k_min + 1);
        for k in k_min..=k_max {
            let (Some(a), Some(r)) = (est[k - 1].aspect, reference_aspect(&head[k - 1], radar)) else {
                skipped_no_estimate += 1;
                continue 'segments;
            };
            errors.push(wrapped_error(a, r).to_degrees());
        }
        let score = errors.iter().sum::<f64>() / errors.len() as f64;
        scores.push(SegmentScore {
            segment: idx,
            t_start: head[0].t,
            errors_deg: errors,
            score_deg: score,
        });
    }
    let segment = Summary::from_values(&scores.iter().map(|s| s.score_deg).collect::<Vec<_>>());
    let mut by_score: Vec<&SegmentScore> = scores.iter().collect();
    by_score.sort_by(|a, b| b.score_deg.total_cmp(&a.score_deg));
    let worst = &by_score[..scores.len().div_ceil(10)];
    let per_k = (k_min..=k_max)
        .enumerate()
        .map(|(j, k)| {
            let vals: Vec<f64> = scores.iter().map(|s| s.errors_deg[j]).collect();
            let worst_mean = if worst.is_empty() {
                f64::NAN
            } else {
                worst.iter().map(|s| s.errors_deg[j]).sum::<f64>() / worst.len() as f64
            };
            KStats {
                k,
                all: Summary::from_values(&vals),
                worst_segments_mean_deg: worst_mean,
            }
        })
        .collect();
    Ok(EstimatorReport {
        k_min,
        k_max,
        segments_total: segments.len(),
        segments_evaluated: scores.len(),
        skipped_short,
        skipped_no_estimate,
        per_k,
        segment,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::simulator::{gen_trajectory, TrajectorySpec, TurnLeg};
    use std::f64::consts::PI;

    fn straight_east(n: usize, sigma: f64, seed: u64) -> Vec<TrajectorySample> {
        let spec = TrajectorySpec {
            t0: 0.0,
            start: PlanarPoint::new(-500.0, 0.0),
            heading0: AngleRad::ZERO,
            speed: 8.0,
            turns: vec![TurnLeg { start: 0.0, rate: 0.0 }],
            duration: (n - 1) as f64 * 10.0,
            dt: 10.0,
            meas_sigma: sigma,
        };
        gen_trajectory(&spec, &mut stream(seed, "traj")).unwrap()
    }

    #[test]
    fn noiseless_straight_track_converges() {
        let s = straight_east(12, 0.0, 0);
        let radar = PlanarPoint::new(0.0, 20_000.0);
        let p = KfParams::for_meas_sigma(0.0);
        let est = estimate_aspect_series(&s, radar, &p, HeadingMode::Velocity).unwrap();
        assert!(est[0].aspect.is_none());
        for (e, x) in est.iter().zip(&s).skip(5) {
            let r = reference_aspect(x, radar).unwrap();
            assert!(wrapped_error(e.aspect.unwrap(), r) < 1e-3);
        }
    }

    #[test]
    fn opposite_radar_flips_aspect_by_pi() {
        let s = straight_east(8, 3.0, 1);
        let p = KfParams::for_meas_sigma(3.0);
        // A radar far away in direction u versus −u (relative to the track).
        let north = estimate_aspect_series(&s, PlanarPoint::new(0.0, 1e9), &p, HeadingMode::Velocity).unwrap();
        let south = estimate_aspect_series(&s, PlanarPoint::new(0.0, -1e9), &p, HeadingMode::Velocity).unwrap();
        for (a, b) in north.iter().zip(&south).skip(1) {
            let flipped = AngleRad::new(b.aspect.unwrap().value() + PI).unwrap();
            assert!(wrapped_error(a.aspect.unwrap(), flipped) < 1e-6);
        }
    }

    #[test]
    fn rejects_out_of_order_input() {
        let mut s = straight_east(5, 0.0, 0);
        s.swap(1, 2);
        let r = estimate_aspect_series(
            &s,
            PlanarPoint::new(0.0, 1e4),
            &KfParams::default(),
            HeadingMode::Velocity,
        );
        assert!(matches!(r, Err(KalmanError::Ordering { index: 2, .. })));
        assert!(matches!(
            estimate_aspect_series(
                &s[..1],
                PlanarPoint::new(0.0, 1e4),
                &KfParams::default(),
                HeadingMode::Velocity
            ),
            Err(KalmanError::TooShort { .. })
        ));
    }

    #[test]
    fn estimates_are_causal() {
        let s = straight_east(30, 20.0, 4);
        let radar = PlanarPoint::new(3000.0, 9000.0);
        let p = KfParams::for_meas_sigma(20.0);
        for mode in [HeadingMode::Velocity, HeadingMode::PositionDifference] {
            let full = estimate_aspect_series(&s, radar, &p, mode).unwrap();
            for k in 2..30 {
                let part = estimate_aspect_series(&s[..k], radar, &p, mode).unwrap();
                assert_eq!(&full[..k], &part[..]);
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let s = straight_east(20, 10.0, 5);
        let radar = PlanarPoint::new(1000.0, 8000.0);
        let shift = (12_345.0, -6_789.0);
        let moved: Vec<TrajectorySample> = s
            .iter()
            .map(|x| TrajectorySample {
                pos: x.pos.offset(shift.0, shift.1),
                meas: x.meas.offset(shift.0, shift.1),
                ..*x
            })
            .collect();
        let p = KfParams::for_meas_sigma(10.0);
        let a = estimate_aspect_series(&s, radar, &p, HeadingMode::Velocity).unwrap();
        let b = estimate_aspect_series(&moved, radar.offset(shift.0, shift.1), &p, HeadingMode::Velocity).unwrap();
        for (x, y) in a.iter().zip(&b).skip(1) {
            assert!(wrapped_error(x.aspect.unwrap(), y.aspect.unwrap()) < 1e-10);
        }
    }

    #[test]
    fn low_speed_holds_last_heading() {
        let radar = PlanarPoint::new(0.0, 1e4);
        let p = KfParams::for_meas_sigma(0.0);
        let mut s = straight_east(20, 0.0, 0);
        let parked = s[0].pos;
        for x in s.iter_mut() {
            x.pos = parked;
            x.meas = parked;
        }
        let est = estimate_aspect_series(&s, radar, &p, HeadingMode::Velocity).unwrap();
        assert!(est.iter().all(|e| e.aspect.is_none()));

        // Moving east for three samples, then stopped: the heading is held.
        let mut s = straight_east(20, 0.0, 0);
        let stop = s[3].pos;
        for x in s.iter_mut().skip(4) {
            x.pos = stop;
            x.meas = stop;
        }
        let est = estimate_aspect_series(&s, radar, &p, HeadingMode::Velocity).unwrap();
        assert!(est.iter().skip(1).all(|e| e.aspect.is_some()));
        let east = aspect_angle(AngleRad::ZERO, los_azimuth(stop, radar).unwrap());
        assert!(wrapped_error(est[19].aspect.unwrap(), east) < 1e-3);
    }

    fn sample(t: f64) -> TrajectorySample {
        TrajectorySample {
            t,
            pos: PlanarPoint::new(t, 0.0),
            meas: PlanarPoint::new(t, 0.0),
            hdg_true: AngleRad::ZERO,
        }
    }

    #[test]
    fn segmenting() {
        let a: Vec<_> = [0.0, 10.0, 1000.0, 2000.0].map(sample).to_vec();
        assert_eq!(segment_trajectory(&a, DEFAULT_MAX_GAP).unwrap().len(), 1);
        let b: Vec<_> = [0.0, 10.0, 1510.0, 1520.0].map(sample).to_vec();
        let segs = segment_trajectory(&b, DEFAULT_MAX_GAP).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].len(), 2);
        assert_eq!(segs[1][0].t, 1510.0);
        assert_eq!(segs.concat(), b);
        assert!(segment_trajectory(&[], DEFAULT_MAX_GAP).unwrap().is_empty());
        let c: Vec<_> = [0.0, 20.0, 10.0].map(sample).to_vec();
        assert!(segment_trajectory(&c, DEFAULT_MAX_GAP).is_err());
    }

    #[test]
    fn windows_stay_within_segments() {
        let a: Vec<_> = (0..25).map(|i| sample(i as f64)).collect();
        let b: Vec<_> = (0..7).map(|i| sample(5000.0 + i as f64)).collect();
        let w = contiguous_windows(&[&a, &b], 10, 10);
        assert_eq!(w.len(), 2);
        assert_eq!(w[1][0].t, 10.0);
    }

    #[test]
    fn percentiles_and_summary() {
        let s = Summary::from_values(&(1..=10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(s.median_deg, 5.5);
        assert_eq!(s.mean_deg, 5.5);
        assert_eq!(s.worst_decile_mean_deg, 10.0);
        assert_eq!(s.deciles_deg.len(), 9);
        assert!((s.deciles_deg[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn evaluation_skips_short_segments_and_validates_range() {
        let long = straight_east(12, 0.0, 0);
        let short = straight_east(5, 0.0, 0);
        let radar = PlanarPoint::new(0.0, 1e4);
        let p = KfParams::for_meas_sigma(0.0);
        let r = evaluate_estimator(&[&long, &short], radar, &p, 2, 10, HeadingMode::Velocity).unwrap();
        assert_eq!((r.segments_evaluated, r.skipped_short), (1, 1));
        assert_eq!(r.per_k.len(), 9);
        assert!(r.segment.median_deg < 0.2);
        assert!(evaluate_estimator(&[&long], radar, &p, 5, 3, HeadingMode::Velocity).is_err());
        assert!(evaluate_estimator(&[&long], radar, &p, 1, 3, HeadingMode::Velocity).is_err());
    }
}
