use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SimError, TargetModel};
use crate::geometry::AngleRad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub n_bins: usize,
    /// Range-bin spacing, meters.
    pub delta_r: f64,
    /// Std of additive Gaussian noise, in raw amplitude units (before normalization).
    pub noise_sigma: f64,
    /// Std of the log of a per-scatterer multiplicative lognormal jitter.
    pub amp_jitter: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            n_bins: 128,
            delta_r: 2.5,
            noise_sigma: 0.05,
            amp_jitter: 0.3,
        }
    }
}

impl RenderParams {
    pub fn span(&self) -> f64 {
        self.n_bins as f64 * self.delta_r
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_bins < 2 {
            return Err(SimError::Config(format!("n_bins = {} < 2", self.n_bins)));
        }
        if !(self.delta_r > 0.0 && self.delta_r.is_finite()) {
            return Err(SimError::Config(format!("delta_r = {} must be > 0", self.delta_r)));
        }
        if !(self.noise_sigma >= 0.0 && self.amp_jitter >= 0.0) {
            return Err(SimError::Config("noise_sigma and amp_jitter must be >= 0".into()));
        }
        Ok(())
    }

    /// The profile span must hold the target at every aspect with room to
    /// spare: `n_bins ≥ 2 · extent / delta_r`.
    pub fn check_target(&self, target: &TargetModel) -> Result<(), SimError> {
        let needed = 2.0 * target.max_extent() / self.delta_r;
        if (self.n_bins as f64) < needed {
            return Err(SimError::Config(format!(
                "n_bins = {} too small for class {} (needs >= {:.1})",
                self.n_bins, target.class_id, needed
            )));
        }
        Ok(())
    }
}

/// Range offset of each scatterer along the line of sight:
/// `dx·cos φ + dy·sin φ`, paired with its amplitude.
pub fn project_scatterers(target: &TargetModel, aspect: AngleRad) -> Vec<(f64, f64)> {
    let (s, c) = aspect.value().sin_cos();
    target
        .scatterers
        .iter()
        .map(|sc| (sc.dx * c + sc.dy * s, sc.amplitude))
        .collect()
}

/// Renders one profile. Each projected return is deposited into its nearest
/// range bin, noise is added and clamped at zero, and the profile is scaled to
/// unit peak when it has any energy.
pub fn render_hrrp<R: Rng + ?Sized>(
    target: &TargetModel,
    aspect: AngleRad,
    params: &RenderParams,
    rng: &mut R,
) -> Result<Vec<f64>, SimError> {
    params.validate()?;
    let span = params.span();
    let half = span / 2.0;
    let mut profile = vec![0.0; params.n_bins];
    for (offset, amplitude) in project_scatterers(target, aspect) {
        let bin = ((offset + half) / params.delta_r).floor();
        if !(bin >= 0.0 && bin < params.n_bins as f64) {
            return Err(SimError::OutOfSpan { offset, span });
        }
        let gain = if params.amp_jitter > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            (params.amp_jitter * z).exp()
        } else {
            1.0
        };
        profile[bin as usize] += amplitude * gain;
    }
    if params.noise_sigma > 0.0 {
        for v in profile.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v + params.noise_sigma * z).max(0.0);
        }
    }
    let peak = profile.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        profile.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{lrp, LRP_THRESHOLD_FRAC};
    use crate::rng::stream;
    use crate::simulator::Scatterer;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

    fn sc(dx: f64, dy: f64, amplitude: f64) -> Scatterer {
        Scatterer { dx, dy, amplitude }
    }

    fn noiseless(n_bins: usize, delta_r: f64) -> RenderParams {
        RenderParams {
            n_bins,
            delta_r,
            noise_sigma: 0.0,
            amp_jitter: 0.0,
        }
    }

    fn ang(r: f64) -> AngleRad {
        AngleRad::new(r).unwrap()
    }

    #[test]
    fn projection_examples() {
        let t = TargetModel::new(
            0,
            20.0,
            10.0,
            vec![sc(10.0, 0.0, 1.0), sc(-10.0, 0.0, 1.0), sc(3.0, 4.0, 2.0)],
        )
        .unwrap();
        let p0 = project_scatterers(&t, ang(0.0));
        assert_eq!(p0[0], (10.0, 1.0));
        let p90 = project_scatterers(&t, ang(FRAC_PI_2));
        assert_abs_diff_eq!(p90[0].0, 0.0, epsilon = 1e-12);
        let p45 = project_scatterers(&t, ang(FRAC_PI_4));
        assert_abs_diff_eq!(p45[2].0, 7.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(p45[2].0, 4.9497, epsilon = 1e-4);
        assert_eq!(p45[2].1, 2.0);
    }

    #[test]
    fn single_center_deposit() {
        let t = TargetModel::new(
            0,
            20.0,
            4.0,
            vec![sc(10.0, 0.0, 0.0), sc(-10.0, 0.0, 0.0), sc(0.0, 0.0, 3.0)],
        )
        .unwrap();
        let p = render_hrrp(&t, ang(0.3), &noiseless(64, 1.0), &mut stream(0, "r")).unwrap();
        let nonzero: Vec<usize> = (0..64).filter(|&i| p[i] != 0.0).collect();
        assert_eq!(nonzero, vec![32]);
        assert_eq!(p[32], 1.0);
    }

    #[test]
    fn out_of_span_is_a_config_error() {
        let t = TargetModel::corners(0, 100.0, 10.0).unwrap();
        let err = render_hrrp(&t, ang(0.0), &noiseless(32, 1.0), &mut stream(0, "r"));
        assert!(matches!(err, Err(SimError::OutOfSpan { .. })));
        assert!(noiseless(32, 1.0).check_target(&t).is_err());
        assert!(noiseless(128, 1.0).check_target(&t).is_ok());
    }

    #[test]
    fn two_end_target_lrp_matches_length() {
        let t = TargetModel::new(
            0,
            100.0,
            10.0,
            vec![sc(50.0, 0.0, 1.0), sc(-50.0, 0.0, 1.0), sc(10.0, 2.0, 0.5)],
        )
        .unwrap();
        let p = render_hrrp(&t, ang(0.0), &noiseless(256, 1.0), &mut stream(0, "r")).unwrap();
        // Oracle: bow at offset +50 → bin 178, stern at −50 → bin 78; extent 101 bins.
        let l = lrp(&p, 1.0, LRP_THRESHOLD_FRAC).unwrap();
        assert!((l - 100.0).abs() <= 2.0, "lrp {l}");
    }

    #[test]
    fn pi_separated_aspects_share_support() {
        let t = TargetModel::random(0, 90.0, 14.0, 5, &mut stream(4, "t")).unwrap();
        let params = noiseless(128, 2.0);
        for i in 0..32 {
            let phi = TAU * i as f64 / 32.0;
            let a = render_hrrp(&t, ang(phi), &params, &mut stream(0, "r")).unwrap();
            let b = render_hrrp(&t, ang(phi + PI), &params, &mut stream(0, "r")).unwrap();
            let la = lrp(&a, params.delta_r, LRP_THRESHOLD_FRAC).unwrap();
            let lb = lrp(&b, params.delta_r, LRP_THRESHOLD_FRAC).unwrap();
            assert!((la - lb).abs() <= 2.0 * params.delta_r, "phi {phi}: {la} vs {lb}");
        }
    }

    #[test]
    fn noise_is_clamped_and_normalized() {
        let t = TargetModel::random(0, 60.0, 10.0, 4, &mut stream(2, "t")).unwrap();
        let params = RenderParams {
            n_bins: 64,
            delta_r: 2.0,
            noise_sigma: 0.5,
            amp_jitter: 0.4,
        };
        let p = render_hrrp(&t, ang(1.0), &params, &mut stream(9, "r")).unwrap();
        assert!(p.iter().all(|v| *v >= 0.0 && *v <= 1.0));
        assert_eq!(p.iter().copied().fold(0.0, f64::max), 1.0);
    }
}
