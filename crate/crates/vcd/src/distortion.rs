//! Forward Gaussian diffusion of visual inputs.
//!
//! Each step replaces `v` with `sqrt(1-gamma) * v + sqrt(gamma) * eps`. With a
//! constant `gamma` the marginal after `t` steps has the closed form
//! `sqrt(alpha_bar[t]) * v0 + sqrt(1 - alpha_bar[t]) * eps` where
//! `alpha_bar[t] = (1-gamma)^t`, which is what [`diffuse_to`] samples in one
//! shot. The iterative path is kept for equivalence testing.

use rand_chacha::ChaCha8Rng;

use crate::rng::normal_tensor;
use crate::tensor::Tensor;
use crate::{Result, VcdError};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    gamma: f64,
    total_steps: usize,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Cumulative signal retention `(1-gamma)^t`, indexed `0..=total_steps`.
    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }
}

pub fn build_schedule(gamma: f64, total_steps: usize) -> Result<NoiseSchedule> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(VcdError::param(
            "gamma",
            format!("must lie in (0,1), got {gamma}"),
        ));
    }
    if total_steps == 0 {
        return Err(VcdError::param("total-steps", "must be >= 1"));
    }
    let mut alpha_bar = Vec::with_capacity(total_steps + 1);
    alpha_bar.push(1.0);
    for t in 1..=total_steps {
        alpha_bar.push((1.0 - gamma) * alpha_bar[t - 1]);
    }
    Ok(NoiseSchedule {
        gamma,
        total_steps,
        alpha_bar,
    })
}

/// One diffusion step with caller-supplied noise.
pub fn diffuse_step(v_prev: &Tensor, gamma: f64, noise: &Tensor) -> Result<Tensor> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(VcdError::param(
            "gamma",
            format!("must lie in (0,1), got {gamma}"),
        ));
    }
    let keep = (1.0 - gamma).sqrt();
    let mix = gamma.sqrt();
    v_prev.zip_map(noise, |v, e| keep * v + mix * e)
}

/// Samples the step-`t` marginal directly from the closed form. `t = 0`
/// returns the input unchanged without consuming randomness.
pub fn diffuse_to(
    v0: &Tensor,
    schedule: &NoiseSchedule,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    if t > schedule.total_steps {
        return Err(VcdError::param(
            "noise-step",
            format!("t={} exceeds schedule length {}", t, schedule.total_steps),
        ));
    }
    if t == 0 {
        return Ok(v0.clone());
    }
    let ab = schedule.alpha_bar[t];
    let signal = ab.sqrt();
    let noise_scale = (1.0 - ab).sqrt();
    let eps = normal_tensor(v0.shape(), rng);
    v0.zip_map(&eps, |v, e| signal * v + noise_scale * e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn schedule_values() {
        let s = build_schedule(0.1, 3).unwrap();
        let expect = [1.0, 0.9, 0.81, 0.729];
        for (a, e) in s.alpha_bar().iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
        let s = build_schedule(0.5, 1).unwrap();
        assert_eq!(s.alpha_bar(), &[1.0, 0.5]);
    }

    #[test]
    fn schedule_is_strictly_decreasing_recurrence() {
        let s = build_schedule(0.1, 999).unwrap();
        assert_eq!(s.alpha_bar()[0], 1.0);
        for t in 1..=999 {
            let a = s.alpha_bar()[t];
            let prev = s.alpha_bar()[t - 1];
            assert!(a < prev && a > 0.0);
            assert!((a - 0.9 * prev).abs() <= 1e-12 * prev);
        }
        // 0.9^999 evaluated with extended precision is ~2.56e-46.
        assert!(s.alpha_bar()[999] < 1e-45);
        assert!(s.alpha_bar()[999] > 1e-47);
    }

    #[test]
    fn schedule_rejects_bad_params() {
        assert!(build_schedule(0.0, 3).is_err());
        assert!(build_schedule(1.0, 3).is_err());
        assert!(build_schedule(-0.1, 3).is_err());
        assert!(build_schedule(0.1, 0).is_err());
    }

    #[test]
    fn step_arithmetic() {
        let v = Tensor::vector(vec![1.0]).unwrap();
        let zero = Tensor::vector(vec![0.0]).unwrap();
        let out = diffuse_step(&v, 0.1, &zero).unwrap();
        assert!((out.data()[0] - 0.9f64.sqrt()).abs() < 1e-15);

        let out = diffuse_step(&zero, 0.1, &Tensor::vector(vec![1.0]).unwrap()).unwrap();
        assert!((out.data()[0] - 0.1f64.sqrt()).abs() < 1e-15);

        let v = Tensor::vector(vec![2.0, -1.0]).unwrap();
        let n = Tensor::vector(vec![1.0, 1.0]).unwrap();
        let out = diffuse_step(&v, 0.25, &n).unwrap();
        assert!((out.data()[0] - (0.75f64.sqrt() * 2.0 + 0.5)).abs() < 1e-15);
        assert!((out.data()[1] - (-(0.75f64.sqrt()) + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn step_shape_mismatch() {
        let v = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let n = Tensor::vector(vec![1.0]).unwrap();
        assert!(matches!(
            diffuse_step(&v, 0.1, &n),
            Err(VcdError::Shape(_))
        ));
    }

    #[test]
    fn diffuse_to_identity_at_zero() {
        let v = Tensor::vector(vec![1.25, -3.5, 0.0]).unwrap();
        let s = build_schedule(0.1, 10).unwrap();
        let out = diffuse_to(&v, &s, 0, &mut rng_from_seed(1)).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn diffuse_to_rejects_out_of_range_t() {
        let v = Tensor::vector(vec![1.0]).unwrap();
        let s = build_schedule(0.1, 10).unwrap();
        assert!(diffuse_to(&v, &s, 11, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn diffuse_to_deterministic_per_seed() {
        let v = Tensor::constant(vec![100], 2.0).unwrap();
        let s = build_schedule(0.1, 50).unwrap();
        let a = diffuse_to(&v, &s, 50, &mut rng_from_seed(9)).unwrap();
        let b = diffuse_to(&v, &s, 50, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
        let c = diffuse_to(&v, &s, 50, &mut rng_from_seed(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn full_noise_destroys_signal() {
        // At t=999 with gamma=0.1 the output is N(0,1) regardless of v0.
        let v = Tensor::constant(vec![10_000], 5.0).unwrap();
        let s = build_schedule(0.1, 999).unwrap();
        let out = diffuse_to(&v, &s, 999, &mut rng_from_seed(3)).unwrap();
        assert!(out.mean().abs() < 0.05);
        assert!((out.variance() - 1.0).abs() < 0.05);
    }
}
