//! Noise schedule, forward corruption and the few-step x0-prediction sampler.
//!
//! Images live in `[-1, 1]` inside this module. [`to_diffusion_space`] and
//! [`to_image_space`] are the only conversions; every other function assumes
//! the diffusion range.

use crate::error::{Error, Result};
use crate::numerics::{gauss_draw, RngStream, Scalar, Tensor};

pub const DEFAULT_STEPS: usize = 64;
pub const DEFAULT_BETA_START: f64 = 1e-4;
/// With 64 linear steps this leaves `alpha_bar_N` near 0.001, so the
/// condition rather than `x_N` carries the image at the first step.
pub const DEFAULT_BETA_END: f64 = 0.2;
pub const DEFAULT_TEST_STEPS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced `beta`; `alpha_bar` by running product.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule { beta, alpha_bar })
    }

    pub fn default_schedule() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("defaults are valid")
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `alpha_bar_1 .. alpha_bar_N`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `alpha_bar_n` for `0 <= n <= N`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, n: usize) -> Result<f64> {
        match n {
            0 => Ok(1.0),
            n if n <= self.steps() => Ok(self.alpha_bar[n - 1]),
            n => Err(Error::InvalidArgument(format!("step {n} outside 0..={}", self.steps()))),
        }
    }

    pub fn t_norm(&self, n: usize) -> f64 {
        n as f64 / self.steps() as f64
    }

    /// Evenly spaced steps from `N` down to 1, `count` of them.
    pub fn strided_steps(&self, count: usize) -> Result<Vec<usize>> {
        let n = self.steps();
        if count == 0 || count > n {
            return Err(Error::InvalidArgument(format!("test steps must lie in 1..={n}, got {count}")));
        }
        if count == 1 {
            return Ok(vec![n]);
        }
        let mut out: Vec<usize> = (0..count)
            .map(|j| (n as f64 - j as f64 * (n - 1) as f64 / (count - 1) as f64).round() as usize)
            .collect();
        out.dedup();
        Ok(out)
    }
}

pub fn to_diffusion_space<E: Scalar>(img: &Tensor<E>) -> Tensor<E> {
    img.map(|v| E::from_f64(2.0 * v.to_f64() - 1.0))
}

/// Clamps to `[-1, 1]` and maps to `[0, 1]`.
pub fn to_image_space<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| E::from_f64((v.to_f64().clamp(-1.0, 1.0) + 1.0) / 2.0))
}

/// `x_n = sqrt(alpha_bar_n) x0 + sqrt(1 - alpha_bar_n) eps`.
pub fn forward_noise<E: Scalar>(x0: &Tensor<E>, n: usize, eps: &Tensor<E>, sched: &NoiseSchedule) -> Result<Tensor<E>> {
    if n == 0 {
        return Err(Error::InvalidArgument("forward_noise needs n >= 1".into()));
    }
    let ab = sched.alpha_bar(n)?;
    let (a, b) = (E::from_f64(ab.sqrt()), E::from_f64((1.0 - ab).sqrt()));
    x0.zip_map(eps, "forward_noise", |x, e| a * x + b * e)
}

/// Noise implied by an x0 prediction: `(x_n - sqrt(ab) x0_hat) / sqrt(1 - ab)`.
pub fn epsilon_from_xpred<E: Scalar>(x_n: &Tensor<E>, x0_hat: &Tensor<E>, n: usize, sched: &NoiseSchedule) -> Result<Tensor<E>> {
    let ab = sched.alpha_bar(n)?;
    if 1.0 - ab < 1e-12 {
        return Err(Error::InvalidArgument(format!("1 - alpha_bar_{n} is too small to divide by")));
    }
    let (a, inv) = (E::from_f64(ab.sqrt()), E::from_f64(1.0 / (1.0 - ab).sqrt()));
    x_n.zip_map(x0_hat, "epsilon_from_xpred", |x, p| (x - a * p) * inv)
}

/// Deterministic move to step `target < n`:
/// `sqrt(ab_target) x0_hat + sqrt(1 - ab_target) eps_hat`.
pub fn step_to<E: Scalar>(x0_hat: &Tensor<E>, eps_hat: &Tensor<E>, target: usize, sched: &NoiseSchedule) -> Result<Tensor<E>> {
    let ab = sched.alpha_bar(target)?;
    let (a, b) = (E::from_f64(ab.sqrt()), E::from_f64((1.0 - ab).sqrt()));
    x0_hat.zip_map(eps_hat, "ancestral_step", |p, e| a * p + b * e)
}

/// One reverse step from `n` to `n - 1`; at `n = 1` this returns `x0_hat`.
pub fn ancestral_step<E: Scalar>(
    x_n: &Tensor<E>,
    x0_hat: &Tensor<E>,
    eps_hat: &Tensor<E>,
    n: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor<E>> {
    if n == 0 || n > sched.steps() {
        return Err(Error::InvalidArgument(format!("step {n} outside 1..={}", sched.steps())));
    }
    x_n.expect_shape(x0_hat.shape(), "ancestral_step")?;
    step_to(x0_hat, eps_hat, n - 1, sched)
}

/// The conditional x0 predictor. Inputs and output are in diffusion space.
pub trait Denoiser<E: Scalar> {
    fn predict_x0(&self, x_n: &Tensor<E>, cond: &Tensor<E>, t_norm: f64) -> Result<Tensor<E>>;
}

impl<E: Scalar, F: Fn(&Tensor<E>, &Tensor<E>, f64) -> Result<Tensor<E>>> Denoiser<E> for F {
    fn predict_x0(&self, x_n: &Tensor<E>, cond: &Tensor<E>, t_norm: f64) -> Result<Tensor<E>> {
        self(x_n, cond, t_norm)
    }
}

/// A uniformly drawn step and its noise, the single-sample training estimate.
#[derive(Debug, Clone)]
pub struct NoiseDraw<E: Scalar> {
    pub n: usize,
    pub eps: Tensor<E>,
}

pub fn draw_noise<E: Scalar>(rng: &mut RngStream, shape: &[usize], sched: &NoiseSchedule) -> NoiseDraw<E> {
    let n = rng.range_inclusive(1, sched.steps() as u64) as usize;
    NoiseDraw { n, eps: gauss_draw(rng, shape) }
}

/// Mean squared error between `x0` and the prediction at one random `(n, eps)`;
/// `x0` is an image in `[0, 1]` and is compared in diffusion space.
pub fn xpred_training_loss<E: Scalar>(
    model: &impl Denoiser<E>,
    x0: &Tensor<E>,
    cond: &Tensor<E>,
    rng: &mut RngStream,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let target = to_diffusion_space(x0);
    let draw = draw_noise::<E>(rng, target.shape(), sched);
    let x_n = forward_noise(&target, draw.n, &draw.eps, sched)?;
    let pred = model.predict_x0(&x_n, cond, sched.t_norm(draw.n))?;
    let diff = target.zip_map(&pred, "xpred_training_loss", |a, b| a - b)?;
    Ok(diff.data().iter().map(|d| d.to_f64().powi(2)).sum::<f64>() / diff.numel() as f64)
}

/// Few-step sampler: start from `x_N ~ N(0, I)` and jump between strided
/// steps. Returns an image in `[0, 1]`.
pub fn sample<E: Scalar>(
    model: &impl Denoiser<E>,
    cond: &Tensor<E>,
    shape: &[usize],
    test_steps: usize,
    rng: &mut RngStream,
    sched: &NoiseSchedule,
) -> Result<Tensor<E>> {
    let steps = sched.strided_steps(test_steps)?;
    let mut x = gauss_draw::<E>(rng, shape);
    for (j, &n) in steps.iter().enumerate() {
        let x0_hat = model.predict_x0(&x, cond, sched.t_norm(n))?;
        let target = steps.get(j + 1).copied().unwrap_or(0);
        x = if target == 0 {
            x0_hat
        } else {
            let eps_hat = epsilon_from_xpred(&x, &x0_hat, n, sched)?;
            step_to(&x0_hat, &eps_hat, target, sched)?
        };
    }
    Ok(to_image_space(&x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn four_step_product() {
        let s = NoiseSchedule::linear(4, 0.1, 0.4).unwrap();
        assert!(close(s.alpha_bars(), &[0.9, 0.72, 0.504, 0.3024], 1e-15));
        let one = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        assert!(close(one.alpha_bars(), &[0.9], 1e-15));
        assert!(NoiseSchedule::linear(4, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn default_schedule_ends_in_noise() {
        let s = NoiseSchedule::default_schedule();
        let last = s.alpha_bar(s.steps()).unwrap();
        // independent oracle: exp(sum ln(1 - beta))
        let oracle = s.beta().iter().map(|b| (1.0 - b).ln()).sum::<f64>().exp();
        assert!((last - oracle).abs() < 1e-12);
        assert!(last < 0.05, "alpha_bar_N = {last}");
    }

    #[test]
    fn forward_noise_formula() {
        let s = NoiseSchedule::linear(1, 0.19, 0.19).unwrap();
        let x0 = Tensor::<f64>::full(vec![2], 1.0);
        let eps = Tensor::zeros(vec![2]);
        let xn = forward_noise(&x0, 1, &eps, &s).unwrap();
        assert!(close(xn.data(), &[0.9, 0.9], 1e-15));
        let tiny = NoiseSchedule::linear(1, 1e-12, 1e-12).unwrap();
        assert!(close(forward_noise(&x0, 1, &eps, &tiny).unwrap().data(), &[1.0, 1.0], 1e-9));
    }

    #[test]
    fn forward_noise_preserves_unit_variance() {
        let s = NoiseSchedule::default_schedule();
        let mut rng = RngStream::new(5);
        let x0: Tensor<f64> = gauss_draw(&mut rng, &[1_000_000]);
        let eps: Tensor<f64> = gauss_draw(&mut rng, &[1_000_000]);
        let xn = forward_noise(&x0, 20, &eps, &s).unwrap();
        let n = xn.numel() as f64;
        let mean = xn.data().iter().sum::<f64>() / n;
        let var = xn.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn epsilon_recovery() {
        let s = NoiseSchedule::default_schedule();
        let mut rng = RngStream::new(8);
        let x0: Tensor<f64> = gauss_draw(&mut rng, &[16]);
        let eps: Tensor<f64> = gauss_draw(&mut rng, &[16]);
        let xn = forward_noise(&x0, 10, &eps, &s).unwrap();
        let e = epsilon_from_xpred(&xn, &x0, 10, &s).unwrap();
        assert!(close(e.data(), eps.data(), 1e-12));
        let ab = s.alpha_bar(10).unwrap();
        let scaled = xn.map(|v| v / ab.sqrt());
        let zero = epsilon_from_xpred(&xn, &scaled, 10, &s).unwrap();
        assert!(zero.data().iter().all(|v| v.abs() < 1e-12));
        // affine in x0_hat: e(a) + e(b) - e(0) = e(a + b)
        let zeros = Tensor::zeros(vec![16]);
        let sum = x0.zip_map(&eps, "t", |a, b| a + b).unwrap();
        let lhs: Vec<f64> = [&x0, &eps]
            .iter()
            .map(|p| epsilon_from_xpred(&xn, p, 10, &s).unwrap())
            .fold(epsilon_from_xpred(&xn, &zeros, 10, &s).unwrap().map(|v| -v), |acc, t| acc.zip_map(&t, "t", |a, b| a + b).unwrap())
            .into_data();
        assert!(close(&lhs, epsilon_from_xpred(&xn, &sum, 10, &s).unwrap().data(), 1e-10));
    }

    #[test]
    fn epsilon_division_guard() {
        let s = NoiseSchedule::linear(2, 1e-14, 1e-14).unwrap();
        let t = Tensor::<f64>::zeros(vec![2]);
        assert!(epsilon_from_xpred(&t, &t, 1, &s).is_err());
    }

    #[test]
    fn terminal_step_returns_prediction() {
        let s = NoiseSchedule::default_schedule();
        let mut rng = RngStream::new(3);
        let x: Tensor<f64> = gauss_draw(&mut rng, &[8]);
        let p: Tensor<f64> = gauss_draw(&mut rng, &[8]);
        let e: Tensor<f64> = gauss_draw(&mut rng, &[8]);
        assert_eq!(ancestral_step(&x, &p, &e, 1, &s).unwrap(), p);
        assert!(ancestral_step(&x, &p, &e, 0, &s).is_err());
        assert!(ancestral_step(&x, &p, &e, 65, &s).is_err());
    }

    #[test]
    fn noiseless_trajectory_stays_put() {
        // x_n = x0 with x0_hat = x0 gives eps_hat = x0 (1 - sqrt ab) / sqrt(1 - ab);
        // the step must land on forward_noise(x0, n - 1, eps_hat).
        let s = NoiseSchedule::default_schedule();
        let x0 = Tensor::<f64>::from_f64(vec![3], &[0.2, -0.7, 1.0]).unwrap();
        for n in 2..=s.steps() {
            let e = epsilon_from_xpred(&x0, &x0, n, &s).unwrap();
            let ab = s.alpha_bar(n).unwrap();
            let expect = x0.map(|v| v * (1.0 - ab.sqrt()) / (1.0 - ab).sqrt());
            assert!(close(e.data(), expect.data(), 1e-12));
            let next = ancestral_step(&x0, &x0, &e, n, &s).unwrap();
            let fwd = forward_noise(&x0, n - 1, &e, &s).unwrap();
            assert!(close(next.data(), fwd.data(), 1e-12));
        }
    }

    #[test]
    fn strided_steps_end_at_one() {
        let s = NoiseSchedule::default_schedule();
        assert_eq!(s.strided_steps(1).unwrap(), vec![64]);
        assert_eq!(s.strided_steps(4).unwrap(), vec![64, 43, 22, 1]);
        assert_eq!(s.strided_steps(64).unwrap(), (1..=64).rev().collect::<Vec<_>>());
        assert!(s.strided_steps(0).is_err());
        assert!(s.strided_steps(65).is_err());
    }

    #[test]
    fn oracle_denoiser_samples_the_oracle() {
        let s = NoiseSchedule::default_schedule();
        let img = Tensor::<f64>::from_f64(vec![1, 2, 2], &[0.0, 0.25, 0.5, 1.0]).unwrap();
        let target = to_diffusion_space(&img);
        let oracle = |_: &Tensor<f64>, _: &Tensor<f64>, _: f64| Ok(target.clone());
        let cond = Tensor::zeros(vec![1]);
        for k in [1, 4, 64] {
            let out = sample(&oracle, &cond, &[1, 2, 2], k, &mut RngStream::new(k as u64), &s).unwrap();
            assert!(close(out.data(), img.data(), 1e-9));
        }
    }

    #[test]
    fn xpred_loss_cases() {
        let s = NoiseSchedule::default_schedule();
        let img = Tensor::<f64>::from_f64(vec![4], &[0.0, 0.5, 1.0, 0.75]).unwrap();
        let target = to_diffusion_space(&img);
        let cond = Tensor::zeros(vec![1]);
        let perfect = |_: &Tensor<f64>, _: &Tensor<f64>, _: f64| Ok(target.clone());
        assert_eq!(xpred_training_loss(&perfect, &img, &cond, &mut RngStream::new(1), &s).unwrap(), 0.0);
        let zero = |x: &Tensor<f64>, _: &Tensor<f64>, _: f64| Ok(Tensor::zeros(x.shape().to_vec()));
        let m = target.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        let got = xpred_training_loss(&zero, &img, &cond, &mut RngStream::new(1), &s).unwrap();
        assert!((got - m).abs() < 1e-15);
        let other = Tensor::full(vec![1], 9.0);
        let a = xpred_training_loss(&zero, &img, &cond, &mut RngStream::new(2), &s).unwrap();
        let b = xpred_training_loss(&zero, &img, &other, &mut RngStream::new(2), &s).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn alpha_bar_strictly_decreasing(steps in 1usize..200, lo in 1e-6f64..0.5, span in 0.0f64..0.49) {
            let s = NoiseSchedule::linear(steps, lo, lo + span).unwrap();
            let mut prev = 1.0;
            for &a in s.alpha_bars() {
                prop_assert!(a < prev);
                prev = a;
            }
        }
    }
}
