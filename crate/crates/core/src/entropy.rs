//! Quantisation and the discretised-Gaussian entropy model.
//!
//! Each latent element `z~` is scored by the mass of its unit-width bin under
//! `N(mu, sigma^2)`, with `(mu, sigma)` predicted from the hyper-latent. The
//! hyper-latent itself uses a per-channel learned Gaussian. Rates are in bits.

use crate::error::Result;
use crate::numerics::special::{self, LIKELIHOOD_FLOOR};
use crate::numerics::{Graph, ParamStore, RngStream, Scalar, Tensor, Var};

/// Smallest standard deviation the parameterisation can produce.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Nearest integer, ties to even. Straight-through gradient.
    Round,
    /// Additive `U(-1/2, 1/2)` noise, the differentiable training relaxation.
    Noise,
}

pub fn quantize<E: Scalar>(x: &Tensor<E>, mode: QuantMode, rng: &mut RngStream) -> Tensor<E> {
    match mode {
        QuantMode::Round => x.map(|v| E::from_f64(v.to_f64().round_ties_even())),
        QuantMode::Noise => x.map(|v| E::from_f64(v.to_f64() + rng.uniform(-0.5, 0.5))),
    }
}

/// Graph form of [`quantize`].
pub fn quantize_var<E: Scalar>(g: &mut Graph<E>, x: Var, mode: QuantMode, rng: &mut RngStream) -> Result<Var> {
    match mode {
        QuantMode::Round => Ok(g.round_ste(x)),
        QuantMode::Noise => {
            let shape = g.shape(x).to_vec();
            let u = crate::numerics::unif_draw::<E>(rng, &shape, -0.5, 0.5);
            let u = g.constant(u);
            g.add(x, u)
        }
    }
}

/// Mass of the bin `[z - 1/2, z + 1/2)` under `N(mu, sigma^2)`, floored at 1e-9.
pub fn gaussian_bin_mass(z: f64, mu: f64, sigma: f64) -> f64 {
    special::gaussian_bin_mass_raw(z, mu, sigma).max(LIKELIHOOD_FLOOR)
}

/// `softplus(raw) + SIGMA_FLOOR`, the map from unconstrained outputs to scales.
pub fn sigma_from_raw(raw: f64) -> f64 {
    special::softplus(raw) + SIGMA_FLOOR
}

pub fn sigma_from_raw_var<E: Scalar>(g: &mut Graph<E>, raw: Var) -> Var {
    let sp = g.softplus(raw);
    g.add_scalar(sp, SIGMA_FLOOR)
}

/// Per-channel learned Gaussian prior for the hyper-latent.
#[derive(Debug, Clone)]
pub struct FactorizedPrior {
    pub prefix: String,
    pub channels: usize,
}

impl FactorizedPrior {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        FactorizedPrior { prefix: prefix.into(), channels }
    }

    fn mu_name(&self) -> String {
        format!("{}.mu", self.prefix)
    }

    fn raw_sigma_name(&self) -> String {
        format!("{}.raw_sigma", self.prefix)
    }

    /// Zero means and unit scales (`softplus(0.5413) = 1`).
    pub fn init<E: Scalar>(&self, store: &mut ParamStore<E>) -> Result<()> {
        store.insert_const(self.mu_name(), &[self.channels], 0.0)?;
        store.insert_const(self.raw_sigma_name(), &[self.channels], 0.541_324_854_612_918_1)
    }

    /// `(mu, sigma)` broadcast over an `h x w` grid.
    pub fn params<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, h: usize, w: usize) -> Result<(Var, Var)> {
        let mu = g.param(store, &self.mu_name())?;
        let raw = g.param(store, &self.raw_sigma_name())?;
        let sigma = sigma_from_raw_var(g, raw);
        Ok((g.broadcast_channels(mu, h, w)?, g.broadcast_channels(sigma, h, w)?))
    }

    /// Mass of `y` in channel `channel` under the current parameters.
    pub fn mass<E: Scalar>(&self, store: &ParamStore<E>, channel: usize, y: f64) -> f64 {
        let mu = store.get(&self.mu_name()).expect("prior initialised").value.data()[channel].to_f64();
        let raw = store.get(&self.raw_sigma_name()).expect("prior initialised").value.data()[channel].to_f64();
        factorized_prior_mass(y, mu, sigma_from_raw(raw))
    }
}

/// Same contract as [`gaussian_bin_mass`] with one `(mu, sigma)` per channel.
pub fn factorized_prior_mass(y: f64, channel_mu: f64, channel_sigma: f64) -> f64 {
    gaussian_bin_mass(y, channel_mu, channel_sigma)
}

/// Probability masses aligned with a latent or hyper-latent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGrid {
    masses: Tensor<f64>,
}

impl LikelihoodGrid {
    /// Clamps every entry into `[1e-9, 1]`.
    pub fn new(masses: Tensor<f64>) -> Self {
        LikelihoodGrid { masses: masses.map(|p| p.clamp(LIKELIHOOD_FLOOR, 1.0)) }
    }

    pub fn masses(&self) -> &Tensor<f64> {
        &self.masses
    }

    pub fn bits(&self) -> f64 {
        self.masses.data().iter().map(|p| -p.log2()).sum()
    }
}

/// Total `sum(-log2 p)` over all grids.
pub fn rate_bits(grids: &[&LikelihoodGrid]) -> f64 {
    grids.iter().map(|g| g.bits()).sum()
}

/// Differentiable `sum(-log2 p)` over likelihood nodes.
pub fn rate_bits_var<E: Scalar>(g: &mut Graph<E>, likelihoods: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &p in likelihoods {
        let l = g.ln(p);
        let s = g.sum(l);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = total.unwrap_or_else(|| g.constant(Tensor::scalar(E::ZERO)));
    Ok(g.scale(total, -std::f64::consts::LOG2_E))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent Φ oracle: composite Simpson integration of the normal density.
    fn simpson_mass(z: f64, mu: f64, sigma: f64) -> f64 {
        let (a, b) = ((z - 0.5 - mu) / sigma, (z + 0.5 - mu) / sigma);
        let n = 20_000;
        let h = (b - a) / n as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn standard_bin_mass() {
        // Phi(0.5) - Phi(-0.5) = erf(0.5 / sqrt 2) = 0.38292492254802624
        let m = gaussian_bin_mass(0.0, 0.0, 1.0);
        assert!((m - 0.382_924_9).abs() < 1e-6);
        assert!((m - simpson_mass(0.0, 0.0, 1.0)).abs() < 1e-12);
        assert!((gaussian_bin_mass(2.0, 0.3, 1.7) - simpson_mass(2.0, 0.3, 1.7)).abs() < 1e-12);
    }

    #[test]
    fn central_bin_is_maximal() {
        for &(mu, sigma) in &[(0.0, 1.0), (3.0, 0.4), (-2.0, 5.0)] {
            let centre = gaussian_bin_mass(mu, mu, sigma);
            for k in -20..=20 {
                assert!(gaussian_bin_mass(mu + k as f64, mu, sigma) <= centre);
            }
        }
    }

    #[test]
    fn delta_limit() {
        assert!((gaussian_bin_mass(3.0, 3.0, 1e-6) - 1.0).abs() < 1e-9);
        assert!((gaussian_bin_mass(4.0, 3.0, 1e-6) - LIKELIHOOD_FLOOR).abs() < 1e-18);
    }

    #[test]
    fn bins_sum_to_one() {
        for &sigma in &[0.1f64, 1.0, 10.0] {
            for &mu in &[0.0f64, 0.37, -4.2] {
                let lo = (mu - 30.0 * sigma).floor() as i64;
                let hi = (mu + 30.0 * sigma).ceil() as i64;
                let total: f64 = (lo..=hi).map(|k| special::gaussian_bin_mass_raw(k as f64, mu, sigma)).sum();
                assert!((total - 1.0).abs() < 1e-6, "sigma {sigma} mu {mu}: {total}");
            }
        }
    }

    #[test]
    fn mass_decreases_away_from_centre() {
        let (mu, sigma) = (0.2, 1.3);
        let mut prev = gaussian_bin_mass(0.0, mu, sigma);
        for k in 1..15 {
            let m = gaussian_bin_mass(k as f64, mu, sigma);
            assert!(m <= prev);
            prev = m;
        }
    }

    #[test]
    fn rounding_and_noise() {
        let x = Tensor::<f64>::from_f64(vec![3], &[0.4, 0.6, 2.5]).unwrap();
        let mut rng = RngStream::new(0);
        assert_eq!(quantize(&x, QuantMode::Round, &mut rng).data(), &[0.0, 1.0, 2.0]);
        let ints = Tensor::<f64>::from_f64(vec![3], &[-3.0, 0.0, 7.0]).unwrap();
        assert_eq!(quantize(&ints, QuantMode::Round, &mut rng), ints);
        let big = Tensor::<f64>::from_f64(vec![1000], &vec![1.25; 1000]).unwrap();
        let noisy = quantize(&big, QuantMode::Noise, &mut rng);
        assert!(noisy.data().iter().all(|&v| (-0.5..0.5).contains(&(v - 1.25))));
    }

    #[test]
    fn rate_arithmetic() {
        let half = LikelihoodGrid::new(Tensor::full(vec![10], 0.5));
        assert!((rate_bits(&[&half]) - 10.0).abs() < 1e-12);
        let certain = LikelihoodGrid::new(Tensor::full(vec![4], 1.0));
        assert_eq!(rate_bits(&[&certain]), 0.0);
        let mixed = LikelihoodGrid::new(Tensor::from_f64(vec![2], &[0.25, 0.5]).unwrap());
        assert!((rate_bits(&[&mixed]) - 3.0).abs() < 1e-12);
        assert!((rate_bits(&[&mixed, &half]) - 13.0).abs() < 1e-12);
    }

    #[test]
    fn sharper_prediction_costs_fewer_bits() {
        let mu = 1.3f64;
        let z = mu.round();
        let mut prev = f64::INFINITY;
        for &sigma in &[5.0, 2.0, 1.0, 0.5, 0.2, 0.05] {
            let bits = -gaussian_bin_mass(z, mu, sigma).log2();
            assert!(bits < prev);
            prev = bits;
        }
    }

    #[test]
    fn rate_gradient_matches_finite_differences() {
        use crate::numerics::gradcheck;
        let mut rng = RngStream::new(5);
        for seed in 0..5 {
            let mut r = RngStream::new(100 + seed);
            let z: Vec<f64> = (0..12).map(|_| (3.0 * r.gaussian()).round() + r.uniform(-0.5, 0.5)).collect();
            let mu: Vec<f64> = (0..12).map(|_| 2.0 * r.gaussian()).collect();
            let raw: Vec<f64> = (0..12).map(|_| r.gaussian()).collect();
            let inputs = [
                Tensor::from_f64(vec![12], &z).unwrap(),
                Tensor::from_f64(vec![12], &mu).unwrap(),
                Tensor::from_f64(vec![12], &raw).unwrap(),
            ];
            let report = gradcheck::check(
                "rate_bits",
                &ParamStore::new(),
                &inputs,
                |g: &mut Graph<f64>, _: &ParamStore<f64>, v: &[Var]| {
                    let sigma = sigma_from_raw_var(g, v[2]);
                    let p = g.bin_mass(v[0], v[1], sigma)?;
                    rate_bits_var(g, &[p])
                },
                usize::MAX,
                &mut rng,
            )
            .unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn prior_masses_follow_parameters() {
        let prior = FactorizedPrior::new("prior", 2);
        let mut store = ParamStore::<f64>::new();
        prior.init(&mut store).unwrap();
        assert!((prior.mass(&store, 1, 0.0) - 0.382_924_9).abs() < 1e-6);
        assert!((factorized_prior_mass(0.0, 0.0, 1.0) - 0.382_924_9).abs() < 1e-6);
    }
}
