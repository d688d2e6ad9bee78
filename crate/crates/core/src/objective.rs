//! Distortion, perceptual and rate terms of the training objective, plus the
//! evaluation metrics.
//!
//! The perceptual distance is a fixed random-feature proxy: a two-layer
//! convolution stack drawn once from seed 42 and never trained. It keeps the
//! role of a feature-space distance without pretrained weights.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Layer, ParamStore, RngStream, Scalar, Tensor, Var};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const PROXY_SEED: u64 = 42;

pub fn mse<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    a.expect_shape(b.shape(), "mse")?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.to_f64() - y.to_f64()).powi(2)).sum();
    Ok(s / a.numel() as f64)
}

/// `10 log10(peak^2 / mse)`, capped at 100 dB once the error is below 1e-10.
pub fn psnr<E: Scalar>(x: &Tensor<E>, x_hat: &Tensor<E>, peak: f64) -> Result<f64> {
    let m = mse(x, x_hat)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(m: f64, peak: f64) -> f64 {
    if m < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB)
    }
}

/// Graph form of [`mse`].
pub fn mse_var<E: Scalar>(g: &mut Graph<E>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Frozen random-feature distance between images.
#[derive(Debug, Clone)]
pub struct PerceptualProxy<E: Scalar = f64> {
    layers: [Layer; 2],
    store: ParamStore<E>,
}

impl<E: Scalar> PerceptualProxy<E> {
    pub fn new() -> Self {
        let layers = [Layer::conv("proxy.conv1", 3, 8), Layer::down("proxy.conv2", 8, 16)];
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(PROXY_SEED);
        for l in &layers {
            l.init(&mut store, &mut rng, 1.0).expect("fresh store");
        }
        // Small random biases so the relu pattern is not tied to zero.
        for l in &layers {
            let b = store.get_mut(&format!("{}.bias", l.prefix)).expect("bias registered");
            for v in b.value.data_mut() {
                *v = E::from_f64(0.1 * rng.gaussian());
            }
        }
        store.freeze_prefixes(&["proxy"]);
        PerceptualProxy { layers, store }
    }

    fn features(&self, g: &mut Graph<E>, x: Var) -> Result<Var> {
        let h = self.layers[0].forward(g, &self.store, x)?;
        let h = g.relu(h);
        let h = self.layers[1].forward(g, &self.store, h)?;
        Ok(g.relu(h))
    }

    /// Mean squared feature difference; differentiable in both images.
    pub fn distance_var(&self, g: &mut Graph<E>, a: Var, b: Var) -> Result<Var> {
        crate::numerics::tensor::check_same_shape(g.shape(a), g.shape(b), "perceptual_proxy")?;
        let fa = self.features(g, a)?;
        let fb = self.features(g, b)?;
        mse_var(g, fa, fb)
    }

    pub fn distance(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let d = self.distance_var(&mut g, va, vb)?;
        Ok(g.value(d).item())
    }
}

impl<E: Scalar> Default for PerceptualProxy<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Every term of the objective and the weights that combine them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub jscc_distortion: f64,
    pub compression_distortion: f64,
    pub jscc_perceptual: f64,
    pub compression_perceptual: f64,
    pub rate_bits: f64,
    pub total: f64,
    pub eta: f64,
    pub lambda: f64,
}

impl LossReport {
    /// `(1 - eta)(d_jscc + d_comp) + eta (p_jscc + p_comp) + lambda rate`.
    pub fn rederive(&self) -> f64 {
        (1.0 - self.eta) * (self.jscc_distortion + self.compression_distortion)
            + self.eta * (self.jscc_perceptual + self.compression_perceptual)
            + self.lambda * self.rate_bits
    }
}

pub fn check_weights(eta: f64, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta must lie in [0, 1], got {eta}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(())
}

/// Inputs of the full objective for one image in `[0, 1]`: the source `x0`,
/// the channel reconstruction `x_hat` and the compression reconstruction `x_bar`.
pub fn total_loss<E: Scalar>(
    proxy: &PerceptualProxy<E>,
    x0: &Tensor<E>,
    x_hat: &Tensor<E>,
    x_bar: &Tensor<E>,
    rate_bits: f64,
    eta: f64,
    lambda: f64,
) -> Result<LossReport> {
    check_weights(eta, lambda)?;
    let mut r = LossReport {
        jscc_distortion: mse(x0, x_hat)?,
        compression_distortion: mse(x0, x_bar)?,
        jscc_perceptual: proxy.distance(x0, x_hat)?,
        compression_perceptual: proxy.distance(x0, x_bar)?,
        rate_bits,
        total: 0.0,
        eta,
        lambda,
    };
    r.total = r.rederive();
    Ok(r)
}

/// The compression-only objective; JSCC terms are reported as zero.
pub fn stage1_loss<E: Scalar>(
    proxy: &PerceptualProxy<E>,
    x0: &Tensor<E>,
    x_bar: &Tensor<E>,
    rate_bits: f64,
    eta: f64,
    lambda: f64,
) -> Result<LossReport> {
    check_weights(eta, lambda)?;
    let mut r = LossReport {
        jscc_distortion: 0.0,
        compression_distortion: mse(x0, x_bar)?,
        jscc_perceptual: 0.0,
        compression_perceptual: proxy.distance(x0, x_bar)?,
        rate_bits,
        total: 0.0,
        eta,
        lambda,
    };
    r.total = r.rederive();
    Ok(r)
}

/// Graph nodes of the objective terms; `None` JSCC nodes mean stage-1 form.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub jscc_distortion: Option<Var>,
    pub compression_distortion: Var,
    pub jscc_perceptual: Option<Var>,
    pub compression_perceptual: Var,
    pub rate_bits: Var,
}

/// Builds the distortion and perceptual nodes from image nodes.
pub fn loss_nodes<E: Scalar>(
    g: &mut Graph<E>,
    proxy: &PerceptualProxy<E>,
    x0: Var,
    x_hat: Option<Var>,
    x_bar: Var,
    rate_bits: Var,
) -> Result<LossNodes> {
    let (jd, jp) = match x_hat {
        Some(xh) => (Some(mse_var(g, x0, xh)?), Some(proxy.distance_var(g, x0, xh)?)),
        None => (None, None),
    };
    Ok(LossNodes {
        jscc_distortion: jd,
        compression_distortion: mse_var(g, x0, x_bar)?,
        jscc_perceptual: jp,
        compression_perceptual: proxy.distance_var(g, x0, x_bar)?,
        rate_bits,
    })
}

/// Weighted sum of the nodes and the matching report.
pub fn combine<E: Scalar>(g: &mut Graph<E>, nodes: &LossNodes, eta: f64, lambda: f64) -> Result<(Var, LossReport)> {
    check_weights(eta, lambda)?;
    let mut dist = nodes.compression_distortion;
    let mut perc = nodes.compression_perceptual;
    if let (Some(jd), Some(jp)) = (nodes.jscc_distortion, nodes.jscc_perceptual) {
        dist = g.add(jd, dist)?;
        perc = g.add(jp, perc)?;
    }
    let a = g.scale(dist, 1.0 - eta);
    let b = g.scale(perc, eta);
    let c = g.scale(nodes.rate_bits, lambda);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    let val = |v: Option<Var>| v.map(|v| g.value(v).item()).unwrap_or(0.0);
    let report = LossReport {
        jscc_distortion: val(nodes.jscc_distortion),
        compression_distortion: val(Some(nodes.compression_distortion)),
        jscc_perceptual: val(nodes.jscc_perceptual),
        compression_perceptual: val(Some(nodes.compression_perceptual)),
        rate_bits: val(Some(nodes.rate_bits)),
        total: g.value(total).item(),
        eta,
        lambda,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gauss_draw;

    fn img(v: f64) -> Tensor {
        Tensor::full(vec![3, 8, 8], v)
    }

    #[test]
    fn mse_cases() {
        let a = img(0.3);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = img(0.4);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        assert!(mse(&a, &Tensor::zeros(vec![3, 8, 4])).is_err());
    }

    #[test]
    fn psnr_cases() {
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0, 1.0), 0.0);
        assert_eq!(psnr(&img(0.2), &img(0.2), 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn proxy_is_a_pseudometric() {
        let p = PerceptualProxy::<f64>::new();
        let mut rng = RngStream::new(1);
        let a: Tensor = gauss_draw(&mut rng, &[3, 8, 8]);
        let b: Tensor = gauss_draw(&mut rng, &[3, 8, 8]);
        assert_eq!(p.distance(&a, &a).unwrap(), 0.0);
        assert_eq!(p.distance(&a, &b).unwrap(), p.distance(&b, &a).unwrap());
        assert!(p.distance(&a, &b).unwrap() >= 0.0);
        assert_eq!(p.distance(&a, &b).unwrap(), PerceptualProxy::<f64>::new().distance(&a, &b).unwrap());
    }

    #[test]
    fn proxy_sees_noise_on_flat_images() {
        let p = PerceptualProxy::<f64>::new();
        let mut rng = RngStream::new(2);
        for _ in 0..100 {
            let flat = img(rng.uniform(0.2, 0.8));
            let noise: Tensor = gauss_draw(&mut rng, &[3, 8, 8]);
            let noisy = flat.zip_map(&noise, "t", |a, n| a + 0.1 * n).unwrap();
            assert!(p.distance(&flat, &noisy).unwrap() > 0.0);
        }
    }

    #[test]
    fn weight_reductions() {
        let p = PerceptualProxy::<f64>::new();
        let (x0, xh, xb) = (img(0.5), img(0.6), img(0.45));
        let r0 = total_loss(&p, &x0, &xh, &xb, 100.0, 0.0, 1e-3).unwrap();
        assert!((r0.total - (r0.jscc_distortion + r0.compression_distortion + 0.1)).abs() < 1e-12);
        let r1 = total_loss(&p, &x0, &xh, &xb, 100.0, 1.0, 0.0).unwrap();
        assert!((r1.total - (r1.jscc_perceptual + r1.compression_perceptual)).abs() < 1e-12);
        assert_eq!(r1.rate_bits, 100.0);
        assert!(total_loss(&p, &x0, &xh, &xb, 1.0, 1.5, 0.0).is_err());
        assert!(total_loss(&p, &x0, &xh, &xb, 1.0, 0.5, -1.0).is_err());
        let s = stage1_loss(&p, &x0, &x0, 10.0, 0.0, 0.5).unwrap();
        assert_eq!(s.compression_distortion, 0.0);
        assert_eq!(s.compression_perceptual, 0.0);
        assert!((s.total - s.rederive()).abs() < 1e-9);
        assert_eq!(s.total, 5.0);
    }

    #[test]
    fn graph_combine_matches_numeric_report() {
        let p = PerceptualProxy::<f64>::new();
        let mut rng = RngStream::new(3);
        let x0: Tensor = gauss_draw(&mut rng, &[3, 8, 8]);
        let xh: Tensor = gauss_draw(&mut rng, &[3, 8, 8]);
        let xb: Tensor = gauss_draw(&mut rng, &[3, 8, 8]);
        let want = total_loss(&p, &x0, &xh, &xb, 42.0, 0.3, 0.01).unwrap();
        let mut g = Graph::new();
        let (a, b, c) = (g.constant(x0), g.constant(xh), g.constant(xb));
        let rate = g.constant(Tensor::scalar(42.0));
        let nodes = loss_nodes(&mut g, &p, a, Some(b), c, rate).unwrap();
        let (total, report) = combine(&mut g, &nodes, 0.3, 0.01).unwrap();
        assert!((report.total - want.total).abs() < 1e-12);
        assert!((g.value(total).item() - report.rederive()).abs() < 1e-9);
    }
}
