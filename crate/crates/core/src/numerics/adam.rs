use super::params::ParamStore;
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update on every trainable parameter; clears gradients.
///
/// Fails before touching any value if a trainable parameter lacks a gradient
/// or carries a non-finite one.
pub fn adam_step<E: Scalar>(params: &mut ParamStore<E>, cfg: &AdamConfig) -> Result<()> {
    if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
        return Err(Error::InvalidArgument(format!(
            "Adam betas must lie in [0, 1), got {} and {}",
            cfg.beta1, cfg.beta2
        )));
    }
    for p in params.iter().filter(|p| !p.frozen) {
        let g = p
            .grad
            .as_ref()
            .ok_or_else(|| Error::Gradient(format!("missing gradient for {}", p.name)))?;
        if !g.all_finite() {
            return Err(Error::Gradient(format!("non-finite gradient for {}", p.name)));
        }
    }
    for p in params.iter_mut() {
        let Some(g) = p.grad.take() else { continue };
        if p.frozen {
            continue;
        }
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = p.moment1.data_mut();
        let v = p.moment2.data_mut();
        let w = p.value.data_mut();
        for i in 0..w.len() {
            let gi = g.data()[i].to_f64();
            let mi = cfg.beta1 * m[i].to_f64() + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v[i].to_f64() + (1.0 - cfg.beta2) * gi * gi;
            m[i] = E::from_f64(mi);
            v[i] = E::from_f64(vi);
            let update = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            w[i] = E::from_f64(w[i].to_f64() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store_with_grad(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert_const("w", &[3], value).unwrap();
        s.get_mut("w").unwrap().grad = Some(Tensor::full(vec![3], grad));
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps).
        let mut s = store_with_grad(1.0, 1.0);
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        let p = s.get("w").unwrap();
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8);
        for &v in p.value.data() {
            assert!((v - expected).abs() < 1e-15, "{v}");
        }
        assert!(p.grad.is_none());
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut s = store_with_grad(0.25, 0.0);
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert!(s.get("w").unwrap().value.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn repeated_steps_count_and_descend() {
        let mut s = store_with_grad(1.0, 0.5);
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        let after_one = s.get("w").unwrap().value.data()[0];
        s.get_mut("w").unwrap().grad = Some(Tensor::full(vec![3], 0.5));
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        let p = s.get("w").unwrap();
        assert_eq!(p.step_count, 2);
        assert!(after_one < 1.0 && p.value.data()[0] < after_one);
    }

    #[test]
    fn missing_or_bad_gradient_is_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.insert_const("w", &[1], 0.0).unwrap();
        assert!(adam_step(&mut s, &AdamConfig::default()).is_err());
        s.get_mut("w").unwrap().grad = Some(Tensor::full(vec![1], f64::NAN));
        assert!(adam_step(&mut s, &AdamConfig::default()).is_err());
        assert_eq!(s.get("w").unwrap().value.data()[0], 0.0);
    }
}
