use indexmap::IndexMap;

use super::rng::RngStream;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A named trainable tensor with its optimizer state.
#[derive(Debug, Clone)]
pub struct Parameter<E: Scalar = f64> {
    pub name: String,
    pub value: Tensor<E>,
    pub moment1: Tensor<E>,
    pub moment2: Tensor<E>,
    pub step_count: u64,
    pub grad: Option<Tensor<E>>,
    pub frozen: bool,
}

impl<E: Scalar> Parameter<E> {
    pub fn new(name: impl Into<String>, value: Tensor<E>) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            value,
            moment1: Tensor::zeros(shape.clone()),
            moment2: Tensor::zeros(shape),
            step_count: 0,
            grad: None,
            frozen: false,
        }
    }
}

/// Insertion-ordered collection of parameters, addressed by dotted path.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<E: Scalar = f64> {
    params: IndexMap<String, Parameter<E>>,
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { params: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.params.insert(name.clone(), Parameter::new(name, value));
        Ok(())
    }

    /// He-normal initialisation scaled by `gain`.
    pub fn insert_he(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, gain: f64, rng: &mut RngStream) -> Result<()> {
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let data = (0..shape.iter().product::<usize>()).map(|_| E::from_f64(std * rng.gaussian())).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<()> {
        self.insert(name, Tensor::full(shape.to_vec(), E::from_f64(value)))
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<E>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<E>> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<E>> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<E>> {
        self.params.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Freezes every parameter whose name starts with one of `prefixes` and
    /// unfreezes the rest.
    pub fn freeze_prefixes(&mut self, prefixes: &[&str]) {
        for p in self.params.values_mut() {
            p.frozen = prefixes.iter().any(|pre| p.name.starts_with(pre));
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.freeze_prefixes(&[]);
    }

    /// Adds `scale * grad` into each trainable parameter's gradient buffer.
    /// Trainable parameters that the graph never reached receive zeros.
    pub fn accumulate<'a>(
        &mut self,
        grads: impl IntoIterator<Item = (&'a str, &'a [E])>,
        scale: f64,
    ) -> Result<()> {
        let s = E::from_f64(scale);
        for p in self.params.values_mut().filter(|p| !p.frozen) {
            if p.grad.is_none() {
                p.grad = Some(Tensor::zeros(p.value.shape().to_vec()));
            }
        }
        for (name, g) in grads {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Gradient(format!("gradient for unknown parameter {name}")))?;
            if p.frozen {
                continue;
            }
            let buf = p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape().to_vec()));
            if buf.numel() != g.len() {
                return Err(Error::Gradient(format!("gradient length mismatch for {name}")));
            }
            for (b, &v) in buf.data_mut().iter_mut().zip(g) {
                *b += s * v;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Values only, widened to `f64`, in insertion order.
    pub fn snapshot(&self) -> Vec<(String, Tensor<f64>)> {
        self.params.values().map(|p| (p.name.clone(), p.value.cast())).collect()
    }

    pub fn cast<F: Scalar>(&self) -> ParamStore<F> {
        let mut out = ParamStore::new();
        for p in self.params.values() {
            out.insert(p.name.clone(), p.value.cast()).expect("names are unique");
            out.params[p.name.as_str()].frozen = p.frozen;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freeze_by_prefix() {
        let mut s = ParamStore::<f64>::new();
        s.insert_const("a.w", &[2], 1.0).unwrap();
        s.insert_const("b.w", &[2], 1.0).unwrap();
        s.freeze_prefixes(&["a."]);
        assert!(s.get("a.w").unwrap().frozen);
        assert!(!s.get("b.w").unwrap().frozen);
        assert!(s.insert_const("a.w", &[1], 0.0).is_err());
    }

    #[test]
    fn unreachable_parameters_get_zero_grad() {
        let mut s = ParamStore::<f64>::new();
        s.insert_const("a", &[2], 1.0).unwrap();
        s.insert_const("b", &[3], 1.0).unwrap();
        let g = [2.0, 4.0];
        s.accumulate([("a", &g[..])], 0.5).unwrap();
        assert_eq!(s.get("a").unwrap().grad.as_ref().unwrap().data(), &[1.0, 2.0]);
        assert_eq!(s.get("b").unwrap().grad.as_ref().unwrap().data(), &[0.0; 3]);
    }
}
