//! Central finite-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::layers::{Layer, LayerKind};
use super::params::ParamStore;
use super::rng::{gauss_draw, RngStream};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradient magnitudes below this are compared in absolute terms; at
/// `STEP = 1e-5` central differences carry roughly `1e-11 * |loss|` of
/// round-off, which swamps the relative error of near-zero entries.
pub const MAGNITUDE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries skipped because the perturbation crossed a relu kink or clamp.
    pub skipped: usize,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < TOLERANCE && self.skipped * 10 <= self.checked
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Builds the loss graph for a parameter store and a list of input tensors.
pub trait LossFn: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>> LossFn for F {}

fn evaluate(build: &impl LossFn, store: &ParamStore<f64>, inputs: &[Tensor<f64>]) -> Result<(f64, u64)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, store, &vars)?;
    Ok((g.value(loss).item(), g.kink_signature()))
}

fn pick(n: usize, limit: usize, rng: &mut RngStream) -> Vec<usize> {
    if n <= limit {
        (0..n).collect()
    } else {
        (0..limit).map(|_| rng.range_inclusive(0, n as u64 - 1) as usize).collect()
    }
}

/// Compares analytic gradients of every trainable parameter and every input
/// with central differences, sampling at most `per_tensor` entries of each.
pub fn check(
    name: &str,
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    build: impl LossFn,
    per_tensor: usize,
    rng: &mut RngStream,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, store, &vars)?;
    let base_sig = g.kink_signature();
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport {
        name: name.to_string(),
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
        worst: String::new(),
    };
    let record = |report: &mut GradCheckReport, label: String, a: f64, plus: (f64, u64), minus: (f64, u64)| {
        if plus.1 != base_sig || minus.1 != base_sig {
            report.skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * STEP);
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = format!("{label}: analytic {a:.6e} numeric {numeric:.6e}");
        }
    };

    let mut work = store.clone();
    for p in store.iter().filter(|p| !p.frozen) {
        let analytic = grads
            .param(&p.name)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; p.value.numel()]);
        for idx in pick(p.value.numel(), per_tensor, rng) {
            let orig = p.value.data()[idx];
            let slot = |w: &mut ParamStore<f64>, v: f64| w.get_mut(&p.name).unwrap().value.data_mut()[idx] = v;
            slot(&mut work, orig + STEP);
            let plus = evaluate(&build, &work, inputs)?;
            slot(&mut work, orig - STEP);
            let minus = evaluate(&build, &work, inputs)?;
            slot(&mut work, orig);
            record(&mut report, format!("{}[{idx}]", p.name), analytic[idx], plus, minus);
        }
    }

    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]);
        for idx in pick(t.numel(), per_tensor, rng) {
            let mut perturbed = inputs.to_vec();
            perturbed[k].data_mut()[idx] += STEP;
            let plus = evaluate(&build, store, &perturbed)?;
            perturbed[k].data_mut()[idx] -= 2.0 * STEP;
            let minus = evaluate(&build, store, &perturbed)?;
            record(&mut report, format!("input{k}[{idx}]"), analytic[idx], plus, minus);
        }
    }
    if report.checked == 0 {
        return Err(Error::Gradient(format!("{name}: no entries could be checked")));
    }
    Ok(report)
}

/// Checks one layer of `kind` on a random input, with biases and affine
/// terms randomised so that every parameter carries gradient.
pub fn layer_report(kind: LayerKind, seed: u64) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(seed);
    let mut store = ParamStore::<f64>::new();
    let (input_shape, layer) = match kind {
        LayerKind::Dense => (vec![3, 5], Layer::dense("l", 5, 4)),
        LayerKind::Conv3x3 => (vec![3, 6, 5], Layer::conv("l", 3, 4)),
        LayerKind::Conv3x3Stride2 => (vec![3, 7, 6], Layer::down("l", 3, 4)),
        LayerKind::UpsampleConv => (vec![3, 3, 4], Layer::up("l", 3, 2)),
        LayerKind::Relu => (vec![2, 3, 3], Layer::new("l", LayerKind::Relu, 2, 2)),
        LayerKind::GroupNorm { groups } => (vec![4, 3, 3], Layer::new("l", LayerKind::GroupNorm { groups }, 4, 4)),
    };
    layer.init(&mut store, &mut rng, 1.0)?;
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += 0.3 * rng.gaussian();
        }
    }
    let x: Tensor<f64> = gauss_draw(&mut rng, &input_shape);
    let out_probe = {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = layer.forward(&mut g, &store, xv)?;
        g.value(y).shape().to_vec()
    };
    let weights: Tensor<f64> = gauss_draw(&mut rng, &out_probe);
    check(
        kind.name(),
        &store,
        &[x],
        move |g: &mut Graph<f64>, s: &ParamStore<f64>, v: &[Var]| {
            let y = layer.forward(g, s, v[0])?;
            let w = g.constant(weights.clone());
            let p = g.mul(y, w)?;
            Ok(g.sum(p))
        },
        usize::MAX,
        &mut rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_matches_finite_differences() {
        for kind in LayerKind::ALL {
            for seed in 0..5 {
                let r = layer_report(kind, seed).unwrap();
                assert!(r.passed(), "{} seed {seed}: {:?}", kind.name(), r);
            }
        }
    }
}
