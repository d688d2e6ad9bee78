//! The fixed layer vocabulary every network is assembled from.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::rng::RngStream;
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Affine map over the last dimension; weight `[in, out]`, bias `[out]`.
    Dense,
    Conv3x3,
    Conv3x3Stride2,
    /// Nearest 2x upsampling followed by a stride-1 3x3 convolution.
    UpsampleConv,
    Relu,
    GroupNorm { groups: usize },
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Dense,
        LayerKind::Conv3x3,
        LayerKind::Conv3x3Stride2,
        LayerKind::UpsampleConv,
        LayerKind::Relu,
        LayerKind::GroupNorm { groups: 2 },
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv3x3 => "conv3x3-stride1",
            LayerKind::Conv3x3Stride2 => "conv3x3-stride2",
            LayerKind::UpsampleConv => "upsample2x-conv",
            LayerKind::Relu => "relu",
            LayerKind::GroupNorm { .. } => "group-norm",
        }
    }
}

/// Weight and bias handles (gamma and beta for group norm).
#[derive(Debug, Clone, Copy, Default)]
pub struct LayerParams {
    pub weight: Option<Var>,
    pub bias: Option<Var>,
}

pub fn layer_forward<E: Scalar>(g: &mut Graph<E>, kind: LayerKind, params: LayerParams, input: Var) -> Result<Var> {
    let need = |v: Option<Var>, what: &str| {
        v.ok_or_else(|| Error::InvalidArgument(format!("{} layer needs a {what}", kind.name())))
    };
    match kind {
        LayerKind::Dense => g.dense(input, need(params.weight, "weight")?, params.bias),
        LayerKind::Conv3x3 => g.conv3x3(input, need(params.weight, "weight")?, params.bias, 1),
        LayerKind::Conv3x3Stride2 => g.conv3x3(input, need(params.weight, "weight")?, params.bias, 2),
        LayerKind::UpsampleConv => {
            let up = g.upsample2x(input)?;
            g.conv3x3(up, need(params.weight, "weight")?, params.bias, 1)
        }
        LayerKind::Relu => Ok(g.relu(input)),
        LayerKind::GroupNorm { groups } => {
            g.group_norm(input, need(params.weight, "gamma")?, need(params.bias, "beta")?, groups)
        }
    }
}

/// A layer bound to parameter names under `prefix`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub prefix: String,
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    pub fn new(prefix: impl Into<String>, kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        Layer { prefix: prefix.into(), kind, in_dim, out_dim }
    }

    pub fn conv(prefix: impl Into<String>, in_ch: usize, out_ch: usize) -> Self {
        Self::new(prefix, LayerKind::Conv3x3, in_ch, out_ch)
    }

    pub fn down(prefix: impl Into<String>, in_ch: usize, out_ch: usize) -> Self {
        Self::new(prefix, LayerKind::Conv3x3Stride2, in_ch, out_ch)
    }

    pub fn up(prefix: impl Into<String>, in_ch: usize, out_ch: usize) -> Self {
        Self::new(prefix, LayerKind::UpsampleConv, in_ch, out_ch)
    }

    pub fn dense(prefix: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self::new(prefix, LayerKind::Dense, in_dim, out_dim)
    }

    pub fn group_norm(prefix: impl Into<String>, channels: usize) -> Self {
        Self::new(prefix, LayerKind::GroupNorm { groups: norm_groups(channels) }, channels, channels)
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.prefix)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    /// Registers parameters: He-normal weights scaled by `gain`, zero biases,
    /// unit gamma and zero beta for group norm.
    pub fn init<E: Scalar>(&self, store: &mut ParamStore<E>, rng: &mut RngStream, gain: f64) -> Result<()> {
        let (i, o) = (self.in_dim, self.out_dim);
        match self.kind {
            LayerKind::Dense => {
                store.insert_he(self.weight_name(), &[i, o], i, gain, rng)?;
                store.insert_const(self.bias_name(), &[o], 0.0)
            }
            LayerKind::Conv3x3 | LayerKind::Conv3x3Stride2 | LayerKind::UpsampleConv => {
                store.insert_he(self.weight_name(), &[o, i, 3, 3], 9 * i, gain, rng)?;
                store.insert_const(self.bias_name(), &[o], 0.0)
            }
            LayerKind::GroupNorm { .. } => {
                store.insert_const(self.weight_name(), &[o], 1.0)?;
                store.insert_const(self.bias_name(), &[o], 0.0)
            }
            LayerKind::Relu => Ok(()),
        }
    }

    pub fn forward<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, x: Var) -> Result<Var> {
        let params = match self.kind {
            LayerKind::Relu => LayerParams::default(),
            _ => LayerParams {
                weight: Some(g.param(store, &self.weight_name())?),
                bias: Some(g.param(store, &self.bias_name())?),
            },
        };
        layer_forward(g, self.kind, params, x)
    }
}

/// Largest group count not above 8 that divides `channels`.
pub fn norm_groups(channels: usize) -> usize {
    (1..=8.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn dense_all_ones_weight() {
        let mut g = Graph::<f64>::new();
        let w = g.constant(Tensor::full(vec![2, 3], 1.0));
        let b = g.constant(Tensor::zeros(vec![3]));
        let x = g.constant(Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap());
        let y = layer_forward(&mut g, LayerKind::Dense, LayerParams { weight: Some(w), bias: Some(b) }, x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn dense_affine_rule() {
        let mut g = Graph::<f64>::new();
        let w = g.constant(Tensor::from_f64(vec![2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = g.constant(Tensor::from_f64(vec![3], &[0.5, 0.0, -1.0]).unwrap());
        let x = g.constant(Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap());
        let y = g.dense(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[0.5 + 1.0 + 8.0, 2.0 + 10.0, -1.0 + 3.0 + 12.0]);
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(vec![3], &[-1.0, 0.0, 2.0]).unwrap());
        let y = layer_forward(&mut g, LayerKind::Relu, LayerParams::default(), x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn stride_two_conv_shape() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = RngStream::new(0);
        let layer = Layer::down("c", 3, 32);
        layer.init(&mut store, &mut rng, 1.0).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![3, 32, 32]));
        let y = layer.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[32, 16, 16]);
    }

    #[test]
    fn upsample_conv_doubles() {
        let mut store = ParamStore::<f64>::new();
        let layer = Layer::up("u", 4, 2);
        layer.init(&mut store, &mut RngStream::new(1), 1.0).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![4, 5, 3]));
        let y = layer.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[2, 10, 6]);
    }

    #[test]
    fn missing_weight_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![2]));
        assert!(layer_forward(&mut g, LayerKind::Dense, LayerParams::default(), x).is_err());
    }

    #[test]
    fn group_counts() {
        assert_eq!(norm_groups(32), 8);
        assert_eq!(norm_groups(12), 6);
        assert_eq!(norm_groups(3), 3);
    }
}
