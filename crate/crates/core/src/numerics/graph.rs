//! Tensor-level reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the record in reverse and returns the
//! vector-Jacobian products for every leaf that asked for a gradient. Each op
//! stores exactly what its backward rule needs; convolutions rebuild their
//! patch matrix instead of keeping it alive.

use std::collections::HashMap;

use super::params::ParamStore;
use super::special;
use super::tensor::{check_same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    DivScalarVar(Var, Var),
    Sum(Var),
    Mean(Var),
    Square(Var),
    Sqrt(Var),
    Ln(Var),
    Relu(Var),
    Softplus(Var),
    Dense { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, stride: usize },
    Upsample(Var),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize },
    Concat(Var, Var),
    SliceChannels { x: Var, start: usize },
    BroadcastChannels(Var),
    Reshape(Var),
    ChwToLc(Var),
    LcToChw(Var),
    RoundSte(Var),
    BinMass { x: Var, mu: Var, sigma: Var },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op,
    requires_grad: bool,
    aux: Vec<E>,
}

/// Operation record plus the values computed so far.
pub struct Graph<E: Scalar = f64> {
    nodes: Vec<Node<E>>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
    decisions: Vec<u64>,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<E> {
    grads: Vec<Option<Vec<E>>>,
    params: Vec<(String, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl<E: Scalar> Gradients<E> {
    /// Gradient with respect to a leaf created by [`Graph::input`] or [`Graph::param`].
    pub fn wrt(&self, v: Var) -> Option<&[E]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, name: &str) -> Option<&[E]> {
        self.params.iter().find(|(n, _)| n == name).and_then(|(_, v)| self.wrt(*v))
    }

    /// `(name, shape, grad)` for every trainable parameter that appeared in the graph.
    pub fn params(&self) -> impl Iterator<Item = (&str, &[usize], &[E])> + '_ {
        self.params.iter().filter_map(move |(name, v)| {
            self.wrt(*v).map(|g| (name.as_str(), self.shapes[v.0].as_slice(), g))
        })
    }
}

fn acc<E: Scalar>(grads: &mut [Option<Vec<E>>], v: Var, len: usize, f: impl FnOnce(&mut [E])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![E::ZERO; len]);
    f(slot);
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: Vec::new(), param_index: HashMap::new(), decisions: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<E>, op: Op, requires_grad: bool, aux: Vec<E>) -> Var {
        self.nodes.push(Node { value, op, requires_grad, aux });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, value: Tensor<E>, op: Op, aux: Vec<E>) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, op, rg, aux)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Leaf, false, Vec::new())
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Leaf, true, Vec::new())
    }

    /// Loads a named parameter. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<E>, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_index.get(name) {
            return Ok(v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        let v = self.push(p.value.clone(), Op::Leaf, !p.frozen, Vec::new());
        if !p.frozen {
            self.params.push((name.to_string(), v));
        }
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    fn binary_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(E, E) -> E,
        op: Op,
    ) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), name, f)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg, Vec::new()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let ce = E::from_f64(c);
        let value = self.value(x).map(|v| v * ce);
        self.unary(x, value, Op::Scale(x, c), Vec::new())
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let ce = E::from_f64(c);
        let value = self.value(x).map(|v| v + ce);
        self.unary(x, value, Op::AddScalar(x), Vec::new())
    }

    fn expect_scalar(&self, s: Var, op: &'static str) -> Result<E> {
        let t = self.value(s);
        if t.numel() != 1 {
            return Err(Error::shape(op, format!("expected a single-element factor, got {:?}", t.shape())));
        }
        Ok(t.data()[0])
    }

    /// `x * s` for a single-element `s`.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.expect_scalar(s, "mul_scalar_var")?;
        let value = self.value(x).map(|v| v * sv);
        let rg = self.rg(&[x, s]);
        Ok(self.push(value, Op::MulScalarVar(x, s), rg, Vec::new()))
    }

    /// `x / s` for a single-element `s`.
    pub fn div_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.expect_scalar(s, "div_scalar_var")?;
        let value = self.value(x).map(|v| v / sv);
        let rg = self.rg(&[x, s]);
        Ok(self.push(value, Op::DivScalarVar(x, s), rg, Vec::new()))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: E = self.value(x).data().iter().copied().sum();
        self.unary(x, Tensor::scalar(s), Op::Sum(x), Vec::new())
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: E = t.data().iter().copied().sum();
        let m = s / E::from_f64(t.numel() as f64);
        self.unary(x, Tensor::scalar(m), Op::Mean(x), Vec::new())
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.unary(x, value, Op::Square(x), Vec::new())
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.sqrt());
        self.unary(x, value, Op::Sqrt(x), Vec::new())
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| E::from_f64(v.to_f64().ln()));
        self.unary(x, value, Op::Ln(x), Vec::new())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > E::ZERO { v } else { E::ZERO });
        self.unary(x, value, Op::Relu(x), Vec::new())
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| E::from_f64(special::softplus(v.to_f64())));
        self.unary(x, value, Op::Softplus(x), Vec::new())
    }

    /// Hard rounding (ties to even) with an identity backward pass.
    pub fn round_ste(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| E::from_f64(v.to_f64().round_ties_even()));
        self.unary(x, value, Op::RoundSte(x), Vec::new())
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.unary(x, value, Op::Reshape(x), Vec::new()))
    }

    /// `x[R, In] @ w[In, Out] + b[Out]`; a rank-1 `x` is treated as one row.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return Err(Error::shape("dense", format!("weight must be rank 2, got {ws:?}")));
        }
        let (rows, inp) = match xs.as_slice() {
            [i] => (1, *i),
            [r, i] => (*r, *i),
            _ => return Err(Error::shape("dense", format!("input must be rank 1 or 2, got {xs:?}"))),
        };
        if inp != ws[0] {
            return Err(Error::shape(
                "dense",
                format!("input feature dimension {inp} does not match weight dimension 0 ({})", ws[0]),
            ));
        }
        let out = ws[1];
        let mut data = vec![E::ZERO; rows * out];
        if let Some(b) = b {
            let bt = self.value(b);
            check_same_shape(bt.shape(), &[out], "dense bias")?;
            for r in 0..rows {
                data[r * out..(r + 1) * out].copy_from_slice(bt.data());
            }
        }
        E::gemm(
            rows,
            inp,
            out,
            self.value(x).data(),
            inp as isize,
            1,
            self.value(w).data(),
            out as isize,
            1,
            E::ONE,
            &mut data,
            out as isize,
            1,
        );
        let shape = if xs.len() == 1 { vec![out] } else { vec![rows, out] };
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Tensor::new(shape, data)?, Op::Dense { x, w, b }, rg, Vec::new()))
    }

    /// 3x3 convolution with one pixel of zero padding. Stride 2 halves each
    /// spatial dimension, rounding down.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let [ci, h, wd] = xs[..] else {
            return Err(Error::shape("conv3x3", format!("input must be C x H x W, got {xs:?}")));
        };
        if ws.len() != 4 || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::shape("conv3x3", format!("weight must be Co x Ci x 3 x 3, got {ws:?}")));
        }
        if ws[1] != ci {
            return Err(Error::shape(
                "conv3x3",
                format!("input channels (dimension 0) = {ci} but weight expects {}", ws[1]),
            ));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidArgument(format!("conv3x3 stride must be 1 or 2, got {stride}")));
        }
        let (ho, wo) = (h / stride, wd / stride);
        if ho == 0 || wo == 0 {
            return Err(Error::shape("conv3x3", format!("spatial size {h}x{wd} too small for stride {stride}")));
        }
        let co = ws[0];
        let p = ho * wo;
        let cols = im2col(self.value(x).data(), ci, h, wd, ho, wo, stride);
        let mut out = vec![E::ZERO; co * p];
        if let Some(b) = b {
            let bt = self.value(b);
            check_same_shape(bt.shape(), &[co], "conv3x3 bias")?;
            for (c, &bv) in bt.data().iter().enumerate() {
                out[c * p..(c + 1) * p].fill(bv);
            }
        }
        let k = ci * 9;
        E::gemm(co, k, p, self.value(w).data(), k as isize, 1, &cols, p as isize, 1, E::ONE, &mut out, p as isize, 1);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Tensor::new(vec![co, ho, wo], out)?, Op::Conv { x, w, b, stride }, rg, Vec::new()))
    }

    /// Nearest-neighbour 2x upsampling of a C x H x W tensor.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [c, h, w] = xs[..] else {
            return Err(Error::shape("upsample2x", format!("input must be C x H x W, got {xs:?}")));
        };
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![E::ZERO; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(ch * h2 + y) * w2 + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        Ok(self.unary(x, Tensor::new(vec![c, h2, w2], out)?, Op::Upsample(x), Vec::new()))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let xs = self.shape(x).to_vec();
        let [c, h, w] = xs[..] else {
            return Err(Error::shape("group_norm", format!("input must be C x H x W, got {xs:?}")));
        };
        if groups == 0 || c % groups != 0 {
            return Err(Error::shape("group_norm", format!("{c} channels (dimension 0) not divisible into {groups} groups")));
        }
        check_same_shape(self.shape(gamma), &[c], "group_norm gamma")?;
        check_same_shape(self.shape(beta), &[c], "group_norm beta")?;
        let per = (c / groups) * h * w;
        let hw = h * w;
        let src = self.value(x).data();
        let (g_data, b_data) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![E::ZERO; src.len()];
        let mut aux = vec![E::ZERO; src.len() + groups];
        for g in 0..groups {
            let seg = &src[g * per..(g + 1) * per];
            let mean = seg.iter().map(|v| v.to_f64()).sum::<f64>() / per as f64;
            let var = seg.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / per as f64;
            let inv_std = 1.0 / (var + EPS).sqrt();
            aux[src.len() + g] = E::from_f64(inv_std);
            for (j, v) in seg.iter().enumerate() {
                let idx = g * per + j;
                let ch = idx / hw;
                let xhat = E::from_f64((v.to_f64() - mean) * inv_std);
                aux[idx] = xhat;
                out[idx] = g_data[ch] * xhat + b_data[ch];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(Tensor::new(xs, out)?, Op::GroupNorm { x, gamma, beta, groups }, rg, aux))
    }

    /// Channel concatenation of two C x H x W tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 {
            return Err(Error::shape("concat_channels", format!("inputs must be C x H x W, got {sa:?} and {sb:?}")));
        }
        check_same_shape(&sa[1..], &sb[1..], "concat_channels (spatial)")?;
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![sa[0] + sb[0], sa[1], sa[2]], data)?, Op::Concat(a, b), rg, Vec::new()))
    }

    /// Channels `start..end` of a C x H x W tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || start >= end || end > xs[0] {
            return Err(Error::shape("slice_channels", format!("cannot take channels {start}..{end} of {xs:?}")));
        }
        let hw = xs[1] * xs[2];
        let data = self.value(x).data()[start * hw..end * hw].to_vec();
        Ok(self.unary(x, Tensor::new(vec![end - start, xs[1], xs[2]], data)?, Op::SliceChannels { x, start }, Vec::new()))
    }

    /// Repeats a per-channel vector `[C]` over an `h x w` grid.
    pub fn broadcast_channels(&mut self, v: Var, h: usize, w: usize) -> Result<Var> {
        let vs = self.shape(v).to_vec();
        if vs.len() != 1 {
            return Err(Error::shape("broadcast_channels", format!("expected a vector, got {vs:?}")));
        }
        let hw = h * w;
        let data: Vec<E> = self.value(v).data().iter().flat_map(|&c| std::iter::repeat_n(c, hw)).collect();
        Ok(self.unary(v, Tensor::new(vec![vs[0], h, w], data)?, Op::BroadcastChannels(v), Vec::new()))
    }

    /// `[C, h, w]` grid to `[h*w, C]` vectors (one row per spatial position).
    pub fn chw_to_lc(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [c, h, w] = xs[..] else {
            return Err(Error::shape("chw_to_lc", format!("input must be C x H x W, got {xs:?}")));
        };
        let l = h * w;
        let src = self.value(x).data();
        let mut data = vec![E::ZERO; c * l];
        for ch in 0..c {
            for i in 0..l {
                data[i * c + ch] = src[ch * l + i];
            }
        }
        Ok(self.unary(x, Tensor::new(vec![l, c], data)?, Op::ChwToLc(x), Vec::new()))
    }

    /// Inverse of [`Graph::chw_to_lc`].
    pub fn lc_to_chw(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [l, c] = xs[..] else {
            return Err(Error::shape("lc_to_chw", format!("input must be L x C, got {xs:?}")));
        };
        if l != h * w {
            return Err(Error::shape("lc_to_chw", format!("dimension 0 is {l}, grid {h}x{w} needs {}", h * w)));
        }
        let src = self.value(x).data();
        let mut data = vec![E::ZERO; c * l];
        for i in 0..l {
            for ch in 0..c {
                data[ch * l + i] = src[i * c + ch];
            }
        }
        Ok(self.unary(x, Tensor::new(vec![c, h, w], data)?, Op::LcToChw(x), Vec::new()))
    }

    /// Elementwise probability mass of the unit-width bin centred at `x` under
    /// `N(mu, sigma^2)`, floored at [`special::LIKELIHOOD_FLOOR`].
    pub fn bin_mass(&mut self, x: Var, mu: Var, sigma: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        check_same_shape(&xs, self.shape(mu), "bin_mass (mu)")?;
        check_same_shape(&xs, self.shape(sigma), "bin_mass (sigma)")?;
        let n = self.value(x).numel();
        let mut out = Vec::with_capacity(n);
        let mut aux = vec![E::ZERO; 2 * n];
        {
            let (xd, md, sd) = (self.value(x).data(), self.value(mu).data(), self.value(sigma).data());
            for i in 0..n {
                let (v, m, s) = (xd[i].to_f64(), md[i].to_f64(), sd[i].to_f64());
                let raw = special::gaussian_bin_mass_raw(v, m, s);
                if raw > special::LIKELIHOOD_FLOOR {
                    let upper = (v + 0.5 - m) / s;
                    let lower = (v - 0.5 - m) / s;
                    let (pu, pl) = (special::std_normal_pdf(upper), special::std_normal_pdf(lower));
                    aux[i] = E::from_f64((pu - pl) / s);
                    aux[n + i] = E::from_f64(-(pu * upper - pl * lower) / s);
                    out.push(E::from_f64(raw));
                } else {
                    out.push(E::from_f64(special::LIKELIHOOD_FLOOR));
                }
            }
        }
        let rg = self.rg(&[x, mu, sigma]);
        Ok(self.push(Tensor::new(xs, out)?, Op::BinMass { x, mu, sigma }, rg, aux))
    }

    /// Records a discrete choice made outside the graph that shaped its
    /// constants, so [`Graph::kink_signature`] covers it.
    pub fn note_decision(&mut self, value: u64) {
        self.decisions.push(value);
    }

    /// Hash of every non-smooth decision taken in the forward pass: relu
    /// input signs, likelihood clamps, rounded values and noted decisions.
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |bit: u64| {
            h ^= bit;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        self.decisions.iter().for_each(|&d| mix(d));
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => self.value(x).data().iter().for_each(|&v| mix((v > E::ZERO) as u64)),
                Op::BinMass { .. } => node
                    .value
                    .data()
                    .iter()
                    .for_each(|&v| mix((v.to_f64() <= special::LIKELIHOOD_FLOOR) as u64)),
                Op::RoundSte(_) => node.value.data().iter().for_each(|&v| mix(v.to_f64() as i64 as u64)),
                _ => {}
            }
        }
        h
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Gradient("loss variable was not recorded in this graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Gradient(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![E::ONE]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.numel()
    }

    fn backward_node(&self, node: &Node<E>, g: &[E], grads: &mut [Option<Vec<E>>]) {
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, sign) in [(a, E::ONE), (b, E::ONE)] {
                    if self.wants(v) {
                        acc(grads, v, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += sign * g));
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(a, E::ONE), (b, -E::ONE)] {
                    if self.wants(v) {
                        acc(grads, v, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += sign * g));
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if self.wants(v) {
                        let o = self.value(other).data();
                        acc(grads, v, g.len(), |d| {
                            for ((d, &g), &o) in d.iter_mut().zip(g).zip(o) {
                                *d += g * o;
                            }
                        });
                    }
                }
            }
            Op::Scale(x, c) => {
                let c = E::from_f64(c);
                acc(grads, x, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += c * g));
            }
            Op::AddScalar(x) | Op::Reshape(x) | Op::RoundSte(x) => {
                acc(grads, x, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
            }
            Op::MulScalarVar(x, s) => {
                let sv = self.value(s).data()[0];
                if self.wants(x) {
                    acc(grads, x, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * sv));
                }
                if self.wants(s) {
                    let dot: E = g.iter().zip(self.value(x).data()).map(|(&g, &x)| g * x).sum();
                    acc(grads, s, 1, |d| d[0] += dot);
                }
            }
            Op::DivScalarVar(x, s) => {
                let sv = self.value(s).data()[0];
                if self.wants(x) {
                    acc(grads, x, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g / sv));
                }
                if self.wants(s) {
                    let dot: E = g.iter().zip(self.value(x).data()).map(|(&g, &x)| g * x).sum();
                    acc(grads, s, 1, |d| d[0] += -dot / (sv * sv));
                }
            }
            Op::Sum(x) => {
                let n = self.numel(x);
                acc(grads, x, n, |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean(x) => {
                let n = self.numel(x);
                let gm = g[0] / E::from_f64(n as f64);
                acc(grads, x, n, |d| d.iter_mut().for_each(|d| *d += gm));
            }
            Op::Square(x) => {
                let xv = self.value(x).data();
                let two = E::from_f64(2.0);
                acc(grads, x, g.len(), |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        *d += two * x * g;
                    }
                });
            }
            Op::Sqrt(x) => {
                let yv = node.value.data();
                let half = E::from_f64(0.5);
                acc(grads, x, g.len(), |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(yv) {
                        *d += g * half / y;
                    }
                });
            }
            Op::Ln(x) => {
                let xv = self.value(x).data();
                acc(grads, x, g.len(), |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        *d += g / x;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(x).data();
                acc(grads, x, g.len(), |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        if x > E::ZERO {
                            *d += g;
                        }
                    }
                });
            }
            Op::Softplus(x) => {
                let xv = self.value(x).data();
                acc(grads, x, g.len(), |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        *d += g * E::from_f64(special::sigmoid(x.to_f64()));
                    }
                });
            }
            Op::Dense { x, w, b } => self.backward_dense(x, w, b, g, grads),
            Op::Conv { x, w, b, stride } => self.backward_conv(x, w, b, stride, g, grads),
            Op::Upsample(x) => {
                let [c, h, w] = self.shape(x)[..] else { unreachable!() };
                let (h2, w2) = (2 * h, 2 * w);
                acc(grads, x, c * h * w, |d| {
                    for ch in 0..c {
                        for y in 0..h2 {
                            for xx in 0..w2 {
                                d[(ch * h + y / 2) * w + xx / 2] += g[(ch * h2 + y) * w2 + xx];
                            }
                        }
                    }
                });
            }
            Op::GroupNorm { x, gamma, beta, groups } => {
                let [c, h, w] = self.shape(x)[..] else { unreachable!() };
                let hw = h * w;
                let n = c * hw;
                let per = n / groups;
                let xhat = &node.aux[..n];
                let inv_std = &node.aux[n..];
                let gam = self.value(gamma).data();
                if self.wants(gamma) {
                    acc(grads, gamma, c, |d| {
                        for i in 0..n {
                            d[i / hw] += g[i] * xhat[i];
                        }
                    });
                }
                if self.wants(beta) {
                    acc(grads, beta, c, |d| {
                        for i in 0..n {
                            d[i / hw] += g[i];
                        }
                    });
                }
                if self.wants(x) {
                    acc(grads, x, n, |d| {
                        for grp in 0..groups {
                            let range = grp * per..(grp + 1) * per;
                            let mut sum_dx = 0.0;
                            let mut sum_dx_xhat = 0.0;
                            for i in range.clone() {
                                let dxh = (g[i] * gam[i / hw]).to_f64();
                                sum_dx += dxh;
                                sum_dx_xhat += dxh * xhat[i].to_f64();
                            }
                            let is = inv_std[grp].to_f64();
                            let m = per as f64;
                            for i in range {
                                let dxh = (g[i] * gam[i / hw]).to_f64();
                                let v = is / m * (m * dxh - sum_dx - xhat[i].to_f64() * sum_dx_xhat);
                                d[i] += E::from_f64(v);
                            }
                        }
                    });
                }
            }
            Op::Concat(a, b) => {
                let na = self.numel(a);
                if self.wants(a) {
                    acc(grads, a, na, |d| d.iter_mut().zip(&g[..na]).for_each(|(d, &g)| *d += g));
                }
                if self.wants(b) {
                    let nb = self.numel(b);
                    acc(grads, b, nb, |d| d.iter_mut().zip(&g[na..]).for_each(|(d, &g)| *d += g));
                }
            }
            Op::SliceChannels { x, start } => {
                let xs = self.shape(x);
                let hw = xs[1] * xs[2];
                let n = self.numel(x);
                acc(grads, x, n, |d| {
                    d[start * hw..start * hw + g.len()].iter_mut().zip(g).for_each(|(d, &g)| *d += g)
                });
            }
            Op::BroadcastChannels(v) => {
                let c = self.numel(v);
                let hw = g.len() / c;
                acc(grads, v, c, |d| {
                    for (ch, d) in d.iter_mut().enumerate() {
                        *d += g[ch * hw..(ch + 1) * hw].iter().copied().sum::<E>();
                    }
                });
            }
            Op::ChwToLc(x) => {
                let [c, h, w] = self.shape(x)[..] else { unreachable!() };
                let l = h * w;
                acc(grads, x, c * l, |d| {
                    for ch in 0..c {
                        for i in 0..l {
                            d[ch * l + i] += g[i * c + ch];
                        }
                    }
                });
            }
            Op::LcToChw(x) => {
                let [l, c] = self.shape(x)[..] else { unreachable!() };
                acc(grads, x, c * l, |d| {
                    for i in 0..l {
                        for ch in 0..c {
                            d[i * c + ch] += g[ch * l + i];
                        }
                    }
                });
            }
            Op::BinMass { x, mu, sigma } => {
                let n = g.len();
                let (dx, ds) = node.aux.split_at(n);
                if self.wants(x) {
                    acc(grads, x, n, |d| (0..n).for_each(|i| d[i] += g[i] * dx[i]));
                }
                if self.wants(mu) {
                    acc(grads, mu, n, |d| (0..n).for_each(|i| d[i] -= g[i] * dx[i]));
                }
                if self.wants(sigma) {
                    acc(grads, sigma, n, |d| (0..n).for_each(|i| d[i] += g[i] * ds[i]));
                }
            }
        }
    }

    fn backward_dense(&self, x: Var, w: Var, b: Option<Var>, g: &[E], grads: &mut [Option<Vec<E>>]) {
        let ws = self.shape(w);
        let (inp, out) = (ws[0], ws[1]);
        let rows = g.len() / out;
        if let Some(b) = b.filter(|&b| self.wants(b)) {
            acc(grads, b, out, |d| {
                for r in 0..rows {
                    for o in 0..out {
                        d[o] += g[r * out + o];
                    }
                }
            });
        }
        if self.wants(w) {
            let xv = self.value(x).data();
            // dW[In, Out] += x^T[In, R] @ g[R, Out]
            acc(grads, w, inp * out, |d| {
                E::gemm(inp, rows, out, xv, 1, inp as isize, g, out as isize, 1, E::ONE, d, out as isize, 1)
            });
        }
        if self.wants(x) {
            let wv = self.value(w).data();
            // dX[R, In] += g[R, Out] @ W^T[Out, In]
            acc(grads, x, rows * inp, |d| {
                E::gemm(rows, out, inp, g, out as isize, 1, wv, 1, out as isize, E::ONE, d, inp as isize, 1)
            });
        }
    }

    fn backward_conv(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        g: &[E],
        grads: &mut [Option<Vec<E>>],
    ) {
        let [ci, h, wd] = self.shape(x)[..] else { unreachable!() };
        let co = self.shape(w)[0];
        let (ho, wo) = (h / stride, wd / stride);
        let p = ho * wo;
        let k = ci * 9;
        if let Some(b) = b.filter(|&b| self.wants(b)) {
            acc(grads, b, co, |d| {
                for (c, d) in d.iter_mut().enumerate() {
                    *d += g[c * p..(c + 1) * p].iter().copied().sum::<E>();
                }
            });
        }
        if self.wants(w) {
            let cols = im2col(self.value(x).data(), ci, h, wd, ho, wo, stride);
            // dW[Co, K] += g[Co, P] @ cols^T[P, K]
            acc(grads, w, co * k, |d| {
                E::gemm(co, p, k, g, p as isize, 1, &cols, 1, p as isize, E::ONE, d, k as isize, 1)
            });
        }
        if self.wants(x) {
            let wv = self.value(w).data();
            let mut dcols = vec![E::ZERO; k * p];
            // dcols[K, P] = W^T[K, Co] @ g[Co, P]
            E::gemm(k, co, p, wv, 1, k as isize, g, p as isize, 1, E::ZERO, &mut dcols, p as isize, 1);
            acc(grads, x, ci * h * wd, |d| col2im(&dcols, d, ci, h, wd, ho, wo, stride));
        }
    }
}

fn im2col<E: Scalar>(x: &[E], ci: usize, h: usize, w: usize, ho: usize, wo: usize, stride: usize) -> Vec<E> {
    let p = ho * wo;
    let mut cols = vec![E::ZERO; ci * 9 * p];
    for c in 0..ci {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * p;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = (c * h + iy as usize) * w;
                    let dst = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            cols[dst + ox] = x[src + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<E: Scalar>(cols: &[E], dx: &mut [E], ci: usize, h: usize, w: usize, ho: usize, wo: usize, stride: usize) {
    let p = ho * wo;
    for c in 0..ci {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * p;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = (c * h + iy as usize) * w;
                    let src = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dx[dst + ix as usize] += cols[src + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_derivative() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap());
        let w = g.input(Tensor::from_f64(vec![2], &[1.0, 1.0]).unwrap());
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap(), &[1.0, 2.0]);
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::from_f64(vec![3], &[0.5, -1.0, 2.0]).unwrap());
        let w = g.input(Tensor::from_f64(vec![3], &[0.5, -1.0, 2.0]).unwrap());
        let d = g.sub(w, c).unwrap();
        let sq = g.square(d);
        let loss = g.mean(sq);
        let grads = g.backward(loss).unwrap();
        assert!(grads.wrt(w).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let w = g.input(Tensor::zeros(vec![3]));
        assert!(matches!(g.backward(w), Err(Error::Gradient(_))));
        assert!(matches!(g.backward(Var(99)), Err(Error::Gradient(_))));
    }

    #[test]
    fn conv_stride_two_shape() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![3, 32, 32]));
        let w = g.constant(Tensor::zeros(vec![32, 3, 3, 3]));
        let y = g.conv3x3(x, w, None, 2).unwrap();
        assert_eq!(g.shape(y), &[32, 16, 16]);
        let x5 = g.constant(Tensor::zeros(vec![3, 5, 7]));
        let y5 = g.conv3x3(x5, w, None, 2).unwrap();
        assert_eq!(g.shape(y5), &[32, 2, 3]);
    }

    #[test]
    fn conv_channel_mismatch_names_dimension() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![4, 8, 8]));
        let w = g.constant(Tensor::zeros(vec![2, 3, 3, 3]));
        let err = g.conv3x3(x, w, None, 1).unwrap_err().to_string();
        assert!(err.contains("dimension 0"), "{err}");
    }

    #[test]
    fn chw_lc_round_trip() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::from_f64(vec![2, 2, 3], &(0..12).map(|v| v as f64).collect::<Vec<_>>()).unwrap();
        let x = g.constant(t.clone());
        let lc = g.chw_to_lc(x).unwrap();
        assert_eq!(g.value(lc).data()[..4], [0.0, 6.0, 1.0, 7.0]);
        let back = g.lc_to_chw(lc, 2, 3).unwrap();
        assert_eq!(g.value(back), &t);
    }
}
