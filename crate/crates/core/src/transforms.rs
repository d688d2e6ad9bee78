//! The six learned networks: analysis `g_e`, hyper-analysis `h_e`,
//! hyper-synthesis `h_s`, JSCC encoder `f_e`, JSCC decoder `f_d`, and the
//! conditional x0-predicting U-Net.
//!
//! Every network is a set of [`Layer`]s bound to parameter names under a fixed
//! prefix, so training stages can freeze whole networks by prefix. Forward
//! passes are pure functions of `(store, inputs)` recorded on a [`Graph`].

use crate::diffusion::Denoiser;
use crate::entropy::{sigma_from_raw_var, FactorizedPrior};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Layer, ParamStore, RngStream, Scalar, Tensor, Var};

pub const ANALYSIS: &str = "analysis";
pub const HYPER_ANALYSIS: &str = "hyper_analysis";
pub const HYPER_SYNTHESIS: &str = "hyper_synthesis";
pub const PRIOR: &str = "prior";
pub const JSCC_ENCODER: &str = "jscc_enc";
pub const JSCC_DECODER: &str = "jscc_dec";
pub const DENOISER: &str = "denoiser";

/// Spatial downsampling from image to latent grid.
pub const LATENT_STRIDE: usize = 4;

/// Network sizes. Defaults give `L = 64`, `C = 16` on 32x32 images.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub analysis_width: usize,
    pub jscc_width: usize,
    pub unet_widths: (usize, usize),
    pub unet_blocks: usize,
    pub time_dim: usize,
    /// Feed the condition to every decoder scale of the U-Net, not only the
    /// bottleneck. With bottleneck-only injection the denoiser learns to use
    /// the condition far more slowly.
    pub multiscale_cond: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_channels: 16,
            hyper_channels: 8,
            analysis_width: 32,
            jscc_width: 32,
            unet_widths: (32, 64),
            unet_blocks: 2,
            time_dim: 32,
            multiscale_cond: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.latent_channels;
        if c == 0 || c % 2 != 0 {
            return Err(Error::Config(format!("latent_channels must be even and positive, got {c}")));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::Config(format!("time_dim must be even and positive, got {}", self.time_dim)));
        }
        let sizes = [self.hyper_channels, self.analysis_width, self.jscc_width, self.unet_widths.0, self.unet_widths.1];
        if sizes.contains(&0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        Ok(())
    }
}

/// `x + conv(relu(conv(relu(x))))`.
#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Layer,
    conv2: Layer,
}

impl ResBlock {
    fn new(prefix: &str, ch: usize) -> Self {
        ResBlock { conv1: Layer::conv(format!("{prefix}.conv1"), ch, ch), conv2: Layer::conv(format!("{prefix}.conv2"), ch, ch) }
    }

    fn init<E: Scalar>(&self, store: &mut ParamStore<E>, rng: &mut RngStream) -> Result<()> {
        self.conv1.init(store, rng, 1.0)?;
        self.conv2.init(store, rng, 0.3)
    }

    fn forward<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, x: Var) -> Result<Var> {
        let h = g.relu(x);
        let h = self.conv1.forward(g, store, h)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, store, h)?;
        g.add(x, h)
    }
}

/// Residual block with group norm and a per-channel time bias.
#[derive(Debug, Clone)]
struct TimeBlock {
    norm1: Layer,
    conv1: Layer,
    time: Layer,
    norm2: Layer,
    conv2: Layer,
}

impl TimeBlock {
    fn new(prefix: &str, ch: usize, time_width: usize) -> Self {
        TimeBlock {
            norm1: Layer::group_norm(format!("{prefix}.norm1"), ch),
            conv1: Layer::conv(format!("{prefix}.conv1"), ch, ch),
            time: Layer::dense(format!("{prefix}.time"), time_width, ch),
            norm2: Layer::group_norm(format!("{prefix}.norm2"), ch),
            conv2: Layer::conv(format!("{prefix}.conv2"), ch, ch),
        }
    }

    fn init<E: Scalar>(&self, store: &mut ParamStore<E>, rng: &mut RngStream) -> Result<()> {
        self.norm1.init(store, rng, 1.0)?;
        self.conv1.init(store, rng, 1.0)?;
        self.time.init(store, rng, 1.0)?;
        self.norm2.init(store, rng, 1.0)?;
        self.conv2.init(store, rng, 0.3)
    }

    fn forward<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, x: Var, temb: Var) -> Result<Var> {
        let (h, w) = (g.shape(x)[1], g.shape(x)[2]);
        let t = self.norm1.forward(g, store, x)?;
        let t = g.relu(t);
        let t = self.conv1.forward(g, store, t)?;
        let bias = self.time.forward(g, store, temb)?;
        let bias = g.broadcast_channels(bias, h, w)?;
        let t = g.add(t, bias)?;
        let t = self.norm2.forward(g, store, t)?;
        let t = g.relu(t);
        let t = self.conv2.forward(g, store, t)?;
        g.add(x, t)
    }
}

/// Sinusoidal embedding of `t` with frequencies spaced geometrically in `[1, 1000]`.
pub fn time_embedding<E: Scalar>(t_norm: f64, dim: usize) -> Tensor<E> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = if half == 1 { 1.0 } else { 1000f64.powf(i as f64 / (half - 1) as f64) };
        data.push(E::from_f64((t_norm * freq).sin()));
    }
    for i in 0..half {
        let freq = if half == 1 { 1.0 } else { 1000f64.powf(i as f64 / (half - 1) as f64) };
        data.push(E::from_f64((t_norm * freq).cos()));
    }
    Tensor::new(vec![dim], data).expect("dim is positive")
}

#[derive(Debug, Clone)]
struct UNet {
    time_in: Layer,
    stem: Layer,
    level1: Vec<TimeBlock>,
    down1: Layer,
    level2: Vec<TimeBlock>,
    down2: Layer,
    fuse: Layer,
    middle: TimeBlock,
    up2: Layer,
    merge2: Layer,
    up_level2: Vec<TimeBlock>,
    up1: Layer,
    merge1: Layer,
    up_level1: Vec<TimeBlock>,
    out_norm: Layer,
    out: Layer,
    multiscale: bool,
}

impl UNet {
    fn new(cfg: &ModelConfig) -> Self {
        let p = DENOISER;
        let (w1, w2) = cfg.unet_widths;
        let tw = 2 * cfg.time_dim;
        let side = if cfg.multiscale_cond { cfg.latent_channels } else { 0 };
        let blocks = |name: &str, ch: usize| (0..cfg.unet_blocks).map(|i| TimeBlock::new(&format!("{p}.{name}.{i}"), ch, tw)).collect();
        UNet {
            time_in: Layer::dense(format!("{p}.time_in"), cfg.time_dim, tw),
            stem: Layer::conv(format!("{p}.stem"), 3, w1),
            level1: blocks("level1", w1),
            down1: Layer::down(format!("{p}.down1"), w1, w2),
            level2: blocks("level2", w2),
            down2: Layer::down(format!("{p}.down2"), w2, w2),
            fuse: Layer::conv(format!("{p}.fuse"), w2 + cfg.latent_channels, w2),
            middle: TimeBlock::new(&format!("{p}.middle"), w2, tw),
            up2: Layer::up(format!("{p}.up2"), w2, w2),
            merge2: Layer::conv(format!("{p}.merge2"), 2 * w2 + side, w2),
            up_level2: blocks("up_level2", w2),
            up1: Layer::up(format!("{p}.up1"), w2, w1),
            merge1: Layer::conv(format!("{p}.merge1"), 2 * w1 + side, w1),
            up_level1: blocks("up_level1", w1),
            out_norm: Layer::group_norm(format!("{p}.out_norm"), w1),
            out: Layer::conv(format!("{p}.out"), w1, 3),
            multiscale: cfg.multiscale_cond,
        }
    }

    fn init<E: Scalar>(&self, store: &mut ParamStore<E>, rng: &mut RngStream) -> Result<()> {
        self.time_in.init(store, rng, 1.0)?;
        self.stem.init(store, rng, 1.0)?;
        for b in &self.level1 {
            b.init(store, rng)?;
        }
        self.down1.init(store, rng, 1.0)?;
        for b in &self.level2 {
            b.init(store, rng)?;
        }
        self.down2.init(store, rng, 1.0)?;
        self.fuse.init(store, rng, 1.0)?;
        self.middle.init(store, rng)?;
        self.up2.init(store, rng, 1.0)?;
        self.merge2.init(store, rng, 1.0)?;
        for b in &self.up_level2 {
            b.init(store, rng)?;
        }
        self.up1.init(store, rng, 1.0)?;
        self.merge1.init(store, rng, 1.0)?;
        for b in &self.up_level1 {
            b.init(store, rng)?;
        }
        self.out_norm.init(store, rng, 1.0)?;
        self.out.init(store, rng, 0.3)
    }

    fn forward<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, x_n: Var, cond: Var, temb: Var) -> Result<Var> {
        let temb = self.time_in.forward(g, store, temb)?;
        let temb = g.relu(temb);
        let mut h = self.stem.forward(g, store, x_n)?;
        for b in &self.level1 {
            h = b.forward(g, store, h, temb)?;
        }
        let skip1 = h;
        h = self.down1.forward(g, store, h)?;
        for b in &self.level2 {
            h = b.forward(g, store, h, temb)?;
        }
        let skip2 = h;
        h = self.down2.forward(g, store, h)?;
        let side = if self.multiscale {
            let c2 = g.upsample2x(cond)?;
            Some((c2, g.upsample2x(c2)?))
        } else {
            None
        };
        h = g.concat_channels(h, cond)?;
        h = self.fuse.forward(g, store, h)?;
        h = self.middle.forward(g, store, h, temb)?;
        h = self.up2.forward(g, store, h)?;
        h = g.concat_channels(h, skip2)?;
        if let Some((c2, _)) = side {
            h = g.concat_channels(h, c2)?;
        }
        h = self.merge2.forward(g, store, h)?;
        for b in &self.up_level2 {
            h = b.forward(g, store, h, temb)?;
        }
        h = self.up1.forward(g, store, h)?;
        h = g.concat_channels(h, skip1)?;
        if let Some((_, c1)) = side {
            h = g.concat_channels(h, c1)?;
        }
        h = self.merge1.forward(g, store, h)?;
        for b in &self.up_level1 {
            h = b.forward(g, store, h, temb)?;
        }
        h = self.out_norm.forward(g, store, h)?;
        h = g.relu(h);
        self.out.forward(g, store, h)
    }
}

/// Layer plan of every network, bound to parameter names.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    analysis: (Layer, ResBlock, Layer, ResBlock, Layer),
    hyper_analysis: (Layer, Layer),
    hyper_synthesis: (Layer, Layer, Layer),
    prior: FactorizedPrior,
    jscc_enc: (Layer, Layer),
    jscc_dec: (Layer, ResBlock, Layer),
    unet: UNet,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (c, ch, aw, jw) = (cfg.latent_channels, cfg.hyper_channels, cfg.analysis_width, cfg.jscc_width);
        let a = ANALYSIS;
        let hs = HYPER_SYNTHESIS;
        Ok(Model {
            analysis: (
                Layer::down(format!("{a}.down1"), 3, aw),
                ResBlock::new(&format!("{a}.res1"), aw),
                Layer::down(format!("{a}.down2"), aw, aw),
                ResBlock::new(&format!("{a}.res2"), aw),
                Layer::conv(format!("{a}.out"), aw, c),
            ),
            hyper_analysis: (
                Layer::conv(format!("{HYPER_ANALYSIS}.conv"), c, aw),
                Layer::down(format!("{HYPER_ANALYSIS}.down"), aw, ch),
            ),
            hyper_synthesis: (
                Layer::up(format!("{hs}.up"), ch, aw),
                Layer::conv(format!("{hs}.conv"), aw, aw),
                Layer::conv(format!("{hs}.out"), aw, 2 * c),
            ),
            prior: FactorizedPrior::new(PRIOR, ch),
            jscc_enc: (Layer::dense(format!("{JSCC_ENCODER}.fc1"), c, 2 * c), Layer::dense(format!("{JSCC_ENCODER}.fc2"), 2 * c, c)),
            jscc_dec: (
                Layer::conv(format!("{JSCC_DECODER}.in"), c, jw),
                ResBlock::new(&format!("{JSCC_DECODER}.res"), jw),
                Layer::conv(format!("{JSCC_DECODER}.out"), jw, c),
            ),
            unet: UNet::new(&cfg),
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn prior(&self) -> &FactorizedPrior {
        &self.prior
    }

    /// Fresh parameters for every network, drawn from `rng` in a fixed order.
    pub fn init<E: Scalar>(&self, rng: &mut RngStream) -> Result<ParamStore<E>> {
        let mut store = ParamStore::new();
        self.init_compression(&mut store, &mut rng.substream(&[0]))?;
        self.init_jscc(&mut store, &mut rng.substream(&[1]))?;
        Ok(store)
    }

    fn init_compression<E: Scalar>(&self, store: &mut ParamStore<E>, rng: &mut RngStream) -> Result<()> {
        let (d1, r1, d2, r2, out) = &self.analysis;
        d1.init(store, rng, 1.0)?;
        r1.init(store, rng)?;
        d2.init(store, rng, 1.0)?;
        r2.init(store, rng)?;
        out.init(store, rng, 1.0)?;
        self.hyper_analysis.0.init(store, rng, 1.0)?;
        self.hyper_analysis.1.init(store, rng, 1.0)?;
        self.hyper_synthesis.0.init(store, rng, 1.0)?;
        self.hyper_synthesis.1.init(store, rng, 1.0)?;
        self.hyper_synthesis.2.init(store, rng, 0.3)?;
        self.prior.init(store)?;
        self.unet.init(store, rng)
    }

    fn init_jscc<E: Scalar>(&self, store: &mut ParamStore<E>, rng: &mut RngStream) -> Result<()> {
        self.jscc_enc.0.init(store, rng, 1.0)?;
        self.jscc_enc.1.init(store, rng, 1.0)?;
        self.jscc_dec.0.init(store, rng, 1.0)?;
        self.jscc_dec.1.init(store, rng)?;
        self.jscc_dec.2.init(store, rng, 1.0)
    }

    /// Redraws the JSCC encoder and decoder, keeping everything else.
    pub fn reinit_jscc<E: Scalar>(&self, store: &ParamStore<E>, rng: &mut RngStream) -> Result<ParamStore<E>> {
        let mut fresh = ParamStore::new();
        self.init_jscc(&mut fresh, rng)?;
        let mut out = ParamStore::new();
        for p in store.iter() {
            let value = match fresh.get(&p.name) {
                Some(f) => f.value.clone(),
                None => p.value.clone(),
            };
            out.insert(p.name.clone(), value)?;
        }
        Ok(out)
    }

    /// `g_e`: image `3 x H x W` to latent `C x H/4 x W/4`.
    pub fn analysis<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, image: Var) -> Result<Var> {
        let s = g.shape(image).to_vec();
        match s[..] {
            [3, h, w] if h % LATENT_STRIDE == 0 && w % LATENT_STRIDE == 0 && h > 0 && w > 0 => {}
            _ => {
                return Err(Error::shape(
                    "analysis",
                    format!("image must be 3 x H x W with H, W multiples of {LATENT_STRIDE}, got {s:?}"),
                ))
            }
        }
        let (d1, r1, d2, r2, out) = &self.analysis;
        let h = d1.forward(g, store, image)?;
        let h = g.relu(h);
        let h = r1.forward(g, store, h)?;
        let h = d2.forward(g, store, h)?;
        let h = g.relu(h);
        let h = r2.forward(g, store, h)?;
        let h = g.relu(h);
        out.forward(g, store, h)
    }

    /// `h_e`: latent `C x h x w` to hyper-latent `C_h x h/2 x w/2`.
    pub fn hyper_analysis<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, z: Var) -> Result<Var> {
        self.expect_latent(g, z, "hyper_analysis")?;
        let h = self.hyper_analysis.0.forward(g, store, z)?;
        let h = g.relu(h);
        self.hyper_analysis.1.forward(g, store, h)
    }

    /// `h_s`: quantised hyper-latent to `(mu, sigma)` over the latent grid.
    pub fn hyper_synthesis<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, y: Var) -> Result<(Var, Var)> {
        let s = g.shape(y).to_vec();
        if s.len() != 3 || s[0] != self.cfg.hyper_channels {
            return Err(Error::shape("hyper_synthesis", format!("expected {} x h x w hyper-latent, got {s:?}", self.cfg.hyper_channels)));
        }
        let (up, mid, out) = &self.hyper_synthesis;
        let h = up.forward(g, store, y)?;
        let h = g.relu(h);
        let h = mid.forward(g, store, h)?;
        let h = g.relu(h);
        let h = out.forward(g, store, h)?;
        let c = self.cfg.latent_channels;
        let mu = g.slice_channels(h, 0, c)?;
        let raw = g.slice_channels(h, c, 2 * c)?;
        Ok((mu, sigma_from_raw_var(g, raw)))
    }

    /// `f_e`: per-vector MLP on `L x C`.
    pub fn jscc_encode<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, vectors: Var) -> Result<Var> {
        self.expect_vectors(g, vectors, "jscc_encode")?;
        let h = self.jscc_enc.0.forward(g, store, vectors)?;
        let h = g.relu(h);
        self.jscc_enc.1.forward(g, store, h)
    }

    /// `f_d`: zero-filled received vectors `L x C` back to a latent `C x h x w`.
    pub fn jscc_decode<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, received: Var, grid: (usize, usize)) -> Result<Var> {
        self.expect_vectors(g, received, "jscc_decode")?;
        let x = g.lc_to_chw(received, grid.0, grid.1)?;
        let (inp, res, out) = &self.jscc_dec;
        let h = inp.forward(g, store, x)?;
        let h = g.relu(h);
        let h = res.forward(g, store, h)?;
        let h = g.relu(h);
        out.forward(g, store, h)
    }

    /// `X_theta(x_n, z_hat, t)`: x0 prediction in diffusion space.
    pub fn denoise<E: Scalar>(&self, g: &mut Graph<E>, store: &ParamStore<E>, x_n: Var, cond: Var, t_norm: f64) -> Result<Var> {
        if !(t_norm > 0.0 && t_norm <= 1.0) {
            return Err(Error::InvalidArgument(format!("normalised step must lie in (0, 1], got {t_norm}")));
        }
        let xs = g.shape(x_n).to_vec();
        let cs = g.shape(cond).to_vec();
        let ok_image = matches!(xs[..], [3, h, w] if h % LATENT_STRIDE == 0 && w % LATENT_STRIDE == 0);
        if !ok_image {
            return Err(Error::shape("denoise", format!("x_n must be 3 x H x W with H, W multiples of 4, got {xs:?}")));
        }
        let want = [self.cfg.latent_channels, xs[1] / LATENT_STRIDE, xs[2] / LATENT_STRIDE];
        crate::numerics::tensor::check_same_shape(&cs, &want, "denoise condition")?;
        let temb = g.constant(time_embedding(t_norm, self.cfg.time_dim));
        self.unet.forward(g, store, x_n, cond, temb)
    }

    fn expect_latent<E: Scalar>(&self, g: &Graph<E>, z: Var, op: &'static str) -> Result<()> {
        let s = g.shape(z);
        if s.len() != 3 || s[0] != self.cfg.latent_channels || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(Error::shape(op, format!("expected {} x h x w latent with even h, w, got {s:?}", self.cfg.latent_channels)));
        }
        Ok(())
    }

    fn expect_vectors<E: Scalar>(&self, g: &Graph<E>, v: Var, op: &'static str) -> Result<()> {
        let s = g.shape(v);
        if s.len() != 2 || s[1] != self.cfg.latent_channels {
            return Err(Error::shape(op, format!("expected L x {} vectors, got {s:?} (dimension 1)", self.cfg.latent_channels)));
        }
        Ok(())
    }
}

/// The U-Net with a fixed parameter store, usable by the sampler.
pub struct BoundDenoiser<'a, E: Scalar> {
    pub model: &'a Model,
    pub store: &'a ParamStore<E>,
}

impl<E: Scalar> Denoiser<E> for BoundDenoiser<'_, E> {
    fn predict_x0(&self, x_n: &Tensor<E>, cond: &Tensor<E>, t_norm: f64) -> Result<Tensor<E>> {
        let mut g = Graph::new();
        let x = g.constant(x_n.clone());
        let c = g.constant(cond.clone());
        let out = self.model.denoise(&mut g, self.store, x, c, t_norm)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gauss_draw;

    fn small() -> ModelConfig {
        ModelConfig { analysis_width: 8, jscc_width: 8, unet_widths: (8, 8), unet_blocks: 1, ..Default::default() }
    }

    #[test]
    fn latent_shapes() {
        let model = Model::new(small()).unwrap();
        let store: ParamStore = model.init(&mut RngStream::new(1)).unwrap();
        for (size, l) in [(32usize, 64usize), (64, 256)] {
            let mut g = Graph::new();
            let x = g.constant(Tensor::zeros(vec![3, size, size]));
            let z = model.analysis(&mut g, &store, x).unwrap();
            assert_eq!(g.shape(z), &[16, size / 4, size / 4]);
            assert_eq!(g.shape(z)[1] * g.shape(z)[2], l);
            assert!(g.value(z).all_finite());
            let y = model.hyper_analysis(&mut g, &store, z).unwrap();
            assert_eq!(g.shape(y), &[8, size / 8, size / 8]);
            let (mu, sigma) = model.hyper_synthesis(&mut g, &store, y).unwrap();
            assert_eq!(g.shape(mu), g.shape(z));
            assert_eq!(g.shape(sigma), g.shape(z));
        }
        let mut g = Graph::new();
        let bad = g.constant(Tensor::zeros(vec![3, 30, 32]));
        assert!(model.analysis(&mut g, &store, bad).is_err());
    }

    #[test]
    fn sigma_never_below_floor() {
        let model = Model::new(small()).unwrap();
        let store: ParamStore = model.init(&mut RngStream::new(2)).unwrap();
        let mut rng = RngStream::new(3);
        for _ in 0..1000 {
            let mut g = Graph::new();
            let t = gauss_draw::<f64>(&mut rng, &[8, 1, 1]).map(|v| v * 50.0);
            let y = g.constant(t);
            let (_, sigma) = model.hyper_synthesis(&mut g, &store, y).unwrap();
            assert!(g.value(sigma).data().iter().all(|&s| s >= crate::entropy::SIGMA_FLOOR));
        }
    }

    #[test]
    fn jscc_shapes_and_zero_map() {
        let model = Model::new(small()).unwrap();
        let store: ParamStore = model.init(&mut RngStream::new(4)).unwrap();
        let mut g = Graph::new();
        let zero = g.constant(Tensor::zeros(vec![64, 16]));
        let p = model.jscc_encode(&mut g, &store, zero).unwrap();
        assert_eq!(g.shape(p), &[64, 16]);
        assert!(g.value(p).data().iter().all(|&v| v == 0.0));
        let d = model.jscc_decode(&mut g, &store, p, (8, 8)).unwrap();
        assert_eq!(g.shape(d), &[16, 8, 8]);
        assert!(g.value(d).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn denoiser_shape_and_purity() {
        let model = Model::new(small()).unwrap();
        let store: ParamStore = model.init(&mut RngStream::new(5)).unwrap();
        let mut rng = RngStream::new(6);
        let x: Tensor = gauss_draw(&mut rng, &[3, 32, 32]);
        let c: Tensor = gauss_draw(&mut rng, &[16, 8, 8]);
        let d = BoundDenoiser { model: &model, store: &store };
        let a = d.predict_x0(&x, &c, 0.5).unwrap();
        assert_eq!(a.shape(), &[3, 32, 32]);
        assert_eq!(a, d.predict_x0(&x, &c, 0.5).unwrap());
        assert!(d.predict_x0(&x, &c, 0.0).is_err());
        let wrong: Tensor = gauss_draw(&mut rng, &[16, 4, 4]);
        assert!(d.predict_x0(&x, &wrong, 0.5).is_err());
    }

    #[test]
    fn bottleneck_only_condition() {
        let cfg = ModelConfig { multiscale_cond: false, ..small() };
        let model = Model::new(cfg).unwrap();
        let store: ParamStore = model.init(&mut RngStream::new(5)).unwrap();
        let full: ParamStore = Model::new(small()).unwrap().init(&mut RngStream::new(5)).unwrap();
        let merge_inputs = |s: &ParamStore| s.get(&format!("{DENOISER}.merge1.weight")).unwrap().value.shape()[1];
        assert_eq!(merge_inputs(&full), merge_inputs(&store) + 16);
        let mut rng = RngStream::new(6);
        let x: Tensor = gauss_draw(&mut rng, &[3, 32, 32]);
        let c: Tensor = gauss_draw(&mut rng, &[16, 8, 8]);
        let d = BoundDenoiser { model: &model, store: &store };
        assert_eq!(d.predict_x0(&x, &c, 0.5).unwrap().shape(), &[3, 32, 32]);
    }

    #[test]
    fn jscc_reinit_keeps_compression_networks() {
        let model = Model::new(small()).unwrap();
        let store: ParamStore = model.init(&mut RngStream::new(7)).unwrap();
        let re = model.reinit_jscc(&store, &mut RngStream::new(99)).unwrap();
        for p in store.iter() {
            let q = re.get(&p.name).unwrap();
            if p.name.starts_with(JSCC_ENCODER) || p.name.starts_with(JSCC_DECODER) {
                if p.name.ends_with("weight") {
                    assert_ne!(p.value, q.value, "{}", p.name);
                }
            } else {
                assert_eq!(p.value, q.value, "{}", p.name);
            }
        }
    }
}
