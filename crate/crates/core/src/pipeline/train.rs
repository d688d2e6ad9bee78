//! Three-stage training.
//!
//! Stage 1 fits the compression networks and the denoiser with the JSCC pair
//! frozen. Stage 2 redraws the JSCC pair and fits only it, through the channel.
//! Stage 3 fine-tunes everything. Each step averages per-image gradients over
//! a batch, in image order, then takes one Adam step.

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use crate::diffusion::{draw_noise, forward_noise, to_diffusion_space, NoiseSchedule};
use crate::entropy::{quantize_var, rate_bits_var, LikelihoodGrid, QuantMode};
use crate::error::{Error, Result};
use crate::link::{allocate_rates, noise_variance, RateMap};
use crate::numerics::{adam_step, gauss_draw, AdamConfig, Graph, ParamStore, Precision, RngStream, Scalar, Tensor, Var};
use crate::objective::{combine, loss_nodes, LossReport, PerceptualProxy};
use crate::transforms::{Model, ANALYSIS, DENOISER, HYPER_ANALYSIS, HYPER_SYNTHESIS, JSCC_DECODER, JSCC_ENCODER, PRIOR};

/// Parameter prefixes held fixed in each stage.
pub fn frozen_prefixes(stage: u8) -> &'static [&'static str] {
    match stage {
        1 => &[JSCC_ENCODER, JSCC_DECODER],
        2 => &[ANALYSIS, HYPER_ANALYSIS, HYPER_SYNTHESIS, PRIOR, DENOISER],
        _ => &[],
    }
}

/// Mean loss terms of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub stage: u8,
    pub step: usize,
    pub report: LossReport,
    pub mean_k_total: f64,
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub checkpoint: Checkpoint,
    /// Parameters as the stage began, after any re-initialisation.
    pub initial: Vec<(String, Tensor<f64>)>,
    pub history: Vec<StepRecord>,
}

impl StageResult {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.report.total).collect()
    }

    /// Names of parameters frozen in this stage whose values changed.
    pub fn moved_frozen(&self) -> Vec<String> {
        let frozen = frozen_prefixes(self.checkpoint.stage);
        self.initial
            .iter()
            .zip(&self.checkpoint.params)
            .filter(|((n, _), _)| frozen.iter().any(|p| n.starts_with(p)))
            .filter(|((n, a), (m, b))| n != m || a.shape() != b.shape() || a.data().iter().zip(b.data()).any(|(x, y)| x.to_bits() != y.to_bits()))
            .map(|((n, _), _)| n.clone())
            .collect()
    }
}

/// Means of the first and last `window` values.
pub fn smoothed_ends(values: &[f64], window: usize) -> Option<(f64, f64)> {
    if values.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(values.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..w]), mean(&values[values.len() - w..])))
}

/// Everything one forward pass needs besides the parameters.
pub struct Context<'a, E: Scalar> {
    pub model: &'a Model,
    pub proxy: &'a PerceptualProxy<E>,
    pub cfg: &'a TrainConfig,
    pub sched: &'a NoiseSchedule,
}

pub struct ImageForward {
    pub total: Var,
    pub report: LossReport,
    pub rate_map: Option<RateMap>,
}

/// Rate map from the hard-rounded latents, as the transmitter would compute it.
pub fn hard_rate_map<E: Scalar>(
    model: &Model,
    store: &ParamStore<E>,
    cfg: &TrainConfig,
    z: &Tensor<E>,
    y: &Tensor<E>,
) -> Result<(RateMap, LikelihoodGrid)> {
    let mut g = Graph::new();
    let y_hat = g.constant(y.map(|v| E::from_f64(v.to_f64().round_ties_even())));
    let (mu, sigma) = model.hyper_synthesis(&mut g, store, y_hat)?;
    let z_hat = g.constant(z.map(|v| E::from_f64(v.to_f64().round_ties_even())));
    let p = g.bin_mass(z_hat, mu, sigma)?;
    let grid = LikelihoodGrid::new(g.value(p).cast());
    Ok((allocate_rates(&grid, cfg.beta_rate, cfg.k_min, cfg.k_max)?, grid))
}

/// Builds the stage's loss for one image on `g`.
pub fn forward_image<E: Scalar>(
    g: &mut Graph<E>,
    ctx: &Context<'_, E>,
    store: &ParamStore<E>,
    image: &Tensor<f64>,
    stage: u8,
    rng: &RngStream,
) -> Result<ImageForward> {
    let (model, cfg) = (ctx.model, ctx.cfg);
    let x0 = g.constant(image.cast());
    let z = model.analysis(g, store, x0)?;
    let y = model.hyper_analysis(g, store, z)?;
    let y_t = quantize_var(g, y, QuantMode::Noise, &mut rng.substream(&[0]))?;
    let (mu, sigma) = model.hyper_synthesis(g, store, y_t)?;
    let z_t = quantize_var(g, z, QuantMode::Noise, &mut rng.substream(&[1]))?;
    let p_z = g.bin_mass(z_t, mu, sigma)?;
    let (yh, yw) = (g.shape(y)[1], g.shape(y)[2]);
    let (prior_mu, prior_sigma) = model.prior().params(g, store, yh, yw)?;
    let p_y = g.bin_mass(y_t, prior_mu, prior_sigma)?;
    let rate = rate_bits_var(g, &[p_z, p_y])?;

    let target = to_diffusion_space(&image.cast::<E>());
    let draw = draw_noise::<E>(&mut rng.substream(&[2]), target.shape(), ctx.sched);
    let x_n = g.constant(forward_noise(&target, draw.n, &draw.eps, ctx.sched)?);
    let t = ctx.sched.t_norm(draw.n);
    let to_image = |g: &mut Graph<E>, v: Var| {
        let half = g.scale(v, 0.5);
        g.add_scalar(half, 0.5)
    };
    let bar = model.denoise(g, store, x_n, z_t, t)?;
    let x_bar = to_image(g, bar);

    let (x_hat, rate_map) = if stage == 1 {
        (None, None)
    } else {
        let (zv, yv) = (g.value(z).clone(), g.value(y).clone());
        let (rate_map, _) = hard_rate_map(model, store, cfg, &zv, &yv)?;
        rate_map.k.iter().for_each(|&k| g.note_decision(k as u64));
        let c = model.config().latent_channels;
        let (h, w) = (zv.shape()[1], zv.shape()[2]);
        let vectors = g.chw_to_lc(z)?;
        let proj = model.jscc_encode(g, store, vectors)?;
        let mask_t = rate_map.mask::<E>(c);
        let mask = g.constant(mask_t.clone());
        let masked = g.mul(proj, mask)?;
        let received = if rate_map.k_total() == 0 {
            masked
        } else {
            let sq = g.square(masked);
            let energy = g.sum(sq);
            let power = g.scale(energy, 1.0 / rate_map.k_total() as f64);
            let amp = g.sqrt(power);
            let std = (noise_variance(cfg.snr_db_train) / 2.0).sqrt();
            let noise = gauss_draw::<E>(&mut rng.substream(&[3]), &[h * w, c]);
            let noise = noise.zip_map(&mask_t, "channel noise", |n, m| n * m * E::from_f64(std))?;
            let noise = g.constant(noise);
            let scaled = g.mul_scalar_var(noise, amp)?;
            g.add(masked, scaled)?
        };
        let z_hat = model.jscc_decode(g, store, received, (h, w))?;
        let hat = model.denoise(g, store, x_n, z_hat, t)?;
        (Some(to_image(g, hat)), Some(rate_map))
    };
    let nodes = loss_nodes(g, ctx.proxy, x0, x_hat, x_bar, rate)?;
    let (total, report) = combine(g, &nodes, cfg.eta, cfg.lambda)?;
    Ok(ImageForward { total, report, rate_map })
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    LossReport {
        jscc_distortion: avg(|r| r.jscc_distortion),
        compression_distortion: avg(|r| r.compression_distortion),
        jscc_perceptual: avg(|r| r.jscc_perceptual),
        compression_perceptual: avg(|r| r.compression_perceptual),
        rate_bits: avg(|r| r.rate_bits),
        total: avg(|r| r.total),
        eta: reports[0].eta,
        lambda: reports[0].lambda,
    }
}

fn shuffled(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.range_inclusive(0, i as u64) as usize;
        v.swap(i, j);
    }
    v
}

/// Runs `cfg.steps(stage)` optimizer steps on `store` in place.
pub fn run_stage<E: Scalar>(
    model: &Model,
    cfg: &TrainConfig,
    stage: u8,
    store: &mut ParamStore<E>,
    images: &[Tensor<f64>],
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    if images.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    store.unfreeze_all();
    store.freeze_prefixes(frozen_prefixes(stage));
    let sched = cfg.schedule()?;
    let proxy = PerceptualProxy::<E>::new();
    let ctx = Context { model, proxy: &proxy, cfg, sched: &sched };
    let root = RngStream::new(cfg.seed).substream(&[0x7472_6169_6e, stage as u64]);
    let mut order = Vec::new();
    let mut history = Vec::with_capacity(cfg.steps(stage));
    let b = cfg.batch_size;
    for step in 0..cfg.steps(stage) {
        let mut reports = Vec::with_capacity(b);
        let mut k_sum = 0.0;
        for j in 0..b {
            let slot = step * b + j;
            let epoch = slot / images.len();
            if slot % images.len() == 0 || order.is_empty() {
                order = shuffled(images.len(), &mut root.substream(&[1, epoch as u64]));
            }
            let idx = order[slot % images.len()];
            let mut g = Graph::new();
            let out = forward_image(&mut g, &ctx, store, &images[idx], stage, &root.substream(&[2, step as u64, j as u64]))?;
            if !g.value(out.total).all_finite() {
                return Err(Error::Gradient(format!("stage {stage} step {step}: non-finite loss")));
            }
            let grads = g.backward(out.total)?;
            store.accumulate(grads.params().map(|(n, _, gr)| (n, gr)), 1.0 / b as f64)?;
            k_sum += out.rate_map.map(|r| r.k_total() as f64).unwrap_or(0.0);
            reports.push(out.report);
        }
        let decayed = cfg.lr_decay_step > 0 && step >= cfg.lr_decay_step;
        let adam = AdamConfig { lr: if decayed { cfg.lr * 0.1 } else { cfg.lr }, ..AdamConfig::default() };
        adam_step(store, &adam)?;
        let rec = StepRecord { stage, step, report: mean_report(&reports), mean_k_total: k_sum / b as f64 };
        observer(&rec);
        history.push(rec);
    }
    store.unfreeze_all();
    Ok(history)
}

fn check_architecture(ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<()> {
    if ckpt.config.model_pairs() != cfg.model_pairs() {
        return Err(Error::Config("checkpoint architecture differs from the configured model".into()));
    }
    Ok(())
}

fn stage_typed<E: Scalar>(
    cfg: &TrainConfig,
    stage: u8,
    previous: Option<&Checkpoint>,
    images: &[Tensor<f64>],
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<StageResult> {
    cfg.validate()?;
    let model = Model::new(cfg.model.clone())?;
    let init_rng = RngStream::new(cfg.seed).substream(&[0x696e_6974, stage as u64]);
    let mut store: ParamStore<E> = match previous {
        None => model.init(&mut init_rng.clone())?,
        Some(ckpt) => {
            ckpt.expect_stage(stage - 1)?;
            check_architecture(ckpt, cfg)?;
            let s = ckpt.store()?;
            if stage == 2 {
                model.reinit_jscc(&s, &mut init_rng.clone())?
            } else {
                s
            }
        }
    };
    let initial = store.snapshot();
    let history = run_stage(&model, cfg, stage, &mut store, images, observer)?;
    Ok(StageResult { checkpoint: Checkpoint::from_store(stage, cfg, &store), initial, history })
}

/// Dispatches on the configured precision.
pub fn train_stage(
    cfg: &TrainConfig,
    stage: u8,
    previous: Option<&Checkpoint>,
    images: &[Tensor<f64>],
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<StageResult> {
    if !(1..=3).contains(&stage) {
        return Err(Error::InvalidArgument(format!("stage must be 1, 2 or 3, got {stage}")));
    }
    if (stage == 1) != previous.is_none() {
        return Err(Error::InvalidArgument(format!("stage {stage} {} a previous checkpoint", if stage == 1 { "takes no" } else { "needs" })));
    }
    match cfg.precision {
        Precision::F64 => stage_typed::<f64>(cfg, stage, previous, images, observer),
        Precision::F32 => stage_typed::<f32>(cfg, stage, previous, images, observer),
    }
}

pub fn train_stage1(cfg: &TrainConfig, images: &[Tensor<f64>], observer: &mut dyn FnMut(&StepRecord)) -> Result<StageResult> {
    train_stage(cfg, 1, None, images, observer)
}

pub fn train_stage2(cfg: &TrainConfig, ckpt1: &Checkpoint, images: &[Tensor<f64>], observer: &mut dyn FnMut(&StepRecord)) -> Result<StageResult> {
    train_stage(cfg, 2, Some(ckpt1), images, observer)
}

pub fn train_stage3(cfg: &TrainConfig, ckpt2: &Checkpoint, images: &[Tensor<f64>], observer: &mut dyn FnMut(&StepRecord)) -> Result<StageResult> {
    train_stage(cfg, 3, Some(ckpt2), images, observer)
}

fn held_out_typed<E: Scalar>(ckpt: &Checkpoint, images: &[Tensor<f64>], seed: u64) -> Result<f64> {
    let cfg = &ckpt.config;
    let model = Model::new(cfg.model.clone())?;
    let store: ParamStore<E> = ckpt.store()?;
    let sched = cfg.schedule()?;
    let proxy = PerceptualProxy::<E>::new();
    let ctx = Context { model: &model, proxy: &proxy, cfg, sched: &sched };
    let root = RngStream::new(seed);
    let mut total = 0.0;
    for (i, img) in images.iter().enumerate() {
        let mut g = Graph::new();
        total += forward_image(&mut g, &ctx, &store, img, 3, &root.substream(&[i as u64]))?.report.total;
    }
    Ok(total / images.len() as f64)
}

/// Mean full-objective loss with noise draws fixed by `seed`; no update.
pub fn held_out_loss(ckpt: &Checkpoint, images: &[Tensor<f64>], seed: u64) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("held-out set is empty".into()));
    }
    match ckpt.config.precision {
        Precision::F64 => held_out_typed::<f64>(ckpt, images, seed),
        Precision::F32 => held_out_typed::<f32>(ckpt, images, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::synth_dataset;

    pub(crate) fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.model.analysis_width = 8;
        cfg.model.jscc_width = 8;
        cfg.model.unet_widths = (8, 8);
        cfg.model.unet_blocks = 1;
        cfg.image_size = 16;
        cfg.batch_size = 2;
        cfg.steps_stage1 = 2;
        cfg.steps_stage2 = 2;
        cfg.steps_stage3 = 2;
        cfg
    }

    #[test]
    fn freeze_contract_and_stage_chain() {
        let cfg = tiny_config();
        let images = synth_dataset(1, 4, 16).unwrap();
        let s1 = train_stage1(&cfg, &images, &mut |_| {}).unwrap();
        assert_eq!(s1.checkpoint.stage, 1);
        let s2 = train_stage2(&cfg, &s1.checkpoint, &images, &mut |_| {}).unwrap();
        for ((n, a), (_, b)) in s1.checkpoint.params.iter().zip(&s2.checkpoint.params) {
            if !(n.starts_with(JSCC_ENCODER) || n.starts_with(JSCC_DECODER)) {
                assert_eq!(a, b, "{n} moved in stage 2");
            }
        }
        assert!(matches!(train_stage3(&cfg, &s1.checkpoint, &images, &mut |_| {}), Err(Error::WrongStage { .. })));
        let s3 = train_stage3(&cfg, &s2.checkpoint, &images, &mut |_| {}).unwrap();
        assert_eq!(s3.checkpoint.stage, 3);
        for r in s1.history.iter().chain(&s2.history).chain(&s3.history) {
            assert!((r.report.total - r.report.rederive()).abs() < 1e-9);
        }
    }

    #[test]
    fn stage_one_leaves_jscc_untouched() {
        let cfg = tiny_config();
        let images = synth_dataset(2, 4, 16).unwrap();
        let model = Model::new(cfg.model.clone()).unwrap();
        let mut store: ParamStore = model.init(&mut RngStream::new(3)).unwrap();
        let before = store.snapshot();
        run_stage(&model, &cfg, 1, &mut store, &images, &mut |_| {}).unwrap();
        for ((n, a), (_, b)) in before.iter().zip(store.snapshot().iter()) {
            if n.starts_with(JSCC_ENCODER) || n.starts_with(JSCC_DECODER) {
                assert_eq!(a, b, "{n}");
            }
        }
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = tiny_config();
        let images = synth_dataset(5, 4, 16).unwrap();
        let a = train_stage1(&cfg, &images, &mut |_| {}).unwrap();
        let b = train_stage1(&cfg, &images, &mut |_| {}).unwrap();
        assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
    }

    #[test]
    fn smoothing_windows() {
        assert_eq!(smoothed_ends(&[4.0, 2.0, 1.0, 1.0], 2), Some((3.0, 1.0)));
        assert_eq!(smoothed_ends(&[], 2), None);
    }
}
