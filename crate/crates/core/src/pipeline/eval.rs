//! Test-time link: encode, frame, channel, decode, sample; and SNR sweeps.

use std::fmt::Write as _;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::train::hard_rate_map;
use crate::diffusion::{sample, NoiseSchedule};
use crate::entropy::{gaussian_bin_mass, rate_bits, LikelihoodGrid};
use crate::error::{Error, Result};
use crate::link::{awgn, cbr, checkerboard_order, decode_frame, encode_frame, frame_symbols, unframe_symbols, RateMap, SymbolFrame};
use crate::numerics::{Graph, ParamStore, Precision, RngStream, Scalar, Tensor};
use crate::objective::{mse, psnr_from_mse, PerceptualProxy};
use crate::transforms::{BoundDenoiser, Model};

/// Transmitter-side quantities for one image.
#[derive(Debug, Clone)]
pub struct Encoded<E: Scalar> {
    pub projected: Tensor<E>,
    pub rate_map: RateMap,
    pub rate_bits: f64,
    pub grid: (usize, usize),
}

/// Result of one image through the link.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub reconstruction: Tensor<f64>,
    /// Channel output as serialised on the wire.
    pub received: SymbolFrame,
    pub frame_bytes: Vec<u8>,
    pub rate_map: RateMap,
    pub rate_bits: f64,
    pub cbr: f64,
}

/// A trained model ready for inference in one precision.
pub struct Link<E: Scalar> {
    pub model: Model,
    pub store: ParamStore<E>,
    pub cfg: TrainConfig,
    pub sched: NoiseSchedule,
}

impl<E: Scalar> Link<E> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = ckpt.config.clone();
        Ok(Link { model: Model::new(cfg.model.clone())?, store: ckpt.store()?, sched: cfg.schedule()?, cfg })
    }

    pub fn encode(&self, image: &Tensor<f64>) -> Result<Encoded<E>> {
        let mut g = Graph::new();
        let x = g.constant(image.cast::<E>());
        let z = self.model.analysis(&mut g, &self.store, x)?;
        let y = self.model.hyper_analysis(&mut g, &self.store, z)?;
        let (zv, yv) = (g.value(z).clone(), g.value(y).clone());
        let (rate_map, z_grid) = hard_rate_map(&self.model, &self.store, &self.cfg, &zv, &yv)?;
        let prior = self.model.prior();
        let (yc, yh, yw) = (yv.shape()[0], yv.shape()[1], yv.shape()[2]);
        let y_masses: Vec<f64> = (0..yc * yh * yw)
            .map(|i| prior.mass(&self.store, i / (yh * yw), yv.data()[i].to_f64().round_ties_even()))
            .collect();
        let y_grid = LikelihoodGrid::new(Tensor::new(vec![yc, yh, yw], y_masses)?);
        let bits = rate_bits(&[&z_grid, &y_grid]);
        let vectors = g.chw_to_lc(z)?;
        let proj = self.model.jscc_encode(&mut g, &self.store, vectors)?;
        Ok(Encoded { projected: g.value(proj).clone(), rate_map, rate_bits: bits, grid: (zv.shape()[1], zv.shape()[2]) })
    }

    /// Receiver: frame to image in `[0, 1]`.
    pub fn decode(&self, frame: &SymbolFrame, grid: (usize, usize), n_test: usize, rng: &mut RngStream) -> Result<Tensor<f64>> {
        let c = self.model.config().latent_channels;
        let rec = unframe_symbols(frame, c)?;
        let mut g = Graph::new();
        let r = g.constant(rec.cast::<E>());
        let z_hat = self.model.jscc_decode(&mut g, &self.store, r, grid)?;
        let cond = g.value(z_hat).clone();
        let shape = [3, grid.0 * crate::transforms::LATENT_STRIDE, grid.1 * crate::transforms::LATENT_STRIDE];
        let den = BoundDenoiser { model: &self.model, store: &self.store };
        Ok(sample(&den, &cond, &shape, n_test, rng, &self.sched)?.cast())
    }

    /// Full link for one image. Channel noise and sampler noise come from
    /// separate streams so sweeps over SNR share the sampler draw.
    pub fn transmit(
        &self,
        image: &Tensor<f64>,
        snr_db: f64,
        n_test: usize,
        channel_rng: &mut RngStream,
        sampler_rng: &mut RngStream,
    ) -> Result<Transmission> {
        let enc = self.encode(image)?;
        let (h, w) = enc.grid;
        let order = checkerboard_order(h * w, (h, w))?;
        let cbr_value = cbr(&enc.rate_map, image.numel())?;
        let received = if enc.rate_map.k_total() == 0 {
            // nothing to send; the receiver decodes from an all-zero latent
            SymbolFrame { symbols: Vec::new(), rate_map: enc.rate_map.clone(), order, power: 0.0, scale: 1.0 }
        } else {
            let sent = frame_symbols(&enc.projected, &enc.rate_map, &order)?;
            awgn(&sent, snr_db, channel_rng)
        };
        let frame_bytes = encode_frame(&received)?;
        let wire = if h == w { decode_frame(&frame_bytes, self.cfg.k_min, self.cfg.k_max)? } else { received.clone() };
        let reconstruction = self.decode(&wire, enc.grid, n_test, sampler_rng)?;
        Ok(Transmission { reconstruction, received: wire, frame_bytes, rate_map: enc.rate_map, rate_bits: enc.rate_bits, cbr: cbr_value })
    }
}

/// One row of the metric table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub image: String,
    pub snr_db: f64,
    pub cbr: f64,
    pub psnr_db: f64,
    pub proxy_perc: f64,
    pub rate_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    /// Mean over every row; `snr_db` is NaN and written as an empty field.
    pub summary: MetricRow,
}

impl MetricTable {
    pub const HEADER: &'static str = "image,snr_db,cbr,psnr_db,proxy_perc,rate_bits";

    /// Data rows plus the summary row; the header is not counted.
    pub fn row_count(&self) -> usize {
        self.rows.len() + 1
    }

    /// Mean PSNR per SNR value, in sweep order.
    pub fn mean_psnr_by_snr(&self, snrs: &[f64]) -> Vec<f64> {
        snrs.iter()
            .map(|&s| {
                let v: Vec<f64> = self.rows.iter().filter(|r| r.snr_db == s).map(|r| r.psnr_db).collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in self.rows.iter().chain(std::iter::once(&self.summary)) {
            let snr = if r.snr_db.is_nan() { String::new() } else { r.snr_db.to_string() };
            let _ = writeln!(s, "{},{},{},{},{},{}", r.image, snr, r.cbr, r.psnr_db, r.proxy_perc, r.rate_bits);
        }
        s
    }
}

fn evaluate_typed<E: Scalar>(ckpt: &Checkpoint, images: &[(String, Tensor<f64>)], snrs: &[f64], seed: u64, n_test: usize) -> Result<MetricTable> {
    let link = Link::<E>::from_checkpoint(ckpt)?;
    let proxy = PerceptualProxy::<f64>::new();
    let root = RngStream::new(seed);
    let image_rows = |i: usize| -> Result<Vec<MetricRow>> {
        let (name, img) = &images[i];
        let mut out = Vec::with_capacity(snrs.len());
        for (j, &snr) in snrs.iter().enumerate() {
            let mut ch = root.substream(&[i as u64, 1, j as u64]);
            let mut sm = root.substream(&[i as u64, 2]);
            let t = link.transmit(img, snr, n_test, &mut ch, &mut sm)?;
            out.push(MetricRow {
                image: name.clone(),
                snr_db: snr,
                cbr: t.cbr,
                psnr_db: psnr_from_mse(mse(img, &t.reconstruction)?, 1.0),
                proxy_perc: proxy.distance(img, &t.reconstruction)?,
                rate_bits: t.rate_bits,
            });
        }
        Ok(out)
    };
    // Images are independent and draw from their own substreams, so the
    // table does not depend on the worker count.
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(images.len());
    let per_image: Vec<Result<Vec<MetricRow>>> = if workers <= 1 {
        (0..images.len()).map(image_rows).collect()
    } else {
        let mut slots: Vec<Option<Result<Vec<MetricRow>>>> = (0..images.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            for (w, chunk) in slots.chunks_mut(images.len().div_ceil(workers)).enumerate() {
                let image_rows = &image_rows;
                let base = w * images.len().div_ceil(workers);
                s.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(image_rows(base + k));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every slot is filled")).collect()
    };
    let mut rows = Vec::with_capacity(images.len() * snrs.len());
    for r in per_image {
        rows.extend(r?);
    }
    let n = rows.len().max(1) as f64;
    let avg = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let summary = MetricRow {
        image: "mean".into(),
        snr_db: f64::NAN,
        cbr: avg(|r| r.cbr),
        psnr_db: avg(|r| r.psnr_db),
        proxy_perc: avg(|r| r.proxy_perc),
        rate_bits: avg(|r| r.rate_bits),
    };
    Ok(MetricTable { rows, summary })
}

/// Metric rows for every `(image, snr)` pair plus a mean row. Needs a
/// checkpoint that has been through stage 2.
pub fn evaluate(ckpt: &Checkpoint, images: &[(String, Tensor<f64>)], snrs: &[f64], seed: u64, n_test: usize) -> Result<MetricTable> {
    ckpt.expect_stage_at_least(2)?;
    if snrs.is_empty() || images.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one image and one SNR".into()));
    }
    match ckpt.config.precision {
        Precision::F64 => evaluate_typed::<f64>(ckpt, images, snrs, seed, n_test),
        Precision::F32 => evaluate_typed::<f32>(ckpt, images, snrs, seed, n_test),
    }
}

/// `k_total` per image under the checkpoint's rate rule.
pub fn allocated_symbols(ckpt: &Checkpoint, images: &[Tensor<f64>]) -> Result<Vec<usize>> {
    let link = Link::<f64>::from_checkpoint(ckpt)?;
    images.iter().map(|img| Ok(link.encode(img)?.rate_map.k_total())).collect()
}

/// Mass of a quantised value under `N(mu, sigma^2)`; re-exported for examples.
pub fn bin_mass(z: f64, mu: f64, sigma: f64) -> f64 {
    gaussian_bin_mass(z, mu, sigma)
}
