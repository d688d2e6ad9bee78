//! Entropy-driven symbol allocation and the simulated wireless hop.
//!
//! Every latent vector `i` gets `k_i` complex symbols, proportional to its
//! estimated information content. The JSCC projection of that vector is cut
//! to its first `2 k_i` reals, paired into complex values, and the frame is
//! scaled to unit average power before the AWGN channel. The receiver undoes
//! the scaling with the scalar carried in the frame header.

use num_complex::Complex64;

use crate::entropy::LikelihoodGrid;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Scalar, Tensor};

/// Symbols per latent vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateMap {
    pub k: Vec<usize>,
    pub k_min: usize,
    pub k_max: usize,
}

impl RateMap {
    pub fn new(k: Vec<usize>, k_min: usize, k_max: usize) -> Result<Self> {
        if k_min > k_max {
            return Err(Error::InvalidArgument(format!("k_min {k_min} exceeds k_max {k_max}")));
        }
        if let Some(bad) = k.iter().find(|&&v| v < k_min || v > k_max) {
            return Err(Error::InvalidArgument(format!("rate {bad} outside [{k_min}, {k_max}]")));
        }
        Ok(RateMap { k, k_min, k_max })
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn k_total(&self) -> usize {
        self.k.iter().sum()
    }

    /// `[L, C]` mask holding 1 on the first `2 k_i` entries of row `i`.
    pub fn mask<E: Scalar>(&self, channels: usize) -> Tensor<E> {
        let mut m = Tensor::zeros(vec![self.k.len(), channels]);
        for (i, &k) in self.k.iter().enumerate() {
            let n = (2 * k).min(channels);
            m.data_mut()[i * channels..i * channels + n].fill(E::ONE);
        }
        m
    }
}

/// `clamp(round_half_even(beta * bits), k_min, k_max)` per vector.
pub fn allocate_from_bits(vector_bits: &[f64], beta: f64, k_min: usize, k_max: usize) -> Result<RateMap> {
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("rate control beta must be positive, got {beta}")));
    }
    let k = vector_bits
        .iter()
        .map(|&b| {
            let q = (beta * b).round_ties_even().max(0.0);
            (q as usize).clamp(k_min, k_max)
        })
        .collect();
    RateMap::new(k, k_min, k_max)
}

/// Bits per latent vector: `-log2` of the product of the vector's channel
/// masses, for a `[C, h, w]` likelihood grid.
pub fn vector_bits(cond: &LikelihoodGrid) -> Result<Vec<f64>> {
    let m = cond.masses();
    let [c, h, w] = m.shape()[..] else {
        return Err(Error::shape("vector_bits", format!("expected C x h x w masses, got {:?}", m.shape())));
    };
    let l = h * w;
    let mut bits = vec![0.0; l];
    for ch in 0..c {
        for (i, b) in bits.iter_mut().enumerate() {
            *b -= m.data()[ch * l + i].log2();
        }
    }
    Ok(bits)
}

pub fn allocate_rates(cond: &LikelihoodGrid, beta: f64, k_min: usize, k_max: usize) -> Result<RateMap> {
    allocate_from_bits(&vector_bits(cond)?, beta, k_min, k_max)
}

/// Raster indices of an `h x w` grid, even-parity cells first.
pub fn checkerboard_order(l: usize, (h, w): (usize, usize)) -> Result<Vec<usize>> {
    if l != h * w {
        return Err(Error::InvalidArgument(format!("L = {l} does not match grid {h}x{w}")));
    }
    let cells = (0..h).flat_map(|r| (0..w).map(move |c| (r, c)));
    let even = cells.clone().filter(|(r, c)| (r + c) % 2 == 0);
    let odd = cells.filter(|(r, c)| (r + c) % 2 == 1);
    Ok(even.chain(odd).map(|(r, c)| r * w + c).collect())
}

pub fn invert_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (pos, &idx) in order.iter().enumerate() {
        inv[idx] = pos;
    }
    inv
}

/// Variable-length complex symbol frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub symbols: Vec<Complex64>,
    pub rate_map: RateMap,
    /// Transmission order of the latent vectors.
    pub order: Vec<usize>,
    /// Average `|s|^2` before normalisation.
    pub power: f64,
    /// Factor applied to reach unit power; the receiver divides by it.
    pub scale: f64,
}

impl SymbolFrame {
    pub fn k_total(&self) -> usize {
        self.symbols.len()
    }

    pub fn average_power(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len().max(1) as f64
    }
}

/// Packs the first `2 k_i` reals of every vector, in `order`, into complex
/// symbols and normalises the frame to unit average power.
pub fn frame_symbols<E: Scalar>(projected: &Tensor<E>, rate_map: &RateMap, order: &[usize]) -> Result<SymbolFrame> {
    let [l, c] = projected.shape()[..] else {
        return Err(Error::shape("frame_symbols", format!("expected L x C projection, got {:?}", projected.shape())));
    };
    if rate_map.len() != l || order.len() != l {
        return Err(Error::shape(
            "frame_symbols",
            format!("dimension 0 is {l} but rate map has {} entries and order {}", rate_map.len(), order.len()),
        ));
    }
    if 2 * rate_map.k_max > c {
        return Err(Error::shape("frame_symbols", format!("k_max {} needs {} reals per vector, have {c}", rate_map.k_max, 2 * rate_map.k_max)));
    }
    let k_total = rate_map.k_total();
    if k_total == 0 {
        return Err(Error::InvalidArgument("rate map allocates no symbols; nothing to transmit".into()));
    }
    let data = projected.data();
    let mut symbols = Vec::with_capacity(k_total);
    for &i in order {
        let row = &data[i * c..(i + 1) * c];
        for j in 0..rate_map.k[i] {
            symbols.push(Complex64::new(row[2 * j].to_f64(), row[2 * j + 1].to_f64()));
        }
    }
    let power = symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / k_total as f64;
    let scale = if power > 0.0 { 1.0 / power.sqrt() } else { 1.0 };
    for s in &mut symbols {
        *s *= scale;
    }
    Ok(SymbolFrame { symbols, rate_map: rate_map.clone(), order: order.to_vec(), power, scale })
}

/// Complex noise variance for unit signal power at `snr_db`.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Adds circularly symmetric Gaussian noise of variance `10^(-snr/10)`.
pub fn awgn(frame: &SymbolFrame, snr_db: f64, rng: &mut RngStream) -> SymbolFrame {
    let std = (noise_variance(snr_db) / 2.0).sqrt();
    let mut out = frame.clone();
    for s in &mut out.symbols {
        let re = rng.gaussian();
        let im = rng.gaussian();
        *s += Complex64::new(std * re, std * im);
    }
    out
}

/// Receiver-side inverse of [`frame_symbols`]: `[L, C]` with untransmitted
/// slots zero-filled and the power scaling removed.
pub fn unframe_symbols(frame: &SymbolFrame, channels: usize) -> Result<Tensor<f64>> {
    let l = frame.rate_map.len();
    if frame.symbols.len() != frame.rate_map.k_total() {
        return Err(Error::Malformed(format!(
            "frame carries {} symbols but its rate map allocates {}",
            frame.symbols.len(),
            frame.rate_map.k_total()
        )));
    }
    if frame.order.len() != l || 2 * frame.rate_map.k_max > channels {
        return Err(Error::shape("unframe_symbols", format!("order of length {} for {l} vectors with {channels} channels", frame.order.len())));
    }
    let mut out = vec![0.0; l * channels];
    let mut it = frame.symbols.iter();
    for &i in &frame.order {
        for j in 0..frame.rate_map.k[i] {
            let s = it.next().expect("count checked above") / frame.scale;
            out[i * channels + 2 * j] = s.re;
            out[i * channels + 2 * j + 1] = s.im;
        }
    }
    Tensor::new(vec![l, channels], out)
}

/// Channel bandwidth ratio `k / n`.
pub fn cbr(rate_map: &RateMap, n_source: usize) -> Result<f64> {
    if n_source == 0 {
        return Err(Error::InvalidArgument("source dimension must be positive".into()));
    }
    Ok(rate_map.k_total() as f64 / n_source as f64)
}

pub const FRAME_MAGIC: [u8; 4] = *b"CJSF";
pub const FRAME_VERSION: u16 = 1;

/// Little-endian wire layout: magic, version u16, L u32, `k_i` as u16 in
/// transmission order, scale f64, then interleaved f32 `(re, im)` pairs.
pub fn encode_frame(frame: &SymbolFrame) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(18 + 2 * frame.order.len() + 8 * frame.symbols.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.extend_from_slice(&(frame.order.len() as u32).to_le_bytes());
    for &i in &frame.order {
        let k = u16::try_from(frame.rate_map.k[i]).map_err(|_| Error::InvalidArgument("rate exceeds u16".into()))?;
        out.extend_from_slice(&k.to_le_bytes());
    }
    out.extend_from_slice(&frame.scale.to_le_bytes());
    for s in &frame.symbols {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("frame ends inside {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Parses a frame for a square latent grid; `k_max` bounds the rates read.
pub fn decode_frame(bytes: &[u8], k_min: usize, k_max: usize) -> Result<SymbolFrame> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != FRAME_MAGIC {
        return Err(Error::MagicMismatch { expected: FRAME_MAGIC, found: magic });
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != FRAME_VERSION {
        return Err(Error::VersionMismatch { found: version, supported: FRAME_VERSION });
    }
    let l = u32::from_le_bytes(r.take(4, "vector count")?.try_into().unwrap()) as usize;
    let side = (l as f64).sqrt().round() as usize;
    if side * side != l || l == 0 {
        return Err(Error::Malformed(format!("vector count {l} is not a square grid")));
    }
    let order = checkerboard_order(l, (side, side))?;
    let mut k = vec![0usize; l];
    for &i in &order {
        k[i] = u16::from_le_bytes(r.take(2, "rate map")?.try_into().unwrap()) as usize;
    }
    let rate_map = RateMap::new(k, k_min, k_max).map_err(|e| Error::Malformed(e.to_string()))?;
    let scale = f64::from_le_bytes(r.take(8, "scale")?.try_into().unwrap());
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Malformed(format!("invalid normalisation scale {scale}")));
    }
    let mut symbols = Vec::with_capacity(rate_map.k_total());
    for _ in 0..rate_map.k_total() {
        let re = f32::from_le_bytes(r.take(4, "symbols")?.try_into().unwrap());
        let im = f32::from_le_bytes(r.take(4, "symbols")?.try_into().unwrap());
        symbols.push(Complex64::new(re as f64, im as f64));
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes after symbols", bytes.len() - r.pos)));
    }
    let power = 1.0 / (scale * scale);
    Ok(SymbolFrame { symbols, rate_map, order, power, scale })
}
