//! Image sets: the synthetic texture families and binary PPM/PGM files.

use std::path::{Path, PathBuf};

use super::config::DatasetSpec;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Side lengths are cropped to multiples of this so the hyper-latent grid is whole.
pub const SIDE_MULTIPLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Flat,
    Gradient,
    Checkerboard,
    SmoothNoise,
}

impl Family {
    pub fn of_index(i: usize) -> Family {
        [Family::Flat, Family::Gradient, Family::Checkerboard, Family::SmoothNoise][i % 4]
    }
}

fn color(rng: &mut RngStream) -> [f64; 3] {
    [rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)]
}

/// `count` images of `3 x size x size`; image `i` belongs to family `i % 4`.
pub fn synth_dataset(seed: u64, count: usize, size: usize) -> Result<Vec<Tensor>> {
    if size == 0 || size % 4 != 0 {
        return Err(Error::InvalidArgument(format!("image size must be a positive multiple of 4, got {size}")));
    }
    let root = RngStream::new(seed);
    (0..count).map(|i| synth_image(Family::of_index(i), size, &mut root.substream(&[i as u64]))).collect()
}

pub fn synth_image(family: Family, size: usize, rng: &mut RngStream) -> Result<Tensor> {
    let hw = size * size;
    let mut data = vec![0.0; 3 * hw];
    match family {
        Family::Flat => {
            let c = color(rng);
            for ch in 0..3 {
                data[ch * hw..(ch + 1) * hw].fill(c[ch]);
            }
        }
        Family::Gradient => {
            let (a, b) = (color(rng), color(rng));
            let theta = rng.uniform(0.0, std::f64::consts::TAU);
            let (dx, dy) = (theta.cos(), theta.sin());
            let half = (size as f64 - 1.0) / 2.0;
            let reach = half * (dx.abs() + dy.abs());
            for y in 0..size {
                for x in 0..size {
                    let proj = ((x as f64 - half) * dx + (y as f64 - half) * dy) / reach.max(1e-9);
                    let t = (proj + 1.0) / 2.0;
                    for ch in 0..3 {
                        data[ch * hw + y * size + x] = a[ch] + (b[ch] - a[ch]) * t;
                    }
                }
            }
        }
        Family::Checkerboard => {
            let (a, b) = (color(rng), color(rng));
            let cell = [2usize, 4, 8][rng.range_inclusive(0, 2) as usize];
            for y in 0..size {
                for x in 0..size {
                    let c = if (y / cell + x / cell) % 2 == 0 { a } else { b };
                    for ch in 0..3 {
                        data[ch * hw + y * size + x] = c[ch];
                    }
                }
            }
        }
        Family::SmoothNoise => {
            let base = color(rng);
            let amp = rng.uniform(0.2, 0.4);
            for ch in 0..3 {
                let raw: Vec<f64> = (0..hw).map(|_| rng.gaussian()).collect();
                for y in 0..size {
                    for x in 0..size {
                        let mut s = 0.0;
                        let mut n = 0.0;
                        for yy in y.saturating_sub(1)..(y + 2).min(size) {
                            for xx in x.saturating_sub(1)..(x + 2).min(size) {
                                s += raw[yy * size + xx];
                                n += 1.0;
                            }
                        }
                        data[ch * hw + y * size + x] = (base[ch] + amp * s / n).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Tensor::new(vec![3, size, size], data)
}

/// Mean over channels and interior pixels of the 3x3-window variance.
pub fn local_variance(img: &Tensor) -> f64 {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if h < 3 || w < 3 {
        return 0.0;
    }
    let d = img.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let at = |yy: usize, xx: usize| d[(ch * h + yy) * w + xx];
                let window = || (y - 1..=y + 1).flat_map(move |yy| (x - 1..=x + 1).map(move |xx| (yy, xx)));
                // shifted by the centre pixel so constant windows give exactly 0
                let c = at(y, x);
                let mean = window().map(|(yy, xx)| at(yy, xx) - c).sum::<f64>() / 9.0;
                let sq = window().map(|(yy, xx)| (at(yy, xx) - c).powi(2)).sum::<f64>() / 9.0;
                total += (sq - mean * mean).max(0.0);
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 {
        return Err("file too short for a PNM header".into());
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P6" && &magic != b"P5" {
        return Err(format!("unsupported magic {:?}; expected binary P6 or P5", String::from_utf8_lossy(&magic)));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("header ends early".into()),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(format!("expected a number at byte {start}"));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| "header number out of range".to_string())?;
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after maxval".into()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format!("zero-sized image {width}x{height}"));
    }
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported; only 255 is accepted"));
    }
    Ok(Header { magic, width, height, maxval, offset: pos })
}

/// Decodes a binary PPM (P6) or PGM (P5) with maxval 255 into `3 x H x W`
/// in `[0, 1]`; grey images are replicated to three channels.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |message: String| Error::Image { path: path.to_path_buf(), message };
    let h = parse_header(bytes).map_err(bad)?;
    debug_assert_eq!(h.maxval, 255);
    let channels = if &h.magic == b"P6" { 3 } else { 1 };
    let need = h.width * h.height * channels;
    let body = &bytes[h.offset..];
    if body.len() < need {
        return Err(bad(format!("truncated pixel data: {} of {need} bytes", body.len())));
    }
    let hw = h.width * h.height;
    let mut data = vec![0.0; 3 * hw];
    for i in 0..hw {
        for ch in 0..3 {
            let src = if channels == 3 { body[i * 3 + ch] } else { body[i] };
            data[ch * hw + i] = src as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h.height, h.width], data)
}

pub fn read_pnm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_pnm(&bytes, path)
}

/// Binary P6 with values rounded from `[0, 1]`.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let [3, h, w] = img.shape()[..] else {
        return Err(Error::shape("encode_ppm", format!("expected 3 x H x W, got {:?}", img.shape())));
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let hw = h * w;
    for i in 0..hw {
        for ch in 0..3 {
            out.push((img.data()[ch * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_ppm(img: &Tensor, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(img)?).map_err(|e| Error::file(path, e))
}

/// Centre square crop with a side that is a multiple of 8 when the image
/// allows one; smaller images keep their short side.
pub fn center_crop(img: &Tensor) -> Tensor {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let short = h.min(w);
    let side = if short >= SIDE_MULTIPLE { short - short % SIDE_MULTIPLE } else { short };
    if side == h && side == w {
        return img.clone();
    }
    let (y0, x0) = ((h - side) / 2, (w - side) / 2);
    let mut data = Vec::with_capacity(3 * side * side);
    for ch in 0..3 {
        for y in 0..side {
            let row = (ch * h + y0 + y) * w + x0;
            data.extend_from_slice(&img.data()[row..row + side]);
        }
    }
    Tensor::new(vec![3, side, side], data).expect("crop is non-empty")
}

/// Every `.ppm`/`.pgm` file in `dir`, sorted by name and centre-cropped.
pub fn load_images(dir: &Path) -> Result<Vec<(PathBuf, Tensor)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::file(dir, e))?.path();
        let ext = p.extension().and_then(|s| s.to_str()).map(|s| s.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("ppm") | Some("pgm")) {
            paths.push(p);
        }
    }
    if paths.is_empty() {
        return Err(Error::Image { path: dir.to_path_buf(), message: "no .ppm or .pgm images found".into() });
    }
    paths.sort();
    paths.into_iter().map(|p| Ok((p.clone(), center_crop(&read_pnm(&p)?)))).collect()
}

/// The images a dataset spec names: synthetic sets are drawn from `seed` at
/// `size`, directories are read as they are.
pub fn dataset_images(spec: &DatasetSpec, seed: u64, size: usize) -> Result<Vec<Tensor>> {
    match spec {
        DatasetSpec::Synthetic { count } => synth_dataset(seed, *count, size),
        DatasetSpec::Directory(dir) => Ok(load_images(Path::new(dir))?.into_iter().map(|(_, t)| t).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_set_is_deterministic() {
        let a = synth_dataset(42, 8, 32).unwrap();
        assert_eq!(a, synth_dataset(42, 8, 32).unwrap());
        assert_ne!(a, synth_dataset(43, 8, 32).unwrap());
        assert!(a.iter().all(|t| t.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn flat_has_no_variance_and_noise_has_more() {
        for seed in 0..20 {
            let set = synth_dataset(seed, 4, 32).unwrap();
            assert_eq!(local_variance(&set[0]), 0.0);
            let d = set[0].data();
            assert!(d[..1024].iter().all(|&v| v == d[0]));
            assert!(local_variance(&set[3]) > local_variance(&set[0]));
        }
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn p6_white_square() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([255u8; 12]);
        let t = decode_pnm(&bytes, Path::new("w.ppm")).unwrap();
        assert_eq!(t.shape(), &[3, 2, 2]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn p5_is_replicated() {
        let mut bytes = b"P5\n# grey\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 51]);
        let t = decode_pnm(&bytes, Path::new("g.pgm")).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.0, 0.2, 0.0, 0.2, 0.0, 0.2]);
    }

    #[test]
    fn malformed_files_name_the_path() {
        let mut bytes = b"P6\n4 4\n255\n".to_vec();
        bytes.extend([0u8; 10]);
        let err = decode_pnm(&bytes, Path::new("cut.ppm")).unwrap_err();
        assert!(err.to_string().contains("cut.ppm"), "{err}");
        assert!(decode_pnm(b"P3\n1 1\n255\n0 0 0", Path::new("a.ppm")).is_err());
        assert!(decode_pnm(b"P6\n1 1\n65535\n\0\0\0\0\0\0", Path::new("a.ppm")).is_err());
        assert!(decode_pnm(b"P6\n1", Path::new("a.ppm")).is_err());
    }

    #[test]
    fn ppm_round_trip_and_crop() {
        let img = synth_dataset(1, 2, 8).unwrap().remove(1);
        let back = decode_pnm(&encode_ppm(&img).unwrap(), Path::new("x")).unwrap();
        assert!(img.data().iter().zip(back.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
        let wide = Tensor::zeros(vec![3, 20, 35]);
        assert_eq!(center_crop(&wide).shape(), &[3, 16, 16]);
    }
}
