//! Checkpoint files.
//!
//! Layout, little-endian: magic `CDMJ`, version u16, config block (u32 byte
//! length + UTF-8 `key = value` lines, including `stage`), u32 record count,
//! then per record: u16 name length, UTF-8 name, u8 rank, u64 dims, f64 payload.

use std::path::Path;

use super::config::{parse_pairs, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CDMJ";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: u8,
    pub config: TrainConfig,
    pub params: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn from_store<E: Scalar>(stage: u8, config: &TrainConfig, store: &ParamStore<E>) -> Self {
        Checkpoint { stage, config: config.clone(), params: store.snapshot() }
    }

    /// Parameters as a fresh, fully trainable store.
    pub fn store<E: Scalar>(&self) -> Result<ParamStore<E>> {
        let mut s = ParamStore::new();
        for (name, t) in &self.params {
            s.insert(name.clone(), t.cast())?;
        }
        Ok(s)
    }

    pub fn expect_stage(&self, stage: u8) -> Result<()> {
        if self.stage != stage {
            return Err(Error::WrongStage { expected: stage, found: self.stage });
        }
        Ok(())
    }

    pub fn expect_stage_at_least(&self, stage: u8) -> Result<()> {
        if self.stage < stage {
            return Err(Error::WrongStage { expected: stage, found: self.stage });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let mut text = format!("stage = {}\n", self.stage);
        text.push_str(&self.config.to_text());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            let n = u16::try_from(name.len()).map_err(|_| Error::InvalidArgument(format!("parameter name too long: {name}")))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::try_from(t.rank()).map_err(|_| Error::InvalidArgument(format!("rank too large for {name}")))?);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.array("magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::MagicMismatch { expected: CHECKPOINT_MAGIC, found: magic });
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found: version, supported: CHECKPOINT_VERSION });
        }
        let len = u32::from_le_bytes(r.array("config length")?) as usize;
        let text = std::str::from_utf8(r.take(len, "config block")?)
            .map_err(|_| Error::Malformed("config block is not UTF-8".into()))?;
        let mut stage = None;
        let mut config = TrainConfig::default();
        for (k, v) in parse_pairs(text)? {
            if k == "stage" {
                stage = Some(v.parse::<u8>().map_err(|_| Error::Malformed(format!("bad stage marker {v:?}")))?);
            } else {
                config.set(&k, &v)?;
            }
        }
        let stage = stage.ok_or_else(|| Error::Malformed("missing stage marker".into()))?;
        if !(1..=3).contains(&stage) {
            return Err(Error::Malformed(format!("stage marker {stage} outside 1..=3")));
        }
        let count = u32::from_le_bytes(r.array("record count")?) as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = u16::from_le_bytes(r.array("name length")?) as usize;
            let name = std::str::from_utf8(r.take(n, "parameter name")?)
                .map_err(|_| Error::Malformed("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.array::<1>("rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(r.array("dims")?) as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.filter(|&n| n > 0).ok_or_else(|| Error::Malformed(format!("bad shape {shape:?} for {name}")))?;
            let payload = r.take(numel.checked_mul(8).ok_or_else(|| Error::Malformed("payload too large".into()))?, "payload")?;
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            params.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { stage, config, params })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("checkpoint ends inside {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let params = vec![
            ("a.weight".to_string(), Tensor::from_f64(vec![2, 3], &[1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -7.25]).unwrap()),
            ("b".to_string(), Tensor::scalar(0.1)),
        ];
        Checkpoint { stage: 2, config: TrainConfig::default(), params }
    }

    #[test]
    fn bit_exact_round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for ((_, a), (_, b)) in c.params.iter().zip(&back.params) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.stage, 2);
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::MagicMismatch { .. })));
        let mut future = bytes.clone();
        future[4..6].copy_from_slice(&7u16.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&future), Err(Error::VersionMismatch { found: 7, .. })));
        for cut in [3, 5, 9, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
    }

    #[test]
    fn stage_guard() {
        assert!(matches!(sample().expect_stage(1), Err(Error::WrongStage { expected: 1, found: 2 })));
    }
}
