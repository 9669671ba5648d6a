//! Binary checkpoint files.
//!
//! Layout, all little-endian: magic `R2D\0`, version `u16`, dimension `u32`,
//! step index `u64`, step size `f64`, dataset fingerprint `u64`, `d` parameter
//! values as `f64`, then a trailer of flags `u8`, name length `u16` and the
//! UTF-8 problem name.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, ParamVector};

pub const MAGIC: [u8; 4] = *b"R2D\0";
pub const FORMAT_VERSION: u16 = 1;

const FLAG_RECONSTRUCTED: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub theta: ParamVector,
    pub step_index: u64,
    pub eta: f64,
    pub fingerprint: u64,
    pub problem: String,
    /// Produced by rewinding final weights rather than saved during training.
    pub reconstructed: bool,
}

impl Checkpoint {
    pub fn new(theta: ParamVector, step_index: u64, eta: f64, fingerprint: u64, problem: &str) -> Self {
        Self {
            theta,
            step_index,
            eta,
            fingerprint,
            problem: problem.to_string(),
            reconstructed: false,
        }
    }

    pub fn mark_reconstructed(mut self) -> Self {
        self.reconstructed = true;
        self
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        let fp = data.fingerprint();
        if fp != self.fingerprint {
            return Err(Error::CheckpointMismatch {
                checkpoint: self.fingerprint,
                dataset: fp,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.theta.dim();
        let name = self.problem.as_bytes();
        let mut out = Vec::with_capacity(30 + 8 * d + 3 + name.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&self.step_index.to_le_bytes());
        out.extend_from_slice(&self.eta.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        for v in self.theta.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(if self.reconstructed { FLAG_RECONSTRUCTED } else { 0 });
        out.extend_from_slice(&(name.len().min(u16::MAX as usize) as u16).to_le_bytes());
        out.extend_from_slice(&name[..name.len().min(u16::MAX as usize)]);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Parse("checkpoint: bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "checkpoint: unsupported format version {version}"
            )));
        }
        let d = u32::from_le_bytes(r.array()?) as usize;
        let step_index = u64::from_le_bytes(r.array()?);
        let eta = f64::from_le_bytes(r.array()?);
        let fingerprint = u64::from_le_bytes(r.array()?);
        if d == 0 {
            return Err(Error::Parse("checkpoint: zero dimension".into()));
        }
        let mut theta = Vec::with_capacity(d.min(1 << 20));
        for _ in 0..d {
            theta.push(f64::from_le_bytes(r.array()?));
        }
        let flags = r.take(1)?[0];
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let problem = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Parse("checkpoint: problem name is not UTF-8".into()))?
            .to_string();
        if r.pos != bytes.len() {
            return Err(Error::Parse(format!(
                "checkpoint: {} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Parse(format!("checkpoint: invalid step size {eta}")));
        }
        let theta = ParamVector::new(theta)
            .map_err(|_| Error::Parse("checkpoint: non-finite parameter".into()))?;
        Ok(Self {
            theta,
            step_index,
            eta,
            fingerprint,
            problem,
            reconstructed: flags & FLAG_RECONSTRUCTED != 0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks the fingerprint against `data`.
    pub fn load_for(path: impl AsRef<Path>, data: &Dataset) -> Result<Self> {
        let ckpt = Self::load(path)?;
        ckpt.check_dataset(data)?;
        Ok(ckpt)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Parse(format!(
                "checkpoint: truncated at byte {} (need {len} more)",
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::new(
            ParamVector::new(vec![0.1, -2.5e-300, 3.0]).unwrap(),
            7,
            0.05,
            0xdead_beef,
            "logistic",
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let c = sample().mark_reconstructed();
        c.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.theta.iter().zip(c.theta.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"R2D\0");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(b[10..18].try_into().unwrap()), 7);
        assert_eq!(f64::from_le_bytes(b[18..26].try_into().unwrap()), 0.05);
        assert_eq!(u64::from_le_bytes(b[26..34].try_into().unwrap()), 0xdead_beef);
        assert_eq!(f64::from_le_bytes(b[34..42].try_into().unwrap()), 0.1);
        assert_eq!(b.len(), 34 + 24 + 1 + 2 + "logistic".len());
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let b = sample().to_bytes();
        for cut in [0, 3, 10, 40, b.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&b[..cut]), Err(Error::Parse(_))), "cut {cut}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = sample().to_bytes();
        b[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Parse(_))));
        let mut b = sample().to_bytes();
        b[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Parse(_))));
    }

    #[test]
    fn fingerprint_mismatch() {
        let a = Dataset::new(vec![(vec![0.0], 0.0)]).unwrap();
        let b = Dataset::new(vec![(vec![1.0], 0.0)]).unwrap();
        let mut c = sample();
        c.fingerprint = a.fingerprint();
        assert!(c.check_dataset(&a).is_ok());
        let err = c.check_dataset(&b).unwrap_err();
        assert!(err.to_string().contains("checkpoint/dataset mismatch"));
    }
}
