//! Binary checkpoint: parameters plus the direction distribution.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"DPZOCKPT" | d: u64 | θ: d × f64 | mask: d × u8 (0 or 1) | diag: d × f64
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::param::{DirectionDistribution, ParameterVector};

pub const MAGIC: &[u8; 8] = b"DPZOCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub theta: ParameterVector,
    pub mask: Vec<bool>,
    pub importance_diag: Vec<f64>,
}

impl Checkpoint {
    pub fn new(theta: ParameterVector, dist: &DirectionDistribution) -> Result<Self> {
        crate::error::check_dims(theta.dim(), dist.dim())?;
        Ok(Checkpoint {
            theta,
            mask: dist.mask().to_vec(),
            importance_diag: dist.importance_diag().to_vec(),
        })
    }

    /// The stored distribution; its upper bound is the largest diagonal entry.
    pub fn distribution(&self) -> Result<DirectionDistribution> {
        let upper = self.importance_diag.iter().copied().fold(0.0, f64::max);
        DirectionDistribution::new(self.mask.clone(), self.importance_diag.clone(), upper)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.theta.dim();
        let mut out = Vec::with_capacity(16 + 17 * d);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(d as u64).to_le_bytes());
        for x in self.theta.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend(self.mask.iter().map(|&m| u8::from(m)));
        for x in &self.importance_diag {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing DPZOCKPT header".into()));
        }
        let d = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let expected = usize::try_from(d)
            .ok()
            .and_then(|d| d.checked_mul(17))
            .and_then(|n| n.checked_add(16))
            .ok_or_else(|| bad(format!("dimension {d} is too large")))?;
        if bytes.len() != expected {
            return Err(bad(format!(
                "expected {expected} bytes for d = {d}, found {}",
                bytes.len()
            )));
        }
        let d = d as usize;
        let floats = |start: usize| -> Vec<f64> {
            bytes[start..start + 8 * d]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        let theta = ParameterVector::new(floats(16)).map_err(|e| bad(e.to_string()))?;
        let mask_start = 16 + 8 * d;
        let mut mask = Vec::with_capacity(d);
        for (i, &b) in bytes[mask_start..mask_start + d].iter().enumerate() {
            match b {
                0 => mask.push(false),
                1 => mask.push(true),
                other => return Err(bad(format!("mask byte {i} is {other}, expected 0 or 1"))),
            }
        }
        let importance_diag = floats(mask_start + d);
        let ckpt = Checkpoint {
            theta,
            mask,
            importance_diag,
        };
        ckpt.distribution().map_err(|e| bad(e.to_string()))?;
        Ok(ckpt)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
