//! Binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "CLABCKPT" | version u32 | kind u8 | model u8 | n u64 | length f64
//! t f64 | step u64 | dt_last f64
//! count u64 | count × f64          (density, or cumulative mass for radial runs)
//! meta_len u64 | meta JSON
//! sha256 of everything above
//! ```

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use collapse_lab::{DomainKind, Model};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"CLABCKPT";
pub const VERSION: u32 = 1;

/// Runner bookkeeping needed to continue output streams exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub config: String,
    pub series_len: u64,
    pub snapshots_len: u64,
    pub snapshot_count: u64,
    /// Bit patterns keep these exact through JSON.
    pub initial_sup_bits: u64,
    pub next_snapshot_sup_bits: u64,
    pub status: String,
    pub stop_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: DomainKind,
    pub model: Model,
    pub n: u64,
    pub length: f64,
    pub t: f64,
    pub step: u64,
    pub dt_last: f64,
    pub values: Vec<f64>,
    pub meta: Meta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::with_capacity(64 + 8 * self.values.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(match self.kind {
            DomainKind::Square => 0,
            DomainKind::RadialDisk => 1,
        });
        b.push(match self.model {
            Model::Dirichlet => 0,
            Model::Neumann => 1,
        });
        b.extend_from_slice(&self.n.to_le_bytes());
        for x in [self.length, self.t] {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.dt_last.to_le_bytes());
        b.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for x in &self.values {
            b.extend_from_slice(&x.to_le_bytes());
        }
        let meta = serde_json::to_vec(&self.meta)?;
        b.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        b.extend_from_slice(&meta);
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            bail!("not a collapse-lab checkpoint (bad magic)");
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            bail!("checkpoint version {version} is not supported by this build (version {VERSION})");
        }
        if bytes.len() < 12 + 32 {
            bail!("checksum failure: checkpoint is truncated ({} bytes)", bytes.len());
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            bail!("checksum failure: checkpoint is corrupted or truncated");
        }
        let mut r = Reader { buf: body, pos: 12 };
        let kind = match r.u8()? {
            0 => DomainKind::Square,
            1 => DomainKind::RadialDisk,
            k => bail!("unknown domain tag {k}"),
        };
        let model = match r.u8()? {
            0 => Model::Dirichlet,
            1 => Model::Neumann,
            k => bail!("unknown model tag {k}"),
        };
        let n = r.u64()?;
        let length = r.f64()?;
        let t = r.f64()?;
        let step = r.u64()?;
        let dt_last = r.f64()?;
        let count = r.u64()? as usize;
        let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let meta_len = r.u64()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?).context("checkpoint metadata")?;
        if r.pos != body.len() {
            bail!("{} trailing bytes after checkpoint metadata", body.len() - r.pos);
        }
        Ok(Self { kind, model, n, length, t, step, dt_last, values, meta })
    }

    /// Writes through a temporary file so a crash never leaves half a checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.buf.len()).ok_or_else(|| anyhow!("checkpoint ends early"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            kind: DomainKind::Square,
            model: Model::Neumann,
            n: 2,
            length: 1.0,
            t: 0.1 + 0.2,
            step: 7,
            dt_last: 1e-5,
            values: vec![1.0, f64::MIN_POSITIVE, std::f64::consts::PI, 0.0],
            meta: Meta {
                config: "lambda = 1\n".into(),
                series_len: 120,
                snapshots_len: 0,
                snapshot_count: 0,
                initial_sup_bits: 2.5f64.to_bits(),
                next_snapshot_sup_bits: f64::INFINITY.to_bits(),
                status: "interrupted".into(),
                stop_reason: None,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
    }

    #[test]
    fn truncation_and_corruption_fail_the_checksum() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 20] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err().to_string();
            assert!(err.contains("checksum"), "{err}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped).unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 7") && err.contains(&format!("version {VERSION}")), "{err}");
    }
}
