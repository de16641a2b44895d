//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic          8 bytes   "GVRECKPT"
//! version        u32       1
//! config_hash    32 bytes  SHA-256 of the config text
//! dataset_hash   32 bytes  SHA-256 of the split manifest the model was trained on
//! seed           u64
//! step           u64       Adam step counter
//! epoch          u32       epoch the parameters were taken from
//! config_len     u32
//! config         config_len bytes, UTF-8 `key = value` lines
//! n_params       u32
//! n_params times:
//!   name_len     u32
//!   name         name_len bytes, UTF-8
//!   rows         u64
//!   cols         u64
//!   value        rows*cols f64, row-major
//!   adam_m       rows*cols f64
//!   adam_v       rows*cols f64
//! digest         32 bytes  SHA-256 of every preceding byte
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::dense::DenseMatrix;
use super::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"GVRECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub config_hash: [u8; 32],
    pub dataset_hash: [u8; 32],
    pub seed: u64,
    pub epoch: u32,
    pub store: ParamStore,
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.dataset_hash);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.store.step().to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        put_bytes(&mut out, self.config_text.as_bytes());
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for p in self.store.params() {
            put_bytes(&mut out, p.name.as_bytes());
            out.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
            for buf in [&p.value, &p.m, &p.v] {
                for x in buf.as_slice() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let digest = sha256(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if sha256(body) != digest {
            return Err(Error::Checkpoint("digest mismatch (file corrupted)".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let dataset_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let seed = r.u64()?;
        let step = r.u64()?;
        let epoch = r.u32()?;
        let config_text = r.string()?;
        let n = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let value = r.matrix(rows, cols)?;
            let m = r.matrix(rows, cols)?;
            let v = r.matrix(rows, cols)?;
            let id = store.add(name, value);
            let p = &mut store.params_mut()[id.0];
            p.m = m;
            p.v = v;
        }
        store.set_step(step);
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            config_text,
            config_hash,
            dataset_hash,
            seed,
            epoch,
            store,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DenseMatrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("shape overflow".into()))?;
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        DenseMatrix::new(rows, cols, data)
    }
}
