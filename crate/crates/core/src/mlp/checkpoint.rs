//! Versioned binary checkpoints of a network and its optimizer state.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "GVFCKPT\0"
//! version      u32
//! scalar_bytes u8       4 (f32) or 8 (f64)
//! layout_hash  u64      encoder layout the network was trained on
//! n_dims       u32, then n_dims × u64
//! step_count   u64
//! beta1 beta2 epsilon weight_decay   4 × f64
//! n_params     u64
//! params, first_moment, second_moment   3 × n_params scalars
//! checksum     u64      FNV-1a over every preceding byte
//! ```
//!
//! A plain-text sidecar (`<path>.txt`) summarizes the header.

use std::fs;
use std::path::{Path, PathBuf};

use super::{parameter_count, AdamConfig, Network, OptimizerState, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GVFCKPT\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<R: Real> {
    pub network: Network<R>,
    pub optimizer: OptimizerState<R>,
    pub layout_hash: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn write_checkpoint<R: Real>(net: &Network<R>, opt: &OptimizerState<R>, layout_hash: u64) -> Vec<u8> {
    let n = net.num_params();
    let mut out = Vec::with_capacity(96 + 3 * n * R::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(R::BYTES as u8);
    out.extend_from_slice(&layout_hash.to_le_bytes());
    out.extend_from_slice(&(net.dims().len() as u32).to_le_bytes());
    for &d in net.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&opt.step_count.to_le_bytes());
    let c = opt.config;
    for x in [c.beta1, c.beta2, c.epsilon, c.weight_decay] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for block in [net.params(), &opt.first_moment[..], &opt.second_moment[..]] {
        for &v in block {
            v.put_le(&mut out);
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint("truncated file".into())),
        }
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn block<R: Real>(&mut self, n: usize) -> Result<Vec<R>> {
        let bytes = self.take(n.checked_mul(R::BYTES).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(R::BYTES).map(R::take_le).collect())
    }
}

/// Decodes a checkpoint. With `expected_dims`, a network of any other shape
/// is rejected.
pub fn read_checkpoint<R: Real>(bytes: &[u8], expected_dims: Option<&[usize]>) -> Result<Checkpoint<R>> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let width = cur.u8()? as usize;
    if width != R::BYTES {
        return Err(Error::Checkpoint(format!(
            "stored with {width}-byte scalars, loading as {}",
            R::NAME
        )));
    }
    let layout_hash = cur.u64()?;
    let n_dims = cur.u32()? as usize;
    if n_dims > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| cur.u64().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if let Some(expected) = expected_dims {
        if expected != dims.as_slice() {
            return Err(Error::Checkpoint(format!(
                "network shape {dims:?} does not match expected {expected:?}"
            )));
        }
    }
    let step_count = cur.u64()?;
    let config = AdamConfig {
        beta1: cur.f64()?,
        beta2: cur.f64()?,
        epsilon: cur.f64()?,
        weight_decay: cur.f64()?,
    };
    let n = cur.u64()? as usize;
    if n != parameter_count(&dims) {
        return Err(Error::Checkpoint(format!(
            "{n} parameters stored for shape {dims:?}"
        )));
    }
    let params = cur.block::<R>(n)?;
    let first_moment = cur.block::<R>(n)?;
    let second_moment = cur.block::<R>(n)?;
    let body_end = cur.at;
    let stored = cur.u64()?;
    if cur.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after checksum".into()));
    }
    if stored != fnv1a(&bytes[..body_end]) {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    Ok(Checkpoint {
        network: Network::from_params(&dims, params)?,
        optimizer: OptimizerState {
            config,
            first_moment,
            second_moment,
            step_count,
        },
        layout_hash,
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

pub fn save_checkpoint<R: Real>(
    net: &Network<R>,
    opt: &OptimizerState<R>,
    layout_hash: u64,
    path: &Path,
) -> Result<()> {
    fs::write(path, write_checkpoint(net, opt, layout_hash)).map_err(|e| Error::io(path, e))?;
    let c = opt.config;
    let manifest = format!(
        "version = {CHECKPOINT_VERSION}\nprecision = {}\ndims = {:?}\nparameters = {}\nstep_count = {}\n\
         beta1 = {}\nbeta2 = {}\nepsilon = {}\nweight_decay = {}\nlayout_hash = {layout_hash:016x}\n",
        R::NAME,
        net.dims(),
        net.num_params(),
        opt.step_count,
        c.beta1,
        c.beta2,
        c.epsilon,
        c.weight_decay,
    );
    let side = sidecar_path(path);
    fs::write(&side, manifest).map_err(|e| Error::io(side, e))
}

pub fn load_checkpoint<R: Real>(path: &Path, expected_dims: Option<&[usize]>) -> Result<Checkpoint<R>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, expected_dims)
}
