//! Binary checkpoint format (`DRNC`): config echo, step counter, rng state,
//! named parameter blobs, and optimizer velocity blobs.
//!
//! Blob order is the model's parameter registration order, which makes a
//! load/save round trip byte-identical.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamEntry;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DRNC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete ChaCha state: seed, stream, and block position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_toml: String,
    pub step: u64,
    pub rng: RngState,
    pub params: Vec<ParamEntry>,
    pub velocities: Vec<ParamEntry>,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn put_blobs(w: &mut impl Write, blobs: &[ParamEntry]) -> std::io::Result<()> {
    put_u32(w, blobs.len() as u32)?;
    for e in blobs {
        put_u32(w, e.name.len() as u32)?;
        w.write_all(e.name.as_bytes())?;
        put_u32(w, e.shape.len() as u32)?;
        for &d in &e.shape {
            put_u32(w, d as u32)?;
        }
        for v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn get_blobs(r: &mut impl Read) -> std::io::Result<Vec<ParamEntry>> {
    let count = get_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = get_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let ndim = get_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(get_u32(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push(ParamEntry { name, shape, data });
    }
    Ok(out)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        let io = |e: std::io::Error| Error::io(path.to_path_buf(), e);
        buf.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        put_u32(&mut buf, CHECKPOINT_VERSION).map_err(io)?;
        put_u32(&mut buf, self.config_toml.len() as u32).map_err(io)?;
        buf.write_all(self.config_toml.as_bytes()).map_err(io)?;
        buf.write_all(&self.step.to_le_bytes()).map_err(io)?;
        buf.write_all(&self.rng.seed).map_err(io)?;
        buf.write_all(&self.rng.word_pos.to_le_bytes())
            .map_err(io)?;
        buf.write_all(&self.rng.stream.to_le_bytes()).map_err(io)?;
        put_blobs(&mut buf, &self.params).map_err(io)?;
        put_blobs(&mut buf, &self.velocities).map_err(io)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path.to_path_buf(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        let io = |e: std::io::Error| Error::io(path.to_path_buf(), e);
        let bad = |msg: String| Error::format(path.to_path_buf(), msg);

        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = get_u32(&mut f).map_err(io)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let cfg_len = get_u32(&mut f).map_err(io)? as usize;
        let mut cfg = vec![0u8; cfg_len];
        f.read_exact(&mut cfg).map_err(io)?;
        let config_toml =
            String::from_utf8(cfg).map_err(|e| bad(format!("config not utf-8: {e}")))?;
        let mut b8 = [0u8; 8];
        f.read_exact(&mut b8).map_err(io)?;
        let step = u64::from_le_bytes(b8);
        let mut seed = [0u8; 32];
        f.read_exact(&mut seed).map_err(io)?;
        let mut b16 = [0u8; 16];
        f.read_exact(&mut b16).map_err(io)?;
        let word_pos = u128::from_le_bytes(b16);
        f.read_exact(&mut b8).map_err(io)?;
        let stream = u64::from_le_bytes(b8);
        let params = get_blobs(&mut f).map_err(io)?;
        let velocities = get_blobs(&mut f).map_err(io)?;
        Ok(Checkpoint {
            config_toml,
            step,
            rng: RngState {
                seed,
                word_pos,
                stream,
            },
            params,
            velocities,
        })
    }
}
