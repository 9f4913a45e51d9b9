//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "IAFACKPT"
//! version  u32       1
//! count    u32       number of parameters
//! per parameter, in registration order:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rank     u32, extents (u64 × rank)
//!   values   f64 × product(extents)
//! ```

use std::io::{Read, Write};

use super::{ParamStore, Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IAFACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        let shape = p.tensor.shape();
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Input("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Input(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut input)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Input("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut input)? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Input(format!("parameter `{name}` has rank {rank}")));
        }
        let dims = (0..rank).map(|_| read_u64(&mut input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let mut raw = vec![0u8; numel * 8];
        input.read_exact(&mut raw)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        store.add(name, Tensor::from_vec(&dims, data)?)?;
    }
    Ok(store)
}
