//! Flat binary tensor container: `MRT1`, u32 rank, u64 extents, f64 values,
//! all little-endian, values row-major.

use std::io::{Read, Write};

use super::{Result, Tensor, TensorError};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"MRT1";

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Io(e.to_string())
}

pub fn write_snapshot<W: Write>(tensor: &Tensor, mut out: W) -> Result<()> {
    out.write_all(SNAPSHOT_MAGIC).map_err(io_err)?;
    out.write_all(&(tensor.rank() as u32).to_le_bytes()).map_err(io_err)?;
    for &d in tensor.shape() {
        out.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
    }
    let mut buf = Vec::with_capacity(tensor.len() * 8);
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf).map_err(io_err)
}

pub fn read_snapshot<R: Read>(mut input: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io_err)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4).map_err(io_err)?;
    let rank = u32::from_le_bytes(b4) as usize;
    if rank == 0 || rank > 8 {
        return Err(TensorError::Format(format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut b8 = [0u8; 8];
    for _ in 0..rank {
        input.read_exact(&mut b8).map_err(io_err)?;
        shape.push(u64::from_le_bytes(b8) as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= (1 << 31))
        .ok_or_else(|| TensorError::Format(format!("implausible shape {shape:?}")))?;
    let mut raw = vec![0u8; n * 8];
    input.read_exact(&mut raw).map_err(io_err)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}
