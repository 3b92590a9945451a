//! Binary checkpoint container shared by reward models and policies.
//!
//! Layout, all integers little-endian:
//! `"RRPO-CKPT\0"`, `u16` version, three `u32` dims, then for each array in
//! declaration order: `u32` rank, `rank x u32` extents, values as `f64`.

use std::io::{Read, Write};

use crate::array::{Array, MAX_RANK};
use crate::error::{Error, Result};

pub const CKPT_MAGIC: &[u8; 10] = b"RRPO-CKPT\0";
pub const CKPT_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, dims: [u32; 3], arrays: &[&Array]) -> Result<()> {
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for a in arrays {
        w.write_all(&(a.rank() as u32).to_le_bytes())?;
        for &e in a.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(a.len() * 8);
        for v in a.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a whole checkpoint; arrays run until end of input.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<([u32; 3], Vec<Array>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = bytes.as_slice();
    let mut magic = [0u8; 10];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Format("not an RRPO checkpoint (bad magic)".into()));
    }
    let mut vb = [0u8; 2];
    cur.read_exact(&mut vb)?;
    let version = u16::from_le_bytes(vb);
    if version != CKPT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let dims = [
        read_u32(&mut cur)?,
        read_u32(&mut cur)?,
        read_u32(&mut cur)?,
    ];
    let mut arrays = Vec::new();
    while !cur.is_empty() {
        let rank = read_u32(&mut cur)? as usize;
        if rank > MAX_RANK {
            return Err(Error::Format(format!(
                "array rank {rank} exceeds {MAX_RANK}"
            )));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|_| read_u32(&mut cur).map(|x| x as usize))
            .collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        if cur.len() < n * 8 {
            return Err(Error::Format("truncated array data".into()));
        }
        let (head, tail) = cur.split_at(n * 8);
        let data = head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(Array::new(&shape, data));
        cur = tail;
    }
    Ok((dims, arrays))
}
