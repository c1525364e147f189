//! Binary weight files.
//!
//! Layout: magic `CTUN`, version u32, tensor count u32, then per tensor:
//! name length u32 + UTF-8 name, rank u8, dims as u32 each, payload as
//! little-endian float32. The file ends with a CRC32 (IEEE) of every
//! preceding byte. All integers are little-endian. Round trips are bit-exact.

use crate::error::{CtunError, Result};
use crate::model::ParamStore;
use crate::tensor::{Shape, Tensor};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"CTUN";
const VERSION: u32 = 1;

pub fn save_weights(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let s = tensor.shape();
        buf.push(4u8);
        for d in [s.n, s.c, s.h, s.w] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CtunError::WeightFormat {
                detail: format!("truncated file at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_weights(path: &Path) -> Result<ParamStore<f32>> {
    let buf = fs::read(path)?;
    if buf.len() < 4 + 4 + 4 + 4 {
        return Err(CtunError::WeightFormat {
            detail: "file too short".into(),
        });
    }
    let (body, crc_bytes) = buf.split_at(buf.len() - 4);
    let want_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let got_crc = crc32fast::hash(body);
    if want_crc != got_crc {
        return Err(CtunError::WeightFormat {
            detail: format!("CRC mismatch: stored {want_crc:08x}, computed {got_crc:08x}"),
        });
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CtunError::WeightFormat {
            detail: "bad magic".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CtunError::WeightFormat {
            detail: format!("unsupported version {version}"),
        });
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CtunError::WeightFormat {
                detail: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u8()? as usize;
        if rank == 0 || rank > 4 {
            return Err(CtunError::WeightFormat {
                detail: format!("tensor '{name}' has unsupported rank {rank}"),
            });
        }
        let mut dims = [1usize; 4];
        // right-align: a rank-k entry fills the trailing k slots
        for i in 0..rank {
            dims[4 - rank + i] = r.u32()? as usize;
        }
        let count: usize = dims.iter().product();
        let payload = r.take(count * 4)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        store.insert(name.clone(), Tensor::from_vec(data, shape)).map_err(|_| {
            CtunError::WeightFormat {
                detail: format!("duplicate tensor name '{name}'"),
            }
        })?;
    }
    if r.pos != body.len() {
        return Err(CtunError::WeightFormat {
            detail: format!("{} trailing bytes after last tensor", body.len() - r.pos),
        });
    }
    Ok(store)
}
