//! Binary checkpoint format.
//!
//! ```text
//! magic   b"ICPECKPT"
//! version u32 LE
//! count   u32 LE
//! count x { name_len u32, name bytes (UTF-8), rank u32, dims u64 x rank,
//!           payload f64 LE x prod(dims) }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamRegistry;

pub const MAGIC: &[u8; 8] = b"ICPECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamRegistry) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
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

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<Entry>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_u64(&mut r)?.to_le_bytes()));
        }
        entries.push(Entry { name, shape, data });
    }
    Ok(entries)
}

pub fn save(path: impl AsRef<Path>, params: &ParamRegistry) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params)
}

/// Loads a checkpoint into an existing registry. Every registry entry must
/// be present with a matching shape; extra entries in the file are errors.
pub fn load_into(path: impl AsRef<Path>, params: &ParamRegistry) -> Result<()> {
    let entries = read_checkpoint(BufReader::new(File::open(path)?))?;
    if entries.len() != params.len() {
        return Err(TensorError::Checkpoint(format!(
            "checkpoint has {} entries, model has {}",
            entries.len(),
            params.len()
        )));
    }
    for e in entries {
        let t = params
            .get(&e.name)
            .map_err(|_| TensorError::Checkpoint(format!("unexpected entry `{}`", e.name)))?;
        if t.shape() != e.shape.as_slice() {
            return Err(TensorError::Checkpoint(format!(
                "`{}`: shape {:?} in file, {:?} in model",
                e.name,
                e.shape,
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&e.data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_checkpoint(&b"NOTACKPT\x01\0\0\0\0\0\0\0"[..]).is_err());
        let mut reg = ParamRegistry::new();
        reg.register("w", Tensor::full(&[2, 2], 0.5)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &reg).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&buf[..]).is_err());
    }

    #[test]
    fn layout_is_little_endian() {
        let mut reg = ParamRegistry::new();
        reg.register("ab", Tensor::full(&[1], 1.0)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &reg).unwrap();
        let mut want = Vec::new();
        want.extend_from_slice(b"ICPECKPT");
        want.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, b'a', b'b', 1, 0, 0, 0]);
        want.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
        want.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(buf, want);
    }
}
