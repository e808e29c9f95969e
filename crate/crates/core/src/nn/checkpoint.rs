//! Binary checkpoint format.
//!
//! ```text
//! "CVDE" | version: u32
//! repeated until EOF:
//!   name_len: u16 | name: UTF-8 | rank: u32 | extents: rank × u32 | data: f32 × prod(extents)
//! ```
//! All integers and floats are little-endian.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use ndarray::{ArrayD, IxDyn};

use super::{Module, Real};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CVDE";
pub const VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, ArrayD<f32>)>;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, ArrayD<f32>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in t.as_standard_layout().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<NamedTensors> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a CVDE checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut out = Vec::new();
    loop {
        let mut lb = [0u8; 2];
        match r.read_exact(&mut lb) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let mut name = vec![0u8; u16::from_le_bytes(lb) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor {name} has implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| Error::Format(e.to_string()))?;
        out.push((name, arr));
    }
    Ok(out)
}

/// Collects parameters then buffers of `m` as `f32` named tensors.
pub fn export<T: Real, M: Module<T>>(m: &mut M) -> NamedTensors {
    let mut out = Vec::new();
    m.visit_params("", &mut |n, t| out.push((n.to_string(), t.data.mapv(|v| v.as_f64() as f32))));
    m.visit_buffers("", &mut |n, t| out.push((n.to_string(), t.data.mapv(|v| v.as_f64() as f32))));
    out
}

/// Loads named tensors into `m`. Every tensor of `m` must be present with a matching shape.
pub fn import<T: Real, M: Module<T>>(m: &mut M, tensors: NamedTensors) -> Result<()> {
    let mut by_name: HashMap<String, ArrayD<f32>> = tensors.into_iter().collect();
    let mut err = None;
    let mut load = |n: &str, t: &mut super::Tensor<T>| {
        if err.is_some() {
            return;
        }
        match by_name.remove(n) {
            None => err = Some(Error::Format(format!("checkpoint is missing tensor {n}"))),
            Some(a) if a.shape() != t.shape() => {
                err = Some(Error::Format(format!(
                    "tensor {n}: checkpoint shape {:?} does not match model shape {:?}",
                    a.shape(),
                    t.shape()
                )))
            }
            Some(a) => t.data = a.mapv(|v| T::lit(v as f64)),
        }
    };
    m.visit_params("", &mut load);
    m.visit_buffers("", &mut load);
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Format(format!("checkpoint has unexpected tensor {extra}")));
    }
    Ok(())
}
