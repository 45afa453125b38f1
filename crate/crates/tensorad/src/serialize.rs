//! Binary weights container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    6 bytes  "SEMSR\0"
//! version  u16
//! records  until end of file, each:
//!   name_len u32, name bytes (UTF-8)
//!   dtype    u8   (1 = f32, 2 = f64)
//!   rank     u8
//!   dims     rank × u32
//!   values   product(dims) little-endian floats of `dtype`
//! ```

use std::io::{Read, Write};

use crate::element::DType;
use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 6] = b"SEMSR\0";
pub const FORMAT_VERSION: u16 = 1;

/// One stored tensor. Values are held as `f64` in memory; `dtype` records the
/// on-disk precision so a read/write cycle reproduces the file exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub tensor: Tensor<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub version: u16,
    pub records: Vec<Record>,
}

impl WeightsFile {
    /// Wraps a parameter set, storing every tensor as `dtype`. Storing as
    /// `f32` rounds the in-memory values.
    pub fn from_params(params: &ParamSet, dtype: DType) -> Self {
        let records = params
            .iter()
            .map(|(name, t)| Record {
                name: name.to_string(),
                dtype,
                tensor: match dtype {
                    DType::F64 => t.clone(),
                    DType::F32 => t.map(|v| v as f32 as f64),
                },
            })
            .collect();
        Self {
            version: FORMAT_VERSION,
            records,
        }
    }

    pub fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for r in &self.records {
            p.insert(r.name.clone(), r.tensor.clone());
        }
        p
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        for r in &self.records {
            let name = r.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[r.dtype.tag(), r.tensor.rank() as u8])?;
            for &d in r.tensor.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            match r.dtype {
                DType::F64 => {
                    for &v in r.tensor.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                DType::F32 => {
                    for &v in r.tensor.data() {
                        w.write_all(&(v as f32).to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(MAGIC.len())? != MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != FORMAT_VERSION {
            return Err(TensorError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let mut records = Vec::new();
        while cur.pos < bytes.len() {
            let name_len = u32::from_le_bytes(cur.array()?) as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| TensorError::Format("record name is not UTF-8".into()))?
                .to_string();
            let [tag, rank] = cur.array::<2>()?;
            let dtype = DType::from_tag(tag)
                .ok_or_else(|| TensorError::Format(format!("`{name}`: unknown dtype tag {tag}")))?;
            let rank = rank as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(TensorError::Format(format!("`{name}`: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(cur.array()?) as usize);
            }
            let count: usize = shape.iter().product();
            let data = match dtype {
                DType::F64 => {
                    let raw = cur.take(count * 8)?;
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                        .collect()
                }
                DType::F32 => {
                    let raw = cur.take(count * 4)?;
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                        .collect()
                }
            };
            records.push(Record {
                name,
                dtype,
                tensor: Tensor::new(&shape, data)?,
            });
        }
        Ok(Self { version, records })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TensorError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}
