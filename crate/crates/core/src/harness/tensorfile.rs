//! Minimal binary tensor container.
//!
//! Layout, all little-endian:
//!
//! | bytes        | field                                   |
//! |--------------|-----------------------------------------|
//! | 4            | magic `PTYT`                            |
//! | 2            | format version (`u16`, currently 1)     |
//! | 1            | dtype: 0 = `f64` real, 1 = `f64` complex |
//! | 1            | rank `r`                                |
//! | 8 r          | dims as `u64`                           |
//! | payload      | `f64` values; complex as `(re, im)` pairs |

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::complex::ComplexGrid;
use crate::error::{Error, Result};
use crate::tensor::RealTensor;

const MAGIC: &[u8; 4] = b"PTYT";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorFile {
    Real(RealTensor),
    Complex { dims: Vec<usize>, data: Vec<Complex64> },
}

impl From<RealTensor> for TensorFile {
    fn from(t: RealTensor) -> Self {
        TensorFile::Real(t)
    }
}

impl From<&ComplexGrid> for TensorFile {
    fn from(g: &ComplexGrid) -> Self {
        TensorFile::Complex {
            dims: vec![g.height(), g.width()],
            data: g.data().to_vec(),
        }
    }
}

impl TensorFile {
    pub fn dims(&self) -> &[usize] {
        match self {
            TensorFile::Real(t) => t.shape(),
            TensorFile::Complex { dims, .. } => dims,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let dims = self.dims();
        let rank = u8::try_from(dims.len()).map_err(|_| Error::Contract(format!("rank {} too large", dims.len())))?;
        let (code, values): (u8, Vec<f64>) = match self {
            TensorFile::Real(t) => (0, t.data().to_vec()),
            TensorFile::Complex { dims, data } => {
                if data.len() != dims.iter().product::<usize>() {
                    return Err(Error::Dimension(format!("{} values for dims {:?}", data.len(), dims)));
                }
                (1, data.iter().flat_map(|z| [z.re, z.im]).collect())
            }
        };
        let mut out = Vec::with_capacity(8 + 8 * dims.len() + 8 * values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(code);
        out.push(rank);
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Load(msg);
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("not a PTYT tensor file".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(format!("unsupported tensor file version {version}")));
        }
        let code = bytes[6];
        let rank = bytes[7] as usize;
        let header = 8 + 8 * rank;
        if bytes.len() < header {
            return Err(bad("truncated tensor header".into()));
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(format!("dims {dims:?} overflow")))?;
        let per = match code {
            0 => 1,
            1 => 2,
            c => return Err(bad(format!("unknown dtype code {c}"))),
        };
        let expected = count
            .checked_mul(8 * per)
            .and_then(|n| n.checked_add(header))
            .ok_or_else(|| bad(format!("dims {dims:?} overflow")))?;
        if bytes.len() != expected {
            return Err(bad(format!(
                "payload is {} bytes, dims {:?} need {}",
                bytes.len() - header,
                dims,
                expected - header
            )));
        }
        let values: Vec<f64> = bytes[header..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(match code {
            0 => TensorFile::Real(RealTensor::new(&dims, values)?),
            _ => TensorFile::Complex {
                dims,
                data: values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect(),
            },
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
    }

    pub fn into_real(self) -> Result<RealTensor> {
        match self {
            TensorFile::Real(t) => Ok(t),
            TensorFile::Complex { .. } => Err(Error::Load("expected a real tensor, found complex".into())),
        }
    }

    pub fn into_grid(self) -> Result<ComplexGrid> {
        match self {
            TensorFile::Complex { dims, data } if dims.len() == 2 => ComplexGrid::new(dims[0], dims[1], data),
            other => Err(Error::Load(format!("expected a 2-D complex tensor, found dims {:?}", other.dims()))),
        }
    }
}

pub fn save_real(path: &Path, t: &RealTensor) -> Result<()> {
    TensorFile::Real(t.clone()).write(path)
}

pub fn load_real(path: &Path) -> Result<RealTensor> {
    TensorFile::read(path)?.into_real()
}

pub fn save_grid(path: &Path, g: &ComplexGrid) -> Result<()> {
    TensorFile::from(g).write(path)
}

pub fn load_grid(path: &Path) -> Result<ComplexGrid> {
    TensorFile::read(path)?.into_grid()
}
