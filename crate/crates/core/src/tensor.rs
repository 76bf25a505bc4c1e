//! Dense row-major `f32` tensors and the `MVT1` raw tensor file format.
//!
//! `MVT1` layout (all little-endian):
//!
//! ```text
//! b"MVT1" | rank: u8 | rank x extent: u32 | numel x f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MVT_MAGIC: &[u8; 4] = b"MVT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data, new shape.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Extents of a `[C, H, W]` tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape("dims3", format!("expected rank 3, got {:?}", self.shape))),
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [t, c, h, w] => Ok((t, c, h, w)),
            _ => Err(Error::shape("dims4", format!("expected rank 4, got {:?}", self.shape))),
        }
    }

    /// Sub-tensor along the leading axis.
    pub fn index_lead(&self, i: usize) -> Result<Tensor> {
        if self.shape.is_empty() || i >= self.shape[0] {
            return Err(Error::arg("index_lead", format!("{i} out of range for {:?}", self.shape)));
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::arg("stack", "empty input"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape("stack", format!("{:?} vs {:?}", t.shape, first.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    pub fn unstack(&self) -> Result<Vec<Tensor>> {
        (0..self.shape.first().copied().unwrap_or(0))
            .map(|i| self.index_lead(i))
            .collect()
    }

    /// Errors on the first NaN or infinity.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_map", format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn write_mvt<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MVT_MAGIC)?;
        self.write_record(w)
    }

    /// `rank: u8 | rank x u32 | numel x f32`, little-endian, without magic.
    pub fn write_record<W: Write>(&self, mut w: W) -> Result<()> {
        if self.shape.len() > u8::MAX as usize {
            return Err(Error::arg("write_mvt", "rank exceeds 255"));
        }
        let mut buf = Vec::with_capacity(1 + 4 * self.shape.len() + 4 * self.data.len());
        buf.push(self.shape.len() as u8);
        for &e in &self.shape {
            let e = u32::try_from(e).map_err(|_| Error::arg("write_mvt", "extent exceeds u32"))?;
            buf.extend_from_slice(&e.to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_mvt<R: Read>(mut r: R) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "MVT1 magic")?;
        if &magic != MVT_MAGIC {
            return Err(Error::BadMagic { expected: "MVT1" });
        }
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, "MVT1 rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut e = [0u8; 4];
            read_exact(&mut r, &mut e, "MVT1 extents")?;
            shape.push(u32::from_le_bytes(e) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        read_exact(&mut r, &mut raw, "MVT1 payload")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn save_mvt(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_mvt(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load_mvt(path: impl AsRef<Path>) -> Result<Tensor> {
        let bytes = std::fs::read(path)?;
        Tensor::read_mvt(&bytes[..])
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated { what: what.to_string() },
        _ => Error::Io(e),
    })
}
