//! Dense f32 tensors and the `FBT1` file format.
//!
//! `FBT1` layout, little-endian: magic `b"FBT1"`, rank as `u32`, `rank` dims as
//! `u64`, then row-major `f32` data.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const FBT1_MAGIC: &[u8; 4] = b"FBT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::invalid(format!("shape {shape:?} overflows")))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = element_count(&shape)?;
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = element_count(&shape)?;
        Ok(Tensor {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Length of the innermost (feature) axis. Rank-0 tensors count as one element.
    pub fn row_len(&self) -> usize {
        row_len(&self.shape)
    }

    pub fn rows(&self) -> usize {
        rows(&self.shape)
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let n = self.row_len();
        &self.data[r * n..(r + 1) * n]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        let n = self.row_len();
        &mut self.data[r * n..(r + 1) * n]
    }

    pub fn write_fbt1<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FBT1_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_fbt1(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_fbt1(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_fbt1<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_fbt1(&bytes)
    }

    pub fn from_fbt1(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::format(format!("FBT1 truncated in {what}")));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4, "magic")? != FBT1_MAGIC {
            return Err(Error::format("bad FBT1 magic"));
        }
        let rank = u32::from_le_bytes(take(4, "rank")?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank.min(64));
        for _ in 0..rank {
            let d = u64::from_le_bytes(take(8, "dims")?.try_into().unwrap());
            shape.push(usize::try_from(d).map_err(|_| Error::format("dimension too large"))?);
        }
        let n = element_count(&shape).map_err(|_| Error::format("shape overflows"))?;
        let payload = n
            .checked_mul(4)
            .ok_or_else(|| Error::format("shape overflows"))?;
        let raw = take(payload, "data")?;
        if !cur.is_empty() {
            return Err(Error::format("trailing bytes after FBT1 data"));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor { shape, data })
    }
}

pub(crate) fn row_len(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

pub(crate) fn rows(shape: &[usize]) -> usize {
    match shape.split_last() {
        Some((_, outer)) => outer.iter().product(),
        None => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fbt1_roundtrip_and_layout() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-3, -7.25]).unwrap();
        let bytes = t.to_fbt1();
        assert_eq!(&bytes[..4], b"FBT1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(bytes.len(), 4 + 4 + 16 + 24);
        assert_eq!(Tensor::from_fbt1(&bytes).unwrap(), t);
    }

    #[test]
    fn fbt1_rejects_bad_input() {
        let t = Tensor::new(vec![4], vec![1.0; 4]).unwrap();
        let mut bytes = t.to_fbt1();
        assert!(Tensor::from_fbt1(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(Tensor::from_fbt1(&bytes).is_err());
        bytes[0] = b'X';
        assert!(Tensor::from_fbt1(&bytes).is_err());
    }

    #[test]
    fn rows_and_scalars() {
        let s = Tensor::new(vec![], vec![3.0]).unwrap();
        assert_eq!((s.rows(), s.row_len()), (1, 1));
        let e = Tensor::new(vec![0, 16], vec![]).unwrap();
        assert_eq!((e.rows(), e.row_len()), (0, 16));
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
