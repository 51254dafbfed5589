//! Error metrics, dialect usage and effective bit-width accounting.

use std::fmt;

use crate::error::{Error, Result};
use crate::formatbook::NUM_DIALECTS;
use crate::quant::{BlockLayout, QuantizedTensor, METADATA_BITS};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub elements: usize,
    pub mse: f64,
    pub sse: f64,
    /// `10 log10(signal power / error power)`; infinite for an exact match.
    pub sqnr_db: f64,
    pub max_abs_err: f64,
    pub cosine: f64,
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "elements,mse,sse,sqnr_db,max_abs_err,cosine";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:.6},{:e},{:.9}",
            self.elements, self.mse, self.sse, self.sqnr_db, self.max_abs_err, self.cosine
        )
    }
}

/// Metrics over two equally sized slices, accumulated in f64.
pub fn compare_slices(reference: &[f32], recon: &[f32]) -> Result<Metrics> {
    if reference.len() != recon.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            reference.len(),
            recon.len()
        )));
    }
    let (mut sse, mut sig, mut rr, mut dot, mut maxe) = (0f64, 0f64, 0f64, 0f64, 0f64);
    for (&a, &b) in reference.iter().zip(recon) {
        let (a, b) = (f64::from(a), f64::from(b));
        let d = a - b;
        sse += d * d;
        sig += a * a;
        rr += b * b;
        dot += a * b;
        maxe = maxe.max(d.abs());
    }
    let n = reference.len();
    let cosine = if sig == 0.0 && rr == 0.0 {
        1.0
    } else if sig == 0.0 || rr == 0.0 {
        0.0
    } else {
        dot / (sig.sqrt() * rr.sqrt())
    };
    Ok(Metrics {
        elements: n,
        mse: if n == 0 { 0.0 } else { sse / n as f64 },
        sse,
        sqnr_db: 10.0 * (sig / sse).log10(),
        max_abs_err: maxe,
        cosine,
    })
}

pub fn compare(reference: &Tensor, recon: &Tensor) -> Result<Metrics> {
    if reference.shape() != recon.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            reference.shape(),
            recon.shape()
        )));
    }
    compare_slices(reference.data(), recon.data())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialectUsage {
    pub counts: [u64; NUM_DIALECTS],
}

impl DialectUsage {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fractions summing to 1 (all zero for an empty tensor).
    pub fn fractions(&self) -> [f64; NUM_DIALECTS] {
        let t = self.total();
        std::array::from_fn(|i| {
            if t == 0 {
                0.0
            } else {
                self.counts[i] as f64 / t as f64
            }
        })
    }

    pub fn merge(&mut self, other: &DialectUsage) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }

    pub fn add_blocks<'a>(&mut self, blocks: impl IntoIterator<Item = &'a crate::QuantizedBlock>) {
        for b in blocks {
            self.counts[b.did as usize] += 1;
        }
    }
}

impl Default for DialectUsage {
    fn default() -> Self {
        DialectUsage {
            counts: [0; NUM_DIALECTS],
        }
    }
}

impl fmt::Display for DialectUsage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fr = self.fractions();
        writeln!(f, "did,count,fraction")?;
        for (d, c) in self.counts.iter().enumerate() {
            writeln!(f, "{d},{c},{:.6}", fr[d])?;
        }
        Ok(())
    }
}

pub fn dialect_usage(qt: &QuantizedTensor) -> DialectUsage {
    let mut u = DialectUsage::default();
    u.add_blocks(&qt.blocks);
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitScheme {
    Fb4,
    /// MXFP4 with the shared exponent counted as `scale_bits` (5 or 8).
    Mxfp4 {
        scale_bits: u32,
    },
    Nvfp4,
}

/// Bits per element including amortized block metadata. `f` is the fraction
/// of decomposed (doubly stored) values and only applies to FB4.
pub fn effective_bits(layout: &BlockLayout, scheme: BitScheme, f: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::invalid(format!(
            "decomposed fraction {f} outside [0, 1]"
        )));
    }
    let b = layout.block_size() as f64;
    Ok(match scheme {
        BitScheme::Fb4 => (4.0 + METADATA_BITS as f64 / b) * (1.0 + f),
        BitScheme::Mxfp4 { scale_bits } => 4.0 + f64::from(scale_bits) / b,
        BitScheme::Nvfp4 => 4.0 + 8.0 / b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_negated() {
        let a = Tensor::new(vec![4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let m = compare(&a, &a).unwrap();
        assert_eq!((m.mse, m.cosine), (0.0, 1.0));
        assert!(m.sqnr_db.is_infinite());
        let neg = Tensor::new(vec![4], a.data().iter().map(|v| -v).collect()).unwrap();
        let m = compare(&a, &neg).unwrap();
        assert!((m.cosine + 1.0).abs() < 1e-12);
        assert_eq!(m.mse, m.sse / 4.0);
        assert_eq!(m.max_abs_err, 6.0);
        let b = Tensor::new(vec![2, 2], a.data().to_vec()).unwrap();
        assert!(compare(&a, &b).is_err());
    }

    #[test]
    fn table_one_bits() {
        let l16 = BlockLayout::new(16, 8).unwrap();
        let l32 = BlockLayout::new(32, 8).unwrap();
        assert_eq!(effective_bits(&l16, BitScheme::Fb4, 0.0).unwrap(), 4.625);
        assert_eq!(effective_bits(&l32, BitScheme::Fb4, 0.0).unwrap(), 4.3125);
        assert_eq!(effective_bits(&l16, BitScheme::Fb4, 1.0).unwrap(), 9.25);
        assert_eq!(effective_bits(&l16, BitScheme::Nvfp4, 0.0).unwrap(), 4.5);
        assert_eq!(effective_bits(&l32, BitScheme::Nvfp4, 0.0).unwrap(), 4.25);
        assert_eq!(
            effective_bits(&l16, BitScheme::Mxfp4 { scale_bits: 5 }, 0.0).unwrap(),
            4.3125
        );
        assert_eq!(
            effective_bits(&l32, BitScheme::Mxfp4 { scale_bits: 8 }, 0.0).unwrap(),
            4.25
        );
        let fb4_quarter = effective_bits(&l16, BitScheme::Fb4, 0.25).unwrap();
        assert!((fb4_quarter - 5.78125).abs() < 1e-12);
        assert!(effective_bits(&l16, BitScheme::Fb4, 1.5).is_err());
        assert!(effective_bits(&l16, BitScheme::Fb4, -0.1).is_err());
    }

    #[test]
    fn usage_of_empty_tensor() {
        let qt = QuantizedTensor {
            shape: vec![0, 32],
            layout: BlockLayout::default(),
            blocks: vec![],
            formatbook_hash: 0,
        };
        let u = dialect_usage(&qt);
        assert_eq!(u.total(), 0);
        assert!(u.fractions().iter().all(|&x| x == 0.0));
    }
}
