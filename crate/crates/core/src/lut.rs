//! Per-dialect `Qvalue` / `Qerror` lookup tables.
//!
//! Normalized magnitudes live in `[0, 16)` and are binned at 0.5 granularity
//! (32 bins). Every decision boundary between two integer magnitudes sits on an
//! integer or half-integer, so no bin straddles one: `Qvalue` is exact. `Qerror`
//! holds the squared error at the bin midpoint, an approximation of the true
//! per-element error.

use crate::error::{Error, Result};
use crate::formatbook::Formatbook;

pub const NUM_BINS: usize = 32;

#[inline]
pub fn bin_midpoint(bin: usize) -> f64 {
    bin as f64 / 2.0 + 0.25
}

/// `floor(2v)` for `v` in `[0, 16)`.
pub fn bin_index(v: f64) -> Result<usize> {
    if !(0.0..16.0).contains(&v) {
        return Err(Error::invalid(format!(
            "normalized magnitude {v} outside [0, 16)"
        )));
    }
    Ok((v * 2.0) as usize)
}

/// Like [`bin_index`] but saturates: anything at or above 16 lands in the top bin.
#[inline]
pub(crate) fn bin_saturating(v: f64) -> usize {
    let b = v * 2.0;
    if b >= (NUM_BINS - 1) as f64 {
        NUM_BINS - 1
    } else {
        b as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialectLut {
    pub qvalue: [u8; NUM_BINS],
    pub qerror: [f32; NUM_BINS],
    pub magnitudes: [u8; 8],
}

impl DialectLut {
    fn build(magnitudes: [u8; 8]) -> Self {
        let mut qvalue = [0u8; NUM_BINS];
        let mut qerror = [0f32; NUM_BINS];
        for b in 0..NUM_BINS {
            let mid = bin_midpoint(b);
            // The midpoint is never equidistant from two integers, so the
            // nearest code is unique; it equals the away-from-zero choice for
            // every tie point that falls at the bin's left edge.
            let code = (0..8u8)
                .min_by(|&a, &c| {
                    let da = (mid - f64::from(magnitudes[a as usize])).abs();
                    let dc = (mid - f64::from(magnitudes[c as usize])).abs();
                    da.total_cmp(&dc)
                })
                .expect("eight codes");
            let err = mid - f64::from(magnitudes[code as usize]);
            qvalue[b] = code;
            qerror[b] = (err * err) as f32;
        }
        DialectLut {
            qvalue,
            qerror,
            magnitudes,
        }
    }

    #[inline]
    pub fn code(&self, v: f64) -> u8 {
        self.qvalue[bin_saturating(v)]
    }

    #[inline]
    pub fn approx_sqerr(&self, v: f64) -> f32 {
        self.qerror[bin_saturating(v)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LutSet {
    tables: Vec<DialectLut>,
}

impl LutSet {
    pub fn build(fb: &Formatbook) -> Self {
        LutSet {
            tables: fb
                .dialects()
                .iter()
                .map(|d| DialectLut::build(d.magnitudes))
                .collect(),
        }
    }

    pub fn table(&self, did: u8) -> Result<&DialectLut> {
        self.tables
            .get(did as usize)
            .ok_or_else(|| Error::invalid(format!("unknown dialect id {did}")))
    }

    pub(crate) fn table_unchecked(&self, did: u8) -> &DialectLut {
        &self.tables[did as usize]
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// `(Qvalue, Qerror)` at the bin holding `v`.
    pub fn lookup(&self, did: u8, v: f64) -> Result<(u8, f32)> {
        let t = self.table(did)?;
        let b = bin_index(v)?;
        Ok((t.qvalue[b], t.qerror[b]))
    }
}
