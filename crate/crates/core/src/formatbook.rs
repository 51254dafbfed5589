//! The 32-dialect formatbook.
//!
//! A dialect is a set of eight integer magnitudes in `[0, 15]` that a block's
//! 3-bit codes index into. Dialects are grouped by their range maximum `m`
//! (8..=15); a block whose normalized maximum falls in `[m, m+1)` picks among
//! the dialects of that range.
//!
//! The canonical book is built from a quantile rule: for a density exponent
//! `p`, interior magnitudes are `round(m * (i/7)^p)` for `i = 1..=6`, then
//! forced strictly ascending. `p > 1` packs points near zero, `p < 1` spreads
//! them toward the top of the range.

use std::fmt;
use std::ops::Range;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const NUM_DIALECTS: usize = 32;
pub const MIN_RANGE: u8 = 8;
pub const MAX_RANGE: u8 = 15;
pub const NUM_RANGES: usize = (MAX_RANGE - MIN_RANGE + 1) as usize;

/// Dialects per range maximum, m = 8..=15.
pub const RANGE_COUNTS: [usize; NUM_RANGES] = [2, 3, 3, 4, 4, 5, 5, 6];

/// Density exponents used for each range maximum, in DID order.
const DENSITY_EXPONENTS: [&[f64]; NUM_RANGES] = [
    &[1.0, 2.0],
    &[1.0, 1.5, 2.5],
    &[1.0, 1.5, 2.5],
    &[0.75, 1.0, 1.5, 2.5],
    &[0.75, 1.0, 1.5, 2.5],
    &[0.6, 0.75, 1.0, 1.5, 2.5],
    &[0.6, 0.75, 1.0, 1.5, 2.5],
    &[0.5, 0.6, 0.75, 1.0, 1.5, 2.5],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Dialect {
    pub did: u8,
    pub range_max: u8,
    pub magnitudes: [u8; 8],
    pub density_exponent: f64,
}

impl Dialect {
    /// Builds the dialect for range maximum `m` and density exponent `p`.
    pub fn from_quantile_rule(did: u8, m: u8, p: f64) -> Self {
        let mut mags = [0i32; 8];
        for (i, slot) in mags.iter_mut().enumerate().take(7).skip(1) {
            *slot = (f64::from(m) * (i as f64 / 7.0).powf(p)).round() as i32;
        }
        for i in 1..7 {
            mags[i] = mags[i].max(mags[i - 1] + 1);
        }
        for i in (1..7).rev() {
            mags[i] = mags[i].min(i32::from(m) - 1 - (6 - i as i32));
        }
        mags[7] = i32::from(m);
        Dialect {
            did,
            range_max: m,
            magnitudes: mags.map(|v| v as u8),
            density_exponent: p,
        }
    }

    #[inline]
    pub fn magnitude(&self, code: u8) -> u8 {
        self.magnitudes[code as usize]
    }

    /// Largest gap between adjacent magnitudes.
    pub fn max_gap(&self) -> u8 {
        self.magnitudes
            .windows(2)
            .map(|w| w[1].saturating_sub(w[0]))
            .max()
            .unwrap_or(0)
    }
}

/// Dialects sharing one selection scope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubFormatbook {
    dids: Vec<u8>,
}

impl SubFormatbook {
    pub fn dids(&self) -> &[u8] {
        &self.dids
    }

    pub fn len(&self) -> usize {
        self.dids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dids.is_empty()
    }

    pub fn contains(&self, did: u8) -> bool {
        self.dids.contains(&did)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Count(usize),
    DidOrder { position: usize, did: u8 },
    ZeroNotRepresentable { did: u8 },
    RangeMaxNotRepresentable { did: u8 },
    NotAscending { did: u8 },
    MagnitudeTooLarge { did: u8 },
    RangeOutOfBounds { did: u8, range_max: u8 },
    Unordered { position: usize },
    RangeCounts(Vec<usize>),
    MissingRange(u8),
    Duplicate { first: u8, second: u8 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Count(n) => write!(f, "count != 32 (found {n})"),
            Violation::DidOrder { position, did } => {
                write!(f, "did {did} stored at position {position}")
            }
            Violation::ZeroNotRepresentable { did } => {
                write!(f, "zero not representable (did {did})")
            }
            Violation::RangeMaxNotRepresentable { did } => {
                write!(f, "range max not representable (did {did})")
            }
            Violation::NotAscending { did } => {
                write!(f, "magnitudes not strictly ascending (did {did})")
            }
            Violation::MagnitudeTooLarge { did } => write!(f, "magnitude above 15 (did {did})"),
            Violation::RangeOutOfBounds { did, range_max } => {
                write!(f, "range max {range_max} outside 8..=15 (did {did})")
            }
            Violation::Unordered { position } => {
                write!(f, "dialects not ordered by (m, p) at position {position}")
            }
            Violation::RangeCounts(counts) => write!(f, "per-range counts {counts:?}"),
            Violation::MissingRange(m) => write!(f, "no dialect for range {m}"),
            Violation::Duplicate { first, second } => {
                write!(f, "dialects {first} and {second} are identical")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Formatbook {
    dialects: Vec<Dialect>,
    range_spans: [Range<u8>; NUM_RANGES],
}

impl Formatbook {
    /// The canonical 32-dialect book.
    pub fn canonical() -> Self {
        let mut dialects = Vec::with_capacity(NUM_DIALECTS);
        for (r, exps) in DENSITY_EXPONENTS.iter().enumerate() {
            let m = MIN_RANGE + r as u8;
            for &p in exps.iter() {
                dialects.push(Dialect::from_quantile_rule(dialects.len() as u8, m, p));
            }
        }
        let book = Self::from_dialects(dialects);
        debug_assert!(book.validate().is_empty());
        book
    }

    /// Wraps an arbitrary dialect list without checking it. Use [`validate`](Self::validate).
    pub fn from_dialects(dialects: Vec<Dialect>) -> Self {
        let range_spans = std::array::from_fn(|r| {
            let m = MIN_RANGE + r as u8;
            let mut idx = dialects
                .iter()
                .enumerate()
                .filter(|(_, d)| d.range_max == m)
                .map(|(i, _)| i as u8);
            match idx.next() {
                Some(first) => first..idx.next_back().unwrap_or(first) + 1,
                None => 0..0,
            }
        });
        Formatbook {
            dialects,
            range_spans,
        }
    }

    pub fn dialects(&self) -> &[Dialect] {
        &self.dialects
    }

    pub fn len(&self) -> usize {
        self.dialects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialects.is_empty()
    }

    pub fn dialect(&self, did: u8) -> Result<&Dialect> {
        self.dialects
            .get(did as usize)
            .ok_or_else(|| Error::invalid(format!("unknown dialect id {did}")))
    }

    /// DID span of range `m`. Empty for ranges outside 8..=15.
    pub fn range_dids(&self, m: u8) -> Range<u8> {
        if !(MIN_RANGE..=MAX_RANGE).contains(&m) {
            return 0..0;
        }
        self.range_spans[(m - MIN_RANGE) as usize].clone()
    }

    /// All dialects whose range maximum equals the block's.
    pub fn stage1_subbook(&self, m_block: u8) -> Result<SubFormatbook> {
        if !(MIN_RANGE..=MAX_RANGE).contains(&m_block) {
            return Err(Error::invalid(format!(
                "block range {m_block} outside {MIN_RANGE}..={MAX_RANGE}"
            )));
        }
        Ok(SubFormatbook {
            dids: self.range_dids(m_block).collect(),
        })
    }

    pub fn full_subbook(&self) -> SubFormatbook {
        SubFormatbook {
            dids: (0..self.dialects.len() as u8).collect(),
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.dialects.len() != NUM_DIALECTS {
            out.push(Violation::Count(self.dialects.len()));
        }
        for (pos, d) in self.dialects.iter().enumerate() {
            if d.did as usize != pos {
                out.push(Violation::DidOrder {
                    position: pos,
                    did: d.did,
                });
            }
            if d.magnitudes[0] != 0 {
                out.push(Violation::ZeroNotRepresentable { did: d.did });
            }
            if d.magnitudes[7] != d.range_max {
                out.push(Violation::RangeMaxNotRepresentable { did: d.did });
            }
            if d.magnitudes.windows(2).any(|w| w[0] >= w[1]) {
                out.push(Violation::NotAscending { did: d.did });
            }
            if d.magnitudes.iter().any(|&v| v > 15) {
                out.push(Violation::MagnitudeTooLarge { did: d.did });
            }
            if !(MIN_RANGE..=MAX_RANGE).contains(&d.range_max) {
                out.push(Violation::RangeOutOfBounds {
                    did: d.did,
                    range_max: d.range_max,
                });
            }
        }
        for (pos, w) in self.dialects.windows(2).enumerate() {
            let key = |d: &Dialect| (d.range_max, d.density_exponent);
            if key(&w[0]).partial_cmp(&key(&w[1])) != Some(std::cmp::Ordering::Less) {
                out.push(Violation::Unordered { position: pos + 1 });
            }
        }
        let counts: Vec<usize> = (MIN_RANGE..=MAX_RANGE)
            .map(|m| self.dialects.iter().filter(|d| d.range_max == m).count())
            .collect();
        for (r, &c) in counts.iter().enumerate() {
            if c == 0 {
                out.push(Violation::MissingRange(MIN_RANGE + r as u8));
            }
        }
        if counts != RANGE_COUNTS {
            out.push(Violation::RangeCounts(counts));
        }
        for (i, a) in self.dialects.iter().enumerate() {
            for b in &self.dialects[i + 1..] {
                if a.magnitudes == b.magnitudes {
                    out.push(Violation::Duplicate {
                        first: a.did,
                        second: b.did,
                    });
                }
            }
        }
        out
    }

    /// One line per dialect: `did m p v0 .. v7`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for d in &self.dialects {
            s.push_str(&format!(
                "{} {} {:.2}",
                d.did, d.range_max, d.density_exponent
            ));
            for v in d.magnitudes {
                s.push_str(&format!(" {v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(self.to_text().as_bytes()));
        out
    }

    /// First eight digest bytes, little-endian. Embedded in quantized containers.
    pub fn hash(&self) -> u64 {
        let d = self.digest();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

impl Default for Formatbook {
    fn default() -> Self {
        Self::canonical()
    }
}
