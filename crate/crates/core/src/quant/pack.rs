//! `FBQ1` container.
//!
//! A container holds a primary section and, optionally, a residual section
//! carrying decomposition residuals for a subset of rows (tokens). Each section:
//!
//! ```text
//! magic      b"FBQ1"
//! version    u8 (1)
//! flags      u8 (bit 0: residual section)
//! reserved   u16
//! fb hash    u64
//! block size u16, num_groups u16
//! rank       u32, dims u64 * rank
//! [residual] token count u64, token ids u64 * count
//! blocks     u64
//! payload    ceil(blocks * (10 + 4B) / 8) bytes
//! ```
//!
//! All integers are little-endian. The payload is a bit stream filled LSB-first;
//! per block: DID (5 bits), exponent as 5-bit two's complement, then `B`
//! nibbles with the sign in the top bit and the 3-bit code below it.

use super::{BlockLayout, QuantizedBlock, QuantizedTensor, MAX_BLOCK};
use crate::error::{Error, Result};
use crate::formatbook::Formatbook;

pub const FBQ1_MAGIC: &[u8; 4] = b"FBQ1";
pub const FBQ1_VERSION: u8 = 1;
const FLAG_RESIDUAL: u8 = 1;

/// Residual blocks for a set of rows of the primary tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualSection {
    /// Row index into the primary tensor for each residual row.
    pub token_ids: Vec<u64>,
    /// Shape `[token_ids.len(), row_len]`.
    pub blocks: QuantizedTensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub primary: QuantizedTensor,
    pub residual: Option<ResidualSection>,
}

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        BitWriter {
            out,
            acc: 0,
            nbits: 0,
        }
    }

    fn put(&mut self, value: u32, bits: u32) {
        self.acc |= u64::from(value & ((1 << bits) - 1)) << self.nbits;
        self.nbits += bits;
        while self.nbits >= 8 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.nbits -= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.out.push(self.acc as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u64,
    nbits: u32,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        BitReader {
            data,
            pos: 0,
            acc: 0,
            nbits: 0,
        }
    }

    fn get(&mut self, bits: u32) -> Result<u32> {
        while self.nbits < bits {
            let byte = *self
                .data
                .get(self.pos)
                .ok_or_else(|| Error::format("block stream truncated"))?;
            self.acc |= u64::from(byte) << self.nbits;
            self.pos += 1;
            self.nbits += 8;
        }
        let v = (self.acc & ((1 << bits) - 1)) as u32;
        self.acc >>= bits;
        self.nbits -= bits;
        Ok(v)
    }
}

fn write_section(out: &mut Vec<u8>, qt: &QuantizedTensor, token_ids: Option<&[u64]>) {
    out.extend_from_slice(FBQ1_MAGIC);
    out.push(FBQ1_VERSION);
    out.push(if token_ids.is_some() {
        FLAG_RESIDUAL
    } else {
        0
    });
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&qt.formatbook_hash.to_le_bytes());
    out.extend_from_slice(&(qt.layout.block_size() as u16).to_le_bytes());
    out.extend_from_slice(&(qt.layout.num_groups() as u16).to_le_bytes());
    out.extend_from_slice(&(qt.shape.len() as u32).to_le_bytes());
    for &d in &qt.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    if let Some(ids) = token_ids {
        out.extend_from_slice(&(ids.len() as u64).to_le_bytes());
        for &id in ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
    }
    out.extend_from_slice(&(qt.blocks.len() as u64).to_le_bytes());
    let mut w = BitWriter::new(std::mem::take(out));
    for b in &qt.blocks {
        w.put(u32::from(b.did), 5);
        w.put(b.exponent as u8 as u32, 5);
        for i in 0..qt.layout.block_size() {
            w.put(u32::from(b.nibble(i)), 4);
        }
    }
    *out = w.finish();
}

pub fn pack(qt: &QuantizedTensor) -> Vec<u8> {
    let mut out = Vec::new();
    write_section(&mut out, qt, None);
    out
}

pub fn pack_container(c: &Container) -> Vec<u8> {
    let mut out = pack(&c.primary);
    if let Some(res) = &c.residual {
        write_section(&mut out, &res.blocks, Some(&res.token_ids));
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() < n {
            return Err(Error::format(format!("truncated in {what}")));
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::format(format!("{what} too large")))
    }
}

fn sign_extend5(v: u32) -> i8 {
    ((v as u8) << 3) as i8 >> 3
}

fn read_section(
    cur: &mut Cursor<'_>,
    fb: &Formatbook,
) -> Result<(QuantizedTensor, Option<Vec<u64>>)> {
    if cur.take(4, "magic")? != FBQ1_MAGIC {
        return Err(Error::format("bad FBQ1 magic"));
    }
    let version = cur.take(1, "version")?[0];
    if version != FBQ1_VERSION {
        return Err(Error::format(format!("unsupported FBQ1 version {version}")));
    }
    let flags = cur.take(1, "flags")?[0];
    cur.u16("reserved")?;
    let hash = cur.u64("formatbook hash")?;
    if hash != fb.hash() {
        return Err(Error::Incompatible {
            expected: fb.hash(),
            found: hash,
        });
    }
    let block_size = cur.u16("layout")? as usize;
    let num_groups = cur.u16("layout")? as usize;
    let layout = BlockLayout::new(block_size, num_groups)
        .map_err(|e| Error::format(format!("layout: {e}")))?;
    let rank = cur.u32("rank")? as usize;
    let mut shape = Vec::with_capacity(rank.min(64));
    for _ in 0..rank {
        shape.push(cur.usize("dims")?);
    }
    let token_ids = if flags & FLAG_RESIDUAL != 0 {
        let n = cur.usize("token count")?;
        if n > cur.data.len() / 8 {
            return Err(Error::format("truncated in token ids"));
        }
        Some(
            (0..n)
                .map(|_| cur.u64("token ids"))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let nblocks = cur.usize("block count")?;
    let mut qt = QuantizedTensor {
        shape,
        layout,
        blocks: Vec::new(),
        formatbook_hash: hash,
    };
    let rows = shape_rows(&qt.shape)?;
    if nblocks != rows.saturating_mul(qt.blocks_per_row()) {
        return Err(Error::format(format!(
            "block count {nblocks} inconsistent with shape {:?}",
            qt.shape
        )));
    }
    let payload_bits = nblocks
        .checked_mul(layout.block_bits())
        .ok_or_else(|| Error::format("block count overflows"))?;
    let payload = cur.take(payload_bits.div_ceil(8), "block stream")?;
    let mut r = BitReader::new(payload);
    qt.blocks.reserve(nblocks);
    for i in 0..nblocks {
        let did = r.get(5)? as u8;
        fb.dialect(did).map_err(|e| e.at_block(i))?;
        let exponent = sign_extend5(r.get(5)?);
        let mut codes = [0u8; MAX_BLOCK];
        let mut signs = [false; MAX_BLOCK];
        for j in 0..block_size {
            let nib = r.get(4)? as u8;
            codes[j] = nib & 7;
            signs[j] = nib & 8 != 0;
        }
        qt.blocks.push(
            QuantizedBlock::new(did, exponent, &signs[..block_size], &codes[..block_size])
                .map_err(|e| e.at_block(i))?,
        );
    }
    Ok((qt, token_ids))
}

fn shape_rows(shape: &[usize]) -> Result<usize> {
    match shape.split_last() {
        Some((_, outer)) => outer
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format("shape overflows")),
        None => Ok(1),
    }
}

pub fn unpack_container(bytes: &[u8], fb: &Formatbook) -> Result<Container> {
    let mut cur = Cursor { data: bytes };
    let (primary, ids) = read_section(&mut cur, fb)?;
    if ids.is_some() {
        return Err(Error::format("first section must be the primary tensor"));
    }
    let residual = if cur.data.is_empty() {
        None
    } else {
        let (blocks, ids) = read_section(&mut cur, fb)?;
        let token_ids = ids.ok_or_else(|| Error::format("second section is not a residual"))?;
        if blocks.shape != [token_ids.len(), primary.row_len()] || blocks.layout != primary.layout {
            return Err(Error::format(
                "residual section does not match primary tensor",
            ));
        }
        if token_ids.iter().any(|&t| t as usize >= primary.rows()) {
            return Err(Error::format("residual token id out of range"));
        }
        Some(ResidualSection { token_ids, blocks })
    };
    if !cur.data.is_empty() {
        return Err(Error::format("trailing bytes after container"));
    }
    Ok(Container { primary, residual })
}

/// Unpacks a container that holds only a primary tensor.
pub fn unpack(bytes: &[u8], fb: &Formatbook) -> Result<QuantizedTensor> {
    let c = unpack_container(bytes, fb)?;
    if c.residual.is_some() {
        return Err(Error::format(
            "container carries a residual section; use unpack_container",
        ));
    }
    Ok(c.primary)
}
