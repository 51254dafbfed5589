use rayon::prelude::*;

use super::{
    quantize_block_f64, BlockLayout, Container, DialectPolicy, QuantizedBlock, Selection, MAX_BLOCK,
};
use crate::error::{Error, Result};
use crate::formatbook::Formatbook;
use crate::lut::LutSet;
use crate::tensor::{self, Tensor};

/// A tensor quantized block-wise along its innermost axis. Each row is split
/// into `ceil(row_len / B)` blocks; the last block of a row is zero-padded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub layout: BlockLayout,
    pub blocks: Vec<QuantizedBlock>,
    pub formatbook_hash: u64,
}

impl QuantizedTensor {
    pub fn rows(&self) -> usize {
        tensor::rows(&self.shape)
    }

    pub fn row_len(&self) -> usize {
        tensor::row_len(&self.shape)
    }

    pub fn blocks_per_row(&self) -> usize {
        self.row_len().div_ceil(self.layout.block_size())
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn expected_blocks(&self) -> usize {
        self.rows() * self.blocks_per_row()
    }

    pub fn row_blocks(&self, r: usize) -> &[QuantizedBlock] {
        let n = self.blocks_per_row();
        &self.blocks[r * n..(r + 1) * n]
    }
}

/// Per-row dialect policy for mixed tensors.
pub(crate) type RowPolicy<'a> = dyn Fn(usize) -> DialectPolicy<'a> + Sync + 'a;

pub(crate) fn quantize_rows(
    tensor: &Tensor,
    layout: &BlockLayout,
    fb: &Formatbook,
    luts: &LutSet,
    policy: &RowPolicy<'_>,
) -> Result<QuantizedTensor> {
    let b = layout.block_size();
    let row_len = tensor.row_len();
    let per_row = row_len.div_ceil(b);
    let total = tensor.rows() * per_row;
    let data = tensor.data();
    let blocks = (0..total)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / per_row, i % per_row);
            let start = r * row_len + c * b;
            let end = (start + b).min((r + 1) * row_len);
            let mut buf = [0f64; MAX_BLOCK];
            for (d, &v) in buf.iter_mut().zip(&data[start..end]) {
                *d = f64::from(v);
            }
            quantize_block_f64(&buf[..b], layout, fb, luts, policy(r))
                .map(|(q, _)| q)
                .map_err(|e| e.at_block(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedTensor {
        shape: tensor.shape().to_vec(),
        layout: *layout,
        blocks,
        formatbook_hash: fb.hash(),
    })
}

pub fn quantize_tensor(
    tensor: &Tensor,
    layout: &BlockLayout,
    fb: &Formatbook,
    luts: &LutSet,
    mode: Selection,
) -> Result<QuantizedTensor> {
    quantize_rows(tensor, layout, fb, luts, &|_| DialectPolicy::Select(mode))
}

pub fn dequantize_tensor(qt: &QuantizedTensor, fb: &Formatbook) -> Result<Tensor> {
    if qt.formatbook_hash != fb.hash() {
        return Err(Error::Incompatible {
            expected: fb.hash(),
            found: qt.formatbook_hash,
        });
    }
    if qt.blocks.len() != qt.expected_blocks() {
        return Err(Error::format(format!(
            "{} blocks for shape {:?}, expected {}",
            qt.blocks.len(),
            qt.shape,
            qt.expected_blocks()
        )));
    }
    let mut out = Tensor::zeros(qt.shape.clone())?;
    let row_len = qt.row_len();
    let b = qt.layout.block_size();
    if row_len == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .try_for_each(|(r, row)| -> Result<()> {
            let mut buf = [0f32; MAX_BLOCK];
            for (c, bq) in qt.row_blocks(r).iter().enumerate() {
                super::dequantize_block_into(bq, fb, &mut buf[..bq.len()])
                    .map_err(|e| e.at_block(r * qt.blocks_per_row() + c))?;
                let start = c * b;
                let end = (start + b).min(row_len);
                row[start..end].copy_from_slice(&buf[..end - start]);
            }
            Ok(())
        })?;
    Ok(out)
}

/// Primary plus residual rows, summed in f32.
pub fn dequantize_container(c: &Container, fb: &Formatbook) -> Result<Tensor> {
    let mut out = dequantize_tensor(&c.primary, fb)?;
    if let Some(res) = &c.residual {
        let extra = dequantize_tensor(&res.blocks, fb)?;
        for (i, &tok) in res.token_ids.iter().enumerate() {
            let tok = tok as usize;
            if tok >= out.rows() {
                return Err(Error::invalid(format!("residual token {tok} out of range")));
            }
            for (o, &d) in out.row_mut(tok).iter_mut().zip(extra.row(i)) {
                *o += d;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_blocks_are_padded() {
        let fb = Formatbook::canonical();
        let luts = LutSet::build(&fb);
        let layout = BlockLayout::new(16, 8).unwrap();
        let data: Vec<f32> = (0..3 * 20).map(|i| (i as f32 * 0.37).sin() * 4.0).collect();
        let t = Tensor::new(vec![3, 20], data).unwrap();
        let qt = quantize_tensor(&t, &layout, &fb, &luts, Selection::Grouped).unwrap();
        assert_eq!(qt.blocks_per_row(), 2);
        assert_eq!(qt.blocks.len(), 6);
        // padding quantizes to zero codes
        for r in 0..3 {
            assert!(qt.row_blocks(r)[1].codes()[4..].iter().all(|&c| c == 0));
        }
        let back = dequantize_tensor(&qt, &fb).unwrap();
        assert_eq!(back.shape(), t.shape());
    }

    #[test]
    fn hash_mismatch_is_rejected() {
        let fb = Formatbook::canonical();
        let luts = LutSet::build(&fb);
        let t = Tensor::new(vec![16], vec![1.0; 16]).unwrap();
        let mut qt = quantize_tensor(
            &t,
            &BlockLayout::new(16, 8).unwrap(),
            &fb,
            &luts,
            Selection::Exact,
        )
        .unwrap();
        qt.formatbook_hash ^= 1;
        assert!(matches!(
            dequantize_tensor(&qt, &fb),
            Err(Error::Incompatible { .. })
        ));
    }

    #[test]
    fn block_errors_carry_index() {
        let fb = Formatbook::canonical();
        let luts = LutSet::build(&fb);
        let mut data = vec![1.0f32; 64];
        data[40] = f32::NAN;
        let t = Tensor::new(vec![2, 32], data).unwrap();
        let err = quantize_tensor(
            &t,
            &BlockLayout::new(16, 8).unwrap(),
            &fb,
            &luts,
            Selection::Grouped,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Block { index: 2, .. }), "{err}");
    }
}
