//! Activation decomposition.
//!
//! A block is quantized, the residual `values - dequant(primary)` is quantized
//! again with the same 4-bit format, and the two are summed on the way out.
//! Matrix activations only decompose one salient token per tile; tokens are
//! ranked by the mean transformed attention they send to a local neighborhood.

use std::collections::BTreeSet;

use crate::attention::{AttentionKind, AttentionScores};
use crate::error::{Error, Result};
use crate::formatbook::Formatbook;
use crate::lut::LutSet;
use crate::quant::{
    self, quantize_block_f64, quantize_rows, BlockLayout, Container, DialectPolicy, QuantizedBlock,
    ResidualSection, Selection, MAX_BLOCK,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecomposedBlock {
    pub primary: QuantizedBlock,
    pub residual: QuantizedBlock,
}

impl DecomposedBlock {
    /// `dequant(primary) + dequant(residual)`, exact in f64.
    pub fn dequantize(&self, fb: &Formatbook) -> Result<Vec<f64>> {
        let p = quant::dequantize_block(&self.primary, fb)?;
        let r = quant::dequantize_block(&self.residual, fb)?;
        Ok(p.iter()
            .zip(&r)
            .map(|(&a, &b)| f64::from(a) + f64::from(b))
            .collect())
    }
}

pub(crate) fn decompose_block_f64(
    values: &[f64],
    layout: &BlockLayout,
    fb: &Formatbook,
    luts: &LutSet,
    primary_policy: DialectPolicy<'_>,
    residual_policy: DialectPolicy<'_>,
) -> Result<DecomposedBlock> {
    let (primary, _) = quantize_block_f64(values, layout, fb, luts, primary_policy)?;
    let mut dq = [0f32; MAX_BLOCK];
    quant::dequantize_block_into(&primary, fb, &mut dq[..values.len()])?;
    let mut delta = [0f64; MAX_BLOCK];
    for i in 0..values.len() {
        delta[i] = values[i] - f64::from(dq[i]);
    }
    let (residual, _) =
        quantize_block_f64(&delta[..values.len()], layout, fb, luts, residual_policy)?;
    Ok(DecomposedBlock { primary, residual })
}

pub fn decompose_block(
    values: &[f32],
    layout: &BlockLayout,
    fb: &Formatbook,
    luts: &LutSet,
    mode: Selection,
    forced_did_primary: Option<u8>,
    forced_did_residual: Option<u8>,
) -> Result<DecomposedBlock> {
    if values.len() > MAX_BLOCK {
        return Err(Error::invalid("block too long"));
    }
    let mut buf = [0f64; MAX_BLOCK];
    for (d, &v) in buf.iter_mut().zip(values) {
        *d = f64::from(v);
    }
    let policy = |forced: Option<u8>| match forced {
        Some(d) => DialectPolicy::Forced(d),
        None => DialectPolicy::Select(mode),
    };
    decompose_block_f64(
        &buf[..values.len()],
        layout,
        fb,
        luts,
        policy(forced_did_primary),
        policy(forced_did_residual),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreTransform {
    Raw,
    Relu,
    Abs,
}

impl ScoreTransform {
    #[inline]
    pub fn apply(self, v: f32) -> f64 {
        let v = f64::from(v);
        match self {
            ScoreTransform::Raw => v,
            ScoreTransform::Relu => v.max(0.0),
            ScoreTransform::Abs => v.abs(),
        }
    }

    /// ReLU for temporal attention, ABS for spatial and joint attention.
    pub fn default_for(kind: AttentionKind) -> Self {
        match kind {
            AttentionKind::Temporal => ScoreTransform::Relu,
            AttentionKind::Spatial | AttentionKind::ThreeD => ScoreTransform::Abs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchMode {
    /// One salient token per tile across both CFG branches.
    Split,
    /// The same budget, drawn from the conditional branch only.
    CondOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Cond,
    Uncond,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalientPlan {
    /// Tokens per selection tile along the token axis.
    pub token_tile: usize,
    pub branch_mode: BranchMode,
    pub transform: ScoreTransform,
    pub attention_kind: AttentionKind,
    /// Spatial aggregation tile `(rows, cols)`; temporal extent is all frames.
    pub neighborhood: (usize, usize),
}

impl SalientPlan {
    pub fn new(kind: AttentionKind) -> Self {
        SalientPlan {
            token_tile: 4,
            branch_mode: BranchMode::Split,
            transform: ScoreTransform::default_for(kind),
            attention_kind: kind,
            neighborhood: (4, 4),
        }
    }
}

/// Mean transformed outgoing attention of each token over its neighborhood.
pub fn score_tokens(attn: &AttentionScores, plan: &SalientPlan) -> Result<Vec<f64>> {
    if attn.kind() != plan.attention_kind {
        return Err(Error::invalid(format!(
            "plan expects {:?} attention, got {:?}",
            plan.attention_kind,
            attn.kind()
        )));
    }
    let (nh, nw) = plan.neighborhood;
    if nh == 0 || nw == 0 {
        return Err(Error::invalid("empty aggregation neighborhood"));
    }
    let g = *attn.grid();
    let f = plan.transform;
    let tile_span = |x: usize, n: usize, len: usize| {
        let start = x / n * n;
        start..(start + n).min(len)
    };
    let mut out = vec![0f64; g.tokens()];
    for (idx, slot) in out.iter_mut().enumerate() {
        let c = g.coord(idx);
        let q = c.h * g.width + c.w;
        let (hs, ws) = (tile_span(c.h, nh, g.height), tile_span(c.w, nw, g.width));
        let (sum, count) = match attn.kind() {
            AttentionKind::Temporal => (
                (0..g.frames)
                    .map(|fk| f.apply(attn.temporal(q, c.t, fk)))
                    .sum::<f64>(),
                g.frames,
            ),
            AttentionKind::Spatial => {
                let mut s = 0.0;
                for h in hs.clone() {
                    for w in ws.clone() {
                        s += f.apply(attn.spatial(c.t, q, h * g.width + w));
                    }
                }
                (s, hs.len() * ws.len())
            }
            AttentionKind::ThreeD => {
                let mut s = 0.0;
                for t in 0..g.frames {
                    for h in hs.clone() {
                        for w in ws.clone() {
                            s +=
                                f.apply(attn.joint(
                                    idx,
                                    g.index(crate::attention::TokenCoord::new(t, h, w)),
                                ));
                        }
                    }
                }
                (s, g.frames * hs.len() * ws.len())
            }
        };
        *slot = sum / count as f64;
    }
    Ok(out)
}

fn argmax_lowest(scores: &[f64], idx: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for i in idx {
        if best.is_none_or(|(s, _)| scores[i] > s) {
            best = Some((scores[i], i));
        }
    }
    best.map(|(_, i)| i)
}

/// Salient token indices, ascending.
///
/// Split mode takes the top token of every `token_tile` run. CondOnly keeps the
/// same total budget but splits the conditional tokens into that many
/// contiguous runs (1x2 tiles when half the tokens are conditional).
pub fn select_salient(
    scores: &[f64],
    plan: &SalientPlan,
    branch_labels: &[Branch],
) -> Result<Vec<usize>> {
    if plan.token_tile == 0 {
        return Err(Error::invalid("token tile must be positive"));
    }
    if branch_labels.len() != scores.len() {
        return Err(Error::invalid(format!(
            "{} branch labels for {} tokens",
            branch_labels.len(),
            scores.len()
        )));
    }
    let n = scores.len();
    let budget = n.div_ceil(plan.token_tile);
    let mut out = Vec::with_capacity(budget);
    match plan.branch_mode {
        BranchMode::Split => {
            for start in (0..n).step_by(plan.token_tile) {
                out.extend(argmax_lowest(
                    scores,
                    start..(start + plan.token_tile).min(n),
                ));
            }
        }
        BranchMode::CondOnly => {
            let cond: Vec<usize> = (0..n)
                .filter(|&i| branch_labels[i] == Branch::Cond)
                .collect();
            if cond.is_empty() {
                return Err(Error::invalid(
                    "no conditional-branch tokens to select from",
                ));
            }
            let runs = budget.min(cond.len());
            for k in 0..runs {
                let (a, b) = (k * cond.len() / runs, (k + 1) * cond.len() / runs);
                out.extend(argmax_lowest(scores, cond[a..b].iter().copied()));
            }
        }
    }
    Ok(out)
}

/// How each token of a tensor is quantized.
#[derive(Debug, Clone, Copy)]
pub struct TokenPlan<'a> {
    pub mode: Selection,
    /// Tokens whose blocks are decomposed.
    pub salient: &'a [usize],
    /// Tokens forced onto a per-range sub-book: flag per token, plus the book.
    pub constrained: Option<(&'a [bool], &'a [u8; 8])>,
}

impl<'a> TokenPlan<'a> {
    pub fn plain(mode: Selection) -> Self {
        TokenPlan {
            mode,
            salient: &[],
            constrained: None,
        }
    }

    fn policy(&self, row: usize) -> DialectPolicy<'a> {
        match self.constrained {
            Some((flags, book)) if flags[row % flags.len()] => DialectPolicy::PerRange(book),
            _ => DialectPolicy::Select(self.mode),
        }
    }
}

/// Quantizes every row (token) of `tensor`, decomposing salient rows into a
/// residual section. Constrained flags repeat with period `flags.len()`, so a
/// batch of stacked CFG branches shares one flag vector.
pub fn quantize_tokens(
    tensor: &Tensor,
    layout: &BlockLayout,
    fb: &Formatbook,
    luts: &LutSet,
    plan: &TokenPlan<'_>,
) -> Result<Container> {
    if let Some((flags, _)) = plan.constrained {
        if flags.is_empty() || !tensor.rows().is_multiple_of(flags.len()) {
            return Err(Error::invalid(format!(
                "{} constraint flags do not tile {} tokens",
                flags.len(),
                tensor.rows()
            )));
        }
    }
    let primary = quantize_rows(tensor, layout, fb, luts, &|r| plan.policy(r))?;
    let salient: BTreeSet<usize> = plan.salient.iter().copied().collect();
    if let Some(&bad) = salient.iter().find(|&&t| t >= tensor.rows()) {
        return Err(Error::invalid(format!("salient token {bad} out of range")));
    }
    if salient.is_empty() {
        return Ok(Container {
            primary,
            residual: None,
        });
    }
    let b = layout.block_size();
    let row_len = tensor.row_len();
    let per_row = primary.blocks_per_row();
    let mut blocks = Vec::with_capacity(salient.len() * per_row);
    for &r in &salient {
        let row = tensor.row(r);
        let policy = plan.policy(r);
        for (c, pq) in primary.row_blocks(r).iter().enumerate() {
            let mut buf = [0f64; MAX_BLOCK];
            let end = ((c + 1) * b).min(row_len);
            for (d, &v) in buf.iter_mut().zip(&row[c * b..end]) {
                *d = f64::from(v);
            }
            let mut dq = [0f32; MAX_BLOCK];
            quant::dequantize_block_into(pq, fb, &mut dq[..b])?;
            for i in 0..b {
                buf[i] -= f64::from(dq[i]);
            }
            let (res, _) = quantize_block_f64(&buf[..b], layout, fb, luts, policy)
                .map_err(|e| e.at_block(r * per_row + c))?;
            blocks.push(res);
        }
    }
    let residual = ResidualSection {
        token_ids: salient.iter().map(|&t| t as u64).collect(),
        blocks: quant::QuantizedTensor {
            shape: vec![salient.len(), row_len],
            layout: *layout,
            blocks,
            formatbook_hash: primary.formatbook_hash,
        },
    };
    Ok(Container {
        primary,
        residual: Some(residual),
    })
}

/// Decomposes the salient tokens of `tensor`. A single-token (vector)
/// activation is always fully decomposed.
pub fn quantize_with_decomposition(
    tensor: &Tensor,
    salient: &[usize],
    layout: &BlockLayout,
    fb: &Formatbook,
    luts: &LutSet,
    mode: Selection,
) -> Result<Container> {
    let all = [0usize];
    let salient = if tensor.rows() == 1 {
        &all[..]
    } else {
        salient
    };
    quantize_tokens(
        tensor,
        layout,
        fb,
        luts,
        &TokenPlan {
            mode,
            salient,
            constrained: None,
        },
    )
}
