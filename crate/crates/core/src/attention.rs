//! Token grids and raw (pre-softmax) attention score tensors.

use crate::error::{Error, Result};

/// `frames x height x width` token layout. Token index is `t*H*W + h*W + w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenCoord {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl TokenCoord {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        TokenCoord { t, h, w }
    }

    pub fn distance(&self, other: &TokenCoord) -> f64 {
        let d = |a: usize, b: usize| a as f64 - b as f64;
        (d(self.t, other.t).powi(2) + d(self.h, other.h).powi(2) + d(self.w, other.w).powi(2))
            .sqrt()
    }
}

impl Grid {
    pub fn new(frames: usize, height: usize, width: usize) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "grid {frames}x{height}x{width} has an empty axis"
            )));
        }
        Ok(Grid {
            frames,
            height,
            width,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn tokens(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn index(&self, c: TokenCoord) -> usize {
        c.t * self.frame_len() + c.h * self.width + c.w
    }

    pub fn coord(&self, index: usize) -> TokenCoord {
        let t = index / self.frame_len();
        let p = index % self.frame_len();
        TokenCoord::new(t, p / self.width, p % self.width)
    }

    /// Outermost ring of a frame.
    pub fn is_edge(&self, h: usize, w: usize) -> bool {
        h == 0 || w == 0 || h + 1 == self.height || w + 1 == self.width
    }

    /// Number of `tile x tile` spatial tiles (partial tiles at the far edges count).
    pub fn tiles(&self, tile: usize) -> (usize, usize) {
        (self.height.div_ceil(tile), self.width.div_ceil(tile))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    /// Per frame, `HW x HW` scores among tokens of that frame.
    Spatial,
    /// Per spatial position, `N x N` scores among frames.
    Temporal,
    /// One `NHW x NHW` matrix over all tokens.
    ThreeD,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    kind: AttentionKind,
    grid: Grid,
    data: Vec<f32>,
}

impl AttentionScores {
    pub fn expected_len(kind: AttentionKind, grid: &Grid) -> usize {
        match kind {
            AttentionKind::Spatial => grid.frames * grid.frame_len() * grid.frame_len(),
            AttentionKind::Temporal => grid.frame_len() * grid.frames * grid.frames,
            AttentionKind::ThreeD => grid.tokens() * grid.tokens(),
        }
    }

    pub fn new(kind: AttentionKind, grid: Grid, data: Vec<f32>) -> Result<Self> {
        let n = Self::expected_len(kind, &grid);
        if data.len() != n {
            return Err(Error::invalid(format!(
                "{kind:?} scores for {grid:?} need {n} entries, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite attention score at {i}")));
        }
        Ok(AttentionScores { kind, grid, data })
    }

    /// Element-wise mean of per-head score tensors of identical geometry.
    pub fn mean_over_heads(heads: &[AttentionScores]) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| Error::invalid("no attention heads"))?;
        let mut data = vec![0f32; first.data.len()];
        for h in heads {
            if h.kind != first.kind || h.grid != first.grid {
                return Err(Error::invalid("attention heads differ in geometry"));
            }
            for (d, &v) in data.iter_mut().zip(&h.data) {
                *d += v;
            }
        }
        let n = heads.len() as f32;
        data.iter_mut().for_each(|v| *v /= n);
        Self::new(first.kind, first.grid, data)
    }

    pub fn kind(&self) -> AttentionKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Spatial score from query position `q` to key position `k` within frame `t`.
    #[inline]
    pub fn spatial(&self, t: usize, q: usize, k: usize) -> f32 {
        debug_assert_eq!(self.kind, AttentionKind::Spatial);
        let n = self.grid.frame_len();
        self.data[t * n * n + q * n + k]
    }

    /// Temporal score at spatial position `pos` from frame `fq` to frame `fk`.
    #[inline]
    pub fn temporal(&self, pos: usize, fq: usize, fk: usize) -> f32 {
        debug_assert_eq!(self.kind, AttentionKind::Temporal);
        let n = self.grid.frames;
        self.data[pos * n * n + fq * n + fk]
    }

    /// Joint score from token `q` to token `k` (global indices).
    #[inline]
    pub fn joint(&self, q: usize, k: usize) -> f32 {
        debug_assert_eq!(self.kind, AttentionKind::ThreeD);
        self.data[q * self.grid.tokens() + k]
    }

    /// Mean raw outgoing score of every token over all its keys.
    pub fn outgoing_means(&self) -> Vec<f64> {
        let g = &self.grid;
        let mean = |row: &[f32]| row.iter().map(|&v| f64::from(v)).sum::<f64>() / row.len() as f64;
        let mut out = vec![0.0; g.tokens()];
        match self.kind {
            AttentionKind::Spatial => {
                let n = g.frame_len();
                for (i, row) in self.data.chunks(n).enumerate() {
                    out[i] = mean(row);
                }
            }
            AttentionKind::Temporal => {
                let n = g.frames;
                for (i, row) in self.data.chunks(n).enumerate() {
                    let (pos, fq) = (i / n, i % n);
                    out[fq * g.frame_len() + pos] = mean(row);
                }
            }
            AttentionKind::ThreeD => {
                for (i, row) in self.data.chunks(g.tokens()).enumerate() {
                    out[i] = mean(row);
                }
            }
        }
        out
    }
}
