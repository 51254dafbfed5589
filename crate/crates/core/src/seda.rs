//! Semantic-aware dialect assignment.
//!
//! Anchor tokens are picked per spatial tile from raw attention; tokens in a
//! small window that the anchor attends to strongly become its correlated
//! tokens. All of them quantize against one shared sub-book holding a single
//! dialect per dynamic range, chosen by counting which dialect anchor blocks
//! select most often in each range.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::attention::{AttentionKind, AttentionScores, Grid, TokenCoord};
use crate::decomp::TokenPlan;
use crate::error::{Error, Result};
use crate::formatbook::{Formatbook, MIN_RANGE, NUM_RANGES};
use crate::lut::LutSet;
use crate::quant::{BlockLayout, Container, QuantizedBlock, Selection};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedParams {
    pub tile: usize,
    pub window: usize,
    pub tau_spatial: f32,
    pub tau_temporal: f32,
}

impl Default for FactorizedParams {
    fn default() -> Self {
        FactorizedParams {
            tile: 4,
            window: 5,
            tau_spatial: 8.0,
            tau_temporal: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    pub tile: usize,
    pub window: usize,
    pub window_frames: usize,
    pub tau: f32,
}

impl Default for JointParams {
    fn default() -> Self {
        JointParams {
            tile: 4,
            window: 5,
            window_frames: 3,
            tau: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchor {
    pub tile: usize,
    /// Main anchor token.
    pub main: TokenCoord,
    /// Frames kept for this anchor.
    pub frame_mask: Vec<bool>,
    /// Per-frame anchor tokens on kept frames (includes `main`).
    pub members: Vec<TokenCoord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorSet {
    pub grid: Grid,
    pub tile: usize,
    pub anchors: Vec<Anchor>,
    /// Correlated token index -> owning anchor (index into `anchors`).
    pub correlated: BTreeMap<usize, usize>,
}

impl AnchorSet {
    pub fn empty(grid: Grid, tile: usize) -> Self {
        AnchorSet {
            grid,
            tile,
            anchors: Vec::new(),
            correlated: BTreeMap::new(),
        }
    }

    pub fn num_tiles(&self) -> usize {
        let (a, b) = self.grid.tiles(self.tile);
        a * b
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Token indices of anchor members, ascending and deduplicated.
    pub fn anchor_tokens(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .anchors
            .iter()
            .flat_map(|a| a.members.iter().map(|&c| self.grid.index(c)))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Per-token flag: anchor member or correlated.
    pub fn constrained_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.grid.tokens()];
        for t in self.anchor_tokens() {
            flags[t] = true;
        }
        for &t in self.correlated.keys() {
            flags[t] = true;
        }
        flags
    }

    fn claim_window(&mut self, owner: usize, tokens: impl IntoIterator<Item = usize>) {
        for t in tokens {
            self.correlated.insert(t, owner);
        }
    }
}

fn check_tile(grid: &Grid, tile: usize) -> Result<()> {
    if tile == 0 || tile > grid.height || tile > grid.width {
        return Err(Error::invalid(format!(
            "tile {tile} does not fit a {}x{} frame",
            grid.height, grid.width
        )));
    }
    Ok(())
}

/// Non-edge `(h, w)` positions of tile `(ty, tx)`, row-major.
fn tile_positions(grid: &Grid, tile: usize, ty: usize, tx: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for h in ty * tile..((ty + 1) * tile).min(grid.height) {
        for w in tx * tile..((tx + 1) * tile).min(grid.width) {
            if !grid.is_edge(h, w) {
                v.push((h, w));
            }
        }
    }
    v
}

fn window(c: usize, size: usize, len: usize) -> std::ops::Range<usize> {
    let r = size / 2;
    c.saturating_sub(r)..(c + size - r).min(len)
}

fn first_max<T: Copy>(items: impl IntoIterator<Item = (f64, T)>) -> Option<T> {
    let mut best: Option<(f64, T)> = None;
    for (s, x) in items {
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, x));
        }
    }
    best.map(|(_, x)| x)
}

/// Anchors for factorized (spatial + temporal) attention.
///
/// Per tile: each frame proposes the non-edge token with the highest mean raw
/// spatial score; the proposal with the highest mean raw temporal score becomes
/// the main anchor; frames whose temporal score from the main anchor falls
/// below `tau_temporal` are dropped; on the kept frames, tokens in the window
/// around that frame's anchor with spatial score above `tau_spatial` are
/// correlated.
pub fn select_anchors_factorized(
    spatial: &AttentionScores,
    temporal: &AttentionScores,
    params: &FactorizedParams,
) -> Result<AnchorSet> {
    if spatial.kind() != AttentionKind::Spatial || temporal.kind() != AttentionKind::Temporal {
        return Err(Error::invalid("expected spatial and temporal attention"));
    }
    if spatial.grid() != temporal.grid() {
        return Err(Error::invalid("spatial and temporal grids differ"));
    }
    let g = *spatial.grid();
    check_tile(&g, params.tile)?;
    let s_mean = spatial.outgoing_means();
    let t_mean = temporal.outgoing_means();
    let (ty_n, tx_n) = g.tiles(params.tile);
    let mut set = AnchorSet::empty(g, params.tile);
    for ty in 0..ty_n {
        for tx in 0..tx_n {
            let positions = tile_positions(&g, params.tile, ty, tx);
            if positions.is_empty() {
                continue;
            }
            let candidates: Vec<TokenCoord> = (0..g.frames)
                .map(|t| {
                    first_max(positions.iter().map(|&(h, w)| {
                        let c = TokenCoord::new(t, h, w);
                        (s_mean[g.index(c)], c)
                    }))
                    .expect("non-empty tile")
                })
                .collect();
            let main = first_max(candidates.iter().map(|&c| (t_mean[g.index(c)], c)))
                .expect("at least one frame");
            let main_pos = main.h * g.width + main.w;
            let frame_mask: Vec<bool> = (0..g.frames)
                .map(|t| {
                    t == main.t || temporal.temporal(main_pos, main.t, t) >= params.tau_temporal
                })
                .collect();
            let members: Vec<TokenCoord> = candidates
                .iter()
                .copied()
                .filter(|c| frame_mask[c.t])
                .collect();
            let owner = set.anchors.len();
            let mut claimed = Vec::new();
            for m in &members {
                let q = m.h * g.width + m.w;
                for h in window(m.h, params.window, g.height) {
                    for w in window(m.w, params.window, g.width) {
                        if (h, w) != (m.h, m.w)
                            && spatial.spatial(m.t, q, h * g.width + w) > params.tau_spatial
                        {
                            claimed.push(g.index(TokenCoord::new(m.t, h, w)));
                        }
                    }
                }
            }
            set.anchors.push(Anchor {
                tile: ty * tx_n + tx,
                main,
                frame_mask,
                members,
            });
            set.claim_window(owner, claimed);
        }
    }
    Ok(set)
}

/// Anchors for joint space-time attention: per spatial tile, the non-edge token
/// of the `tile x tile x N` region with the highest mean raw outgoing score;
/// correlated tokens lie in a `window x window x window_frames` cuboid around
/// it and score above `tau`.
pub fn select_anchors_3d(attn: &AttentionScores, params: &JointParams) -> Result<AnchorSet> {
    if attn.kind() != AttentionKind::ThreeD {
        return Err(Error::invalid("expected joint (3D) attention"));
    }
    let g = *attn.grid();
    check_tile(&g, params.tile)?;
    let means = attn.outgoing_means();
    let (ty_n, tx_n) = g.tiles(params.tile);
    let mut set = AnchorSet::empty(g, params.tile);
    for ty in 0..ty_n {
        for tx in 0..tx_n {
            let positions = tile_positions(&g, params.tile, ty, tx);
            if positions.is_empty() {
                continue;
            }
            let main = first_max(
                (0..g.frames)
                    .flat_map(|t| {
                        positions
                            .iter()
                            .map(move |&(h, w)| TokenCoord::new(t, h, w))
                    })
                    .map(|c| (means[g.index(c)], c)),
            )
            .expect("non-empty region");
            let q = g.index(main);
            let frames = window(main.t, params.window_frames, g.frames);
            let mut claimed = Vec::new();
            for t in frames.clone() {
                for h in window(main.h, params.window, g.height) {
                    for w in window(main.w, params.window, g.width) {
                        let k = g.index(TokenCoord::new(t, h, w));
                        if k != q && attn.joint(q, k) > params.tau {
                            claimed.push(k);
                        }
                    }
                }
            }
            let owner = set.anchors.len();
            set.anchors.push(Anchor {
                tile: ty * tx_n + tx,
                main,
                frame_mask: (0..g.frames).map(|t| frames.contains(&t)).collect(),
                members: vec![main],
            });
            set.claim_window(owner, claimed);
        }
    }
    Ok(set)
}

/// One dialect per dynamic range 8..=15.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SedaBook {
    pub dids: [u8; NUM_RANGES],
}

impl SedaBook {
    pub fn did_for_range(&self, m: u8) -> Option<u8> {
        m.checked_sub(MIN_RANGE)
            .and_then(|i| self.dids.get(i as usize))
            .copied()
    }

    pub fn contains(&self, did: u8) -> bool {
        self.dids.contains(&did)
    }

    pub fn validate(&self, fb: &Formatbook) -> Result<()> {
        for (i, &did) in self.dids.iter().enumerate() {
            let m = MIN_RANGE + i as u8;
            if fb.dialect(did)?.range_max != m {
                return Err(Error::invalid(format!(
                    "sub-book entry {did} is not in range {m}"
                )));
            }
        }
        Ok(())
    }
}

/// Most frequently selected dialect per range over anchor blocks. All-zero
/// blocks carry no range information and are skipped; ranges never observed
/// fall back to their lowest DID.
pub fn profile_sedabook(anchor_blocks: &[QuantizedBlock], fb: &Formatbook) -> Result<SedaBook> {
    if anchor_blocks.is_empty() {
        return Err(Error::invalid("no anchor blocks to profile"));
    }
    let mut counts = vec![0u64; fb.len()];
    for b in anchor_blocks.iter().filter(|b| !b.is_zero()) {
        *counts
            .get_mut(b.did as usize)
            .ok_or_else(|| Error::invalid(format!("unknown dialect id {}", b.did)))? += 1;
    }
    let dids = std::array::from_fn(|i| {
        let span = fb.range_dids(MIN_RANGE + i as u8);
        let first = span.start;
        span.fold((0u64, first), |best, d| {
            if counts[d as usize] > best.0 {
                (counts[d as usize], d)
            } else {
                best
            }
        })
        .1
    });
    Ok(SedaBook { dids })
}

/// Rows of `tensor` belonging to anchor tokens. `tensor` rows may stack several
/// copies of the grid (CFG branches); every copy contributes.
pub fn anchor_rows(anchors: &AnchorSet, rows: usize) -> Vec<usize> {
    let n = anchors.grid.tokens();
    let toks = anchors.anchor_tokens();
    (0..rows / n)
        .flat_map(|copy| toks.iter().map(move |&t| copy * n + t))
        .collect()
}

/// Quantizes `tensor` with anchor and correlated tokens constrained to
/// `book`. With `decompose`, the listed tokens are decomposed and, when
/// constrained, both their primary and residual use the book.
#[allow(clippy::too_many_arguments)]
pub fn seda_quantize(
    tensor: &Tensor,
    anchors: &AnchorSet,
    book: &SedaBook,
    layout: &BlockLayout,
    fb: &Formatbook,
    luts: &LutSet,
    mode: Selection,
    decompose: Option<&[usize]>,
) -> Result<Container> {
    book.validate(fb)?;
    let flags = anchors.constrained_flags();
    let plan = TokenPlan {
        mode,
        salient: decompose.unwrap_or(&[]),
        constrained: if anchors.is_empty() {
            None
        } else {
            Some((&flags, &book.dids))
        },
    };
    crate::decomp::quantize_tokens(tensor, layout, fb, luts, &plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    Inactive,
    Reuse,
    Update,
}

impl ScheduleAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScheduleAction::Inactive => "inactive",
            ScheduleAction::Reuse => "reuse",
            ScheduleAction::Update => "update",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SedaSchedule {
    pub total_steps: usize,
    pub skip_fraction: f64,
    pub update_period: usize,
    pub final_fraction: f64,
}

fn ceil_steps(fraction: f64, total: usize) -> usize {
    // 0.2 * 100 must be 20, not 21
    (fraction * total as f64 - 1e-9).ceil().max(0.0) as usize
}

impl SedaSchedule {
    pub fn new(
        total_steps: usize,
        skip_fraction: f64,
        update_period: usize,
        final_fraction: f64,
    ) -> Result<Self> {
        let s = SedaSchedule {
            total_steps,
            skip_fraction,
            update_period,
            final_fraction,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.skip_fraction >= 0.0
            && self.final_fraction >= 0.0
            && self.skip_fraction + self.final_fraction <= 1.0
            && self.update_period >= 1
            && self.total_steps >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid schedule {self:?}")))
        }
    }

    pub fn skip_steps(&self) -> usize {
        ceil_steps(self.skip_fraction, self.total_steps)
    }

    pub fn final_steps(&self) -> usize {
        ceil_steps(self.final_fraction, self.total_steps)
    }

    pub fn action(&self, t: usize) -> Result<ScheduleAction> {
        if t >= self.total_steps {
            return Err(Error::invalid(format!(
                "step {t} outside 0..{}",
                self.total_steps
            )));
        }
        let skip = self.skip_steps();
        Ok(if t < skip {
            ScheduleAction::Inactive
        } else if t + self.final_steps() >= self.total_steps
            || (t - skip).is_multiple_of(self.update_period)
        {
            ScheduleAction::Update
        } else {
            ScheduleAction::Reuse
        })
    }

    /// Closed-form number of update steps.
    pub fn update_count(&self) -> usize {
        let fin = self.final_steps();
        let skip = self.skip_steps();
        let mid = self.total_steps.saturating_sub(skip + fin);
        fin.min(self.total_steps - skip)
            + if mid == 0 {
                0
            } else {
                (mid - 1) / self.update_period + 1
            }
    }
}

pub fn schedule_action(t: usize, sched: &SedaSchedule) -> Result<ScheduleAction> {
    sched.action(t)
}

/// Mean Euclidean distance between same-tile main anchors.
pub fn anchor_movement(prev: &AnchorSet, cur: &AnchorSet) -> Result<f64> {
    if prev.grid != cur.grid || prev.tile != cur.tile {
        return Err(Error::invalid("anchor sets use different tilings"));
    }
    let before: BTreeMap<usize, TokenCoord> =
        prev.anchors.iter().map(|a| (a.tile, a.main)).collect();
    let moves: Vec<f64> = cur
        .anchors
        .iter()
        .filter_map(|a| before.get(&a.tile).map(|p| p.distance(&a.main)))
        .collect();
    if moves.is_empty() {
        return Ok(0.0);
    }
    Ok(moves.iter().sum::<f64>() / moves.len() as f64)
}

const SIDECAR_HEADER: &str = "fb4-seda 1";

/// Text sidecar holding an anchor set and its sub-book.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sidecar {
    pub anchors: AnchorSet,
    pub book: SedaBook,
}

impl Sidecar {
    pub fn to_text(&self) -> String {
        let a = &self.anchors;
        let g = a.grid;
        let mut s = String::new();
        let _ = writeln!(s, "{SIDECAR_HEADER}");
        let _ = writeln!(s, "grid {} {} {}", g.frames, g.height, g.width);
        let _ = writeln!(s, "tile {}", a.tile);
        let _ = write!(s, "sedabook");
        for d in self.book.dids {
            let _ = write!(s, " {d}");
        }
        s.push('\n');
        for (i, anc) in a.anchors.iter().enumerate() {
            let mask: String = anc
                .frame_mask
                .iter()
                .map(|&b| if b { '1' } else { '0' })
                .collect();
            let _ = writeln!(
                s,
                "anchor {} {} {} {} {mask}",
                anc.tile, anc.main.t, anc.main.h, anc.main.w
            );
            for m in &anc.members {
                let _ = writeln!(s, "member {} {} {}", m.t, m.h, m.w);
            }
            for (&tok, _) in a.correlated.iter().filter(|(_, &o)| o == i) {
                let c = g.coord(tok);
                let _ = writeln!(s, "correlated {} {} {}", c.t, c.h, c.w);
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad =
            |line: usize, msg: &str| Error::format(format!("sidecar line {}: {msg}", line + 1));
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == SIDECAR_HEADER => {}
            _ => return Err(Error::format("missing sidecar header")),
        }
        let mut grid = None;
        let mut tile = None;
        let mut book = None;
        let mut anchors: Vec<Anchor> = Vec::new();
        let mut correlated = BTreeMap::new();
        for (n, line) in lines {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or_default();
            let rest: Vec<&str> = it.collect();
            let nums = |count: usize| -> Result<Vec<usize>> {
                if rest.len() < count {
                    return Err(bad(n, "too few fields"));
                }
                rest[..count]
                    .iter()
                    .map(|x| {
                        x.parse::<usize>()
                            .map_err(|_| bad(n, "expected an integer"))
                    })
                    .collect()
            };
            let coord = |v: &[usize], g: &Grid| -> Result<TokenCoord> {
                let c = TokenCoord::new(v[0], v[1], v[2]);
                if c.t >= g.frames || c.h >= g.height || c.w >= g.width {
                    return Err(bad(n, "coordinate outside grid"));
                }
                Ok(c)
            };
            match key {
                "grid" => {
                    let v = nums(3)?;
                    grid = Some(Grid::new(v[0], v[1], v[2]).map_err(|_| bad(n, "empty grid"))?);
                }
                "tile" => tile = Some(nums(1)?[0]),
                "sedabook" => {
                    let v = nums(NUM_RANGES)?;
                    let mut d = [0u8; NUM_RANGES];
                    for (slot, &x) in d.iter_mut().zip(&v) {
                        *slot = u8::try_from(x).map_err(|_| bad(n, "DID out of range"))?;
                    }
                    book = Some(SedaBook { dids: d });
                }
                "anchor" => {
                    let g = grid.ok_or_else(|| bad(n, "anchor before grid"))?;
                    let v = nums(4)?;
                    let mask = rest.get(4).ok_or_else(|| bad(n, "missing frame mask"))?;
                    if mask.len() != g.frames || mask.chars().any(|c| c != '0' && c != '1') {
                        return Err(bad(n, "frame mask must be one 0/1 per frame"));
                    }
                    anchors.push(Anchor {
                        tile: v[0],
                        main: coord(&v[1..], &g)?,
                        frame_mask: mask.chars().map(|c| c == '1').collect(),
                        members: Vec::new(),
                    });
                }
                "member" | "correlated" => {
                    let g = grid.ok_or_else(|| bad(n, "token before grid"))?;
                    let c = coord(&nums(3)?, &g)?;
                    let owner = anchors
                        .len()
                        .checked_sub(1)
                        .ok_or_else(|| bad(n, "token before any anchor"))?;
                    if key == "member" {
                        anchors[owner].members.push(c);
                    } else {
                        correlated.insert(g.index(c), owner);
                    }
                }
                other => return Err(bad(n, &format!("unknown key {other:?}"))),
            }
        }
        let grid = grid.ok_or_else(|| Error::format("sidecar lacks grid"))?;
        let tile = tile.ok_or_else(|| Error::format("sidecar lacks tile"))?;
        let book = book.ok_or_else(|| Error::format("sidecar lacks sedabook"))?;
        Ok(Sidecar {
            anchors: AnchorSet {
                grid,
                tile,
                anchors,
                correlated,
            },
            book,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(g: Grid, s: f32, t: f32) -> (AttentionScores, AttentionScores) {
        (
            AttentionScores::new(
                AttentionKind::Spatial,
                g,
                vec![s; AttentionScores::expected_len(AttentionKind::Spatial, &g)],
            )
            .unwrap(),
            AttentionScores::new(
                AttentionKind::Temporal,
                g,
                vec![t; AttentionScores::expected_len(AttentionKind::Temporal, &g)],
            )
            .unwrap(),
        )
    }

    #[test]
    fn uniform_scores_pick_first_interior_token() {
        let g = Grid::new(2, 4, 4).unwrap();
        let (s, t) = uniform(g, 10.0, 10.0);
        let set = select_anchors_factorized(&s, &t, &FactorizedParams::default()).unwrap();
        assert_eq!(set.anchors.len(), 1);
        let a = &set.anchors[0];
        assert_eq!(a.main, TokenCoord::new(0, 1, 1));
        assert_eq!(a.frame_mask, vec![true, true]);
        // whole 4x4 frames lie within the 5x5 window around (1,1) minus the anchor
        assert_eq!(set.correlated.len(), 2 * 15);

        let (s, t) = uniform(g, 2.0, 2.0);
        let set = select_anchors_factorized(&s, &t, &FactorizedParams::default()).unwrap();
        assert!(set.correlated.is_empty());
        assert_eq!(set.anchors[0].frame_mask, vec![true, false]);
    }

    #[test]
    fn dominant_row_becomes_anchor() {
        let g = Grid::new(1, 4, 4).unwrap();
        let (mut s, t) = uniform(g, 0.0, 0.0);
        let mut data = s.data().to_vec();
        let q = 2 * 4 + 2;
        data[q * 16..(q + 1) * 16].fill(9.0);
        s = AttentionScores::new(AttentionKind::Spatial, g, data).unwrap();
        let set = select_anchors_factorized(&s, &t, &FactorizedParams::default()).unwrap();
        assert_eq!(set.anchors[0].main, TokenCoord::new(0, 2, 2));
        assert!(!set.correlated.is_empty());
    }

    #[test]
    fn joint_anchor_and_window() {
        let g = Grid::new(4, 4, 4).unwrap();
        let n = g.tokens();
        let mut data = vec![0f32; n * n];
        let q = g.index(TokenCoord::new(2, 1, 2));
        data[q * n..(q + 1) * n].fill(6.0);
        let attn = AttentionScores::new(AttentionKind::ThreeD, g, data).unwrap();
        let set = select_anchors_3d(&attn, &JointParams::default()).unwrap();
        assert_eq!(set.anchors[0].main, TokenCoord::new(2, 1, 2));
        // frames 1..=3, 4x4 spatial window coverage, minus the anchor itself
        assert_eq!(set.correlated.len(), 3 * 16 - 1);
        assert!(set
            .correlated
            .keys()
            .all(|&k| (1..=3).contains(&g.coord(k).t)));
    }

    #[test]
    fn tile_must_fit() {
        let g = Grid::new(1, 3, 3).unwrap();
        let (s, t) = uniform(g, 1.0, 1.0);
        assert!(select_anchors_factorized(&s, &t, &FactorizedParams::default()).is_err());
    }

    #[test]
    fn later_anchor_owns_overlap() {
        let g = Grid::new(1, 8, 8).unwrap();
        let (s, t) = uniform(g, 10.0, 10.0);
        let set = select_anchors_factorized(&s, &t, &FactorizedParams::default()).unwrap();
        assert_eq!(set.anchors.len(), 4);
        // (0,3) is in the windows of (1,1) and (1,4) only; tile 1 comes later
        let tok = g.index(TokenCoord::new(0, 0, 3));
        assert_eq!(set.correlated[&tok], 1);
    }

    #[test]
    fn profiling_picks_mode_and_falls_back() {
        let fb = Formatbook::canonical();
        let mk = |did: u8| QuantizedBlock::new(did, 0, &[false; 2], &[7, 1]).unwrap();
        let blocks = vec![mk(28), mk(28), mk(27), mk(3), QuantizedBlock::zero(2)];
        let book = profile_sedabook(&blocks, &fb).unwrap();
        assert_eq!(book.did_for_range(15), Some(28));
        assert_eq!(book.did_for_range(9), Some(3));
        assert_eq!(book.did_for_range(10), Some(5));
        assert_eq!(book.did_for_range(8), Some(0));
        book.validate(&fb).unwrap();
        assert!(profile_sedabook(&[], &fb).is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = SedaSchedule::new(100, 0.2, 10, 0.1).unwrap();
        assert_eq!(s.action(5).unwrap(), ScheduleAction::Inactive);
        assert_eq!(s.action(95).unwrap(), ScheduleAction::Update);
        assert_eq!(s.action(47).unwrap(), ScheduleAction::Reuse);
        assert_eq!(s.action(50).unwrap(), ScheduleAction::Update);
        assert!(s.action(100).is_err());
        let n = (0..100)
            .filter(|&t| s.action(t).unwrap() == ScheduleAction::Update)
            .count();
        assert_eq!(n, s.update_count());
        assert_eq!(n, 17);
        assert!(SedaSchedule::new(10, 0.8, 1, 0.3).is_err());
        assert!(SedaSchedule::new(10, 0.1, 0, 0.1).is_err());
    }

    #[test]
    fn movement() {
        let g = Grid::new(1, 8, 8).unwrap();
        let mut a = AnchorSet::empty(g, 4);
        a.anchors.push(Anchor {
            tile: 0,
            main: TokenCoord::new(0, 1, 1),
            frame_mask: vec![true],
            members: vec![TokenCoord::new(0, 1, 1)],
        });
        assert_eq!(anchor_movement(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.anchors[0].main = TokenCoord::new(0, 4, 5);
        assert_eq!(anchor_movement(&a, &b).unwrap(), 5.0);
        let c = AnchorSet::empty(g, 2);
        assert!(anchor_movement(&a, &c).is_err());
    }

    #[test]
    fn sidecar_roundtrip() {
        let g = Grid::new(2, 8, 8).unwrap();
        let (s, t) = uniform(g, 10.0, 10.0);
        let anchors = select_anchors_factorized(&s, &t, &FactorizedParams::default()).unwrap();
        let sc = Sidecar {
            anchors,
            book: SedaBook {
                dids: [1, 4, 7, 11, 15, 20, 25, 31],
            },
        };
        let text = sc.to_text();
        assert_eq!(Sidecar::from_text(&text).unwrap(), sc);
        assert!(Sidecar::from_text("nonsense").is_err());
        assert!(Sidecar::from_text(&text.replace("tile 4", "tile x")).is_err());
    }
}
