//! Tile operations: the per-tile task state that collects a dependency tree
//! of input tiles and produces one finished tile.
//!
//! Inputs arrive in no particular order, possibly interleaved across
//! generations and senders, so every operation buffers what it needs and
//! reconstructs a canonical processing order. The canonical order is what
//! makes finished tiles bitwise reproducible no matter how delivery was
//! scheduled.

use alloc::vec::Vec;
use core::fmt;

use crate::tile::{PixelRect, Tile};

/// Premultiplied front-to-back over operator: `C += (1-A)*c`, `A += (1-A)*a`.
#[inline]
pub fn over(acc: &mut [f32; 4], src: [f32; 4]) {
    let w = 1.0 - acc[3];
    acc[0] += w * src[0];
    acc[1] += w * src[1];
    acc[2] += w * src[2];
    acc[3] += w * src[3];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpError {
    /// More inputs than the operation expects for this frame.
    TooManyInputs,
    /// A tile arrived for a generation whose expected count is already met
    /// (or that no parent declared).
    UnexpectedChild { generation: u32 },
    /// Input arrived after the dependency tree completed.
    InputAfterCompletion,
    /// Input region does not match the tile's region.
    RegionMismatch,
}

impl fmt::Display for OpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpError::TooManyInputs => write!(f, "more inputs than expected"),
            OpError::UnexpectedChild { generation } => {
                write!(f, "unexpected child tile in generation {generation}")
            }
            OpError::InputAfterCompletion => write!(f, "input after tile completion"),
            OpError::RegionMismatch => write!(f, "input region mismatch"),
        }
    }
}

impl core::error::Error for OpError {}

#[derive(Debug)]
pub enum ProcessResult {
    Incomplete,
    Complete(Tile),
}

/// What an unfinished operation is still waiting for; used in starvation
/// reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingSummary {
    pub received: u32,
    pub current_generation: u32,
    pub missing_in_generation: u32,
}

/// Per-owned-tile task: buffer dependencies, emit the finished tile once the
/// dependency tree is complete. Implementations must tolerate arbitrary
/// arrival order; `process` is called at most once per delivered input.
pub trait TileOperation: Send {
    fn new_frame(&mut self);
    fn process(&mut self, tile: Tile, sender: u32) -> Result<ProcessResult, OpError>;
    fn pending(&self) -> PendingSummary;
}

// ---------------------------------------------------------------------------
// Image-parallel operation
// ---------------------------------------------------------------------------

/// Expects `expected_inputs` rendered tiles. One input passes through
/// bitwise; several are averaged per pixel (redundant rendering with
/// distinct jitter seeds is equivalent to a higher sampling rate).
#[derive(Debug)]
pub struct ImageParallelOp {
    expected_inputs: u32,
    buffered: Vec<(Tile, u32, u32)>,
    done: bool,
}

impl ImageParallelOp {
    pub fn new(expected_inputs: u32) -> Self {
        ImageParallelOp {
            expected_inputs: expected_inputs.max(1),
            buffered: Vec::new(),
            done: false,
        }
    }

    fn average(&mut self) -> Tile {
        // Canonical order so float sums do not depend on arrival order.
        self.buffered
            .sort_unstable_by_key(|(_, sender, seq)| (*sender, *seq));
        let inv = 1.0 / self.buffered.len() as f32;
        let mut out = self.buffered[0].0.clone();
        let area = out.region.area();
        for px in 0..area * 4 {
            let mut sum = 0.0f32;
            for (t, _, _) in &self.buffered {
                sum += t.color[px];
            }
            out.color[px] = sum * inv;
        }
        for px in 0..area {
            let mut d = f32::INFINITY;
            for (t, _, _) in &self.buffered {
                d = d.min(t.depth[px]);
            }
            out.depth[px] = d;
        }
        out
    }
}

impl TileOperation for ImageParallelOp {
    fn new_frame(&mut self) {
        self.buffered.clear();
        self.done = false;
    }

    fn process(&mut self, tile: Tile, sender: u32) -> Result<ProcessResult, OpError> {
        if self.done || self.buffered.len() as u32 >= self.expected_inputs {
            return Err(OpError::TooManyInputs);
        }
        if let Some((first, _, _)) = self.buffered.first() {
            if first.region != tile.region {
                return Err(OpError::RegionMismatch);
            }
        }
        let seq = self.buffered.iter().filter(|(_, s, _)| *s == sender).count() as u32;
        self.buffered.push((tile, sender, seq));
        if self.buffered.len() as u32 == self.expected_inputs {
            let finished = if self.expected_inputs == 1 {
                self.buffered.pop().unwrap().0
            } else {
                self.average()
            };
            self.buffered.clear();
            self.done = true;
            Ok(ProcessResult::Complete(finished))
        } else {
            Ok(ProcessResult::Incomplete)
        }
    }

    fn pending(&self) -> PendingSummary {
        PendingSummary {
            received: self.buffered.len() as u32,
            current_generation: 0,
            missing_in_generation: self.expected_inputs - self.buffered.len() as u32,
        }
    }
}

// ---------------------------------------------------------------------------
// Sort-last alpha-blend operation
// ---------------------------------------------------------------------------

struct Buffered {
    tile: Tile,
    sender: u32,
    seq: u32,
    accounted: bool,
}

/// Collects a per-tile dependency tree (a generation-0 tile declares how many
/// generation-1 tiles to expect, and so on), then depth-sorts and blends the
/// buffered fragments per pixel.
pub struct AlphaBlendOp {
    buffered: Vec<Buffered>,
    current_gen: u32,
    missing: i64,
    next_children: u64,
    complete: bool,
}

impl AlphaBlendOp {
    pub fn new() -> Self {
        AlphaBlendOp {
            buffered: Vec::new(),
            current_gen: 0,
            // Expect a generation 0 tile to start.
            missing: 1,
            next_children: 0,
            complete: false,
        }
    }

    /// Advance through completed generations, re-accounting tiles that
    /// arrived early. Returns true when the whole tree is complete.
    fn check_tree_complete(&mut self) -> Result<bool, OpError> {
        loop {
            if self.missing > 0 {
                return Ok(false);
            }
            if self.missing < 0 {
                return Err(OpError::TooManyInputs);
            }
            if self.next_children == 0 {
                // No further generations expected; anything still
                // unaccounted was never declared by a parent.
                if let Some(b) = self.buffered.iter().find(|b| !b.accounted) {
                    return Err(OpError::UnexpectedChild {
                        generation: b.tile.generation,
                    });
                }
                return Ok(true);
            }
            self.current_gen += 1;
            self.missing = self.next_children as i64;
            self.next_children = 0;
            for b in &mut self.buffered {
                if !b.accounted && b.tile.generation == self.current_gen {
                    b.accounted = true;
                    self.missing -= 1;
                    self.next_children += b.tile.children as u64;
                }
            }
        }
    }

    /// Depth-sort the buffered fragments per pixel and blend front-to-back.
    fn sort_and_blend(&mut self) -> Tile {
        let region = self.buffered[0].tile.region;
        let area = region.area();
        let mut finished = self.buffered[0].tile.clone();
        finished.generation = 0;
        finished.children = 0;

        // Deterministic fragment order for depth ties: generation, then
        // sender rank, then per-sender submission index.
        let mut order: Vec<usize> = (0..self.buffered.len()).collect();
        order.sort_unstable_by_key(|&i| {
            let b = &self.buffered[i];
            (b.tile.generation, b.sender, b.seq)
        });

        let mut frags: Vec<(f32, usize)> = Vec::with_capacity(order.len());
        for px in 0..area {
            frags.clear();
            for &i in &order {
                frags.push((self.buffered[i].tile.depth[px], i));
            }
            // Stable sort by depth keeps the canonical tie order.
            frags.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = [0.0f32; 4];
            let mut front = f32::INFINITY;
            for &(depth, i) in &frags {
                let c = &self.buffered[i].tile.color[px * 4..px * 4 + 4];
                over(&mut acc, [c[0], c[1], c[2], c[3]]);
                if c[3] > 0.0 && depth < front {
                    front = depth;
                }
            }
            finished.color[px * 4..px * 4 + 4].copy_from_slice(&acc);
            finished.depth[px] = front;
        }
        finished
    }
}

impl Default for AlphaBlendOp {
    fn default() -> Self {
        AlphaBlendOp::new()
    }
}

impl TileOperation for AlphaBlendOp {
    fn new_frame(&mut self) {
        self.buffered.clear();
        self.current_gen = 0;
        self.missing = 1;
        self.next_children = 0;
        self.complete = false;
    }

    fn process(&mut self, tile: Tile, sender: u32) -> Result<ProcessResult, OpError> {
        if self.complete {
            return Err(OpError::InputAfterCompletion);
        }
        if let Some(first) = self.buffered.first() {
            if first.tile.region != tile.region {
                return Err(OpError::RegionMismatch);
            }
        }
        if tile.generation < self.current_gen {
            return Err(OpError::UnexpectedChild {
                generation: tile.generation,
            });
        }
        let accounted = tile.generation == self.current_gen;
        if accounted {
            self.missing -= 1;
            self.next_children += tile.children as u64;
        }
        let seq = self
            .buffered
            .iter()
            .filter(|b| b.sender == sender)
            .count() as u32;
        self.buffered.push(Buffered {
            tile,
            sender,
            seq,
            accounted,
        });
        if self.check_tree_complete()? {
            self.complete = true;
            let finished = self.sort_and_blend();
            self.buffered.clear();
            Ok(ProcessResult::Complete(finished))
        } else {
            Ok(ProcessResult::Incomplete)
        }
    }

    fn pending(&self) -> PendingSummary {
        PendingSummary {
            received: self.buffered.len() as u32,
            current_generation: self.current_gen,
            missing_in_generation: self.missing.max(0) as u32,
        }
    }
}

/// Build an input tile for tests and renderers.
pub fn make_input_tile(
    tile_id: u32,
    region: PixelRect,
    generation: u32,
    children: u32,
    rgba: [f32; 4],
    depth: f32,
) -> Tile {
    let mut t = Tile::filled(tile_id, region, rgba, depth);
    t.generation = generation;
    t.children = children;
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn region() -> PixelRect {
        PixelRect { x: 0, y: 0, w: 4, h: 4 }
    }

    fn run_sequence(op: &mut dyn TileOperation, tiles: Vec<(Tile, u32)>) -> Option<Tile> {
        op.new_frame();
        let mut finished = None;
        for (i, (t, sender)) in tiles.into_iter().enumerate() {
            match op.process(t, sender).expect("sequence is valid") {
                ProcessResult::Incomplete => assert!(finished.is_none()),
                ProcessResult::Complete(f) => {
                    finished = Some((i, f));
                }
            }
        }
        finished.map(|(i, f)| {
            // Never completes early: the finishing input is the last one.
            let _ = i;
            f
        })
    }

    #[test]
    fn image_parallel_identity_is_bitwise() {
        let mut op = ImageParallelOp::new(1);
        op.new_frame();
        let input = make_input_tile(0, region(), 0, 0, [0.3, 0.2, 0.1, 0.9], 2.5);
        let expect = input.clone();
        match op.process(input, 0).unwrap() {
            ProcessResult::Complete(f) => assert_eq!(f, expect),
            _ => panic!("K=1 completes immediately"),
        }
    }

    #[test]
    fn image_parallel_averages_two_inputs() {
        let mut op = ImageParallelOp::new(2);
        let a = make_input_tile(0, region(), 0, 2, [0.2, 0.2, 0.2, 1.0], 1.0);
        let b = make_input_tile(0, region(), 0, 2, [0.6, 0.6, 0.6, 1.0], 2.0);
        let f = run_sequence(&mut op, vec![(a, 0), (b, 1)]).unwrap();
        assert!((f.color[0] - 0.4).abs() < 1e-7);
        assert_eq!(f.depth[0], 1.0);
    }

    #[test]
    fn image_parallel_rejects_extra_input() {
        let mut op = ImageParallelOp::new(1);
        op.new_frame();
        let t = make_input_tile(0, region(), 0, 0, [0.0; 4], 0.0);
        let _ = op.process(t.clone(), 0).unwrap();
        assert_eq!(op.process(t, 0).unwrap_err(), OpError::TooManyInputs);
    }

    #[test]
    fn image_parallel_average_is_order_independent() {
        let tiles: Vec<(Tile, u32)> = (0..3)
            .map(|i| {
                (
                    make_input_tile(0, region(), 0, 3, [0.1 * i as f32, 0.7, 0.3, 1.0], i as f32),
                    i as u32,
                )
            })
            .collect();
        let mut reference = None;
        // All 6 permutations of 3 inputs.
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for perm in perms {
            let mut op = ImageParallelOp::new(3);
            let seq: Vec<(Tile, u32)> = perm.iter().map(|&i| tiles[i].clone()).collect();
            let f = run_sequence(&mut op, seq).unwrap();
            match &reference {
                None => reference = Some(f),
                Some(r) => assert_eq!(&f, r),
            }
        }
    }

    #[test]
    fn tree_completes_for_fig2_scenario() {
        // Owner posts generation 0 with two children; two other ranks post
        // generation 1 tiles. Completes after the third, any order.
        let g0 = make_input_tile(0, region(), 0, 2, [0.0, 0.0, 0.0, 1.0], f32::INFINITY);
        let g1a = make_input_tile(0, region(), 1, 0, [0.5, 0.0, 0.0, 0.5], 1.0);
        let g1b = make_input_tile(0, region(), 1, 0, [0.0, 0.5, 0.0, 0.5], 2.0);
        let inputs = [(g0, 0u32), (g1a, 1u32), (g1b, 2u32)];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut reference: Option<Tile> = None;
        for perm in perms {
            let mut op = AlphaBlendOp::new();
            let seq: Vec<(Tile, u32)> = perm.iter().map(|&i| inputs[i].clone()).collect();
            let f = run_sequence(&mut op, seq).expect("tree completes");
            match &reference {
                None => reference = Some(f),
                Some(r) => assert_eq!(&f, r, "permutation {perm:?} changed the output"),
            }
        }
        // Blend check: fragments (0.5,0,0,0.5)@1 then (0,0.5,0,0.5)@2 over
        // opaque black give (0.5, 0.25, 0, 1).
        let f = reference.unwrap();
        assert!((f.color[0] - 0.5).abs() < 1e-6);
        assert!((f.color[1] - 0.25).abs() < 1e-6);
        assert!(f.color[2].abs() < 1e-6);
        assert!((f.color[3] - 1.0).abs() < 1e-6);
        assert_eq!(f.depth[0], 1.0);
    }

    #[test]
    fn empty_tree_completes_immediately() {
        let mut op = AlphaBlendOp::new();
        op.new_frame();
        let g0 = make_input_tile(0, region(), 0, 0, [0.1, 0.1, 0.1, 1.0], f32::INFINITY);
        match op.process(g0, 0).unwrap() {
            ProcessResult::Complete(f) => assert!((f.color[0] - 0.1).abs() < 1e-7),
            _ => panic!("children=0 completes after one tile"),
        }
    }

    #[test]
    fn chain_tree_completes_in_any_order() {
        // gen0 declares 1 child, gen1 declares 1 child, gen2 declares none.
        let g0 = make_input_tile(0, region(), 0, 1, [0.0, 0.0, 0.0, 1.0], f32::INFINITY);
        let g1 = make_input_tile(0, region(), 1, 1, [0.2, 0.0, 0.0, 0.2], 5.0);
        let g2 = make_input_tile(0, region(), 2, 0, [0.0, 0.3, 0.0, 0.3], 1.0);
        let inputs = [(g0, 0u32), (g1, 1u32), (g2, 2u32)];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut reference: Option<Tile> = None;
        for perm in perms {
            let mut op = AlphaBlendOp::new();
            let seq: Vec<(Tile, u32)> = perm.iter().map(|&i| inputs[i].clone()).collect();
            let f = run_sequence(&mut op, seq).expect("chain completes");
            match &reference {
                None => reference = Some(f),
                Some(r) => assert_eq!(&f, r),
            }
        }
    }

    #[test]
    fn undeclared_child_is_protocol_error() {
        let mut op = AlphaBlendOp::new();
        op.new_frame();
        let g0 = make_input_tile(0, region(), 0, 0, [0.0; 4], f32::INFINITY);
        let g1 = make_input_tile(0, region(), 1, 0, [0.1, 0.0, 0.0, 0.1], 1.0);
        // Early gen-1 arrival, then a gen-0 declaring zero children.
        assert!(matches!(op.process(g1, 1).unwrap(), ProcessResult::Incomplete));
        assert_eq!(
            op.process(g0, 0).unwrap_err(),
            OpError::UnexpectedChild { generation: 1 }
        );
    }

    #[test]
    fn opaque_front_fragment_hides_background() {
        let mut op = AlphaBlendOp::new();
        let g0 = make_input_tile(0, region(), 0, 1, [1.0, 1.0, 1.0, 1.0], f32::INFINITY);
        let frag = make_input_tile(0, region(), 1, 0, [0.2, 0.4, 0.6, 1.0], 3.0);
        let f = run_sequence(&mut op, vec![(g0, 0), (frag, 1)]).unwrap();
        assert_eq!(&f.color[0..4], &[0.2, 0.4, 0.6, 1.0]);
        assert_eq!(f.depth[0], 3.0);
    }

    #[test]
    fn per_pixel_sort_handles_interlocking_depths() {
        // Fragment A is in front for pixel 0 and behind for pixel 1; a
        // per-rank sort would get one of them wrong.
        let r = PixelRect { x: 0, y: 0, w: 2, h: 1 };
        let mut a = make_input_tile(0, r, 1, 0, [0.0; 4], 0.0);
        a.color = vec![0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5];
        a.depth = vec![1.0, 4.0];
        let mut b = make_input_tile(0, r, 1, 0, [0.0; 4], 0.0);
        b.color = vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.5, 0.0, 0.5];
        b.depth = vec![2.0, 3.0];
        let g0 = make_input_tile(0, r, 0, 2, [0.0, 0.0, 0.0, 1.0], f32::INFINITY);

        let mut op = AlphaBlendOp::new();
        let f = run_sequence(&mut op, vec![(g0, 0), (a, 1), (b, 2)]).unwrap();
        // Pixel 0: A over B -> red on top.
        assert!((f.color[0] - 0.5).abs() < 1e-6);
        assert!((f.color[1] - 0.25).abs() < 1e-6);
        // Pixel 1: B over A -> green on top.
        assert!((f.color[4] - 0.25).abs() < 1e-6);
        assert!((f.color[5] - 0.5).abs() < 1e-6);
        assert_eq!(f.depth[0], 1.0);
        assert_eq!(f.depth[1], 3.0);
    }

    #[test]
    fn never_completes_on_any_proper_prefix() {
        let g0 = make_input_tile(0, region(), 0, 2, [0.0, 0.0, 0.0, 1.0], f32::INFINITY);
        let g1a = make_input_tile(0, region(), 1, 1, [0.1, 0.0, 0.0, 0.1], 1.0);
        let g1b = make_input_tile(0, region(), 1, 0, [0.0, 0.1, 0.0, 0.1], 2.0);
        let g2 = make_input_tile(0, region(), 2, 0, [0.0, 0.0, 0.1, 0.1], 0.5);
        let inputs = [(g0, 0u32), (g1a, 1u32), (g1b, 2u32), (g2, 3u32)];
        // A few representative orders; completion must happen exactly at the
        // final input.
        let orders: [[usize; 4]; 4] = [[0, 1, 2, 3], [3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]];
        for order in orders {
            let mut op = AlphaBlendOp::new();
            op.new_frame();
            for (n, &i) in order.iter().enumerate() {
                let (t, s) = inputs[i].clone();
                match op.process(t, s).unwrap() {
                    ProcessResult::Incomplete => assert!(n + 1 < order.len()),
                    ProcessResult::Complete(_) => assert_eq!(n + 1, order.len()),
                }
            }
        }
    }

    #[test]
    fn over_groups_associate() {
        // Blending fragments one-by-one equals blending pre-composited
        // contiguous groups in the same depth order.
        let frags = [
            [0.30, 0.10, 0.05, 0.40],
            [0.05, 0.20, 0.10, 0.30],
            [0.10, 0.00, 0.30, 0.50],
            [0.02, 0.08, 0.20, 0.25],
        ];
        let mut one_by_one = [0.0f32; 4];
        for f in &frags {
            over(&mut one_by_one, *f);
        }
        for split in 1..frags.len() {
            let mut front = [0.0f32; 4];
            for f in &frags[..split] {
                over(&mut front, *f);
            }
            let mut back = [0.0f32; 4];
            for f in &frags[split..] {
                over(&mut back, *f);
            }
            let mut grouped = [0.0f32; 4];
            over(&mut grouped, front);
            over(&mut grouped, back);
            for c in 0..4 {
                assert!((grouped[c] - one_by_one[c]).abs() < 1e-6);
            }
        }
    }
}
