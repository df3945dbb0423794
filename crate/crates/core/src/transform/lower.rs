use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::analysis::{HeightMap, LivenessMap};
use crate::mir::{BlockId, Function};
use crate::safety::SafetyResult;

/// Clone of block `b` is `b + CLONE_OFFSET`.
pub const CLONE_OFFSET: BlockId = 1000;
/// The i-th transition-edge block is `EDGE_BLOCK_BASE + i`.
pub const EDGE_BLOCK_BASE: BlockId = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub from: BlockId,
    /// Original unsafe target; control now goes to its clone.
    pub to: BlockId,
    pub clone: BlockId,
    pub edge_block: BlockId,
    pub height: i64,
    pub dead_scratch: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClonedRegion {
    /// Original block to its clone, for clones that survive pruning.
    pub clones: BTreeMap<BlockId, BlockId>,
    pub transitions: Vec<Transition>,
    /// Original blocks no longer reachable once edges are redirected.
    pub pruned: BTreeSet<BlockId>,
    /// Clone blocks ending in `ret`; each gets one pop.
    pub pop_sites: BTreeSet<BlockId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoweringFallback {
    EntryUnsafe,
    UnknownHeight(BlockId),
    BlockIdTooLarge(BlockId),
}

/// Depth-first walk from the entry over safe blocks; every edge into an
/// unsafe block is redirected to that block's clone through a block holding
/// the push. Clone exits ending in `ret` pop. With liveness supplied, pushes
/// whose target starts with two dead registers use them as scratch.
pub fn lower_instrumentation(
    f: &Function,
    s: &SafetyResult,
    h: &HeightMap,
    live: Option<&LivenessMap>,
) -> Result<ClonedRegion, LoweringFallback> {
    if let Some(&b) = f.blocks.keys().find(|&&b| b >= CLONE_OFFSET) {
        return Err(LoweringFallback::BlockIdTooLarge(b));
    }
    let safe = |b: BlockId| s.ra_safe_block(&f.name, b);
    if !safe(f.entry_block) {
        return Err(LoweringFallback::EntryUnsafe);
    }

    let mut visited: BTreeSet<(BlockId, BlockId)> = BTreeSet::new();
    let mut edges: Vec<(BlockId, BlockId)> = Vec::new();
    fn visit(
        f: &Function,
        b: BlockId,
        safe: &dyn Fn(BlockId) -> bool,
        visited: &mut BTreeSet<(BlockId, BlockId)>,
        out: &mut Vec<(BlockId, BlockId)>,
    ) {
        for t in f.blocks[&b].successors() {
            if !visited.insert((b, t)) {
                continue;
            }
            if safe(t) {
                visit(f, t, safe, visited, out);
            } else {
                out.push((b, t));
            }
        }
    }
    visit(f, f.entry_block, &safe, &mut visited, &mut edges);

    let mut transitions = Vec::new();
    for (i, &(from, to)) in edges.iter().enumerate() {
        let height = h.entry_sp(to).concrete().ok_or(LoweringFallback::UnknownHeight(to))?;
        let dead_scratch = live.is_some_and(|l| l.dead_count(to, 0) >= 2);
        transitions.push(Transition {
            from,
            to,
            clone: to + CLONE_OFFSET,
            edge_block: EDGE_BLOCK_BASE + i as BlockId,
            height,
            dead_scratch,
        });
    }

    // Originals reachable without crossing a transition.
    let redirected: BTreeSet<(BlockId, BlockId)> = edges.iter().copied().collect();
    let mut kept = BTreeSet::new();
    let mut stack = vec![f.entry_block];
    while let Some(b) = stack.pop() {
        if kept.insert(b) {
            stack.extend(f.blocks[&b].successors().into_iter().filter(|&t| !redirected.contains(&(b, t))));
        }
    }
    // Clones reachable from some transition target.
    let mut cloned = BTreeSet::new();
    let mut stack: Vec<BlockId> = edges.iter().map(|&(_, t)| t).collect();
    while let Some(b) = stack.pop() {
        if cloned.insert(b) {
            stack.extend(f.blocks[&b].successors());
        }
    }
    let clones: BTreeMap<BlockId, BlockId> = cloned.iter().map(|&b| (b, b + CLONE_OFFSET)).collect();
    let pop_sites = cloned.iter().filter(|b| f.blocks[b].ends_in_ret()).map(|&b| b + CLONE_OFFSET).collect();
    let pruned = f.blocks.keys().copied().filter(|b| !kept.contains(b)).collect();
    Ok(ClonedRegion { clones, transitions, pruned, pop_sites })
}
