use std::collections::{BTreeMap, BTreeSet};

use crate::mir::{BlockId, Function, Program};
use crate::safety::{tarjan, SafetyResult};

pub const SAFE_PATH_CAP: u64 = 1 << 16;

/// Functions that still need instrumentation: exactly the RA-unsafe ones.
pub fn safe_function_elision(p: &Program, s: &SafetyResult) -> BTreeSet<String> {
    p.functions.keys().filter(|f| !s.ra_safe_fn(f)).cloned().collect()
}

/// Entry-to-exit paths through RA-safe blocks only, counted on the acyclic
/// condensation of the safe subgraph and saturating at [`SAFE_PATH_CAP`].
pub fn count_safe_paths(f: &Function, s: &SafetyResult) -> u64 {
    let safe: Vec<BlockId> = f.blocks.keys().copied().filter(|&b| s.ra_safe_block(&f.name, b)).collect();
    if !safe.contains(&f.entry_block) {
        return 0;
    }
    let idx: BTreeMap<BlockId, usize> = safe.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let succ: Vec<Vec<usize>> =
        safe.iter().map(|b| f.blocks[b].successors().iter().filter_map(|t| idx.get(t).copied()).collect()).collect();
    // Tarjan emits components in reverse topological order.
    let comps = tarjan(&succ);
    let mut comp_of = vec![0; safe.len()];
    for (c, members) in comps.iter().enumerate() {
        for &v in members {
            comp_of[v] = c;
        }
    }
    let mut paths = vec![0u64; comps.len()];
    for (c, members) in comps.iter().enumerate() {
        let exits = members.iter().any(|&v| f.blocks[&safe[v]].is_exit());
        let next: BTreeSet<usize> =
            members.iter().flat_map(|&v| succ[v].iter().map(|&w| comp_of[w])).filter(|&d| d != c).collect();
        let total = next.iter().fold(u64::from(exits), |acc, &d| acc.saturating_add(paths[d]));
        paths[c] = total.min(SAFE_PATH_CAP);
    }
    paths[comp_of[idx[&f.entry_block]]]
}
