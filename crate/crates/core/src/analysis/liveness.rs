use std::collections::BTreeMap;

use crate::mir::{BlockId, Function, Reg};

const ALL: u16 = u16::MAX;

/// Per instruction, the registers live immediately before it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LivenessMap {
    pub live_before: BTreeMap<BlockId, Vec<u16>>,
    pub live_in: BTreeMap<BlockId, u16>,
}

impl LivenessMap {
    /// Dead registers before instruction `i` of `b`; `i == len` means after
    /// the last instruction.
    pub fn dead_before(&self, b: BlockId, i: usize) -> u16 {
        let Some(v) = self.live_before.get(&b) else { return 0 };
        match v.get(i) {
            Some(&live) => !live,
            None => 0,
        }
    }

    pub fn dead_count(&self, b: BlockId, i: usize) -> u32 {
        self.dead_before(b, i).count_ones()
    }

    pub fn dead_registers(&self, b: BlockId, i: usize) -> Vec<Reg> {
        let mask = self.dead_before(b, i);
        Reg::all().filter(|r| mask & r.mask() != 0).collect()
    }
}

/// Backward may-liveness. `ret` and `halt` read only `r0`; calls read every
/// register since the callee's reads are not tracked.
pub fn dead_registers(f: &Function) -> LivenessMap {
    let mut live_in: BTreeMap<BlockId, u16> = f.blocks.keys().map(|&b| (b, 0)).collect();
    let through = |instrs: &[crate::mir::Instr], mut live: u16| {
        for ins in instrs.iter().rev() {
            live = (live & !ins.defs()) | ins.uses();
        }
        live
    };
    let mut changed = true;
    while changed {
        changed = false;
        for (&id, b) in f.blocks.iter().rev() {
            let out = b.successors().iter().fold(0, |acc, s| acc | live_in.get(s).copied().unwrap_or(ALL));
            let inn = through(&b.instrs, out);
            if live_in[&id] != inn {
                live_in.insert(id, inn);
                changed = true;
            }
        }
    }
    let mut live_before = BTreeMap::new();
    for (&id, b) in &f.blocks {
        let mut live = b.successors().iter().fold(0, |acc, s| acc | live_in[s]);
        let mut v = vec![0u16; b.instrs.len() + 1];
        v[b.instrs.len()] = live;
        for (i, ins) in b.instrs.iter().enumerate().rev() {
            live = (live & !ins.defs()) | ins.uses();
            v[i] = live;
        }
        live_before.insert(id, v);
    }
    LivenessMap { live_before, live_in }
}
