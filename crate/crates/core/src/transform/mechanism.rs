use std::collections::BTreeSet;

use serde::Serialize;

use crate::analysis::{class_of, stack_heights, HeightMap, HeightValue, InstrHeights, LivenessMap, WriteClass};
use crate::mir::{BlockId, Function, Instr, Program, Reg, WORD_SIZE};

/// Highest-numbered register a leaf function never names, if any. `r0` is
/// never chosen.
pub fn regframe_register(f: &Function) -> Option<Reg> {
    let mut used = 0u16;
    for (_, _, ins) in f.instrs() {
        if ins.is_call() || matches!(ins, Instr::Unwind(_)) || ins.is_shadow() {
            return None;
        }
        used |= ins.mentions();
    }
    Reg::all().rev().take(Reg::COUNT - 1).find(|r| used & r.mask() == 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntryPlacement {
    pub index: usize,
    /// Stack height at the push; the return address is at `sp - height`.
    pub height: i64,
    pub dead_scratch: bool,
}

/// Earliest point in the entry block with two dead registers, not moving
/// past an unsafe write, a call, an unwind or the terminator. Falls back to
/// the block start with saved scratch registers.
pub fn chase_entry_push(f: &Function, h: &HeightMap, live: &LivenessMap) -> EntryPlacement {
    let entry = f.entry();
    let start = EntryPlacement { index: 0, height: 0, dead_scratch: live.dead_count(entry.id, 0) >= 2 };
    let looped = f.blocks.values().any(|b| b.successors().contains(&entry.id));
    if start.dead_scratch || looped {
        return start;
    }
    for (i, ins) in entry.instrs.iter().enumerate() {
        let unsafe_write = class_of(ins, h.dest(entry.id, i)) == Some(WriteClass::Unsafe);
        if unsafe_write || ins.is_terminator() || ins.is_call() || ins.is_shadow() || matches!(ins, Instr::Unwind(_)) {
            break;
        }
        let Some(height) = h.at(entry.id, i + 1).and_then(|s| s.sp.concrete()) else { break };
        if live.dead_count(entry.id, i + 1) >= 2 {
            return EntryPlacement { index: i + 1, height, dead_scratch: true };
        }
    }
    start
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct InlinedCall {
    pub caller: String,
    pub block: BlockId,
    pub index: usize,
    pub callee: String,
}

/// Whether the body of `g` may replace a call made in state `site`.
///
/// `g` must be one block ending in `ret`, make no calls, leave `sp` where it
/// found it, and touch the stack only through its own slots below its
/// return address (loads read only slots it stored). Register-addressed
/// accesses must go through a register still holding the caller's value, and
/// the caller must know that value points at or above its own `sp`.
fn inlinable(g: &Function, site: &InstrHeights) -> bool {
    let Some(caller_sp) = site.sp.concrete() else { return false };
    if caller_sp > 0 || g.blocks.len() != 1 || !g.entry().ends_in_ret() {
        return false;
    }
    let body = &g.entry().instrs[..g.entry().instrs.len() - 1];
    let mut sp = 0i64;
    let mut stored = BTreeSet::new();
    let mut untouched = u16::MAX;
    let reg_ok = |r: Reg, untouched: u16| {
        untouched & r.mask() != 0 && matches!(site.regs[r.index()], HeightValue::Concrete(m) if m >= caller_sp)
    };
    for ins in body {
        match *ins {
            Instr::SpAdd(k) => sp += k,
            Instr::StoreSp { off, .. } => {
                let a = sp + off;
                if a > -WORD_SIZE || a < sp {
                    return false;
                }
                stored.insert(a);
            }
            Instr::LoadSp { off, .. } => {
                let a = sp + off;
                if a < sp || !stored.contains(&a) {
                    return false;
                }
            }
            Instr::StoreReg { addr, .. } | Instr::LoadReg { addr, .. } => {
                if !reg_ok(addr, untouched) {
                    return false;
                }
            }
            Instr::MovI(..) | Instr::MovR(..) | Instr::BinOp(..) | Instr::StoreGlobal { .. } => {}
            _ => return false,
        }
        untouched &= !ins.defs();
    }
    sp == 0
}

/// Call sites of `p` whose callee can be spliced in.
pub fn inline_candidates(p: &Program) -> Vec<InlinedCall> {
    let mut out = Vec::new();
    for (name, f) in &p.functions {
        let h = stack_heights(f);
        for (b, i, ins) in f.instrs() {
            let Instr::Call(g) = ins else { continue };
            if g == name {
                continue;
            }
            let (Some(callee), Some(site)) = (p.function(g), h.at(b, i)) else { continue };
            if inlinable(callee, site) {
                out.push(InlinedCall { caller: name.clone(), block: b, index: i, callee: g.clone() });
            }
        }
    }
    out
}

/// Replace each listed call with the callee's body minus its `ret`.
pub fn inline_calls(p: &Program, calls: &[InlinedCall]) -> Program {
    let mut out = p.clone();
    let mut sorted: Vec<&InlinedCall> = calls.iter().collect();
    sorted.sort_by(|a, b| b.cmp(a));
    for c in sorted {
        let callee = &p.functions[&c.callee];
        let body = &callee.entry().instrs[..callee.entry().instrs.len() - 1];
        let block = out.functions.get_mut(&c.caller).and_then(|f| f.blocks.get_mut(&c.block)).expect("inline site");
        block.instrs.splice(c.index..=c.index, body.iter().cloned());
    }
    out
}
