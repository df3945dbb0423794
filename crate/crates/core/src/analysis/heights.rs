use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Serialize, Serializer};

use crate::mir::{BlockId, Function, Instr, Reg, WORD_SIZE};

/// Element of the flat stack-height lattice. Heights are byte offsets from
/// the stack pointer at function entry, so the return address lives at
/// `[0, 8)` and locals sit at negative heights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum HeightValue {
    #[default]
    Bottom,
    Concrete(i64),
    Top,
}

impl HeightValue {
    pub fn join(self, other: HeightValue) -> HeightValue {
        use HeightValue::*;
        match (self, other) {
            (Bottom, x) | (x, Bottom) => x,
            (Concrete(a), Concrete(b)) if a == b => Concrete(a),
            _ => Top,
        }
    }

    pub fn leq(self, other: HeightValue) -> bool {
        self.join(other) == other
    }

    pub fn concrete(self) -> Option<i64> {
        match self {
            HeightValue::Concrete(n) => Some(n),
            _ => None,
        }
    }

    /// Offset a concrete height; anything else becomes `Top`.
    pub fn offset(self, k: i64) -> HeightValue {
        match self {
            HeightValue::Concrete(n) => HeightValue::Concrete(n + k),
            _ => HeightValue::Top,
        }
    }

    /// A one-word write at this height stays strictly below the return
    /// address slot.
    pub fn is_safe(self) -> bool {
        matches!(self, HeightValue::Concrete(n) if n <= -WORD_SIZE)
    }
}

impl fmt::Display for HeightValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeightValue::Bottom => f.write_str("bot"),
            HeightValue::Concrete(n) => write!(f, "{n}"),
            HeightValue::Top => f.write_str("top"),
        }
    }
}

impl Serialize for HeightValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            HeightValue::Concrete(n) => s.serialize_i64(*n),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

/// Abstract machine state: the stack pointer's height and, per register,
/// the height it holds if it is known to point into the frame. `Bottom`
/// for a register means "not derived from the stack pointer".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct State {
    pub sp: HeightValue,
    pub regs: [HeightValue; Reg::COUNT],
}

impl State {
    pub fn entry() -> State {
        State { sp: HeightValue::Concrete(0), regs: [HeightValue::Bottom; Reg::COUNT] }
    }

    pub fn reg(&self, r: Reg) -> HeightValue {
        self.regs[r.index()]
    }

    /// Merge at a control-flow join. A register that is a stack address on
    /// one path and a plain value on another is unknown, hence `Top`.
    pub fn merge(&self, other: &State) -> State {
        let pick = |a: HeightValue, b: HeightValue| if a == b { a } else { HeightValue::Top };
        let mut regs = self.regs;
        for (r, o) in regs.iter_mut().zip(other.regs) {
            *r = pick(*r, o);
        }
        State { sp: pick(self.sp, other.sp), regs }
    }

    /// Destination height of the write performed by `ins`, if it writes.
    pub fn dest(&self, ins: &Instr) -> HeightValue {
        match *ins {
            Instr::StoreSp { off, .. } => self.sp.offset(off),
            Instr::StoreReg { addr, .. } => match self.reg(addr) {
                HeightValue::Concrete(n) => HeightValue::Concrete(n),
                _ => HeightValue::Top,
            },
            Instr::Corrupt { .. } => HeightValue::Top,
            _ => HeightValue::Bottom,
        }
    }

    pub fn step(&self, ins: &Instr) -> State {
        use HeightValue::*;
        let mut s = *self;
        let (dst, v) = match *ins {
            Instr::MovI(r, _) => (r, Bottom),
            Instr::MovR(d, src) => (d, self.reg(src)),
            Instr::LeaSp(r, off) => (r, self.sp.offset(off)),
            Instr::BinOp(d, src) if self.reg(d) == Bottom && self.reg(src) == Bottom => (d, Bottom),
            Instr::BinOp(d, _) => (d, Top),
            Instr::LoadSp { dst, .. } | Instr::LoadReg { dst, .. } => (dst, Bottom),
            Instr::RfPush(r) | Instr::RfPop(r) => (r, Bottom),
            _ => {
                match *ins {
                    Instr::SpAdd(k) => s.sp = s.sp.offset(k),
                    Instr::SpMov(r) => s.sp = if let Concrete(n) = s.reg(r) { Concrete(n) } else { Top },
                    Instr::Call(_) | Instr::ICall(_) => s.regs = [Bottom; Reg::COUNT],
                    Instr::Unwind(_) => s.sp = Top,
                    _ => {}
                }
                return s;
            }
        };
        s.regs[dst.index()] = v;
        s
    }
}

/// Facts holding immediately before one instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct InstrHeights {
    pub sp: HeightValue,
    pub regs: [HeightValue; Reg::COUNT],
    pub dest: HeightValue,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize)]
pub struct HeightMap {
    /// State on entry to each block; `None` if the block is never reached.
    pub block_entry: BTreeMap<BlockId, Option<State>>,
    pub instrs: BTreeMap<BlockId, Vec<InstrHeights>>,
}

impl HeightMap {
    pub fn at(&self, b: BlockId, i: usize) -> Option<&InstrHeights> {
        self.instrs.get(&b)?.get(i)
    }

    pub fn dest(&self, b: BlockId, i: usize) -> HeightValue {
        self.at(b, i).map_or(HeightValue::Top, |h| h.dest)
    }

    /// Stack-pointer height at the first instruction of `b`.
    pub fn entry_sp(&self, b: BlockId) -> HeightValue {
        match self.block_entry.get(&b) {
            Some(Some(s)) => s.sp,
            Some(None) => HeightValue::Bottom,
            None => HeightValue::Top,
        }
    }
}

pub fn stack_heights(f: &Function) -> HeightMap {
    let mut entry: BTreeMap<BlockId, Option<State>> = f.blocks.keys().map(|&b| (b, None)).collect();
    entry.insert(f.entry_block, Some(State::entry()));
    let mut queue = VecDeque::from([f.entry_block]);
    let mut queued: BTreeMap<BlockId, bool> = f.blocks.keys().map(|&b| (b, false)).collect();
    queued.insert(f.entry_block, true);

    while let Some(b) = queue.pop_front() {
        queued.insert(b, false);
        let Some(block) = f.block(b) else { continue };
        let Some(mut s) = entry[&b] else { continue };
        for ins in &block.instrs {
            s = s.step(ins);
        }
        for succ in block.successors() {
            let merged = match entry.get(&succ).copied().flatten() {
                None => s,
                Some(old) => old.merge(&s),
            };
            if entry.get(&succ).copied().flatten() != Some(merged) {
                entry.insert(succ, Some(merged));
                if !queued.get(&succ).copied().unwrap_or(true) {
                    queued.insert(succ, true);
                    queue.push_back(succ);
                }
            }
        }
    }

    let mut instrs = BTreeMap::new();
    for (&b, block) in &f.blocks {
        let mut out = Vec::with_capacity(block.instrs.len());
        let mut s = entry[&b].unwrap_or(State { sp: HeightValue::Top, regs: [HeightValue::Top; Reg::COUNT] });
        for ins in &block.instrs {
            out.push(InstrHeights { sp: s.sp, regs: s.regs, dest: s.dest(ins) });
            s = s.step(ins);
        }
        instrs.insert(b, out);
    }
    HeightMap { block_entry: entry, instrs }
}
