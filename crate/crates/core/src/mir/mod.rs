//! The miniature IR: programs made of functions, functions made of basic
//! blocks, blocks made of instructions over sixteen registers and an implicit
//! stack pointer.
//!
//! Programs have a line-oriented text form (see [`parse_program`] and the
//! `Display` impls in [`print`]). Programs are immutable values once parsed;
//! every analysis in this crate is a pure function of a `Program`.

mod callgraph;
mod parse;
mod print;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use callgraph::{build_call_graph, direct_call_sites, CallGraph};
pub use parse::{locate, parse_program, ParseError};
pub use validate::{validate_program, Diagnostic, DiagnosticKind};

/// Size in bytes of every memory reference (and of a return address).
pub const WORD_SIZE: i64 = 8;

pub type BlockId = u32;

/// A general purpose register, `r0` through `r15`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reg(u8);

impl Reg {
    pub const COUNT: usize = 16;
    /// Return-value register; the only register live at `ret`.
    pub const R0: Reg = Reg(0);

    pub const fn new(index: u8) -> Option<Reg> {
        if (index as usize) < Self::COUNT {
            Some(Reg(index))
        } else {
            None
        }
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn all() -> impl DoubleEndedIterator<Item = Reg> {
        (0..Self::COUNT as u8).map(Reg)
    }

    pub fn mask(self) -> u16 {
        1 << self.0
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instr {
    /// `spadd k`: sp += k.
    SpAdd(i64),
    /// `spmov r`: sp = r.
    SpMov(Reg),
    MovI(Reg, i64),
    MovR(Reg, Reg),
    /// `lea.sp r, off`: r = sp + off.
    LeaSp(Reg, i64),
    /// `binop rd, rs`: rd = rd + rs (wrapping).
    BinOp(Reg, Reg),
    /// `store.sp off, rs`: [sp + off] = rs.
    StoreSp { off: i64, src: Reg },
    /// `store.reg ra, rs`: [ra] = rs.
    StoreReg { addr: Reg, src: Reg },
    StoreGlobal { global: String, src: Reg },
    LoadSp { dst: Reg, off: i64 },
    LoadReg { dst: Reg, addr: Reg },
    Call(String),
    ICall(Reg),
    Ret,
    Br(BlockId),
    /// Two-way branch driven by the next input decision.
    Brc(BlockId, BlockId),
    /// Attack primitive: overwrite the return address of the frame `depth`
    /// levels up the call stack (0 is the current frame).
    Corrupt { depth: u32, value: u64 },
    Halt,
    /// Abandon `k` frames (a `longjmp` stand-in); must be followed by `ret`.
    Unwind(u32),
    /// Shadow push of the return address found at `sp - height`. `dead_scratch`
    /// selects the sequence that uses two dead registers as scratch.
    SPush { height: i64, dead_scratch: bool },
    SPop,
    RfPush(Reg),
    RfPop(Reg),
}

impl Instr {
    pub fn is_terminator(&self) -> bool {
        matches!(self, Instr::Br(_) | Instr::Brc(..) | Instr::Ret | Instr::Halt)
    }

    pub fn is_store(&self) -> bool {
        matches!(
            self,
            Instr::StoreSp { .. } | Instr::StoreReg { .. } | Instr::StoreGlobal { .. } | Instr::Corrupt { .. }
        )
    }

    pub fn is_call(&self) -> bool {
        matches!(self, Instr::Call(_) | Instr::ICall(_))
    }

    pub fn is_shadow(&self) -> bool {
        matches!(self, Instr::SPush { .. } | Instr::SPop | Instr::RfPush(_) | Instr::RfPop(_))
    }

    /// Branch targets named by this instruction.
    pub fn targets(&self) -> Vec<BlockId> {
        match *self {
            Instr::Br(t) => vec![t],
            Instr::Brc(a, b) => vec![a, b],
            _ => Vec::new(),
        }
    }

    pub fn map_targets(&self, mut f: impl FnMut(BlockId) -> BlockId) -> Instr {
        match *self {
            Instr::Br(t) => Instr::Br(f(t)),
            Instr::Brc(a, b) => Instr::Brc(f(a), f(b)),
            ref other => other.clone(),
        }
    }

    /// Registers read by the instruction. Calls are assumed to read every
    /// register since argument passing is not modeled.
    pub fn uses(&self) -> u16 {
        match *self {
            Instr::SpMov(r) => r.mask(),
            Instr::MovR(_, s) => s.mask(),
            Instr::BinOp(d, s) => d.mask() | s.mask(),
            Instr::StoreSp { src, .. } => src.mask(),
            Instr::StoreReg { addr, src } => addr.mask() | src.mask(),
            Instr::StoreGlobal { src, .. } => src.mask(),
            Instr::LoadReg { addr, .. } => addr.mask(),
            Instr::Call(_) | Instr::ICall(_) => u16::MAX,
            Instr::Ret | Instr::Halt => Reg::R0.mask(),
            Instr::RfPush(r) | Instr::RfPop(r) => r.mask(),
            _ => 0,
        }
    }

    /// Registers written by the instruction.
    pub fn defs(&self) -> u16 {
        match *self {
            Instr::MovI(r, _) | Instr::MovR(r, _) | Instr::LeaSp(r, _) | Instr::BinOp(r, _) => r.mask(),
            Instr::LoadSp { dst, .. } | Instr::LoadReg { dst, .. } => dst.mask(),
            Instr::RfPush(r) | Instr::RfPop(r) => r.mask(),
            _ => 0,
        }
    }

    /// Every register named by the instruction.
    pub fn mentions(&self) -> u16 {
        match *self {
            Instr::SpMov(r) | Instr::MovI(r, _) | Instr::LeaSp(r, _) | Instr::ICall(r) => r.mask(),
            Instr::RfPush(r) | Instr::RfPop(r) => r.mask(),
            Instr::MovR(a, b) | Instr::BinOp(a, b) => a.mask() | b.mask(),
            Instr::StoreSp { src, .. } | Instr::StoreGlobal { src, .. } => src.mask(),
            Instr::StoreReg { addr, src } => addr.mask() | src.mask(),
            Instr::LoadSp { dst, .. } => dst.mask(),
            Instr::LoadReg { dst, addr } => dst.mask() | addr.mask(),
            _ => 0,
        }
    }
}

/// Target of a call made from a block.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CallTarget {
    Direct(String),
    Indirect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub instrs: Vec<Instr>,
}

impl Block {
    pub fn new(id: BlockId, instrs: Vec<Instr>) -> Block {
        Block { id, instrs }
    }

    pub fn terminator(&self) -> Option<&Instr> {
        self.instrs.last().filter(|i| i.is_terminator())
    }

    /// Intra-procedural successors, ascending and deduplicated. Blocks ending
    /// in `ret` or `halt` have none.
    pub fn successors(&self) -> Vec<BlockId> {
        let set: BTreeSet<BlockId> = self.terminator().map(|t| t.targets()).unwrap_or_default().into_iter().collect();
        set.into_iter().collect()
    }

    pub fn call_targets(&self) -> BTreeSet<CallTarget> {
        self.instrs
            .iter()
            .filter_map(|i| match i {
                Instr::Call(g) => Some(CallTarget::Direct(g.clone())),
                Instr::ICall(_) => Some(CallTarget::Indirect),
                _ => None,
            })
            .collect()
    }

    pub fn is_exit(&self) -> bool {
        matches!(self.terminator(), Some(Instr::Ret | Instr::Halt))
    }

    pub fn ends_in_ret(&self) -> bool {
        matches!(self.terminator(), Some(Instr::Ret))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub blocks: BTreeMap<BlockId, Block>,
    pub entry_block: BlockId,
}

impl Function {
    pub fn new(name: impl Into<String>, entry_block: BlockId, blocks: impl IntoIterator<Item = Block>) -> Function {
        Function {
            name: name.into(),
            blocks: blocks.into_iter().map(|b| (b.id, b)).collect(),
            entry_block,
        }
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(&id)
    }

    pub fn entry(&self) -> &Block {
        &self.blocks[&self.entry_block]
    }

    pub fn exit_blocks(&self) -> BTreeSet<BlockId> {
        self.blocks.values().filter(|b| b.is_exit()).map(|b| b.id).collect()
    }

    pub fn instrs(&self) -> impl Iterator<Item = (BlockId, usize, &Instr)> {
        self.blocks
            .values()
            .flat_map(|b| b.instrs.iter().enumerate().map(move |(i, ins)| (b.id, i, ins)))
    }

    /// A leaf makes no calls, direct or indirect.
    pub fn is_leaf(&self) -> bool {
        self.instrs().all(|(_, _, i)| !i.is_call())
    }

    pub fn predecessors(&self) -> BTreeMap<BlockId, BTreeSet<BlockId>> {
        let mut preds: BTreeMap<BlockId, BTreeSet<BlockId>> = self.blocks.keys().map(|&b| (b, BTreeSet::new())).collect();
        for b in self.blocks.values() {
            for s in b.successors() {
                preds.entry(s).or_default().insert(b.id);
            }
        }
        preds
    }

    /// Blocks reachable from the entry block, in depth-first preorder.
    pub fn reachable(&self) -> Vec<BlockId> {
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        let mut stack = vec![self.entry_block];
        while let Some(b) = stack.pop() {
            if !self.blocks.contains_key(&b) || !seen.insert(b) {
                continue;
            }
            order.push(b);
            for s in self.blocks[&b].successors().into_iter().rev() {
                stack.push(s);
            }
        }
        order
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub functions: BTreeMap<String, Function>,
    pub globals: BTreeSet<String>,
    pub entry: String,
    pub adversarial: bool,
}

impl Program {
    pub fn new(entry: impl Into<String>, functions: impl IntoIterator<Item = Function>) -> Program {
        let functions: BTreeMap<String, Function> = functions.into_iter().map(|f| (f.name.clone(), f)).collect();
        let globals = collect_globals(functions.values());
        Program { functions, globals, entry: entry.into(), adversarial: false }
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.get(name)
    }

    /// Index of each function in name order; used for indirect-call dispatch.
    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.keys().position(|k| k == name)
    }

    /// Recompute `globals` from declared names plus every `store.global`.
    pub fn refresh_globals(&mut self) {
        let used = collect_globals(self.functions.values());
        self.globals.extend(used);
    }
}

fn collect_globals<'a>(functions: impl Iterator<Item = &'a Function>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for f in functions {
        for (_, _, i) in f.instrs() {
            if let Instr::StoreGlobal { global, .. } = i {
                out.insert(global.clone());
            }
        }
    }
    out
}

/// Stable 64-bit fingerprint of a program's printed form.
pub fn fingerprint(p: &Program) -> u64 {
    // FNV-1a; stable across runs and toolchains.
    let text = p.to_string();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
