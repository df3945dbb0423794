use std::fmt;

use super::{Block, Function, Instr, Program};

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::SpAdd(k) => write!(f, "spadd {k}"),
            Instr::SpMov(r) => write!(f, "spmov {r}"),
            Instr::MovI(r, imm) => write!(f, "movi {r}, {imm}"),
            Instr::MovR(d, s) => write!(f, "movr {d}, {s}"),
            Instr::LeaSp(r, off) => write!(f, "lea.sp {r}, {off}"),
            Instr::BinOp(d, s) => write!(f, "binop {d}, {s}"),
            Instr::StoreSp { off, src } => write!(f, "store.sp {off}, {src}"),
            Instr::StoreReg { addr, src } => write!(f, "store.reg {addr}, {src}"),
            Instr::StoreGlobal { global, src } => write!(f, "store.global {global}, {src}"),
            Instr::LoadSp { dst, off } => write!(f, "load.sp {dst}, {off}"),
            Instr::LoadReg { dst, addr } => write!(f, "load.reg {dst}, {addr}"),
            Instr::Call(g) => write!(f, "call {g}"),
            Instr::ICall(r) => write!(f, "icall {r}"),
            Instr::Ret => f.write_str("ret"),
            Instr::Br(t) => write!(f, "br b{t}"),
            Instr::Brc(a, b) => write!(f, "brc b{a}, b{b}"),
            Instr::Corrupt { depth, value } => write!(f, "corrupt {depth}, {value:#x}"),
            Instr::Halt => f.write_str("halt"),
            Instr::Unwind(k) => write!(f, "unwind {k}"),
            Instr::SPush { height, dead_scratch: false } => write!(f, "spush {height}"),
            Instr::SPush { height, dead_scratch: true } => write!(f, "spush.dr {height}"),
            Instr::SPop => f.write_str("spop"),
            Instr::RfPush(r) => write!(f, "rfpush {r}"),
            Instr::RfPop(r) => write!(f, "rfpop {r}"),
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "b{}:", self.id)?;
        for i in &self.instrs {
            writeln!(f, "  {i}")?;
        }
        Ok(())
    }
}

/// The entry block is printed first so that re-parsing recovers it.
impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fn {} {{", self.name)?;
        if let Some(entry) = self.blocks.get(&self.entry_block) {
            write!(f, "{entry}")?;
        }
        for b in self.blocks.values().filter(|b| b.id != self.entry_block) {
            write!(f, "{b}")?;
        }
        writeln!(f, "}}")
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "#entry {}", self.entry)?;
        writeln!(f, "#adversarial {}", self.adversarial)?;
        for g in &self.globals {
            writeln!(f, "#global {g}")?;
        }
        for func in self.functions.values() {
            writeln!(f)?;
            write!(f, "{func}")?;
        }
        Ok(())
    }
}
