use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::{locate, BlockId, Instr, Program, WORD_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    MissingEntry,
    EmptyFunction,
    MissingEntryBlock,
    MidBlockControlTransfer,
    MissingTerminator,
    UnknownBlock,
    UnknownFunction,
    UnreachableBlock,
    AdversarialInBenign,
    MisalignedOffset,
    UnwindWithoutRet,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub function: String,
    pub block: Option<BlockId>,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    fn new(function: &str, block: Option<BlockId>, kind: DiagnosticKind, message: impl Into<String>) -> Diagnostic {
        Diagnostic { function: function.to_owned(), block, kind, message: message.into() }
    }

    /// `file:line: message`, with the line looked up in the source text.
    pub fn render(&self, file: &str, text: &str) -> String {
        let line = locate(text, &self.function, self.block).unwrap_or(1);
        format!("{file}:{line}: {self}")
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.block {
            Some(b) => write!(f, "{}.b{}: {}", self.function, b, self.message),
            None => write!(f, "{}: {}", self.function, self.message),
        }
    }
}

fn misaligned(ins: &Instr) -> Option<i64> {
    let v = match *ins {
        Instr::SpAdd(k) => k,
        Instr::LeaSp(_, off) | Instr::StoreSp { off, .. } | Instr::LoadSp { off, .. } => off,
        Instr::SPush { height, .. } => height,
        _ => return None,
    };
    (v % WORD_SIZE != 0).then_some(v)
}

/// Structural checks. The shadow pseudo-instructions are accepted so that
/// instrumented output validates under the same rules.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    use DiagnosticKind::*;
    let mut out = Vec::new();
    if !p.functions.contains_key(&p.entry) {
        out.push(Diagnostic::new(&p.entry, None, MissingEntry, format!("entry function `{}` does not exist", p.entry)));
    }
    for f in p.functions.values() {
        let name = f.name.as_str();
        if f.blocks.is_empty() {
            out.push(Diagnostic::new(name, None, EmptyFunction, "function has no blocks"));
            continue;
        }
        if !f.blocks.contains_key(&f.entry_block) {
            out.push(Diagnostic::new(name, None, MissingEntryBlock, format!("entry block b{} does not exist", f.entry_block)));
            continue;
        }
        for b in f.blocks.values() {
            let last = b.instrs.len().saturating_sub(1);
            for (i, ins) in b.instrs.iter().enumerate() {
                if ins.is_terminator() && i != last {
                    out.push(Diagnostic::new(
                        name,
                        Some(b.id),
                        MidBlockControlTransfer,
                        format!("mid-block control transfer `{ins}` at instruction {i}"),
                    ));
                }
                for t in ins.targets() {
                    if !f.blocks.contains_key(&t) {
                        out.push(Diagnostic::new(name, Some(b.id), UnknownBlock, format!("unknown block b{t}")));
                    }
                }
                if let Instr::Call(g) = ins {
                    if !p.functions.contains_key(g) {
                        out.push(Diagnostic::new(name, Some(b.id), UnknownFunction, format!("call to unknown function `{g}`")));
                    }
                }
                if matches!(ins, Instr::Corrupt { .. }) && !p.adversarial {
                    out.push(Diagnostic::new(
                        name,
                        Some(b.id),
                        AdversarialInBenign,
                        "adversarial instruction `corrupt` in benign program",
                    ));
                }
                if let Some(v) = misaligned(ins) {
                    out.push(Diagnostic::new(
                        name,
                        Some(b.id),
                        MisalignedOffset,
                        format!("offset {v} in `{ins}` is not a multiple of {WORD_SIZE}"),
                    ));
                }
                if matches!(ins, Instr::Unwind(_)) {
                    let next = b.instrs[i + 1..].iter().find(|n| !n.is_shadow());
                    if !matches!(next, Some(Instr::Ret)) {
                        out.push(Diagnostic::new(name, Some(b.id), UnwindWithoutRet, "`unwind` must be followed by `ret`"));
                    }
                }
            }
            if b.terminator().is_none() {
                out.push(Diagnostic::new(name, Some(b.id), MissingTerminator, "block does not end in br, brc, ret or halt"));
            }
        }
        let reachable: BTreeSet<BlockId> = f.reachable().into_iter().collect();
        for &id in f.blocks.keys() {
            if !reachable.contains(&id) {
                out.push(Diagnostic::new(name, Some(id), UnreachableBlock, "block is unreachable from the entry block"));
            }
        }
    }
    out
}
