use std::fmt;

use serde::Serialize;

use crate::mir::{BlockId, Reg};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    /// Every executed instruction, shadow sequences counted at their cost.
    pub instructions: u64,
    pub shadow_instructions: u64,
    pub memory_accesses: u64,
}

/// One observable step. `act` identifies the activation whose code ran;
/// `func` indexes [`Trace::functions`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Call { act: u64, func: usize, callee: usize, callee_act: u64, block: BlockId, index: usize },
    /// `frame_act` differs from `act` after an unwind.
    Ret { act: u64, func: usize, frame_act: u64, corrupted: bool },
    Block { act: u64, func: usize, block: BlockId },
    Store { act: u64, func: usize, block: BlockId, index: usize, addr: u64, height: Option<i64> },
    ShadowPush { act: u64, func: usize, depth: usize },
    ShadowPop { act: u64, func: usize, depth: usize, matched_after: usize },
    RegFramePush { act: u64, func: usize, reg: Reg },
    RegFramePop { act: u64, func: usize, reg: Reg, slow: bool, matched_after: usize },
    Corrupt { act: u64, func: usize, depth: u32, applied: bool },
    Unwind { act: u64, func: usize, frames: u32 },
    Abort { act: u64, func: usize, block: BlockId, index: usize },
    Halt { act: u64, func: usize },
}

impl Event {
    pub fn act(&self) -> u64 {
        match *self {
            Event::Call { act, .. }
            | Event::Ret { act, .. }
            | Event::Block { act, .. }
            | Event::Store { act, .. }
            | Event::ShadowPush { act, .. }
            | Event::ShadowPop { act, .. }
            | Event::RegFramePush { act, .. }
            | Event::RegFramePop { act, .. }
            | Event::Corrupt { act, .. }
            | Event::Unwind { act, .. }
            | Event::Abort { act, .. }
            | Event::Halt { act, .. } => act,
        }
    }

    pub fn is_shadow(&self) -> bool {
        matches!(
            self,
            Event::ShadowPush { .. } | Event::ShadowPop { .. } | Event::RegFramePush { .. } | Event::RegFramePop { .. }
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Trace {
    pub functions: Vec<String>,
    pub events: Vec<Event>,
    pub counters: Counters,
    /// Shadow stack entries left when execution stopped.
    pub final_shadow_depth: usize,
}

impl Trace {
    pub fn shadow_ops(&self) -> usize {
        self.events.iter().filter(|e| e.is_shadow()).count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("trace serializes")
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |i: usize| self.functions.get(i).map_or("?", String::as_str);
        for e in &self.events {
            match *e {
                Event::Call { act, func, callee, callee_act, block, index } => {
                    writeln!(f, "[{act}] call {} -> {} [{callee_act}] at b{block}:{index}", name(func), name(callee))?
                }
                Event::Ret { act, func, frame_act, corrupted } => {
                    write!(f, "[{act}] ret {}", name(func))?;
                    if frame_act != act {
                        write!(f, " frame [{frame_act}]")?;
                    }
                    if corrupted {
                        write!(f, " to attacker")?;
                    }
                    writeln!(f)?
                }
                Event::Block { act, func, block } => writeln!(f, "[{act}] block {}.b{block}", name(func))?,
                Event::Store { act, func, block, index, addr, height } => {
                    write!(f, "[{act}] store {}.b{block}:{index} addr {addr:#x}", name(func))?;
                    match height {
                        Some(h) => writeln!(f, " height {h}")?,
                        None => writeln!(f)?,
                    }
                }
                Event::ShadowPush { act, func, depth } => writeln!(f, "[{act}] spush {} depth {depth}", name(func))?,
                Event::ShadowPop { act, func, depth, matched_after } => {
                    writeln!(f, "[{act}] spop {} depth {depth} matched_after {matched_after}", name(func))?
                }
                Event::RegFramePush { act, func, reg } => writeln!(f, "[{act}] rfpush {} {reg}", name(func))?,
                Event::RegFramePop { act, func, reg, slow, matched_after } => {
                    write!(f, "[{act}] rfpop {} {reg}", name(func))?;
                    if slow {
                        write!(f, " slow matched_after {matched_after}")?;
                    }
                    writeln!(f)?
                }
                Event::Corrupt { act, func, depth, applied } => {
                    writeln!(f, "[{act}] corrupt {} depth {depth}{}", name(func), if applied { "" } else { " (no frame)" })?
                }
                Event::Unwind { act, func, frames } => writeln!(f, "[{act}] unwind {} {frames}", name(func))?,
                Event::Abort { act, func, block, index } => writeln!(f, "[{act}] abort {}.b{block}:{index}", name(func))?,
                Event::Halt { act, func } => writeln!(f, "[{act}] halt {}", name(func))?,
            }
        }
        let c = self.counters;
        writeln!(f, "instructions {} shadow {} memory {}", c.instructions, c.shadow_instructions, c.memory_accesses)
    }
}
