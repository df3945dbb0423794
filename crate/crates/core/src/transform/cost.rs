use std::ops::{Add, AddAssign, Mul};

use serde::Serialize;

use crate::mir::Instr;

/// Executed machine instructions and memory accesses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Cost {
    pub instrs: u64,
    pub mem: u64,
}

impl Cost {
    pub const fn new(instrs: u64, mem: u64) -> Cost {
        Cost { instrs, mem }
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost::new(self.instrs + o.instrs, self.mem + o.mem)
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

impl Mul<u64> for Cost {
    type Output = Cost;
    fn mul(self, k: u64) -> Cost {
        Cost::new(self.instrs * k, self.mem * k)
    }
}

/// Shadow push with scratch registers saved and restored around it.
pub const PUSH: Cost = Cost::new(9, 6);
/// Shadow push using two dead registers as scratch.
pub const PUSH_DEAD_SCRATCH: Cost = Cost::new(5, 4);
/// Shadow pop whose first comparison matches.
pub const POP: Cost = Cost::new(11, 6);
/// Each further shadow entry examined by the pop loop.
pub const POP_UNWIND_STEP: Cost = Cost::new(8, 4);
/// Reaching the guard word and calling abort.
pub const ABORT: Cost = Cost::new(3, 1);
pub const RF_PUSH: Cost = Cost::new(2, 2);
pub const RF_POP: Cost = Cost::new(3, 1);
/// Scratch save/restore when a register-frame pop falls back to the shadow
/// stack walk.
pub const RF_POP_SLOW: Cost = Cost::new(5, 5);
/// The extra branch of a transition-edge block.
pub const TRANSITION: Cost = Cost::new(1, 0);

/// Fast-path cost of a shadow pseudo-instruction; zero for anything else.
pub fn shadow_cost(ins: &Instr) -> Cost {
    match ins {
        Instr::SPush { dead_scratch: false, .. } => PUSH,
        Instr::SPush { dead_scratch: true, .. } => PUSH_DEAD_SCRATCH,
        Instr::SPop => POP,
        Instr::RfPush(_) => RF_PUSH,
        Instr::RfPop(_) => RF_POP,
        _ => Cost::default(),
    }
}
