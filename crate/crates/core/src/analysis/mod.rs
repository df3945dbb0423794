//! Intra-procedural analyses: stack heights, write classification and
//! register liveness.

mod classify;
mod heights;
mod liveness;

use std::collections::BTreeMap;

pub use classify::{class_of, classify_writes, WriteClass, WriteClassification, WriteSummary};
pub use heights::{stack_heights, HeightMap, HeightValue, InstrHeights, State};
pub use liveness::{dead_registers, LivenessMap};

use crate::mir::Program;

/// Heights for every function of a program.
pub fn program_heights(p: &Program) -> BTreeMap<String, HeightMap> {
    p.functions.iter().map(|(n, f)| (n.clone(), stack_heights(f))).collect()
}

pub fn program_liveness(p: &Program) -> BTreeMap<String, LivenessMap> {
    p.functions.iter().map(|(n, f)| (n.clone(), dead_registers(f))).collect()
}
