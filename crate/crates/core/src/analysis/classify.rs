use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::json;

use super::HeightMap;
use crate::mir::{BlockId, Function, Instr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteClass {
    SafeStack,
    Global,
    Unsafe,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct WriteSummary {
    pub stack: usize,
    pub global: usize,
    pub unsafe_: usize,
}

impl WriteSummary {
    pub fn total(&self) -> usize {
        self.stack + self.global + self.unsafe_
    }

    pub fn add(&mut self, class: WriteClass) {
        match class {
            WriteClass::SafeStack => self.stack += 1,
            WriteClass::Global => self.global += 1,
            WriteClass::Unsafe => self.unsafe_ += 1,
        }
    }

    pub fn merge(&mut self, other: &WriteSummary) {
        self.stack += other.stack;
        self.global += other.global;
        self.unsafe_ += other.unsafe_;
    }

    fn pct(&self, n: usize) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * n as f64 / t as f64,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "stack_pct": self.pct(self.stack),
            "global_pct": self.pct(self.global),
            "unsafe_pct": self.pct(self.unsafe_),
            "total": self.total(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WriteClassification {
    pub classes: BTreeMap<(BlockId, usize), WriteClass>,
    pub summary: WriteSummary,
}

pub fn class_of(ins: &Instr, dest: super::HeightValue) -> Option<WriteClass> {
    match ins {
        Instr::StoreGlobal { .. } => Some(WriteClass::Global),
        i if i.is_store() => Some(if dest.is_safe() { WriteClass::SafeStack } else { WriteClass::Unsafe }),
        _ => None,
    }
}

pub fn classify_writes(f: &Function, h: &HeightMap) -> WriteClassification {
    let mut out = WriteClassification::default();
    for (b, i, ins) in f.instrs() {
        if let Some(class) = class_of(ins, h.dest(b, i)) {
            out.classes.insert((b, i), class);
            out.summary.add(class);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{stack_heights, HeightValue};
    use crate::mir::parse_program;

    #[test]
    fn boundary_cases() {
        let store = Instr::StoreSp { off: 0, src: crate::mir::Reg::R0 };
        assert_eq!(class_of(&store, HeightValue::Concrete(-8)), Some(WriteClass::SafeStack));
        assert_eq!(class_of(&store, HeightValue::Concrete(0)), Some(WriteClass::Unsafe));
        assert_eq!(class_of(&store, HeightValue::Concrete(16)), Some(WriteClass::Unsafe));
        assert_eq!(class_of(&store, HeightValue::Top), Some(WriteClass::Unsafe));
        assert_eq!(class_of(&Instr::Ret, HeightValue::Bottom), None);
    }

    #[test]
    fn summary_percentages() {
        let p = parse_program("fn main { b0: spadd -8 store.sp 0, r1 store.global g, r1 store.global g, r1 store.reg r2, r1 spadd 8 halt }")
            .unwrap();
        let f = &p.functions["main"];
        let c = classify_writes(f, &stack_heights(f));
        assert_eq!(c.summary, WriteSummary { stack: 1, global: 2, unsafe_: 1 });
        let j = c.summary.to_json();
        assert_eq!(j["global_pct"], 50.0);
        assert_eq!(j["total"], 4);
    }
}
