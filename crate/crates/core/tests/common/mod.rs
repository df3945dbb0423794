#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use shadowlab_core::analysis::{class_of, program_heights, WriteClass};
use shadowlab_core::mir::{BlockId, Instr, Program};
use shadowlab_core::safety::SafetyValue;

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// Safety by round-robin iteration over every block of every function until
/// nothing changes, with no call-graph ordering.
pub struct Chaotic {
    pub blocks: BTreeMap<(String, BlockId), SafetyValue>,
    pub functions: BTreeMap<String, SafetyValue>,
}

pub fn chaotic_safety(p: &Program) -> Chaotic {
    let heights = program_heights(p);
    let mut blocks: BTreeMap<(String, BlockId), SafetyValue> = BTreeMap::new();
    for f in p.functions.values() {
        for &b in f.blocks.keys() {
            blocks.insert((f.name.clone(), b), SafetyValue::Bottom);
        }
    }
    let fn_value = |blocks: &BTreeMap<(String, BlockId), SafetyValue>, g: &str| -> SafetyValue {
        if !p.functions.contains_key(g) {
            return SafetyValue::False;
        }
        blocks.iter().filter(|((f, _), _)| f == g).fold(SafetyValue::Bottom, |a, (_, v)| a.join(*v))
    };
    loop {
        let mut changed = false;
        for f in p.functions.values() {
            for (&b, block) in &f.blocks {
                let key = (f.name.clone(), b);
                let mut v = blocks[&key];
                for (i, ins) in block.instrs.iter().enumerate() {
                    if let Some(c) = class_of(ins, heights[&f.name].dest(b, i)) {
                        v = v.join(SafetyValue::from_bool(c != WriteClass::Unsafe));
                    }
                    match ins {
                        Instr::Call(g) => v = v.join(fn_value(&blocks, g)),
                        Instr::ICall(_) => v = v.join(SafetyValue::False),
                        _ => {}
                    }
                }
                if v != blocks[&key] {
                    blocks.insert(key, v);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let functions = p.functions.keys().map(|n| (n.clone(), fn_value(&blocks, n))).collect();
    Chaotic { blocks, functions }
}

/// Functions that can reach, through direct calls, a function containing an
/// unsafe write or an indirect call.
pub fn reachability_unsafe(p: &Program) -> BTreeSet<String> {
    let heights = program_heights(p);
    let mut bad: BTreeSet<String> = BTreeSet::new();
    for (name, f) in &p.functions {
        for (&b, block) in &f.blocks {
            for (i, ins) in block.instrs.iter().enumerate() {
                let unsafe_write = class_of(ins, heights[name].dest(b, i)) == Some(WriteClass::Unsafe);
                if unsafe_write || matches!(ins, Instr::ICall(_)) {
                    bad.insert(name.clone());
                }
            }
        }
    }
    loop {
        let before = bad.len();
        for (name, f) in &p.functions {
            let calls_bad = f.blocks.values().flat_map(|b| &b.instrs).any(|i| matches!(i, Instr::Call(g) if bad.contains(g)));
            if calls_bad {
                bad.insert(name.clone());
            }
        }
        if bad.len() == before {
            return bad;
        }
    }
}

/// Whether `from` reaches `to` through zero or more direct calls.
pub fn reaches(p: &Program, from: &str, to: &str) -> bool {
    let mut seen = BTreeSet::from([from.to_owned()]);
    let mut stack = vec![from.to_owned()];
    while let Some(f) = stack.pop() {
        if f == to {
            return true;
        }
        for ins in p.functions[&f].blocks.values().flat_map(|b| &b.instrs) {
            if let Instr::Call(g) = ins {
                if seen.insert(g.clone()) {
                    stack.push(g.clone());
                }
            }
        }
    }
    false
}
