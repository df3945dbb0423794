//! Return-address safety: the `{Bottom, True, False, Top}` lattice, the block
//! and function flow functions, and the bottom-up fixpoint over the call
//! graph's strongly connected components.

mod scc;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use serde_json::{json, Map, Value};

pub use scc::{condense_sccs, tarjan, SccDag};

use crate::analysis::{class_of, HeightMap, WriteClass};
use crate::mir::{build_call_graph, Block, BlockId, Function, Instr, Program};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize)]
pub enum SafetyValue {
    #[default]
    Bottom,
    True,
    False,
    Top,
}

impl SafetyValue {
    pub fn join(self, other: SafetyValue) -> SafetyValue {
        use SafetyValue::*;
        match (self, other) {
            (Bottom, x) | (x, Bottom) => x,
            (a, b) if a == b => a,
            _ => Top,
        }
    }

    pub fn leq(self, other: SafetyValue) -> bool {
        self.join(other) == other
    }

    /// `(self ⊔ True) ⊑ True`.
    pub fn ra_safe(self) -> bool {
        self.join(SafetyValue::True).leq(SafetyValue::True)
    }

    pub fn from_bool(safe: bool) -> SafetyValue {
        if safe {
            SafetyValue::True
        } else {
            SafetyValue::False
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SafetyResult {
    pub block_values: BTreeMap<(String, BlockId), SafetyValue>,
    pub fn_values: BTreeMap<String, SafetyValue>,
}

impl SafetyResult {
    /// Starting state with every block and function at `Bottom`.
    pub fn bottom(p: &Program) -> SafetyResult {
        let mut r = SafetyResult::default();
        for f in p.functions.values() {
            r.fn_values.insert(f.name.clone(), SafetyValue::Bottom);
            for &b in f.blocks.keys() {
                r.block_values.insert((f.name.clone(), b), SafetyValue::Bottom);
            }
        }
        r
    }

    pub fn block(&self, f: &str, b: BlockId) -> SafetyValue {
        self.block_values.get(&(f.to_owned(), b)).copied().unwrap_or_default()
    }

    pub fn function(&self, f: &str) -> SafetyValue {
        self.fn_values.get(f).copied().unwrap_or_default()
    }

    pub fn ra_safe_fn(&self, f: &str) -> bool {
        self.function(f).ra_safe()
    }

    pub fn ra_safe_block(&self, f: &str, b: BlockId) -> bool {
        self.block(f, b).ra_safe()
    }

    pub fn blocks_of<'a>(&'a self, f: &'a str) -> impl Iterator<Item = (BlockId, SafetyValue)> + 'a {
        self.block_values.iter().filter(move |((g, _), _)| g == f).map(|((_, b), v)| (*b, *v))
    }

    /// Value a caller observes for a call to `g`: the function flow evaluated
    /// at the current block values. Unknown callees are unsafe.
    pub fn callee_value(&self, g: &str) -> SafetyValue {
        match self.fn_values.get(g) {
            None => SafetyValue::False,
            Some(&v) => self.blocks_of(g).fold(v, |acc, (_, b)| acc.join(b)),
        }
    }

    pub fn to_json(&self) -> Value {
        let verdict = |v: SafetyValue| Value::from(if v.ra_safe() { "safe" } else { "unsafe" });
        let functions: Map<String, Value> = self.fn_values.iter().map(|(f, v)| (f.clone(), verdict(*v))).collect();
        let blocks: Map<String, Value> =
            self.block_values.iter().map(|((f, b), v)| (format!("{f}.b{b}"), verdict(*v))).collect();
        json!({ "functions": functions, "blocks": blocks })
    }
}

/// Block flow: the incoming value joined with the safety of every write in the
/// block and with the value of every call target. Indirect calls join `False`.
pub fn flow_block(b: &Block, h: &HeightMap, d: SafetyValue, callee: impl Fn(&str) -> SafetyValue) -> SafetyValue {
    let mut v = d;
    for (i, ins) in b.instrs.iter().enumerate() {
        if let Some(class) = class_of(ins, h.dest(b.id, i)) {
            v = v.join(SafetyValue::from_bool(class != WriteClass::Unsafe));
        }
        match ins {
            Instr::Call(g) => v = v.join(callee(g)),
            Instr::ICall(_) => v = v.join(SafetyValue::False),
            _ => {}
        }
    }
    v
}

/// Function flow: the incoming value joined with every block value of `f`.
pub fn flow_function(f: &Function, d: SafetyValue, result: &SafetyResult) -> SafetyValue {
    f.blocks.keys().fold(d, |acc, &b| acc.join(result.block(&f.name, b)))
}

pub fn calculate_ra_safety(p: &Program, heights: &BTreeMap<String, HeightMap>) -> SafetyResult {
    let cg = build_call_graph(p);
    let dag = condense_sccs(&cg);
    let mut result = SafetyResult::bottom(p);
    let empty = HeightMap::default();

    for &ci in &dag.postorder {
        let comp = &dag.components[ci];
        // Call sites inside this component, keyed by callee.
        let mut sites: BTreeMap<&str, BTreeSet<(&str, BlockId)>> = BTreeMap::new();
        for fname in comp {
            for (b, _, ins) in p.functions[fname].instrs() {
                if let Instr::Call(g) = ins {
                    if comp.contains(g) {
                        sites.entry(g.as_str()).or_default().insert((fname.as_str(), b));
                    }
                }
            }
        }
        let mut work: VecDeque<(&str, BlockId)> =
            comp.iter().flat_map(|f| p.functions[f].blocks.keys().map(move |&b| (f.as_str(), b))).collect();
        let mut queued: BTreeSet<(&str, BlockId)> = work.iter().copied().collect();
        while let Some((fname, b)) = work.pop_front() {
            queued.remove(&(fname, b));
            let f = &p.functions[fname];
            let h = heights.get(fname).unwrap_or(&empty);
            let old = result.block(fname, b);
            let new = flow_block(&f.blocks[&b], h, old, |g| result.callee_value(g));
            if new != old {
                result.block_values.insert((fname.to_owned(), b), new);
                for &site in sites.get(fname).into_iter().flatten() {
                    if queued.insert(site) {
                        work.push_back(site);
                    }
                }
            }
        }
        for fname in comp {
            let v = flow_function(&p.functions[fname], result.function(fname), &result);
            result.fn_values.insert(fname.clone(), v);
        }
    }
    result
}

/// Safety of a whole program from scratch.
pub fn analyze_program(p: &Program) -> (BTreeMap<String, HeightMap>, SafetyResult) {
    let h = crate::analysis::program_heights(p);
    let s = calculate_ra_safety(p, &h);
    (h, s)
}
