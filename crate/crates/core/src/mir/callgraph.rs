use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{Instr, Program};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CallGraph {
    pub nodes: BTreeSet<String>,
    pub direct_edges: BTreeSet<(String, String)>,
    pub has_indirect_call: BTreeSet<String>,
}

impl CallGraph {
    pub fn callees<'a>(&'a self, f: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.direct_edges.iter().filter(move |(a, _)| a == f).map(|(_, b)| b.as_str())
    }

    pub fn successors(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut m: BTreeMap<&str, Vec<&str>> = self.nodes.iter().map(|n| (n.as_str(), Vec::new())).collect();
        for (a, b) in &self.direct_edges {
            m.entry(a.as_str()).or_default().push(b.as_str());
        }
        m
    }

    /// Functions reachable from `f` through one or more direct-call edges.
    pub fn reachable_from(&self, f: &str) -> BTreeSet<String> {
        let succ = self.successors();
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = succ.get(f).cloned().unwrap_or_default();
        while let Some(g) = stack.pop() {
            if seen.insert(g.to_owned()) {
                stack.extend(succ.get(g).into_iter().flatten());
            }
        }
        seen
    }
}

pub fn build_call_graph(p: &Program) -> CallGraph {
    let mut g = CallGraph { nodes: p.functions.keys().cloned().collect(), ..CallGraph::default() };
    for f in p.functions.values() {
        for (_, _, ins) in f.instrs() {
            match ins {
                Instr::Call(callee) => {
                    g.direct_edges.insert((f.name.clone(), callee.clone()));
                }
                Instr::ICall(_) => {
                    g.has_indirect_call.insert(f.name.clone());
                }
                _ => {}
            }
        }
    }
    g
}

/// Number of `call` instructions, counting repeated sites separately.
pub fn direct_call_sites(p: &Program) -> usize {
    p.functions.values().flat_map(|f| f.instrs()).filter(|(_, _, i)| matches!(i, Instr::Call(_))).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::parse_program;

    #[test]
    fn isolated_and_mutual() {
        let g = build_call_graph(&parse_program("fn main { b0: halt }").unwrap());
        assert_eq!(g.nodes.len(), 1);
        assert!(g.direct_edges.is_empty());

        let g = build_call_graph(&parse_program("fn f { b0: call g ret }\nfn g { b0: call f ret }").unwrap());
        let want: BTreeSet<_> = [("f", "g"), ("g", "f")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        assert_eq!(g.direct_edges, want);
        assert!(g.reachable_from("f").contains("f"));
    }

    #[test]
    fn indirect_calls_recorded() {
        let g = build_call_graph(&parse_program("fn main { b0: movi r1, 0 icall r1 halt }").unwrap());
        assert!(g.has_indirect_call.contains("main"));
    }
}
