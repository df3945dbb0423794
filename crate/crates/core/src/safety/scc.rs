use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::mir::CallGraph;

/// Condensation of the call graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SccDag {
    pub components: Vec<BTreeSet<String>>,
    /// Caller component to callee component.
    pub edges: BTreeSet<(usize, usize)>,
    /// Callees before callers.
    pub postorder: Vec<usize>,
}

impl SccDag {
    pub fn component_of(&self, f: &str) -> Option<usize> {
        self.components.iter().position(|c| c.contains(f))
    }
}

struct Tarjan<'a> {
    succ: &'a [Vec<usize>],
    index: Vec<Option<usize>>,
    low: Vec<usize>,
    on_stack: Vec<bool>,
    stack: Vec<usize>,
    next: usize,
    out: Vec<Vec<usize>>,
}

impl Tarjan<'_> {
    fn visit(&mut self, v: usize) {
        self.index[v] = Some(self.next);
        self.low[v] = self.next;
        self.next += 1;
        self.stack.push(v);
        self.on_stack[v] = true;
        for &w in &self.succ[v] {
            match self.index[w] {
                None => {
                    self.visit(w);
                    self.low[v] = self.low[v].min(self.low[w]);
                }
                Some(iw) if self.on_stack[w] => self.low[v] = self.low[v].min(iw),
                Some(_) => {}
            }
        }
        if Some(self.low[v]) == self.index[v] {
            let mut comp = Vec::new();
            loop {
                let w = self.stack.pop().expect("tarjan stack");
                self.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            self.out.push(comp);
        }
    }
}

/// Strongly connected components of a graph on `0..n`.
pub fn tarjan(succ: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = succ.len();
    let mut t = Tarjan {
        succ,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if t.index[v].is_none() {
            t.visit(v);
        }
    }
    t.out
}

pub fn condense_sccs(g: &CallGraph) -> SccDag {
    let names: Vec<&String> = g.nodes.iter().collect();
    let idx: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut succ = vec![Vec::new(); names.len()];
    for (a, b) in &g.direct_edges {
        if let (Some(&i), Some(&j)) = (idx.get(a.as_str()), idx.get(b.as_str())) {
            succ[i].push(j);
        }
    }
    let mut components: Vec<BTreeSet<String>> = tarjan(&succ)
        .into_iter()
        .map(|c| c.into_iter().map(|i| names[i].clone()).collect())
        .collect();
    components.sort();
    let comp_of: BTreeMap<&str, usize> = components
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.iter().map(move |n| (n.as_str(), ci)))
        .collect();
    let edges: BTreeSet<(usize, usize)> = g
        .direct_edges
        .iter()
        .filter_map(|(a, b)| Some((*comp_of.get(a.as_str())?, *comp_of.get(b.as_str())?)))
        .filter(|(a, b)| a != b)
        .collect();

    // Peel sink layers; within a layer components are in name order.
    let mut remaining: BTreeSet<usize> = (0..components.len()).collect();
    let mut postorder = Vec::with_capacity(components.len());
    while !remaining.is_empty() {
        let layer: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&c| !edges.iter().any(|&(a, b)| a == c && remaining.contains(&b)))
            .collect();
        debug_assert!(!layer.is_empty(), "condensation must be acyclic");
        for c in &layer {
            remaining.remove(c);
        }
        postorder.extend(layer);
    }
    SccDag { components, edges, postorder }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::{build_call_graph, parse_program};

    fn dag(src: &str) -> SccDag {
        condense_sccs(&build_call_graph(&parse_program(src).unwrap()))
    }

    #[test]
    fn cycle_is_one_component() {
        let d = dag("fn f { b0: call g ret }\nfn g { b0: call f ret }");
        assert_eq!(d.components.len(), 1);
        assert_eq!(d.components[0].len(), 2);
        assert!(d.edges.is_empty());
    }

    #[test]
    fn single_function() {
        let d = dag("fn main { b0: halt }");
        assert_eq!(d.components.len(), 1);
        assert_eq!(d.postorder, vec![0]);
    }

    #[test]
    fn postorder_puts_callees_first() {
        let d = dag("fn a { b0: call b call c ret }\nfn b { b0: call c ret }\nfn c { b0: ret }");
        let order: Vec<&str> = d.postorder.iter().map(|&c| d.components[c].iter().next().unwrap().as_str()).collect();
        assert_eq!(order, vec!["c", "b", "a"]);
    }
}
