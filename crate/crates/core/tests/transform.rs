mod common;

use std::collections::BTreeSet;

use common::fixture;
use proptest::prelude::*;
use shadowlab_core::gen::{generate_program, GenConfig};
use shadowlab_core::mir::{parse_program, Function, Instr, Program, Reg};
use shadowlab_core::safety::analyze_program;
use shadowlab_core::shadowvm::{execute, Event, Input, Outcome};
use shadowlab_core::transform::{
    apply_plan, count_safe_paths, instrument, plan_for_mode, regframe_register, safe_function_elision, ChaseShift, Cost,
    Mode, OpKind, PlanKind, Site, TransformError, CLONE_OFFSET, EDGE_BLOCK_BASE,
};

fn load(name: &str) -> Program {
    parse_program(&fixture(name)).unwrap()
}

fn names(list: &[&str]) -> BTreeSet<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn has_shadow(f: &Function) -> bool {
    f.instrs().any(|(_, _, i)| i.is_shadow())
}

fn shadow_ops(f: &Function, b: u32) -> Vec<Instr> {
    f.blocks[&b].instrs.iter().filter(|i| i.is_shadow()).cloned().collect()
}

#[test]
fn elision_sets() {
    let p = load("call_tree.mir");
    let (_, s) = analyze_program(&p);
    assert_eq!(safe_function_elision(&p, &s), names(&["a", "c", "f"]));

    let p = parse_program("fn main { b0: call f halt }\nfn f { b0: store.global g, r1 ret }").unwrap();
    let (_, s) = analyze_program(&p);
    assert!(safe_function_elision(&p, &s).is_empty());

    let p = parse_program("fn main { b0: icall r1 halt }\nfn f { b0: ret }").unwrap();
    let (_, s) = analyze_program(&p);
    assert!(safe_function_elision(&p, &s).contains("main"));
}

#[test]
fn safe_path_counts() {
    let p = load("lowering.mir");
    let (_, s) = analyze_program(&p);
    assert_eq!(count_safe_paths(&p.functions["g"], &s), 2);

    let p = parse_program("fn f { b0: store.reg r1, r2 br b1 b1: ret }\nfn h { b0: movi r1, 1 br b1 b1: br b2 b2: ret }").unwrap();
    let (_, s) = analyze_program(&p);
    assert_eq!(count_safe_paths(&p.functions["f"], &s), 0);
    assert_eq!(count_safe_paths(&p.functions["h"], &s), 1);
}

#[test]
fn lowering_golden() {
    let ip = instrument(&load("lowering.mir"), Mode::Po).unwrap();
    let g = &ip.program.functions["g"];
    assert_eq!(
        g.blocks[&EDGE_BLOCK_BASE].instrs,
        vec![Instr::SPush { height: -16, dead_scratch: false }, Instr::Br(4 + CLONE_OFFSET)]
    );
    assert_eq!(shadow_ops(g, 1006), vec![Instr::SPop]);
    assert_eq!(shadow_ops(g, 1007), vec![Instr::SPop]);
    for (&b, _) in g.blocks.iter().filter(|(&b, _)| b < CLONE_OFFSET) {
        assert!(shadow_ops(g, b).is_empty(), "original block b{b} holds a shadow op");
    }
    assert!(g.blocks[&3].instrs.contains(&Instr::Brc(EDGE_BLOCK_BASE, 5)));
    // b4 has no original predecessor left on the safe side.
    let region = ip.plan.functions["g"].region.as_ref().unwrap();
    assert!(region.pruned.contains(&4));
    assert_eq!(region.transitions.len(), 1);
}

#[test]
fn light_keeps_the_transition_push() {
    let ip = instrument(&load("lowering.mir"), Mode::Light).unwrap();
    let fp = &ip.plan.functions["g"];
    assert_eq!(fp.kind, PlanKind::Lowered);
    let t = fp.region.as_ref().unwrap().transitions[0];
    assert_eq!((t.from, t.to, t.height), (3, 4, -16));
    assert!(fp.ops.iter().any(|o| o.kind == OpKind::Push && o.site == Site::Edge(3, 4)));
}

#[test]
fn parallel_unsafe_branches() {
    // Plain diamond: no safe entry-to-exit path, so no lowering.
    let p = parse_program(
        "fn main { b0: call g halt }\nfn g { b0: brc b1, b2 b1: store.reg r12, r1 br b3 b2: store.reg r12, r2 br b3 b3: ret }",
    )
    .unwrap();
    assert_eq!(plan_for_mode(&p, Mode::Po).functions["g"].kind, PlanKind::FullEntryExit);

    let p = parse_program(
        "fn main { b0: call g halt }\n\
         fn g { b0: brc b1, b4 b1: brc b2, b3 b2: store.reg r12, r1 br b5 b3: store.reg r12, r2 br b5 b4: ret b5: ret }",
    )
    .unwrap();
    let ip = instrument(&p, Mode::Po).unwrap();
    let region = ip.plan.functions["g"].region.as_ref().unwrap();
    let edges: Vec<_> = region.transitions.iter().map(|t| (t.from, t.to)).collect();
    assert_eq!(edges, vec![(1, 2), (1, 3)]);
    let g = ip.program.function_index("g").unwrap();
    for (input, pushes) in [("0", 0), ("10", 1), ("11", 1)] {
        let (trace, outcome) = execute(&ip, &Input::parse(input).unwrap(), 1000);
        assert!(matches!(outcome, Outcome::Completed(_)), "{input}");
        let n = trace.events.iter().filter(|e| matches!(e, Event::ShadowPush { func, .. } if *func == g)).count();
        assert_eq!(n, pushes, "input {input}");
    }
}

#[test]
fn regframe_choice() {
    let p = parse_program(
        "fn main { b0: call leaf halt }\n\
         fn leaf { b0: movi r10, 1 movi r11, 2 movi r12, 3 movi r13, 4 movi r14, 5 movi r15, 6 store.reg r12, r1 ret }",
    )
    .unwrap();
    let nine = Reg::new(9).unwrap();
    assert_eq!(regframe_register(&p.functions["leaf"]), Some(nine));
    let plan = plan_for_mode(&p, Mode::Mo);
    let fp = &plan.functions["leaf"];
    assert_eq!(fp.kind, PlanKind::RegFrame(nine));
    assert_eq!(fp.push_cost(), Cost::new(2, 2));
    assert_eq!(regframe_register(&p.functions["main"]), None);
}

#[test]
fn chased_push() {
    let p = load("dead_regs.mir");
    let full = plan_for_mode(&p, Mode::Full);
    assert_eq!(full.functions["save"].push_cost(), Cost::new(9, 6));
    assert!(full.functions["save"].chase.is_none());

    let mo = plan_for_mode(&p, Mode::Mo);
    let fp = &mo.functions["save"];
    assert_eq!(fp.push_cost(), Cost::new(5, 4));
    assert_eq!(fp.chase, Some(ChaseShift { from: Site::Entry, to: Site::At(0, 3), ra_adjust: 16 }));
    let ip = instrument(&p, Mode::Mo).unwrap();
    assert_eq!(ip.program.functions["save"].blocks[&0].instrs[3], Instr::SPush { height: -16, dead_scratch: true });
}

#[test]
fn inlining_identity() {
    let p = parse_program("fn main { b0: movi r1, 7 call id halt }\nfn id { b0: movr r0, r1 ret }").unwrap();
    let ip = instrument(&p, Mode::Light).unwrap();
    assert_eq!(ip.plan.inlined_calls.len(), 1);
    let main = &ip.program.functions["main"].blocks[&0].instrs;
    let r1 = Reg::new(1).unwrap();
    assert!(main.contains(&Instr::MovR(Reg::R0, r1)));
    assert!(!main.iter().any(|i| matches!(i, Instr::Call(_))));
}

#[test]
fn full_and_sfe_on_call_tree() {
    let p = load("call_tree.mir");
    let full = instrument(&p, Mode::Full).unwrap();
    assert!(full.program.functions.values().all(has_shadow));
    let sfe = instrument(&p, Mode::Sfe).unwrap();
    let instrumented: BTreeSet<String> =
        sfe.program.functions.values().filter(|f| has_shadow(f)).map(|f| f.name.clone()).collect();
    assert_eq!(instrumented, names(&["a", "c", "f"]));
    let elide = instrument(&p, Mode::ElideAll).unwrap();
    assert!(!elide.program.functions.values().any(has_shadow));
}

#[test]
fn stale_and_mismatched_plans() {
    let p = load("call_tree.mir");
    let plan = plan_for_mode(&p, Mode::Light);
    let mut q = p.clone();
    q.functions.get_mut("e").unwrap().blocks.get_mut(&0).unwrap().instrs.insert(0, Instr::MovI(Reg::R0, 1));
    assert!(matches!(apply_plan(&q, &plan, Mode::Light), Err(TransformError::StalePlan { .. })));
    assert!(matches!(apply_plan(&p, &plan, Mode::Po), Err(TransformError::ModeMismatch { .. })));
    assert!(apply_plan(&p, &plan, Mode::Light).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lowered_functions_keep_originals_clean(seed in 0u64..1_000_000, index in 0u64..32) {
        let p = generate_program(&GenConfig { seed, ..GenConfig::default() }, index);
        for mode in [Mode::Po, Mode::Light] {
            let ip = instrument(&p, mode).unwrap();
            for (name, fp) in &ip.plan.functions {
                let Some(region) = &fp.region else { continue };
                let f = &ip.program.functions[name];
                for (&b, block) in &f.blocks {
                    if b < CLONE_OFFSET {
                        prop_assert!(!block.instrs.iter().any(Instr::is_shadow), "{} b{}", name, b);
                    } else if b >= EDGE_BLOCK_BASE {
                        prop_assert_eq!(block.instrs.len(), 2);
                        prop_assert!(matches!(block.instrs[0], Instr::SPush { .. }), "edge block b{}", b);
                    }
                }
                for &b in &region.pop_sites {
                    prop_assert_eq!(shadow_ops(f, b), vec![Instr::SPop]);
                }
            }
        }
    }

    #[test]
    fn sfe_instruments_exactly_the_unsafe(seed in 0u64..1_000_000, index in 0u64..32) {
        let p = generate_program(&GenConfig { seed, ..GenConfig::default() }, index);
        let (_, s) = analyze_program(&p);
        let ip = instrument(&p, Mode::Sfe).unwrap();
        let instrumented: BTreeSet<String> =
            ip.program.functions.values().filter(|f| has_shadow(f)).map(|f| f.name.clone()).collect();
        prop_assert_eq!(instrumented, safe_function_elision(&p, &s));
    }
}
