mod common;

use common::fixture;
use proptest::prelude::*;
use shadowlab_core::analysis::{classify_writes, dead_registers, stack_heights, HeightValue, WriteClass};
use shadowlab_core::gen::{generate_program, GenConfig};
use shadowlab_core::mir::{parse_program, Function, Reg};

fn func(text: &str, name: &str) -> Function {
    parse_program(text).unwrap().functions[name].clone()
}

#[test]
fn store_heights() {
    let f = func("fn f { b0: spadd -16 store.sp 8, r1 store.sp 16, r1 spadd 16 ret }", "f");
    let h = stack_heights(&f);
    assert_eq!(h.dest(0, 1), HeightValue::Concrete(-8));
    assert_eq!(h.dest(0, 2), HeightValue::Concrete(0));
    let c = classify_writes(&f, &h);
    assert_eq!(c.classes[&(0, 1)], WriteClass::SafeStack);
    assert_eq!(c.classes[&(0, 2)], WriteClass::Unsafe);
}

#[test]
fn growing_loop_is_top() {
    let f = func("fn f { b0: br b1 b1: spadd -8 store.sp 0, r1 brc b1, b2 b2: ret }", "f");
    let h = stack_heights(&f);
    assert_eq!(h.entry_sp(1), HeightValue::Top);
    assert_eq!(h.dest(1, 1), HeightValue::Top);
    assert_eq!(classify_writes(&f, &h).classes[&(1, 1)], WriteClass::Unsafe);
}

#[test]
fn register_addressed_stores() {
    let f = func(
        "fn f { b0: spadd -32 lea.sp r4, 8 store.reg r4, r1 movi r5, 7 store.reg r5, r1 store.global g, r1 spadd 32 ret }",
        "f",
    );
    let h = stack_heights(&f);
    assert_eq!(h.dest(0, 2), HeightValue::Concrete(-24));
    assert_eq!(h.dest(0, 4), HeightValue::Top);
    let s = classify_writes(&f, &h).summary;
    assert_eq!((s.stack, s.global, s.unsafe_), (1, 1, 1));
}

#[test]
fn liveness_examples() {
    let r1 = Reg::new(1).unwrap();
    let l = dead_registers(&func("fn f { b0: movi r1, 5 store.global g, r1 ret }", "f"));
    assert!(l.dead_registers(0, 2).contains(&r1));
    assert!(l.dead_registers(0, 0).contains(&r1));
    assert!(!l.dead_registers(0, 1).contains(&r1));

    let l = dead_registers(&func("fn f { b0: ret }", "f"));
    assert_eq!(l.dead_count(0, 0), 15);
}

#[test]
fn saved_registers_die_after_saves() {
    let p = parse_program(&fixture("dead_regs.mir")).unwrap();
    let l = dead_registers(&p.functions["save"]);
    assert_eq!(l.dead_count(0, 0), 0);
    assert_eq!(l.dead_registers(0, 3), vec![Reg::new(3).unwrap(), Reg::new(10).unwrap()]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn heights_are_a_fixpoint(seed in 0u64..1_000_000, index in 0u64..32) {
        let p = generate_program(&GenConfig { seed, ..GenConfig::default() }, index);
        for f in p.functions.values() {
            let h = stack_heights(f);
            prop_assert_eq!(&stack_heights(f), &h);
            for (&b, block) in &f.blocks {
                let Some(Some(mut s)) = h.block_entry.get(&b).copied() else { continue };
                for ins in &block.instrs {
                    s = s.step(ins);
                }
                for succ in block.successors() {
                    let e = h.block_entry[&succ].expect("successor of a reached block is reached");
                    prop_assert_eq!(e.merge(&s), e);
                }
            }
        }
    }

    #[test]
    fn liveness_is_a_fixpoint(seed in 0u64..1_000_000, index in 0u64..32) {
        let p = generate_program(&GenConfig { seed, ..GenConfig::default() }, index);
        for f in p.functions.values() {
            let l = dead_registers(f);
            for (&b, block) in &f.blocks {
                let v = &l.live_before[&b];
                let out = block.successors().iter().fold(0u16, |acc, s| acc | l.live_in[s]);
                prop_assert_eq!(v[block.instrs.len()], out);
                for (i, ins) in block.instrs.iter().enumerate() {
                    prop_assert_eq!(v[i], (v[i + 1] & !ins.defs()) | ins.uses());
                }
                prop_assert_eq!(v[0], l.live_in[&b]);
            }
        }
    }
}
