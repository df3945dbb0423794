use shadowlab_core::mir::parse_program;
use shadowlab_core::shadowvm::{
    check_run, execute, run_campaign, CampaignCase, CampaignConfig, Event, Input, Outcome, RunContext,
};
use shadowlab_core::transform::{instrument, InstrumentedProgram, Mode};

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn pops(events: &[Event]) -> Vec<usize> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::ShadowPop { matched_after, .. } => Some(*matched_after),
            _ => None,
        })
        .collect()
}

#[test]
fn bare_call_tree_completes_without_shadow_work() {
    let p = parse_program(&fixture("call_tree.mir")).unwrap();
    let bare = InstrumentedProgram::bare(&p);
    for d in ["", "1", "11", "0101"] {
        let (t, o) = execute(&bare, &Input::parse(d).unwrap(), 1000);
        assert!(matches!(o, Outcome::Completed(_)), "{o:?}");
        assert_eq!(t.counters.shadow_instructions, 0);
        assert_eq!(t.shadow_ops(), 0);
    }
}

#[test]
fn full_catches_corruption_before_ret() {
    let p = parse_program("#adversarial true\nfn main { b0: call f halt }\nfn f { b0: corrupt 0, 0x41414141 ret }")
        .unwrap();
    let (_, o) = execute(&instrument(&p, Mode::Full).unwrap(), &Input::default(), 100);
    // spush, corrupt, spop
    assert_eq!(o, Outcome::Aborted { function: "f".into(), block: 0, index: 2 });
    let (_, o) = execute(&InstrumentedProgram::bare(&p), &Input::default(), 100);
    assert_eq!(o, Outcome::UndetectedCorruption { function: "f".into(), target: 0x41414141 });
}

#[test]
fn parent_frame_corruption_is_caught_in_the_ancestor() {
    let p = parse_program(
        "#adversarial true\nfn main { b0: call g halt }\nfn g { b0: call f ret }\nfn f { b0: corrupt 1, 0x4141 ret }",
    )
    .unwrap();
    let (t, o) = execute(&instrument(&p, Mode::Light).unwrap(), &Input::default(), 100);
    assert!(matches!(o, Outcome::Aborted { ref function, .. } if function == "g"), "{o:?}\n{t}");
}

#[test]
fn unwind_pops_k_stale_entries() {
    for k in 1..=3 {
        let p = parse_program(&fixture(&format!("unwind_{k}.mir"))).unwrap();
        let ip = instrument(&p, Mode::Full).unwrap();
        let (t, o) = execute(&ip, &Input::default(), 1000);
        assert!(matches!(o, Outcome::Completed(_)), "k={k}: {o:?}\n{t}");
        assert_eq!(pops(&t.events)[0], k, "k={k}\n{t}");
        assert!(pops(&t.events)[1..].iter().all(|&m| m == 0));
        let run = check_run(&RunContext::new(&ip), &Input::default(), 1000, None);
        assert!(run.findings.is_empty(), "{:?}", run.findings);
    }
}

#[test]
fn lowered_paths_of_fixture_b() {
    let p = parse_program(&fixture("lowering.mir")).unwrap();
    let ip = instrument(&p, Mode::Po).unwrap();
    let g = ip.program.function_index("g").unwrap();
    let in_g = |e: &&Event| e.is_shadow() && matches!(e, Event::ShadowPush { func, .. } | Event::ShadowPop { func, .. } if *func == g);
    // b1 -> b2 -> b3 -> b5 -> b6
    let (t, o) = execute(&ip, &Input::parse("1 0").unwrap(), 100);
    assert!(matches!(o, Outcome::Completed(_)));
    assert_eq!(t.events.iter().filter(in_g).count(), 0);
    // b1 -> b2 -> b3 -> b4' -> b7'
    let (t, o) = execute(&ip, &Input::parse("1 1 0").unwrap(), 100);
    assert!(matches!(o, Outcome::Completed(_)));
    let ops: Vec<_> = t.events.iter().filter(in_g).collect();
    assert_eq!(ops.len(), 2);
    assert!(matches!(ops[0], Event::ShadowPush { .. }));
    assert!(matches!(ops[1], Event::ShadowPop { matched_after: 0, .. }));
}

#[test]
fn register_frame_slow_path_finds_the_entry() {
    let p = parse_program("#adversarial true\nfn main { b0: call g halt }\nfn g { b0: call f ret }\nfn f { b0: corrupt 0, 7 ret }")
        .unwrap();
    let ip = instrument(&p, Mode::Mo).unwrap();
    assert!(ip.program.to_string().contains("rfpush"));
    let (t, o) = execute(&ip, &Input::default(), 100);
    assert!(matches!(o, Outcome::Aborted { ref function, .. } if function == "f"), "{o:?}\n{t}");
    assert!(t.events.iter().all(|e| !matches!(e, Event::RegFramePop { .. })));
}

#[test]
fn execution_is_deterministic() {
    let p = parse_program(&fixture("call_tree.mir")).unwrap();
    let ip = instrument(&p, Mode::Light).unwrap();
    let i = Input::parse("1101").unwrap();
    assert_eq!(execute(&ip, &i, 1000), execute(&ip, &i, 1000));
}

#[test]
fn budget_stops_loops() {
    let p = parse_program("fn main { b0: br b0 }").unwrap();
    let (t, o) = execute(&InstrumentedProgram::bare(&p), &Input::default(), 50);
    assert_eq!(o, Outcome::BudgetExhausted);
    assert_eq!(t.counters.instructions, 50);
}

#[test]
fn icall_dispatches_by_name_order() {
    let p = parse_program("fn a { b0: movi r0, 1 ret }\nfn b { b0: movi r0, 2 ret }\nfn main { b0: movi r1, 4 icall r1 halt }\n#entry main")
        .unwrap();
    let (_, o) = execute(&InstrumentedProgram::bare(&p), &Input::default(), 50);
    // 4 mod 3 = 1 -> b
    assert!(matches!(o, Outcome::Completed(ref out) if out.r0 == 2), "{o:?}");
}

#[test]
fn benign_campaign_has_no_aborts() {
    let cases: Vec<CampaignCase> = ["call_tree.mir", "lowering.mir", "dead_regs.mir"]
        .iter()
        .map(|f| CampaignCase {
            name: f.to_string(),
            program: parse_program(&fixture(f)).unwrap(),
            inputs: ["", "1", "10", "110", "1110", "0111"].iter().map(|s| Input::parse(s).unwrap()).collect(),
        })
        .collect();
    let r = run_campaign(&cases, &CampaignConfig::default());
    assert_eq!(r.total_violations(), 0, "{:#?}", r.violations);
    assert_eq!(r.cases, 0);
    assert_eq!(r.detection_rate, None);
    for st in r.per_mode.values() {
        assert_eq!(st.completed, st.executions);
    }
}
