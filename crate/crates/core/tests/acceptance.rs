//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{chaotic_safety, fixture};
use shadowlab_core::gen::{generate_corpus, generate_program, GenConfig};
use shadowlab_core::mir::{parse_program, Program};
use shadowlab_core::safety::{analyze_program, flow_block, SafetyValue};
use shadowlab_core::shadowvm::{
    check_run, execute, run_campaign, CampaignConfig, CampaignReport, CheckKind, Event, Input, Outcome, RunContext,
};
use shadowlab_core::transform::{count_safe_paths, instrument, InstrumentedProgram, Mode, CLONE_OFFSET, EDGE_BLOCK_BASE};

const CHAIN: [Mode; 4] = [Mode::Full, Mode::Sfe, Mode::Po, Mode::Light];

struct Outcomes {
    failed: usize,
}

impl Outcomes {
    fn report(&mut self, id: u32, name: &str, ok: bool, elapsed: Duration, limit: Duration, detail: String) {
        let ok = ok && elapsed <= limit;
        if !ok {
            self.failed += 1;
        }
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("{verdict} [{id}] {name}: {detail} ({:.2}s, limit {}s)", elapsed.as_secs_f64(), limit.as_secs());
    }
}

fn load(name: &str) -> Program {
    parse_program(&fixture(name)).unwrap()
}

fn names(s: &[&str]) -> BTreeSet<String> {
    s.iter().map(|x| x.to_string()).collect()
}

fn call_tree_verdicts() -> (bool, String) {
    let p = load("call_tree.mir");
    let (h, s) = analyze_program(&p);
    let safe: BTreeSet<String> = p.functions.keys().filter(|f| s.ra_safe_fn(f)).cloned().collect();
    let unsafe_: BTreeSet<String> = p.functions.keys().filter(|f| !s.ra_safe_fn(f)).cloned().collect();
    // c is unsafe only through its callee: its own writes alone leave it safe.
    let c = &p.functions["c"];
    let own = c.blocks.values().fold(SafetyValue::Bottom, |acc, b| acc.join(flow_block(b, &h["c"], acc, |_| SafetyValue::Bottom)));
    let ok = safe == names(&["b", "d", "e"]) && unsafe_ == names(&["a", "c", "f"]) && own.ra_safe();
    (ok, format!("safe {safe:?} unsafe {unsafe_:?}, c without callees safe = {}", own.ra_safe()))
}

fn lowering_golden() -> (bool, String) {
    let p = load("lowering.mir");
    let (_, s) = analyze_program(&p);
    let paths = count_safe_paths(&p.functions["g"], &s);
    let ip = instrument(&p, Mode::Po).unwrap();
    let g = &ip.program.functions["g"];
    let region = ip.plan.functions["g"].region.clone().unwrap();
    let edges: Vec<(u32, u32, i64)> = region.transitions.iter().map(|t| (t.from, t.to, t.height)).collect();
    let shadow_in = |b: u32| g.blocks[&b].instrs.iter().filter(|i| i.is_shadow()).count();
    let originals_clean = g.blocks.keys().filter(|&&b| b < CLONE_OFFSET).all(|&b| shadow_in(b) == 0);
    let edge_ok = g.blocks[&EDGE_BLOCK_BASE].instrs
        == [shadowlab_core::mir::Instr::SPush { height: -16, dead_scratch: false }, shadowlab_core::mir::Instr::Br(4 + CLONE_OFFSET)];
    let pops_ok = region.pop_sites == BTreeSet::from([6 + CLONE_OFFSET, 7 + CLONE_OFFSET])
        && region.pop_sites.iter().all(|&b| shadow_in(b) == 1);
    let ok = paths == 2 && edges == [(3, 4, -16)] && edge_ok && pops_ok && originals_clean;
    (ok, format!("transitions {edges:?}, pops {:?}, originals clean {originals_clean}, safe paths {paths}", region.pop_sites))
}

fn oracle_equivalence() -> (bool, String) {
    let cfg = GenConfig { seed: 1, max_functions: 12, ..GenConfig::default() };
    let mut mismatches = 0;
    let mut functions = 0;
    for i in 0..1000 {
        let p = generate_program(&cfg, i);
        functions += p.functions.len();
        let (_, s) = analyze_program(&p);
        let c = chaotic_safety(&p);
        if s.block_values != c.blocks || s.fn_values != c.functions {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("1000 programs, {functions} functions, {mismatches} mismatches"))
}

fn soundness(r: &CampaignReport) -> (bool, String) {
    let stats = |m: Mode| r.per_mode.get(&m).cloned().unwrap_or_default();
    let attacked: usize = CHAIN.iter().map(|&m| stats(m).attacked).sum();
    let detected: usize = CHAIN.iter().map(|&m| stats(m).detected).sum();
    let undetected: usize = CHAIN.iter().map(|&m| stats(m).undetected).sum();
    let unobserved: usize = CHAIN.iter().map(|&m| stats(m).unobserved).sum();
    let rate = detected as f64 / (detected + undetected).max(1) as f64;
    let control = stats(Mode::ElideAll);
    let ok = detected + undetected >= 10_000 && undetected == 0 && detected > 0 && rate == 1.0 && control.undetected > 0;
    (
        ok,
        format!(
            "{attacked} attacked executions ({unobserved} with a target frame that never returned), {detected} detected, {undetected} undetected, rate {:.2}%; ELIDE-ALL undetected {} of {}",
            100.0 * rate,
            control.undetected,
            control.attacked
        ),
    )
}

fn exactly_one_check(r: &CampaignReport) -> (bool, String) {
    let v = r.violations_of(CheckKind::ExactlyOneCheck) + r.violations_of(CheckKind::SafeWalk);
    let ok = v == 0 && r.lowered.lowered_unsafe > 0 && r.lowered.lowered_safe_only > 0;
    (
        ok,
        format!(
            "{} lowered activations through unsafe blocks, {} safe-only, {v} violations",
            r.lowered.lowered_unsafe, r.lowered.lowered_safe_only
        ),
    )
}

fn monotonicity(r: &CampaignReport) -> (bool, String) {
    let v = r.violations_of(CheckKind::Monotonicity);
    let ratios: Vec<f64> = CHAIN.iter().map(|m| r.per_mode[m].overhead_ratio).collect();
    let strict = ratios.windows(2).all(|w| w[0] > w[1]);
    let shown: Vec<String> = CHAIN.iter().zip(&ratios).map(|(m, x)| format!("{m} {x:.4}")).collect();
    (v == 0 && strict, format!("{v} per-trace violations; ratios {}", shown.join(" > ")))
}

fn transparency(benign: &[shadowlab_core::shadowvm::CampaignCase], r: &CampaignReport, budget: u64) -> (bool, String) {
    let pairs: usize = benign
        .iter()
        .map(|c| {
            let bare = InstrumentedProgram::bare(&c.program);
            c.inputs.iter().filter(|i| matches!(execute(&bare, i, budget).1, Outcome::Completed(_))).count()
        })
        .sum();
    let mismatches = r.violations_of(CheckKind::Transparency) + r.violations_of(CheckKind::SpuriousAbort);
    let inlined = r.coverage.get("LIGHT/inlined-call").copied().unwrap_or(0);
    let ok = pairs >= 1000 && mismatches == 0 && inlined > 0 && r.per_mode.len() == Mode::ALL.len();
    (ok, format!("{pairs} benign pairs x {} modes, {inlined} inlined calls, {mismatches} mismatches", r.per_mode.len()))
}

fn height_soundness(r: &CampaignReport) -> (bool, String) {
    let v = r.violations_of(CheckKind::HeightSoundness);
    (v == 0 && r.lowered.concrete_stores > 0, format!("{} concrete-height stores, {v} violations", r.lowered.concrete_stores))
}

fn unwind_path() -> (bool, String) {
    let mut seen = Vec::new();
    let mut ok = true;
    for k in 1..=3usize {
        let ip = instrument(&load(&format!("unwind_{k}.mir")), Mode::Full).unwrap();
        let (t, o) = execute(&ip, &Input::default(), 1000);
        let matched: Vec<usize> = t
            .events
            .iter()
            .filter_map(|e| match e {
                Event::ShadowPop { matched_after, .. } => Some(*matched_after),
                _ => None,
            })
            .collect();
        let findings = check_run(&RunContext::new(&ip), &Input::default(), 1000, None).findings;
        ok &= matches!(o, Outcome::Completed(_)) && matched.first() == Some(&k) && findings.is_empty();
        seen.push(format!("k={k}: matched_after {:?} {}", matched.first(), o.label()));
    }
    (ok, seen.join(", "))
}

fn main() -> ExitCode {
    let mut out = Outcomes { failed: 0 };
    let budget = CampaignConfig::default().budget;

    let t = Instant::now();
    let (ok, d) = call_tree_verdicts();
    out.report(1, "call-tree verdicts", ok, t.elapsed(), Duration::from_secs(1), d);

    let t = Instant::now();
    let (ok, d) = lowering_golden();
    out.report(2, "lowering golden", ok, t.elapsed(), Duration::from_secs(1), d);

    let t = Instant::now();
    let (ok, d) = oracle_equivalence();
    out.report(3, "oracle equivalence", ok, t.elapsed(), Duration::from_secs(60), d);

    let t = Instant::now();
    let attack_cfg = GenConfig { seed: 2024, attack_density: 0.5, ..GenConfig::default() };
    let cases = generate_corpus(&attack_cfg, 1000, 48);
    let campaign = run_campaign(&cases, &CampaignConfig::default());
    let campaign_time = t.elapsed();
    let (ok, d) = soundness(&campaign);
    out.report(4, "validation soundness", ok, campaign_time, Duration::from_secs(300), d);

    let (ok, d) = exactly_one_check(&campaign);
    out.report(5, "exactly one check", ok, campaign_time, Duration::from_secs(300), d);

    let (ok, d) = monotonicity(&campaign);
    out.report(6, "shadow-op monotonicity", ok, campaign_time, Duration::from_secs(300), d);

    let t = Instant::now();
    let benign_cfg = GenConfig { seed: 77, attack_density: 0.0, ..GenConfig::default() };
    let benign = generate_corpus(&benign_cfg, 200, 8);
    let benign_report = run_campaign(&benign, &CampaignConfig::default());
    let (ok, d) = transparency(&benign, &benign_report, budget);
    let ok = ok && campaign.violations_of(CheckKind::Transparency) == 0;
    out.report(7, "behavioral transparency", ok, t.elapsed(), Duration::from_secs(300), d);

    let (ok, d) = height_soundness(&campaign);
    out.report(8, "height soundness", ok, campaign_time, Duration::from_secs(300), d);

    let t = Instant::now();
    let (ok, d) = unwind_path();
    out.report(9, "pop-unwind path", ok, t.elapsed(), Duration::from_secs(1), d);

    let other = campaign.total_violations() + benign_report.total_violations();
    if other > 0 {
        println!("other invariant violations: {:?}", campaign.violation_counts);
        for v in campaign.violations.iter().take(5) {
            println!("  {:?} {} {} input {}: {}", v.kind, v.mode, v.case, v.input, v.detail);
        }
    }
    println!("{} of 9 criteria failed", out.failed);
    if out.failed == 0 && other == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
