use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::machine::{execute_observed, Input, Observer, Outcome};
use super::trace::{Event, Trace};
use crate::analysis::HeightValue;
use crate::mir::{BlockId, Instr};
use crate::transform::{Analyses, InstrumentedProgram, Mode, PlanKind, EDGE_BLOCK_BASE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// A sound mode let a corrupted return address be used.
    Soundness,
    /// Instrumented outputs differ from the uninstrumented run.
    Transparency,
    /// A check fired although no return address was modified.
    SpuriousAbort,
    Fault,
    /// A lowered activation did not run exactly one push/pop pair when it
    /// reached an unsafe block, or ran shadow ops on a safe-only walk.
    ExactlyOneCheck,
    /// A lowered activation left the original blocks other than through a
    /// transition edge, or reached an unsafe original block.
    SafeWalk,
    /// Shadow entries were not pushed and popped in call order.
    OrderDiscipline,
    ShadowBalance,
    HeightSoundness,
    LivenessSoundness,
    Monotonicity,
    Instrument,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: CheckKind,
    pub mode: Mode,
    pub case: String,
    pub input: usize,
    pub detail: String,
    /// Saved trace, when the campaign keeps counterexamples.
    pub trace_path: Option<String>,
}

/// Per-instruction facts about an instrumented program, indexed by
/// function position, block and instruction.
struct FnFacts {
    name: String,
    kind: PlanKind,
    blocks: HashMap<BlockId, BlockFacts>,
}

#[derive(Default)]
struct BlockFacts {
    /// Safety of the source block; `None` for blocks added by instrumentation.
    unsafe_source: Option<bool>,
    is_clone: bool,
    dead: Vec<u16>,
    dest: Vec<HeightValue>,
    has_origin: Vec<bool>,
}

/// Everything the checks need about one instrumented program.
pub struct RunContext<'a> {
    pub ip: &'a InstrumentedProgram,
    facts: Vec<FnFacts>,
}

impl<'a> RunContext<'a> {
    pub fn new(ip: &'a InstrumentedProgram) -> RunContext<'a> {
        let a = Analyses::of(&ip.source);
        let mut facts = Vec::new();
        for (name, f) in &ip.program.functions {
            let heights = &a.heights[name];
            let live = &a.liveness[name];
            let mut blocks = HashMap::new();
            for (&id, b) in &f.blocks {
                let mut bf = BlockFacts {
                    unsafe_source: ip.source_block(name, id).map(|s| !a.safety.ra_safe_block(name, s)),
                    is_clone: ip.is_clone(name, id),
                    ..BlockFacts::default()
                };
                for i in 0..b.instrs.len() {
                    match ip.origin(name, id, i) {
                        Some(o) => {
                            bf.dead.push(live.dead_before(o.block, o.index));
                            bf.dest.push(heights.dest(o.block, o.index));
                            bf.has_origin.push(true);
                        }
                        None => {
                            bf.dead.push(0);
                            bf.dest.push(HeightValue::Top);
                            bf.has_origin.push(false);
                        }
                    }
                }
                blocks.insert(id, bf);
            }
            let kind = ip.plan.kind(name).unwrap_or(PlanKind::Elided);
            facts.push(FnFacts { name: name.clone(), kind, blocks });
        }
        RunContext { ip, facts }
    }

    pub fn mode(&self) -> Mode {
        self.ip.mode
    }
}

/// Lowered activations seen by [`check_run`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub lowered_unsafe: usize,
    pub lowered_safe_only: usize,
    pub concrete_stores: usize,
}

pub struct CheckedRun {
    pub trace: Trace,
    pub outcome: Outcome,
    pub findings: Vec<(CheckKind, String)>,
    pub stats: RunStats,
}

impl CheckedRun {
    /// A `corrupt` actually overwrote a return address.
    pub fn attacked(&self) -> bool {
        attacked(&self.trace)
    }
}

fn attacked(t: &Trace) -> bool {
    t.events.iter().any(|e| matches!(e, Event::Corrupt { applied: true, .. }))
}

/// Poison masks per activation: a set bit is a register whose current value
/// the analysis declared dead.
struct LivenessObserver<'c, 'a> {
    ctx: &'c RunContext<'a>,
    stack: Vec<u16>,
    unwinding: Option<u32>,
    findings: Vec<(CheckKind, String)>,
}

impl Observer for LivenessObserver<'_, '_> {
    fn instr(&mut self, func: usize, block: BlockId, index: usize, ins: &Instr) {
        if ins.is_shadow() || self.unwinding.is_some() {
            return;
        }
        let f = &self.ctx.facts[func];
        let bf = &f.blocks[&block];
        if !bf.has_origin[index] {
            return;
        }
        let top = self.stack.last_mut().expect("activation");
        let poison = *top | bf.dead[index];
        let bad = ins.uses() & poison;
        if bad != 0 && self.findings.len() < 8 {
            self.findings.push((
                CheckKind::LivenessSoundness,
                format!("{}.b{block}:{index} `{ins}` reads registers declared dead (mask {bad:#06x})", f.name),
            ));
        }
        *top = poison & !ins.defs();
    }

    fn event(&mut self, e: &Event) {
        match *e {
            Event::Call { .. } => self.stack.push(0),
            Event::Unwind { frames, .. } => self.unwinding = Some(frames),
            Event::Ret { .. } => {
                let n = 1 + self.unwinding.take().unwrap_or(0) as usize;
                let keep = self.stack.len().saturating_sub(n).max(1);
                self.stack.truncate(keep);
            }
            _ => {}
        }
    }
}

#[derive(Default)]
struct Activation {
    func: usize,
    /// Blocks and shadow ops in execution order.
    steps: Vec<Step>,
    returned: bool,
    push_depth: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Block(BlockId),
    Push,
    Pop,
}

/// Execute one input and check every per-run property. `bare` is the
/// outcome of the uninstrumented program on the same input.
pub fn check_run(ctx: &RunContext<'_>, input: &Input, budget: u64, bare: Option<&Outcome>) -> CheckedRun {
    let mut obs = LivenessObserver { ctx, stack: vec![0], unwinding: None, findings: Vec::new() };
    let (trace, outcome) = execute_observed(&ctx.ip.program, input, budget, &mut obs);
    let mut findings = obs.findings;
    let mut stats = RunStats::default();
    let mode = ctx.mode();
    let attacked = attacked(&trace);

    match &outcome {
        Outcome::UndetectedCorruption { function, target } if mode != Mode::ElideAll => findings
            .push((CheckKind::Soundness, format!("ret from {function} used corrupted return address {target:#x}"))),
        Outcome::Aborted { function, block, index } if !attacked => {
            findings.push((CheckKind::SpuriousAbort, format!("abort at {function}.b{block}:{index} without an attack")))
        }
        Outcome::Fault { reason } => findings.push((CheckKind::Fault, reason.clone())),
        _ => {}
    }
    if let Some(b @ Outcome::Completed(_)) = bare {
        if &outcome != b {
            findings.push((CheckKind::Transparency, format!("uninstrumented {b:?}, instrumented {outcome:?}")));
        }
    }

    // Activation records, and the activations touched by an unwind.
    let mut acts: HashMap<u64, Activation> = HashMap::new();
    let mut stack: Vec<u64> = vec![1];
    let mut unwound: BTreeSet<u64> = BTreeSet::new();
    let mut entry = Activation::default();
    if let Some(Event::Block { func, .. }) = trace.events.first() {
        entry.func = *func;
    }
    acts.insert(1, entry);
    let mut pending_unwind = None;
    for e in &trace.events {
        match *e {
            Event::Call { callee, callee_act, .. } => {
                acts.insert(callee_act, Activation { func: callee, ..Activation::default() });
                stack.push(callee_act);
            }
            Event::Block { act, block, .. } => acts.get_mut(&act).expect("act").steps.push(Step::Block(block)),
            Event::ShadowPush { act, depth, .. } => {
                let a = acts.get_mut(&act).expect("act");
                a.steps.push(Step::Push);
                a.push_depth.push(depth);
            }
            Event::ShadowPop { act, depth, matched_after, .. } => {
                let a = acts.get_mut(&act).expect("act");
                a.steps.push(Step::Pop);
                if !attacked && pending_unwind.is_none() && !unwound.contains(&act) {
                    match a.push_depth.pop() {
                        Some(d) if d == depth + 1 && matched_after == 0 => {}
                        Some(d) => findings.push((
                            CheckKind::OrderDiscipline,
                            format!("pop in activation {act} left depth {depth} (pushed at {d}), matched after {matched_after}"),
                        )),
                        None => findings.push((CheckKind::OrderDiscipline, format!("pop without push in activation {act}"))),
                    }
                }
            }
            Event::RegFramePop { act, slow: true, .. } if !attacked && pending_unwind.is_none() => {
                findings.push((CheckKind::OrderDiscipline, format!("register-frame slow path in activation {act} without an attack")))
            }
            Event::Unwind { frames, .. } => pending_unwind = Some(frames as usize),
            Event::Ret { frame_act, corrupted, .. } => {
                if let Some(k) = pending_unwind.take() {
                    let n = stack.len();
                    unwound.extend(stack[n.saturating_sub(k + 1)..].iter().copied());
                    stack.truncate(n.saturating_sub(k + 1));
                } else {
                    stack.pop();
                    if !corrupted {
                        acts.get_mut(&frame_act).expect("act").returned = true;
                    }
                }
            }
            Event::Store { func, block, index, height: Some(rt), .. } => {
                let bf = &ctx.facts[func].blocks[&block];
                if let HeightValue::Concrete(n) = bf.dest[index] {
                    stats.concrete_stores += 1;
                    if n != rt {
                        findings.push((
                            CheckKind::HeightSoundness,
                            format!("{}.b{block}:{index} analyzed height {n}, runtime height {rt}", ctx.facts[func].name),
                        ));
                    }
                }
            }
            _ => {}
        }
    }

    // Entries still owed by activations that never returned (a `halt`).
    if matches!(outcome, Outcome::Completed(_)) && !attacked && unwound.is_empty() {
        let owed: usize = stack
            .iter()
            .map(|act| {
                let s = &acts[act].steps;
                s.iter().filter(|x| **x == Step::Push).count() - s.iter().filter(|x| **x == Step::Pop).count()
            })
            .sum();
        if trace.final_shadow_depth != owed {
            findings.push((
                CheckKind::ShadowBalance,
                format!("{} shadow entries at completion, {owed} owed by live activations", trace.final_shadow_depth),
            ));
        }
    }

    for (&act, a) in &acts {
        let f = &ctx.facts[a.func];
        if f.kind != PlanKind::Lowered || !a.returned || unwound.contains(&act) {
            continue;
        }
        let visited_unsafe =
            a.steps.iter().any(|s| matches!(s, Step::Block(b) if f.blocks[b].unsafe_source == Some(true)));
        let pushes = a.steps.iter().filter(|s| **s == Step::Push).count();
        let pops = a.steps.iter().filter(|s| **s == Step::Pop).count();
        if visited_unsafe {
            stats.lowered_unsafe += 1;
            let first_push = a.steps.iter().position(|s| *s == Step::Push);
            let first_pop = a.steps.iter().position(|s| *s == Step::Pop);
            if pushes != 1 || pops != 1 || first_push > first_pop {
                findings.push((
                    CheckKind::ExactlyOneCheck,
                    format!("{} activation {act}: {pushes} pushes, {pops} pops on an unsafe walk", f.name),
                ));
            }
        } else {
            stats.lowered_safe_only += 1;
            if pushes + pops != 0 {
                findings.push((
                    CheckKind::ExactlyOneCheck,
                    format!("{} activation {act}: {} shadow ops on a safe-only walk", f.name, pushes + pops),
                ));
            }
        }
        if let Some(msg) = safe_walk(f, &a.steps) {
            findings.push((CheckKind::SafeWalk, format!("{} activation {act}: {msg}", f.name)));
        }
    }

    CheckedRun { trace, outcome, findings, stats }
}

/// Safe originals, then an edge block holding the push, then clones only.
fn safe_walk(f: &FnFacts, steps: &[Step]) -> Option<String> {
    let mut phase = 0;
    for s in steps {
        match (*s, phase) {
            (Step::Block(b), 0) if b >= EDGE_BLOCK_BASE => phase = 1,
            (Step::Block(b), 0) if f.blocks[&b].is_clone => return Some(format!("entered clone b{b} without a transition")),
            (Step::Block(b), 0) if f.blocks[&b].unsafe_source == Some(true) => {
                return Some(format!("reached unsafe original b{b}"))
            }
            (Step::Block(_), 0) => {}
            (Step::Push, 1) => phase = 2,
            (Step::Block(b), 2 | 3) if f.blocks[&b].is_clone => {}
            (Step::Block(b), _) => return Some(format!("left the cloned region at b{b}")),
            (Step::Pop, 2) => phase = 3,
            _ => return Some("shadow op out of place".into()),
        }
    }
    None
}
