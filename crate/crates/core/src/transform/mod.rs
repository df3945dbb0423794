//! Instrumentation policy and mechanism.
//!
//! A plan is computed per mode by [`plan_for_mode`] and materialized by
//! [`apply_plan`]. Modes form a ladder: `FULL` instruments every function,
//! `SFE` skips RA-safe functions, `PO` additionally lowers instrumentation
//! onto the paths that reach unsafe blocks, `MO` is `FULL` plus register
//! frames, leaf inlining and dead-register chasing, and `LIGHT` is `PO` plus
//! the same mechanisms. `ELIDE-ALL` instruments nothing and exists only as a
//! negative control.

mod apply;
pub mod cost;
mod elision;
mod lower;
mod mechanism;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

pub use apply::{apply_plan, instrument, InstrumentedProgram, Origin};
pub use cost::Cost;
pub use elision::{count_safe_paths, safe_function_elision, SAFE_PATH_CAP};
pub use lower::{lower_instrumentation, ClonedRegion, LoweringFallback, Transition, CLONE_OFFSET, EDGE_BLOCK_BASE};
pub use mechanism::{chase_entry_push, inline_calls, inline_candidates, regframe_register, InlinedCall};

use crate::analysis::{program_heights, program_liveness, HeightMap, LivenessMap};
use crate::mir::{fingerprint, BlockId, Diagnostic, Program, Reg};
use crate::safety::{calculate_ra_safety, SafetyResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Mode {
    #[serde(rename = "FULL")]
    Full,
    #[serde(rename = "SFE")]
    Sfe,
    #[serde(rename = "PO")]
    Po,
    #[serde(rename = "MO")]
    Mo,
    #[serde(rename = "LIGHT")]
    Light,
    #[serde(rename = "ELIDE-ALL")]
    ElideAll,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::Full, Mode::Sfe, Mode::Po, Mode::Mo, Mode::Light, Mode::ElideAll];
    /// Modes that must detect every return-address corruption.
    pub const SOUND: [Mode; 5] = [Mode::Full, Mode::Sfe, Mode::Po, Mode::Mo, Mode::Light];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "FULL",
            Mode::Sfe => "SFE",
            Mode::Po => "PO",
            Mode::Mo => "MO",
            Mode::Light => "LIGHT",
            Mode::ElideAll => "ELIDE-ALL",
        }
    }

    fn elides_safe(self) -> bool {
        matches!(self, Mode::Sfe | Mode::Po | Mode::Light)
    }

    fn lowers(self) -> bool {
        matches!(self, Mode::Po | Mode::Light)
    }

    fn mechanisms(self) -> bool {
        matches!(self, Mode::Mo | Mode::Light)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Mode, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode `{s}` (expected FULL, SFE, PO, MO, LIGHT or ELIDE-ALL)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    Elided,
    FullEntryExit,
    Lowered,
    RegFrame(Reg),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Push,
    Pop,
    RegFramePush(Reg),
    RegFramePop(Reg),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Site {
    Entry,
    Edge(BlockId, BlockId),
    Exit(BlockId),
    At(BlockId, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ShadowOp {
    pub kind: OpKind,
    pub site: Site,
    /// Stack height where the op runs; the return address is at `sp - entry_height`.
    pub entry_height: i64,
    pub cost: Cost,
}

/// A push slid forward within the entry block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ChaseShift {
    pub from: Site,
    pub to: Site,
    /// Added to the offset used to fetch the return address.
    pub ra_adjust: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FunctionPlan {
    pub kind: PlanKind,
    pub ops: Vec<ShadowOp>,
    pub region: Option<ClonedRegion>,
    pub chase: Option<ChaseShift>,
    /// Entry push position and variant when the kind is `FullEntryExit`.
    #[serde(skip)]
    entry_push: Option<EntryPush>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct EntryPush {
    index: usize,
    height: i64,
    dead_scratch: bool,
}

impl FunctionPlan {
    fn elided() -> FunctionPlan {
        FunctionPlan { kind: PlanKind::Elided, ops: Vec::new(), region: None, chase: None, entry_push: None }
    }

    pub fn push_cost(&self) -> Cost {
        self.ops.iter().filter(|o| matches!(o.kind, OpKind::Push | OpKind::RegFramePush(_))).map(|o| o.cost).sum()
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InstrumentationPlan {
    pub mode: Mode,
    pub functions: BTreeMap<String, FunctionPlan>,
    pub inlined_calls: Vec<InlinedCall>,
    /// Fingerprint of the program the plan was made for.
    pub program: u64,
}

impl InstrumentationPlan {
    pub fn kind(&self, f: &str) -> Option<PlanKind> {
        self.functions.get(f).map(|p| p.kind)
    }

    pub fn count(&self, pred: impl Fn(PlanKind) -> bool) -> usize {
        self.functions.values().filter(|p| pred(p.kind)).count()
    }
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("plan was made for mode {plan}, not {requested}")]
    ModeMismatch { plan: Mode, requested: Mode },
    #[error("stale plan: program fingerprint {found:#018x} differs from planned {planned:#018x}")]
    StalePlan { planned: u64, found: u64 },
    #[error("plan does not cover function `{0}`")]
    MissingFunction(String),
    #[error("instrumented program is invalid: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

/// Analyses of the program a plan is made on.
#[derive(Clone, Debug)]
pub struct Analyses {
    pub heights: BTreeMap<String, HeightMap>,
    pub liveness: BTreeMap<String, LivenessMap>,
    pub safety: SafetyResult,
}

impl Analyses {
    pub fn of(p: &Program) -> Analyses {
        let heights = program_heights(p);
        let safety = calculate_ra_safety(p, &heights);
        Analyses { heights, liveness: program_liveness(p), safety }
    }
}

/// Plan instrumentation of `p` for `mode`. In `MO` and `LIGHT` eligible
/// calls are inlined first and every later decision is made on the inlined
/// program.
pub fn plan_for_mode(p: &Program, mode: Mode) -> InstrumentationPlan {
    let inlined_calls = if mode.mechanisms() { inline_candidates(p) } else { Vec::new() };
    let source = inline_calls(p, &inlined_calls);
    let a = Analyses::of(&source);
    let mut functions = BTreeMap::new();
    for (name, f) in &source.functions {
        let plan = if mode == Mode::ElideAll || (mode.elides_safe() && a.safety.ra_safe_fn(name)) {
            FunctionPlan::elided()
        } else {
            plan_function(f, &a, mode)
        };
        functions.insert(name.clone(), plan);
    }
    InstrumentationPlan { mode, functions, inlined_calls, program: fingerprint(p) }
}

fn plan_function(f: &crate::mir::Function, a: &Analyses, mode: Mode) -> FunctionPlan {
    let h = &a.heights[&f.name];
    let live = &a.liveness[&f.name];
    let mech = mode.mechanisms();
    if mode.lowers() && count_safe_paths(f, &a.safety) >= 1 {
        if let Ok(region) = lower_instrumentation(f, &a.safety, h, mech.then_some(live)) {
            let mut ops: Vec<ShadowOp> = region
                .transitions
                .iter()
                .map(|t| ShadowOp {
                    kind: OpKind::Push,
                    site: Site::Edge(t.from, t.to),
                    entry_height: t.height,
                    cost: if t.dead_scratch { cost::PUSH_DEAD_SCRATCH } else { cost::PUSH } + cost::TRANSITION,
                })
                .collect();
            ops.extend(region.pop_sites.iter().map(|&b| ShadowOp {
                kind: OpKind::Pop,
                site: Site::Exit(b),
                entry_height: 0,
                cost: cost::POP,
            }));
            return FunctionPlan { kind: PlanKind::Lowered, ops, region: Some(region), chase: None, entry_push: None };
        }
    }
    let exits = f.blocks.values().filter(|b| b.ends_in_ret()).map(|b| b.id);
    if mech {
        if let Some(r) = regframe_register(f) {
            let mut ops = vec![ShadowOp { kind: OpKind::RegFramePush(r), site: Site::Entry, entry_height: 0, cost: cost::RF_PUSH }];
            ops.extend(exits.map(|b| ShadowOp {
                kind: OpKind::RegFramePop(r),
                site: Site::Exit(b),
                entry_height: 0,
                cost: cost::RF_POP,
            }));
            return FunctionPlan { kind: PlanKind::RegFrame(r), ops, region: None, chase: None, entry_push: None };
        }
    }
    let push = if mech {
        chase_entry_push(f, h, live)
    } else {
        mechanism::EntryPlacement { index: 0, height: 0, dead_scratch: false }
    };
    let site = if push.index == 0 { Site::Entry } else { Site::At(f.entry_block, push.index) };
    let chase = (push.index > 0).then_some(ChaseShift { from: Site::Entry, to: site, ra_adjust: -push.height });
    let mut ops = vec![ShadowOp {
        kind: OpKind::Push,
        site,
        entry_height: push.height,
        cost: if push.dead_scratch { cost::PUSH_DEAD_SCRATCH } else { cost::PUSH },
    }];
    ops.extend(exits.map(|b| ShadowOp { kind: OpKind::Pop, site: Site::Exit(b), entry_height: 0, cost: cost::POP }));
    FunctionPlan {
        kind: PlanKind::FullEntryExit,
        ops,
        region: None,
        chase,
        entry_push: Some(EntryPush { index: push.index, height: push.height, dead_scratch: push.dead_scratch }),
    }
}
