//! Function instrumentation and write classification statistics.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use serde_json::json;

use crate::analysis::{classify_writes, program_heights, WriteSummary};
use crate::mir::Program;
use crate::shadowvm::{execute, Input};
use crate::transform::{instrument, plan_for_mode, Mode, PlanKind};

/// Share of functions per plan kind under `LIGHT`. The kinds are disjoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FunctionCounts {
    pub total: usize,
    /// Elided as RA-safe.
    pub sfe: usize,
    /// Lowered onto the paths through unsafe blocks.
    pub spe: usize,
    pub rf: usize,
    /// Entry/exit instrumentation, possibly with a chased push.
    pub full: usize,
}

impl FunctionCounts {
    fn pct(&self, n: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.total as f64
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "sfe_pct": self.pct(self.sfe),
            "spe_pct": self.pct(self.spe),
            "rf_pct": self.pct(self.rf),
            "total": self.total,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ModeOverhead {
    pub shadow_instr: u64,
    pub total_instr: u64,
    pub overhead_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StatsReport {
    pub programs: usize,
    pub functions: FunctionCounts,
    pub writes: WriteSummary,
    pub overhead: BTreeMap<Mode, ModeOverhead>,
}

/// Decision sequences used to measure overhead when no inputs are given.
pub fn default_inputs() -> Vec<Input> {
    ["", "1", "01", "11", "101", "0110", "1101", "111011"]
        .iter()
        .map(|s| Input::parse(s).expect("literal input"))
        .collect()
}

pub const STATS_BUDGET: u64 = 20_000;

impl StatsReport {
    pub fn add_program(&mut self, p: &Program, inputs: &[Input]) {
        self.programs += 1;
        let plan = plan_for_mode(p, Mode::Light);
        for fp in plan.functions.values() {
            self.functions.total += 1;
            match fp.kind {
                PlanKind::Elided => self.functions.sfe += 1,
                PlanKind::Lowered => self.functions.spe += 1,
                PlanKind::RegFrame(_) => self.functions.rf += 1,
                PlanKind::FullEntryExit => self.functions.full += 1,
            }
        }
        let heights = program_heights(p);
        for (name, f) in &p.functions {
            self.writes.merge(&classify_writes(f, &heights[name]).summary);
        }
        for mode in Mode::SOUND {
            let Ok(ip) = instrument(p, mode) else { continue };
            let o = self.overhead.entry(mode).or_default();
            for input in inputs {
                let (t, _) = execute(&ip, input, STATS_BUDGET);
                o.shadow_instr += t.counters.shadow_instructions;
                o.total_instr += t.counters.instructions;
            }
            o.overhead_ratio = if o.total_instr == 0 { 0.0 } else { o.shadow_instr as f64 / o.total_instr as f64 };
        }
    }

    pub fn of(programs: &[Program], inputs: &[Input]) -> StatsReport {
        let mut r = StatsReport::default();
        for p in programs {
            r.add_program(p, inputs);
        }
        r
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "programs": self.programs,
            "functions": self.functions.to_json(),
            "writes": self.writes.to_json(),
            "overhead": self.overhead.iter().map(|(m, o)| (m.name().to_owned(), json!(o))).collect::<serde_json::Map<_, _>>(),
        })
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fc = &self.functions;
        writeln!(f, "functions ({} programs)", self.programs)?;
        writeln!(f, "  {:>8} {:>8} {:>8} {:>8}", "SFE%", "SPE%", "RF%", "total")?;
        writeln!(f, "  {:>8.2} {:>8.2} {:>8.2} {:>8}", fc.pct(fc.sfe), fc.pct(fc.spe), fc.pct(fc.rf), fc.total)?;
        let w = self.writes;
        let pct = |n: usize| if w.total() == 0 { 0.0 } else { 100.0 * n as f64 / w.total() as f64 };
        writeln!(f, "writes")?;
        writeln!(f, "  {:>8} {:>8} {:>8} {:>8}", "Stack%", "Global%", "Unsafe%", "total")?;
        writeln!(f, "  {:>8.2} {:>8.2} {:>8.2} {:>8}", pct(w.stack), pct(w.global), pct(w.unsafe_), w.total())?;
        writeln!(f, "overhead (shadow / total instructions)")?;
        for (m, o) in &self.overhead {
            writeln!(f, "  {:<6} {:.4}  ({} / {})", m.name(), o.overhead_ratio, o.shadow_instr, o.total_instr)?;
        }
        Ok(())
    }
}
