use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use super::checks::{check_run, CheckKind, RunContext, RunStats, Violation};
use super::machine::{execute, Input, Outcome};
use crate::mir::Program;
use crate::transform::{instrument, InstrumentedProgram, Mode, PlanKind};

#[derive(Clone, Debug)]
pub struct CampaignCase {
    pub name: String,
    pub program: Program,
    pub inputs: Vec<Input>,
}

#[derive(Clone, Debug)]
pub struct CampaignConfig {
    pub modes: Vec<Mode>,
    /// Non-shadow instruction budget per execution.
    pub budget: u64,
    /// Where traces of violating runs are written.
    pub counterexample_dir: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> CampaignConfig {
        CampaignConfig { modes: Mode::ALL.to_vec(), budget: 20_000, counterexample_dir: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ModeStats {
    pub executions: usize,
    /// Executions in which a `corrupt` overwrote a return address.
    pub attacked: usize,
    pub detected: usize,
    pub undetected: usize,
    /// Attacked executions whose corrupted frame never returned.
    pub unobserved: usize,
    pub completed: usize,
    pub shadow_instr: u64,
    pub total_instr: u64,
    pub overhead_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CampaignReport {
    /// Attacked executions under the sound modes.
    pub cases: usize,
    pub detected: usize,
    pub undetected: usize,
    pub unobserved: usize,
    pub detection_rate: Option<f64>,
    pub programs: usize,
    pub executions: usize,
    /// Unattacked runs compared against a completed uninstrumented run.
    pub transparency_checked: usize,
    pub per_mode: BTreeMap<Mode, ModeStats>,
    pub lowered: RunStats,
    /// How often each plan kind and mechanism was exercised.
    pub coverage: BTreeMap<String, usize>,
    pub violation_counts: BTreeMap<CheckKind, usize>,
    /// The first violations found, with saved traces when configured.
    pub violations: Vec<Violation>,
}

const KEPT_VIOLATIONS: usize = 50;

impl CampaignReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn violations_of(&self, kind: CheckKind) -> usize {
        self.violation_counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn total_violations(&self) -> usize {
        self.violation_counts.values().sum()
    }

    fn record(&mut self, v: Violation) {
        *self.violation_counts.entry(v.kind).or_default() += 1;
        if self.violations.len() < KEPT_VIOLATIONS {
            self.violations.push(v);
        }
    }
}

fn save_counterexample(
    dir: &std::path::Path,
    case: &CampaignCase,
    ip: &InstrumentedProgram,
    input: usize,
    trace: &super::Trace,
    outcome: &Outcome,
) -> Option<String> {
    let path = dir.join(format!("{}-{}-{input}.trace", case.name, ip.mode));
    let mut text = String::new();
    let decisions: String = case.inputs[input].decisions.iter().map(|&d| if d { '1' } else { '0' }).collect();
    let _ = writeln!(text, "// input {decisions}\n// outcome {outcome:?}\n{}\n{trace}", ip.program);
    std::fs::create_dir_all(dir).ok()?;
    crate::write_atomic(&path, text.as_bytes()).ok()?;
    Some(path.display().to_string())
}

fn coverage(report: &mut CampaignReport, ip: &InstrumentedProgram) {
    let mut bump = |k: String, n: usize| *report.coverage.entry(k).or_default() += n;
    let m = ip.mode;
    for fp in ip.plan.functions.values() {
        let kind = match fp.kind {
            PlanKind::Elided => "elided",
            PlanKind::FullEntryExit => "full-entry-exit",
            PlanKind::Lowered => "lowered",
            PlanKind::RegFrame(_) => "reg-frame",
        };
        bump(format!("{m}/{kind}"), 1);
        if fp.chase.is_some() {
            bump(format!("{m}/chased-push"), 1);
        }
        let dead = fp.region.iter().flat_map(|r| &r.transitions).filter(|t| t.dead_scratch).count();
        if dead > 0 {
            bump(format!("{m}/dead-scratch-transition"), dead);
        }
    }
    if !ip.plan.inlined_calls.is_empty() {
        bump(format!("{m}/inlined-call"), ip.plan.inlined_calls.len());
    }
}

/// Run every case under every configured mode and check each run.
pub fn run_campaign(cases: &[CampaignCase], cfg: &CampaignConfig) -> CampaignReport {
    let mut report = CampaignReport { programs: cases.len(), ..CampaignReport::default() };
    for case in cases {
        let bare = InstrumentedProgram::bare(&case.program);
        let bare_outcomes: Vec<Outcome> = case.inputs.iter().map(|i| execute(&bare, i, cfg.budget).1).collect();
        // Shadow instruction counts of completed benign runs, per input.
        let mut shadow: Vec<BTreeMap<Mode, u64>> = vec![BTreeMap::new(); case.inputs.len()];
        for &mode in &cfg.modes {
            let ip = match instrument(&case.program, mode) {
                Ok(ip) => ip,
                Err(e) => {
                    report.record(Violation {
                        kind: CheckKind::Instrument,
                        mode,
                        case: case.name.clone(),
                        input: 0,
                        detail: e.to_string(),
                        trace_path: None,
                    });
                    continue;
                }
            };
            coverage(&mut report, &ip);
            let ctx = RunContext::new(&ip);
            for (n, input) in case.inputs.iter().enumerate() {
                let run = check_run(&ctx, input, cfg.budget, Some(&bare_outcomes[n]));
                report.executions += 1;
                let attacked = run.attacked();
                if matches!(bare_outcomes[n], Outcome::Completed(_)) && !attacked {
                    report.transparency_checked += 1;
                }
                let st = report.per_mode.entry(mode).or_default();
                st.executions += 1;
                st.shadow_instr += run.trace.counters.shadow_instructions;
                st.total_instr += run.trace.counters.instructions;
                match run.outcome {
                    Outcome::Completed(_) => st.completed += 1,
                    Outcome::Aborted { .. } if attacked => st.detected += 1,
                    Outcome::UndetectedCorruption { .. } => st.undetected += 1,
                    _ => {}
                }
                if attacked {
                    st.attacked += 1;
                    if !matches!(run.outcome, Outcome::Aborted { .. } | Outcome::UndetectedCorruption { .. }) {
                        st.unobserved += 1;
                    }
                }
                if matches!(run.outcome, Outcome::Completed(_)) && !attacked {
                    shadow[n].insert(mode, run.trace.counters.shadow_instructions);
                }
                if mode != Mode::ElideAll {
                    report.lowered.lowered_unsafe += run.stats.lowered_unsafe;
                    report.lowered.lowered_safe_only += run.stats.lowered_safe_only;
                    report.lowered.concrete_stores += run.stats.concrete_stores;
                }
                let mut saved = None;
                for (kind, detail) in &run.findings {
                    if saved.is_none() {
                        saved = cfg
                            .counterexample_dir
                            .as_deref()
                            .map(|d| save_counterexample(d, case, &ip, n, &run.trace, &run.outcome));
                    }
                    report.record(Violation {
                        kind: *kind,
                        mode,
                        case: case.name.clone(),
                        input: n,
                        detail: detail.clone(),
                        trace_path: saved.clone().flatten(),
                    });
                }
            }
        }
        for (n, counts) in shadow.iter().enumerate() {
            let chain = [Mode::Light, Mode::Po, Mode::Sfe, Mode::Full];
            let vals: Vec<(Mode, u64)> = chain.iter().filter_map(|m| counts.get(m).map(|&c| (*m, c))).collect();
            if vals.len() < chain.len() {
                continue;
            }
            if let Some(w) = vals.windows(2).find(|w| w[0].1 > w[1].1) {
                report.record(Violation {
                    kind: CheckKind::Monotonicity,
                    mode: w[0].0,
                    case: case.name.clone(),
                    input: n,
                    detail: format!("{} shadow {} > {} shadow {}", w[0].0, w[0].1, w[1].0, w[1].1),
                    trace_path: None,
                });
            }
        }
    }
    for (mode, st) in report.per_mode.iter_mut() {
        st.overhead_ratio = if st.total_instr == 0 { 0.0 } else { st.shadow_instr as f64 / st.total_instr as f64 };
        if *mode != Mode::ElideAll {
            report.cases += st.attacked;
            report.detected += st.detected;
            report.undetected += st.undetected;
            report.unobserved += st.unobserved;
        }
    }
    let decided = report.detected + report.undetected;
    report.detection_rate = (decided > 0).then(|| report.detected as f64 / decided as f64);
    report
}
