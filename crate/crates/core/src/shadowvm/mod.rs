//! Interpreter for (instrumented) programs with a concrete call stack, a
//! shadow region, attack injection through `corrupt`, and event traces.

mod campaign;
mod checks;
mod machine;
mod trace;

pub use campaign::{run_campaign, CampaignCase, CampaignConfig, CampaignReport, ModeStats};
pub use checks::{check_run, CheckKind, CheckedRun, RunContext, RunStats, Violation};
pub use machine::{
    execute, execute_observed, Input, Observer, Outcome, Outputs, COOKIE_TAG, SENTINEL_COOKIE,
    SHADOW_CAPACITY, STACK_TOP,
};
pub use trace::{Counters, Event, Trace};
