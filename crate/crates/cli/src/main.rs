use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use shadowlab_core::analysis::{classify_writes, WriteSummary};
use shadowlab_core::gen::{generate_corpus, generate_program, program_name, GenConfig};
use shadowlab_core::mir::{parse_program, validate_program, Program};
use shadowlab_core::report::{default_inputs, StatsReport};
use shadowlab_core::safety::analyze_program;
use shadowlab_core::shadowvm::{execute_observed, run_campaign, CampaignConfig, CampaignReport, Input, Outcome};
use shadowlab_core::transform::{count_safe_paths, instrument, Mode};
use shadowlab_core::write_atomic;

#[derive(Parser)]
#[command(name = "shadowlab", version, about = "Return-address safety analysis and shadow stack instrumentation for MIR programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print safety verdicts, write classification and instrumentation statistics.
    Analyze {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write an instrumented copy of a program.
    Instrument {
        file: PathBuf,
        #[arg(long, default_value = "LIGHT")]
        mode: Mode,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Execute a program on a decision sequence such as `0110`.
    Run {
        file: PathBuf,
        #[arg(long, default_value = "")]
        input: String,
        #[arg(long, default_value_t = 100_000)]
        budget: u64,
        /// Instrument before running; by default the file runs as written.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        json: bool,
    },
    /// Generate a seeded corpus of random programs.
    Gen {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        attack_density: f64,
        #[arg(long, default_value_t = 12)]
        max_functions: usize,
        #[arg(long, default_value_t = 8)]
        max_blocks: usize,
    },
    /// Generate a corpus, run it under every mode and check the invariants.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Run a single mode instead of all of them.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = 0.5)]
        attack_density: f64,
        #[arg(long, default_value_t = 8)]
        inputs: usize,
        #[arg(long, default_value_t = 20_000)]
        budget: u64,
        #[arg(long, default_value = "shadowlab-counterexamples")]
        counterexamples: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Statistics over every `.mir` file in a directory.
    Stats {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

/// `SHADOWLAB_SEED` takes precedence over `--seed`.
fn effective_seed(seed: u64) -> Result<u64> {
    match std::env::var("SHADOWLAB_SEED") {
        Ok(s) => s.trim().parse().with_context(|| format!("SHADOWLAB_SEED={s} is not an unsigned integer")),
        Err(_) => Ok(seed),
    }
}

fn load(path: &Path) -> Result<Program> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {file}"))?;
    let p = parse_program(&text).map_err(|e| anyhow!("{file}:{}: {}", e.line, e.message))?;
    let diags = validate_program(&p);
    if !diags.is_empty() {
        let lines: Vec<String> = diags.iter().map(|d| d.render(&file, &text)).collect();
        bail!("{}", lines.join("\n"));
    }
    Ok(p)
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn analyze(file: &Path, as_json: bool) -> Result<()> {
    let p = load(file)?;
    let (heights, safety) = analyze_program(&p);
    let mut writes = WriteSummary::default();
    for (name, f) in &p.functions {
        writes.merge(&classify_writes(f, &heights[name]).summary);
    }
    let stats = StatsReport::of(std::slice::from_ref(&p), &default_inputs());
    let paths: serde_json::Map<String, serde_json::Value> =
        p.functions.iter().map(|(n, f)| (n.clone(), json!(count_safe_paths(f, &safety)))).collect();
    if as_json {
        let mut out = safety.to_json();
        out["writes"] = writes.to_json();
        out["safe_paths"] = serde_json::Value::Object(paths);
        out["stats"] = stats.to_json();
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    let verdicts = |safe: bool| -> Vec<&str> {
        p.functions.keys().filter(|n| safety.ra_safe_fn(n) == safe).map(String::as_str).collect()
    };
    println!("safe:   {}", verdicts(true).join(" "));
    println!("unsafe: {}", verdicts(false).join(" "));
    for (name, f) in &p.functions {
        let unsafe_blocks: Vec<String> =
            f.blocks.keys().filter(|&&b| !safety.ra_safe_block(name, b)).map(|b| format!("b{b}")).collect();
        if !unsafe_blocks.is_empty() {
            println!("  {name}: unsafe blocks {}; safe paths {}", unsafe_blocks.join(" "), count_safe_paths(f, &safety));
        }
    }
    print!("{stats}");
    Ok(())
}

fn run(file: &Path, input: &str, budget: u64, mode: Option<Mode>, as_json: bool) -> Result<()> {
    let p = load(file)?;
    let input = Input::parse(input).map_err(|e| anyhow!(e))?;
    let program = match mode {
        Some(m) => instrument(&p, m)?.program,
        None => p,
    };
    let (trace, outcome) = execute_observed(&program, &input, budget, &mut ());
    if as_json {
        println!("{}", serde_json::to_string_pretty(&json!({ "outcome": outcome, "trace": trace.to_json() }))?);
    } else {
        print!("{trace}");
        match &outcome {
            Outcome::Completed(out) => {
                println!("completed r0={}", out.r0);
                for (g, v) in &out.globals {
                    println!("  {g} = {v}");
                }
            }
            Outcome::Aborted { function, block, index } => println!("aborted at {function}.b{block}:{index}"),
            Outcome::UndetectedCorruption { function, target } => {
                println!("undetected corruption: {function} returned to {target:#x}")
            }
            Outcome::BudgetExhausted => println!("budget exhausted"),
            Outcome::Fault { reason } => println!("fault: {reason}"),
        }
    }
    Ok(())
}

fn gen(cfg: &GenConfig, count: usize, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for i in 0..count as u64 {
        let p = generate_program(cfg, i);
        write_out(&out.join(format!("{}.mir", program_name(i))), &p.to_string())?;
    }
    println!("wrote {count} programs to {}", out.display());
    Ok(())
}

/// Aggregate overhead must strictly fall along FULL, SFE, PO, LIGHT.
fn ratio_chain(r: &CampaignReport) -> Option<bool> {
    let chain = [Mode::Full, Mode::Sfe, Mode::Po, Mode::Light];
    let ratios: Option<Vec<f64>> = chain.iter().map(|m| r.per_mode.get(m).map(|s| s.overhead_ratio)).collect();
    ratios.map(|v| v.windows(2).all(|w| w[0] > w[1]))
}

fn verify(cfg: &GenConfig, count: usize, inputs: usize, mode: Option<Mode>, budget: u64, dir: PathBuf, as_json: bool) -> Result<bool> {
    let cases = generate_corpus(cfg, count, inputs);
    let modes = mode.map_or_else(|| Mode::ALL.to_vec(), |m| vec![m]);
    let control_only = modes == [Mode::ElideAll];
    let report = run_campaign(&cases, &CampaignConfig { modes, budget, counterexample_dir: Some(dir) });
    let chain = ratio_chain(&report);
    let control = report.per_mode.get(&Mode::ElideAll).map(|s| (s.attacked, s.undetected));
    if as_json {
        let mut j = report.to_json();
        j["overhead_chain_strict"] = json!(chain);
        println!("{}", serde_json::to_string_pretty(&j)?);
    } else {
        println!("programs {} executions {} attacked {}", report.programs, report.executions, report.cases);
        println!("detected {} undetected {} unobserved {}", report.detected, report.undetected, report.unobserved);
        for (m, s) in &report.per_mode {
            println!(
                "  {:<9} runs {:>6} attacked {:>5} detected {:>5} undetected {:>5} overhead {:.4}",
                m.name(),
                s.executions,
                s.attacked,
                s.detected,
                s.undetected,
                s.overhead_ratio
            );
        }
        println!("coverage:");
        for (k, v) in &report.coverage {
            println!("  {k} {v}");
        }
        for v in &report.violations {
            let at = v.trace_path.as_deref().map(|p| format!(" (trace {p})")).unwrap_or_default();
            println!("violation {:?} {} {} input {}: {}{at}", v.kind, v.mode, v.case, v.input, v.detail);
        }
    }
    if control_only {
        let (attacked, undetected) = control.unwrap_or((0, 0));
        println!("ELIDE-ALL control (expected to miss attacks): {undetected} undetected of {attacked} attacked");
        return Ok(undetected > 0);
    }
    let mut ok = report.total_violations() == 0;
    if chain == Some(false) {
        println!("aggregate overhead does not strictly decrease FULL > SFE > PO > LIGHT");
        ok = false;
    }
    if let Some((attacked, 0)) = control {
        if attacked > 0 {
            println!("ELIDE-ALL control observed no undetected corruption");
            ok = false;
        }
    }
    Ok(ok)
}

fn stats(dir: &Path, as_json: bool) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mir"))
        .collect();
    files.sort();
    let programs = files.iter().map(|f| load(f)).collect::<Result<Vec<_>>>()?;
    let r = StatsReport::of(&programs, &default_inputs());
    if as_json {
        println!("{}", serde_json::to_string_pretty(&r.to_json())?);
    } else {
        print!("{r}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { file, json } => analyze(&file, json).map(|_| true),
        Command::Instrument { file, mode, out } => load(&file)
            .and_then(|p| Ok(instrument(&p, mode)?))
            .and_then(|ip| write_out(&out, &ip.program.to_string()))
            .map(|_| true),
        Command::Run { file, input, budget, mode, json } => run(&file, &input, budget, mode, json).map(|_| true),
        Command::Gen { seed, count, out, attack_density, max_functions, max_blocks } => effective_seed(seed)
            .and_then(|seed| {
                let cfg = GenConfig { seed, attack_density, max_functions, max_blocks, ..GenConfig::default() };
                gen(&cfg, count, &out)
            })
            .map(|_| true),
        Command::Verify { seed, count, mode, attack_density, inputs, budget, counterexamples, json } => {
            effective_seed(seed).and_then(|seed| {
                let cfg = GenConfig { seed, attack_density, ..GenConfig::default() };
                verify(&cfg, count, inputs, mode, budget, counterexamples, json)
            })
        }
        Command::Stats { dir, json } => stats(&dir, json).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("{e:#}");
            ExitCode::from(2)
        }
    }
}
