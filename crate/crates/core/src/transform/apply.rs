use std::collections::BTreeMap;

use serde::Serialize;

use super::{inline_calls, FunctionPlan, InstrumentationPlan, Mode, PlanKind, TransformError, CLONE_OFFSET};
use crate::mir::{fingerprint, validate_program, Block, BlockId, Function, Instr, Program};

/// Position of an instruction in the program that was instrumented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Origin {
    pub block: BlockId,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct InstrumentedProgram {
    pub program: Program,
    /// The program after inlining and before any shadow instruction was
    /// added; analyses of this program describe `program`.
    pub source: Program,
    pub mode: Mode,
    pub plan: InstrumentationPlan,
    origins: BTreeMap<String, BTreeMap<BlockId, Vec<Option<Origin>>>>,
    block_origin: BTreeMap<String, BTreeMap<BlockId, Option<BlockId>>>,
}

impl InstrumentedProgram {
    /// Source position of instruction `i` of block `b`; `None` for shadow
    /// instructions and edge-block branches.
    pub fn origin(&self, f: &str, b: BlockId, i: usize) -> Option<Origin> {
        *self.origins.get(f)?.get(&b)?.get(i)?
    }

    /// Source block a block was copied from; `None` for blocks added by
    /// instrumentation.
    pub fn source_block(&self, f: &str, b: BlockId) -> Option<BlockId> {
        *self.block_origin.get(f)?.get(&b)?
    }

    pub fn is_clone(&self, f: &str, b: BlockId) -> bool {
        self.plan.kind(f) == Some(PlanKind::Lowered) && (CLONE_OFFSET..2 * CLONE_OFFSET).contains(&b)
    }

    /// Uninstrumented program wrapped as an `ELIDE-ALL` instrumentation.
    pub fn bare(p: &Program) -> InstrumentedProgram {
        apply_plan(p, &super::plan_for_mode(p, Mode::ElideAll), Mode::ElideAll).expect("empty plan always applies")
    }
}

type Body = Vec<(Instr, Option<Origin>)>;

fn source_body(b: &Block) -> Body {
    b.instrs.iter().enumerate().map(|(i, ins)| (ins.clone(), Some(Origin { block: b.id, index: i }))).collect()
}

fn before_ret(body: &mut Body, op: Instr) {
    if matches!(body.last(), Some((Instr::Ret, _))) {
        body.insert(body.len() - 1, (op, None));
    }
}

struct Built {
    entry: BlockId,
    blocks: BTreeMap<BlockId, (Body, Option<BlockId>)>,
}

fn entry_exit(f: &Function, push: Instr, index: usize, pop: Instr) -> Built {
    let mut blocks: BTreeMap<BlockId, (Body, Option<BlockId>)> =
        f.blocks.values().map(|b| (b.id, (source_body(b), Some(b.id)))).collect();
    for (body, _) in blocks.values_mut() {
        before_ret(body, pop.clone());
    }
    let looped = f.blocks.values().any(|b| b.successors().contains(&f.entry_block));
    let mut entry = f.entry_block;
    if looped {
        let id = f.blocks.keys().max().copied().unwrap_or(0) + 1;
        blocks.insert(id, (vec![(push, None), (Instr::Br(f.entry_block), None)], None));
        entry = id;
    } else {
        let (body, _) = blocks.get_mut(&f.entry_block).expect("entry block");
        body.insert(index, (push, None));
    }
    Built { entry, blocks }
}

fn materialize(f: &Function, plan: &FunctionPlan) -> Built {
    match plan.kind {
        PlanKind::Elided => Built {
            entry: f.entry_block,
            blocks: f.blocks.values().map(|b| (b.id, (source_body(b), Some(b.id)))).collect(),
        },
        PlanKind::FullEntryExit => {
            let p = plan.entry_push.expect("entry push of a full plan");
            entry_exit(f, Instr::SPush { height: p.height, dead_scratch: p.dead_scratch }, p.index, Instr::SPop)
        }
        PlanKind::RegFrame(r) => entry_exit(f, Instr::RfPush(r), 0, Instr::RfPop(r)),
        PlanKind::Lowered => {
            let region = plan.region.as_ref().expect("region of a lowered plan");
            let mut blocks = BTreeMap::new();
            for b in f.blocks.values().filter(|b| !region.pruned.contains(&b.id)) {
                let mut body = source_body(b);
                if let Some((last, _)) = body.last_mut() {
                    *last = last.map_targets(|t| {
                        region.transitions.iter().find(|x| x.from == b.id && x.to == t).map_or(t, |x| x.edge_block)
                    });
                }
                blocks.insert(b.id, (body, Some(b.id)));
            }
            for t in &region.transitions {
                let push = Instr::SPush { height: t.height, dead_scratch: t.dead_scratch };
                blocks.insert(t.edge_block, (vec![(push, None), (Instr::Br(t.clone), None)], None));
            }
            for (&orig, &clone) in &region.clones {
                let mut body = source_body(&f.blocks[&orig]);
                if let Some((last, _)) = body.last_mut() {
                    *last = last.map_targets(|x| x + CLONE_OFFSET);
                }
                before_ret(&mut body, Instr::SPop);
                blocks.insert(clone, (body, Some(orig)));
            }
            Built { entry: f.entry_block, blocks }
        }
    }
}

/// Materialize `plan` on `p`. The plan must have been made for `p` and `mode`.
pub fn apply_plan(p: &Program, plan: &InstrumentationPlan, mode: Mode) -> Result<InstrumentedProgram, TransformError> {
    if plan.mode != mode {
        return Err(TransformError::ModeMismatch { plan: plan.mode, requested: mode });
    }
    let found = fingerprint(p);
    if found != plan.program {
        return Err(TransformError::StalePlan { planned: plan.program, found });
    }
    let source = inline_calls(p, &plan.inlined_calls);
    let mut functions = Vec::new();
    let mut origins = BTreeMap::new();
    let mut block_origin = BTreeMap::new();
    for (name, f) in &source.functions {
        let fp = plan.functions.get(name).ok_or_else(|| TransformError::MissingFunction(name.clone()))?;
        let built = materialize(f, fp);
        let mut o = BTreeMap::new();
        let mut bo = BTreeMap::new();
        let mut blocks = Vec::new();
        for (id, (body, src)) in built.blocks {
            o.insert(id, body.iter().map(|(_, x)| *x).collect());
            bo.insert(id, src);
            blocks.push(Block::new(id, body.into_iter().map(|(i, _)| i).collect()));
        }
        functions.push(Function::new(name.clone(), built.entry, blocks));
        origins.insert(name.clone(), o);
        block_origin.insert(name.clone(), bo);
    }
    let mut program = Program::new(source.entry.clone(), functions);
    program.globals = source.globals.clone();
    program.adversarial = source.adversarial;
    let diags = validate_program(&program);
    if !diags.is_empty() {
        return Err(TransformError::Invalid(diags));
    }
    Ok(InstrumentedProgram { program, source, mode, plan: plan.clone(), origins, block_origin })
}

/// Plan and apply in one step.
pub fn instrument(p: &Program, mode: Mode) -> Result<InstrumentedProgram, TransformError> {
    apply_plan(p, &super::plan_for_mode(p, mode), mode)
}
