//! Seeded random programs for the campaign and the oracle tests.
//!
//! Programs are built from structured pieces (straight-line code, two-way
//! branches, do-while loops, stack-growing loops) so every block is
//! reachable and every benign execution terminates once its input runs out.
//! Register roles: r0..r10 carry data, r11 points into the caller's frame
//! for leaves that write through it, r12 holds a heap address, r13 an
//! indirect-call target and r14 a saved stack pointer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::mir::{Block, BlockId, Function, Instr, Program, Reg};
use crate::shadowvm::{CampaignCase, Input};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenConfig {
    pub seed: u64,
    /// Upper bound on functions per program, `main` included.
    pub max_functions: usize,
    pub max_blocks: usize,
    /// Upper bound on straight-line instructions emitted per run of code.
    pub max_instrs: usize,
    /// Fraction of programs that contain `corrupt`.
    pub attack_density: f64,
    pub leaf_fraction: f64,
    pub max_call_depth: usize,
    pub loop_probability: f64,
    /// Fraction of non-entry functions built from safe writes only.
    pub safe_fraction: f64,
    /// Fraction of unsafe functions whose unsafe writes sit off a safe path.
    pub safe_path_fraction: f64,
    pub recursion_probability: f64,
    pub indirect_call_probability: f64,
    /// Longest input decision sequence.
    pub max_decisions: usize,
}

impl Default for GenConfig {
    fn default() -> GenConfig {
        GenConfig {
            seed: 1,
            max_functions: 12,
            max_blocks: 8,
            max_instrs: 4,
            attack_density: 0.0,
            leaf_fraction: 0.3,
            max_call_depth: 6,
            loop_probability: 0.3,
            safe_fraction: 0.35,
            safe_path_fraction: 0.6,
            recursion_probability: 0.1,
            indirect_call_probability: 0.1,
            max_decisions: 16,
        }
    }
}

const HEAP_BASE: i64 = 0x1000;
const LEA: Reg = reg(11);
const HEAP: Reg = reg(12);
const TARGET: Reg = reg(13);
const SAVED_SP: Reg = reg(14);

const fn reg(i: u8) -> Reg {
    match Reg::new(i) {
        Some(r) => r,
        None => panic!("register index"),
    }
}

#[derive(Clone, Debug)]
struct FnShape {
    name: String,
    level: usize,
    safe: bool,
    leaf: bool,
    /// Single block, no calls: an inlining candidate.
    tiny: bool,
    /// Writes through r11, which its callers point into their own frame.
    uses_lea: bool,
}

struct Ctx<'a> {
    cfg: &'a GenConfig,
    rng: ChaCha8Rng,
    shapes: Vec<FnShape>,
    adversarial: bool,
    corrupts_left: usize,
    n_total: usize,
}

struct Builder {
    blocks: Vec<(BlockId, Vec<Instr>)>,
    cur: usize,
    frame: i64,
    saved: Vec<(Reg, i64)>,
    is_main: bool,
    /// Unsafe writes allowed in the current region.
    unsafe_ok: bool,
    unsafe_emitted: bool,
}

impl Builder {
    fn new_block(&mut self) -> usize {
        let id = self.blocks.len() as BlockId;
        self.blocks.push((id, Vec::new()));
        self.blocks.len() - 1
    }

    fn id(&self, i: usize) -> BlockId {
        self.blocks[i].0
    }

    fn emit(&mut self, ins: Instr) {
        self.blocks[self.cur].1.push(ins);
    }

    fn epilogue(&mut self) {
        for &(r, off) in &self.saved.clone() {
            self.emit(Instr::LoadSp { dst: r, off });
        }
        self.emit(Instr::SpAdd(self.frame));
        self.emit(if self.is_main { Instr::Halt } else { Instr::Ret });
    }
}

impl Ctx<'_> {
    fn data_reg(&mut self) -> Reg {
        reg(self.rng.gen_range(0..=10))
    }

    fn slot(&mut self, frame: i64) -> i64 {
        8 * self.rng.gen_range(0..frame / 8)
    }

    fn safe_op(&mut self, b: &mut Builder) {
        let r = self.data_reg();
        let ins = match self.rng.gen_range(0..7) {
            0 => Instr::MovI(r, self.rng.gen_range(-100..1000)),
            1 => Instr::MovR(r, self.data_reg()),
            2 => Instr::BinOp(r, self.data_reg()),
            3 => Instr::StoreSp { off: self.slot(b.frame), src: r },
            4 => Instr::LoadSp { dst: r, off: self.slot(b.frame) },
            5 => Instr::StoreGlobal { global: format!("g{}", self.rng.gen_range(0..4)), src: r },
            _ => Instr::LoadReg { dst: r, addr: HEAP },
        };
        b.emit(ins);
    }

    fn unsafe_op(&mut self, b: &mut Builder) {
        if self.adversarial && self.corrupts_left > 0 && self.rng.gen_bool(0.5) {
            self.corrupts_left -= 1;
            let depth = self.rng.gen_range(0..=3);
            let value = 0x4141_4141_0000 | self.rng.gen_range(1..0xffffu64);
            b.emit(Instr::Corrupt { depth, value });
        } else {
            b.emit(Instr::StoreReg { addr: HEAP, src: self.data_reg() });
        }
        b.unsafe_emitted = true;
    }

    fn straight(&mut self, b: &mut Builder, me: usize) {
        let n = self.rng.gen_range(1..=self.cfg.max_instrs);
        for _ in 0..n {
            match self.rng.gen_range(0..10) {
                0..=5 => self.safe_op(b),
                6 | 7 if b.unsafe_ok && !self.shapes[me].safe => self.unsafe_op(b),
                8 | 9 if !self.shapes[me].leaf => self.call(b, me, false),
                _ => self.safe_op(b),
            }
        }
    }

    fn callees(&self, me: usize) -> Vec<usize> {
        let s = &self.shapes[me];
        (0..self.shapes.len())
            .filter(|&j| self.shapes[j].level > s.level && (!s.safe || self.shapes[j].safe) && self.shapes[j].name != "main")
            .collect()
    }

    fn call(&mut self, b: &mut Builder, me: usize, recursive: bool) {
        if recursive {
            b.emit(Instr::Call(self.shapes[me].name.clone()));
            return;
        }
        let targets = self.callees(me);
        let Some(&t) = targets.choose(&mut self.rng) else {
            self.safe_op(b);
            return;
        };
        let indirect = !self.shapes[me].safe && self.rng.gen_bool(self.cfg.indirect_call_probability);
        let plain: Vec<usize> = targets.iter().copied().filter(|&j| !self.shapes[j].uses_lea).collect();
        if indirect && !plain.is_empty() {
            let t = *plain.choose(&mut self.rng).expect("nonempty");
            let n = self.n_total as i64;
            b.emit(Instr::MovI(TARGET, t as i64 + n * self.rng.gen_range(0..100)));
            b.emit(Instr::ICall(TARGET));
            return;
        }
        if self.shapes[t].uses_lea {
            let off = self.slot(b.frame);
            b.emit(Instr::LeaSp(LEA, off));
        }
        b.emit(Instr::Call(self.shapes[t].name.clone()));
    }

    /// Structured body of a multi-block function.
    fn body(&mut self, b: &mut Builder, me: usize) {
        let shape = self.shapes[me].clone();
        let needs_unsafe = !shape.safe && shape.name != "main";
        let off_path = needs_unsafe && self.rng.gen_bool(self.cfg.safe_path_fraction);
        // With no safe path the unsafe write goes in the entry block.
        b.unsafe_ok = !off_path;
        self.straight(b, me);
        if needs_unsafe && !off_path {
            self.unsafe_op(b);
        }
        let mut first = true;
        while b.blocks.len() + 3 <= self.cfg.max_blocks {
            let roll: f64 = self.rng.gen();
            if first && off_path {
                self.branch(b, me, true);
            } else if roll < self.cfg.loop_probability {
                self.looped(b, me);
            } else if roll < 0.8 {
                self.branch(b, me, false);
            } else {
                break;
            }
            first = false;
        }
        if off_path && !b.unsafe_emitted {
            b.unsafe_ok = true;
            self.unsafe_op(b);
        }
        b.unsafe_ok = true;
        self.straight(b, me);
        b.epilogue();
    }

    /// `brc then, else`; `then` may return early. With `taint` the unsafe
    /// write is placed in `then` only.
    fn branch(&mut self, b: &mut Builder, me: usize, taint: bool) {
        let shape = self.shapes[me].clone();
        let t = b.new_block();
        let j = b.new_block();
        let e = self.rng.gen_bool(0.5).then(|| b.new_block());
        let (tid, jid) = (b.id(t), b.id(j));
        b.emit(Instr::Brc(tid, e.map_or(jid, |e| b.id(e))));
        let outer = b.unsafe_ok;
        b.cur = t;
        b.unsafe_ok = outer || taint;
        if self.rng.gen_bool(self.cfg.recursion_probability) && !shape.tiny && shape.name != "main" {
            self.call(b, me, true);
        }
        self.straight(b, me);
        if taint {
            self.unsafe_op(b);
        }
        b.unsafe_ok = outer;
        if !shape.name.eq("main") && self.rng.gen_bool(0.25) {
            b.epilogue();
        } else {
            b.emit(Instr::Br(jid));
        }
        if let Some(e) = e {
            b.cur = e;
            self.straight(b, me);
            b.emit(Instr::Br(jid));
        }
        b.cur = j;
    }

    fn looped(&mut self, b: &mut Builder, me: usize) {
        let grow = !self.shapes[me].safe && b.unsafe_ok && self.rng.gen_bool(0.25);
        let l = b.new_block();
        let x = b.new_block();
        let (lid, xid) = (b.id(l), b.id(x));
        if grow {
            b.emit(Instr::LeaSp(SAVED_SP, 0));
        }
        b.emit(Instr::Br(lid));
        b.cur = l;
        if grow {
            b.emit(Instr::SpAdd(-8));
            b.emit(Instr::StoreSp { off: 0, src: self.data_reg() });
        } else {
            self.straight(b, me);
        }
        b.emit(Instr::Brc(lid, xid));
        b.cur = x;
        if grow {
            b.emit(Instr::SpMov(SAVED_SP));
        }
    }

    fn function(&mut self, me: usize) -> Function {
        let shape = self.shapes[me].clone();
        let frame = 8 * self.rng.gen_range(2..=4);
        let mut b = Builder {
            blocks: Vec::new(),
            cur: 0,
            frame,
            saved: Vec::new(),
            is_main: shape.name == "main",
            unsafe_ok: false,
            unsafe_emitted: false,
        };
        b.new_block();
        if b.is_main {
            b.emit(Instr::MovI(HEAP, HEAP_BASE));
        }
        b.emit(Instr::SpAdd(-frame));
        if shape.tiny {
            for _ in 0..self.rng.gen_range(1..=3) {
                let r = self.data_reg();
                let ins = match self.rng.gen_range(0..4) {
                    0 => Instr::MovI(r, self.rng.gen_range(0..100)),
                    1 => Instr::BinOp(r, self.data_reg()),
                    2 => Instr::StoreSp { off: self.slot(frame), src: r },
                    _ => Instr::StoreGlobal { global: format!("g{}", self.rng.gen_range(0..4)), src: r },
                };
                b.emit(ins);
            }
            if shape.uses_lea {
                b.emit(Instr::StoreReg { addr: LEA, src: self.data_reg() });
            } else if !shape.safe {
                self.unsafe_op(&mut b);
            }
            b.epilogue();
        } else {
            if !b.is_main && self.rng.gen_bool(0.3) {
                // Save two registers, then reuse them.
                let mut regs: Vec<u8> = (1..=10).collect();
                regs.shuffle(&mut self.rng);
                for (k, &r) in regs[..2].iter().enumerate() {
                    let off = 8 * k as i64;
                    b.emit(Instr::StoreSp { off, src: reg(r) });
                    b.saved.push((reg(r), off));
                }
                for &r in &regs[..2] {
                    b.emit(Instr::MovI(reg(r), self.rng.gen_range(0..100)));
                }
            }
            // Every slot is written before anything can read it, so loads
            // never observe stale stack contents.
            for off in (b.saved.len() as i64 * 8..frame).step_by(8) {
                b.emit(Instr::StoreSp { off, src: Reg::R0 });
            }
            self.body(&mut b, me);
        }
        Function::new(shape.name, 0, b.blocks.into_iter().map(|(id, ins)| Block::new(id, ins)))
    }
}

fn rng_for(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(2).wrapping_add(stream));
    rng
}

/// Program `index` of the corpus for `cfg.seed`; independent of corpus size.
pub fn generate_program(cfg: &GenConfig, index: u64) -> Program {
    let mut rng = rng_for(cfg.seed, index, 0);
    let n = rng.gen_range(2..=cfg.max_functions.max(2));
    let adversarial = cfg.attack_density > 0.0 && rng.gen_bool(cfg.attack_density.min(1.0));
    let others = n - 1;
    let n_safe = (cfg.safe_fraction * others as f64).round() as usize;
    let mut order: Vec<usize> = (0..others).collect();
    order.shuffle(&mut rng);
    let mut shapes: Vec<FnShape> = (0..others)
        .map(|i| {
            let leaf = rng.gen_bool(cfg.leaf_fraction);
            let tiny = leaf && rng.gen_bool(0.5);
            let safe = order[i] < n_safe;
            FnShape {
                name: format!("f{i:02}"),
                level: rng.gen_range(1..=cfg.max_call_depth.max(1)),
                safe,
                leaf,
                tiny,
                uses_lea: tiny && !safe && rng.gen_bool(0.6),
            }
        })
        .collect();
    shapes.push(FnShape { name: "main".into(), level: 0, safe: false, leaf: false, tiny: false, uses_lea: false });
    let mut ctx = Ctx {
        cfg,
        rng,
        shapes,
        adversarial,
        corrupts_left: if adversarial { 2 } else { 0 },
        n_total: n,
    };
    let mut functions: Vec<Function> = (0..n).map(|i| ctx.function(i)).collect();
    if adversarial && ctx.corrupts_left == 2 {
        // Make sure at least one corrupt site exists.
        let unsafe_fns: Vec<usize> = (0..others).filter(|&i| !ctx.shapes[i].safe).collect();
        let i = unsafe_fns.choose(&mut ctx.rng).copied().unwrap_or(n - 1);
        let depth = ctx.rng.gen_range(0..=3);
        let f = &mut functions[i];
        let entry = f.blocks.get_mut(&0).expect("entry block");
        entry.instrs.insert(1, Instr::Corrupt { depth, value: 0x4141_4141_0000 | (depth as u64 + 1) });
    }
    let mut p = Program::new("main", functions);
    p.adversarial = adversarial;
    p.refresh_globals();
    p
}

/// Input decision sequences for program `index`.
pub fn generate_inputs(cfg: &GenConfig, index: u64, count: usize) -> Vec<Input> {
    let mut rng = rng_for(cfg.seed, index, 1);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(0..=cfg.max_decisions);
            Input::decisions((0..len).map(|_| rng.gen_bool(0.5)))
        })
        .collect()
}

pub fn program_name(index: u64) -> String {
    format!("prog_{index:04}")
}

pub fn generate_corpus(cfg: &GenConfig, count: usize, inputs_per_program: usize) -> Vec<CampaignCase> {
    (0..count as u64)
        .map(|i| CampaignCase {
            name: program_name(i),
            program: generate_program(cfg, i),
            inputs: generate_inputs(cfg, i, inputs_per_program),
        })
        .collect()
}
