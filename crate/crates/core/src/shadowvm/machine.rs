use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::trace::{Event, Trace};
use crate::mir::{BlockId, Instr, Program, Reg, WORD_SIZE};
use crate::transform::cost::{self, Cost};
use crate::transform::InstrumentedProgram;

/// One past the highest stack address.
pub const STACK_TOP: u64 = 0x7fff_ffff_0000;
const STACK_WORDS: u64 = 1 << 20;
pub const SHADOW_CAPACITY: usize = 4096;
/// High bits of every return cookie; the low bits number the call site.
pub const COOKIE_TAG: u64 = 0x5ca1_0000_0000_0000;
/// Return address of the entry function's frame.
pub const SENTINEL_COOKIE: u64 = COOKIE_TAG | 0xffff_ffff;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Input {
    pub decisions: Vec<bool>,
    pub regs: [u64; Reg::COUNT],
}

impl Input {
    pub fn decisions(d: impl IntoIterator<Item = bool>) -> Input {
        Input { decisions: d.into_iter().collect(), regs: [0; Reg::COUNT] }
    }

    /// `"1 0 1"`, `"101"` or `"1,0,1"`; also accepts `t`/`f`.
    pub fn parse(s: &str) -> Result<Input, String> {
        let mut d = Vec::new();
        for c in s.chars() {
            match c {
                '1' | 't' | 'T' => d.push(true),
                '0' | 'f' | 'F' => d.push(false),
                ',' | ' ' | '\t' | '\n' => {}
                other => return Err(format!("invalid decision `{other}` (expected 0 or 1)")),
            }
        }
        Ok(Input::decisions(d))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Outputs {
    pub r0: u64,
    pub globals: Vec<(String, u64)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Completed(Outputs),
    Aborted { function: String, block: BlockId, index: usize },
    UndetectedCorruption { function: String, target: u64 },
    BudgetExhausted,
    Fault { reason: String },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Completed(_) => "completed",
            Outcome::Aborted { .. } => "aborted",
            Outcome::UndetectedCorruption { .. } => "undetected-corruption",
            Outcome::BudgetExhausted => "budget-exhausted",
            Outcome::Fault { .. } => "fault",
        }
    }
}

/// Hooks called during execution.
pub trait Observer {
    /// Before each instruction executes.
    fn instr(&mut self, _func: usize, _block: BlockId, _index: usize, _ins: &Instr) {}
    fn event(&mut self, _e: &Event) {}
}

impl Observer for () {}

struct Frame {
    func: usize,
    act: u64,
    ra_slot: u64,
    cookie: u64,
    /// Caller position to resume at.
    resume: Option<(usize, usize, usize)>,
}

/// Block id to block index, blocks, entry index.
type FnCode<'p> = (HashMap<BlockId, usize>, Vec<(BlockId, &'p [Instr])>, usize);

struct Code<'p> {
    names: Vec<String>,
    blocks: Vec<FnCode<'p>>,
    by_name: HashMap<&'p str, usize>,
    sites: HashMap<(usize, usize, usize), u64>,
}

impl<'p> Code<'p> {
    fn new(p: &'p Program) -> Code<'p> {
        let mut names = Vec::new();
        let mut blocks = Vec::new();
        let mut by_name = HashMap::new();
        let mut sites = HashMap::new();
        for (fi, (name, f)) in p.functions.iter().enumerate() {
            names.push(name.clone());
            by_name.insert(name.as_str(), fi);
            let list: Vec<(BlockId, &[Instr])> = f.blocks.values().map(|b| (b.id, b.instrs.as_slice())).collect();
            let idx: HashMap<BlockId, usize> = list.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();
            for (bi, (_, instrs)) in list.iter().enumerate() {
                for (ii, ins) in instrs.iter().enumerate() {
                    if ins.is_call() {
                        let id = sites.len() as u64 + 1;
                        sites.insert((fi, bi, ii), COOKIE_TAG | id);
                    }
                }
            }
            let entry = idx[&f.entry_block];
            blocks.push((idx, list, entry));
        }
        Code { names, blocks, by_name, sites }
    }
}

struct Machine<'p, 'o> {
    code: Code<'p>,
    regs: [u64; Reg::COUNT],
    sp: u64,
    stack: Vec<u64>,
    heap: HashMap<u64, u64>,
    frames: Vec<Frame>,
    shadow: Vec<u64>,
    scratch: u64,
    globals: BTreeMap<String, u64>,
    global_log: Vec<(String, u64)>,
    decisions: std::vec::IntoIter<bool>,
    next_act: u64,
    act: u64,
    origin: u64,
    trace: Trace,
    obs: &'o mut dyn Observer,
}

enum Step {
    Next,
    Jump(usize),
    Resume(usize, usize, usize),
    Stop(Outcome),
}

impl Machine<'_, '_> {
    fn emit(&mut self, e: Event) {
        self.obs.event(&e);
        self.trace.events.push(e);
    }

    fn charge(&mut self, c: Cost) {
        self.trace.counters.instructions += c.instrs;
        self.trace.counters.shadow_instructions += c.instrs;
        self.trace.counters.memory_accesses += c.mem;
    }

    fn stack_index(&self, addr: u64) -> Option<usize> {
        let low = STACK_TOP - STACK_WORDS * WORD_SIZE as u64;
        (addr >= low && addr < STACK_TOP && addr.is_multiple_of(WORD_SIZE as u64))
            .then(|| ((STACK_TOP - WORD_SIZE as u64 - addr) / WORD_SIZE as u64) as usize)
    }

    fn load(&mut self, addr: u64) -> u64 {
        self.trace.counters.memory_accesses += 1;
        self.peek(addr)
    }

    fn peek(&self, addr: u64) -> u64 {
        match self.stack_index(addr) {
            Some(i) => self.stack.get(i).copied().unwrap_or(0),
            None => self.heap.get(&addr).copied().unwrap_or(0),
        }
    }

    fn poke(&mut self, addr: u64, v: u64) {
        match self.stack_index(addr) {
            Some(i) => {
                if i >= self.stack.len() {
                    self.stack.resize(i + 1, 0);
                }
                self.stack[i] = v;
            }
            None => {
                self.heap.insert(addr, v);
            }
        }
    }

    fn store(&mut self, addr: u64, v: u64) {
        self.trace.counters.memory_accesses += 1;
        self.poke(addr, v);
    }

    fn reg(&self, r: Reg) -> u64 {
        self.regs[r.index()]
    }

    fn set(&mut self, r: Reg, v: u64) {
        self.regs[r.index()] = v;
    }

    fn sp_offset(&self, off: i64) -> u64 {
        self.sp.wrapping_add(off as u64)
    }

    fn set_sp(&mut self, v: u64) -> Result<(), Outcome> {
        let low = STACK_TOP - STACK_WORDS * WORD_SIZE as u64;
        if v > STACK_TOP || v < low {
            return Err(Outcome::Fault { reason: format!("stack pointer {v:#x} out of bounds") });
        }
        self.sp = v;
        Ok(())
    }

    /// The pop loop: discard shadow entries until one equals `ra`.
    fn shadow_match(&mut self, ra: u64) -> Option<usize> {
        let mut k = 0;
        loop {
            if k > 0 {
                self.charge(cost::POP_UNWIND_STEP);
            }
            let Some(v) = self.shadow.pop() else {
                self.charge(cost::ABORT);
                return None;
            };
            if v == ra {
                return Some(k);
            }
            k += 1;
        }
    }

    fn step(&mut self, fi: usize, bi: usize, ii: usize, ins: &Instr) -> Step {
        let (block_id, _) = self.code.blocks[fi].1[bi];
        let act = self.act;
        if !ins.is_shadow() {
            self.trace.counters.instructions += 1;
        }
        let r = (|| -> Result<Step, Outcome> {
            match *ins {
                Instr::SpAdd(k) => self.set_sp(self.sp_offset(k))?,
                Instr::SpMov(r) => self.set_sp(self.reg(r))?,
                Instr::MovI(r, v) => self.set(r, v as u64),
                Instr::MovR(d, s) => self.set(d, self.reg(s)),
                Instr::LeaSp(r, off) => self.set(r, self.sp_offset(off)),
                Instr::BinOp(d, s) => self.set(d, self.reg(d).wrapping_add(self.reg(s))),
                Instr::StoreSp { off, src } => {
                    let addr = self.sp_offset(off);
                    self.write_event(fi, block_id, ii, addr);
                    self.store(addr, self.reg(src));
                }
                Instr::StoreReg { addr, src } => {
                    let a = self.reg(addr);
                    self.write_event(fi, block_id, ii, a);
                    self.store(a, self.reg(src));
                }
                Instr::StoreGlobal { ref global, src } => {
                    let v = self.reg(src);
                    self.trace.counters.memory_accesses += 1;
                    self.emit(Event::Store { act, func: fi, block: block_id, index: ii, addr: 0, height: None });
                    self.globals.insert(global.clone(), v);
                    self.global_log.push((global.clone(), v));
                }
                Instr::LoadSp { dst, off } => {
                    let v = self.load(self.sp_offset(off));
                    self.set(dst, v);
                }
                Instr::LoadReg { dst, addr } => {
                    let v = self.load(self.reg(addr));
                    self.set(dst, v);
                }
                Instr::Call(ref g) => {
                    let callee = self.code.by_name[g.as_str()];
                    return self.call(fi, bi, ii, callee);
                }
                Instr::ICall(r) => {
                    let n = self.code.names.len() as u64;
                    let callee = (self.reg(r) % n) as usize;
                    return self.call(fi, bi, ii, callee);
                }
                Instr::Ret => return self.ret(fi),
                Instr::Halt => {
                    self.emit(Event::Halt { act, func: fi });
                    return Ok(Step::Stop(Outcome::Completed(Outputs {
                        r0: self.regs[0],
                        globals: std::mem::take(&mut self.global_log),
                    })));
                }
                Instr::Br(t) => return Ok(Step::Jump(self.code.blocks[fi].0[&t])),
                Instr::Brc(a, b) => {
                    let take = self.decisions.next().unwrap_or(false);
                    let t = if take { a } else { b };
                    return Ok(Step::Jump(self.code.blocks[fi].0[&t]));
                }
                Instr::Corrupt { depth, value } => {
                    let n = self.frames.len();
                    let applied = (depth as usize) < n;
                    if applied {
                        let slot = self.frames[n - 1 - depth as usize].ra_slot;
                        self.emit(Event::Store { act, func: fi, block: block_id, index: ii, addr: slot, height: None });
                        self.store(slot, value);
                    }
                    self.emit(Event::Corrupt { act, func: fi, depth, applied });
                }
                Instr::Unwind(k) => {
                    let k = k as usize;
                    if k >= self.frames.len() {
                        return Err(Outcome::Fault { reason: format!("unwind {k} past the outermost frame") });
                    }
                    self.frames.truncate(self.frames.len() - k);
                    let slot = self.frames.last().expect("frame").ra_slot;
                    self.set_sp(slot)?;
                    self.emit(Event::Unwind { act, func: fi, frames: k as u32 });
                }
                Instr::SPush { height, .. } => {
                    self.charge(cost::shadow_cost(ins));
                    let ra = self.peek(self.sp_offset(-height));
                    if self.shadow.len() >= SHADOW_CAPACITY {
                        return Err(Outcome::Fault { reason: "shadow stack overflow".into() });
                    }
                    self.shadow.push(ra);
                    self.emit(Event::ShadowPush { act, func: fi, depth: self.shadow.len() });
                }
                Instr::SPop => {
                    self.charge(cost::POP);
                    let ra = self.peek(self.sp);
                    match self.shadow_match(ra) {
                        Some(k) => self.emit(Event::ShadowPop { act, func: fi, depth: self.shadow.len(), matched_after: k }),
                        None => return Err(self.abort(fi, block_id, ii)),
                    }
                }
                Instr::RfPush(r) => {
                    self.charge(cost::RF_PUSH);
                    self.scratch = self.reg(r);
                    let ra = self.peek(self.sp);
                    self.set(r, ra);
                    self.emit(Event::RegFramePush { act, func: fi, reg: r });
                }
                Instr::RfPop(r) => {
                    self.charge(cost::RF_POP);
                    let ra = self.peek(self.sp);
                    let (slow, k) = if self.reg(r) == ra {
                        (false, 0)
                    } else {
                        self.charge(cost::RF_POP_SLOW);
                        match self.shadow_match(ra) {
                            Some(k) => (true, k),
                            None => return Err(self.abort(fi, block_id, ii)),
                        }
                    };
                    self.set(r, self.scratch);
                    self.emit(Event::RegFramePop { act, func: fi, reg: r, slow, matched_after: k });
                }
            }
            Ok(Step::Next)
        })();
        r.unwrap_or_else(Step::Stop)
    }

    fn abort(&mut self, fi: usize, block: BlockId, index: usize) -> Outcome {
        self.emit(Event::Abort { act: self.act, func: fi, block, index });
        Outcome::Aborted { function: self.code.names[fi].clone(), block, index }
    }

    fn write_event(&mut self, fi: usize, block: BlockId, index: usize, addr: u64) {
        let height = self.stack_index(addr).map(|_| addr.wrapping_sub(self.origin) as i64);
        self.emit(Event::Store { act: self.act, func: fi, block, index, addr, height });
    }

    fn call(&mut self, fi: usize, bi: usize, ii: usize, callee: usize) -> Result<Step, Outcome> {
        let cookie = self.code.sites[&(fi, bi, ii)];
        self.set_sp(self.sp.wrapping_sub(WORD_SIZE as u64))?;
        self.store(self.sp, cookie);
        self.next_act += 1;
        let callee_act = self.next_act;
        let (block, _) = self.code.blocks[fi].1[bi];
        self.emit(Event::Call { act: self.act, func: fi, callee, callee_act, block, index: ii });
        self.frames.push(Frame { func: callee, act: callee_act, ra_slot: self.sp, cookie, resume: Some((fi, bi, ii + 1)) });
        self.act = callee_act;
        self.origin = self.sp;
        let entry = self.code.blocks[callee].2;
        Ok(Step::Resume(callee, entry, 0))
    }

    fn ret(&mut self, fi: usize) -> Result<Step, Outcome> {
        let frame = self.frames.pop().ok_or_else(|| Outcome::Fault { reason: "ret with no frame".into() })?;
        if self.sp != frame.ra_slot {
            return Err(Outcome::Fault {
                reason: format!("ret in {} with sp {:#x} != return slot {:#x}", self.code.names[frame.func], self.sp, frame.ra_slot),
            });
        }
        let ra = self.load(self.sp);
        self.set_sp(self.sp + WORD_SIZE as u64)?;
        let corrupted = ra != frame.cookie;
        self.emit(Event::Ret { act: self.act, func: fi, frame_act: frame.act, corrupted });
        if corrupted {
            return Ok(Step::Stop(Outcome::UndetectedCorruption {
                function: self.code.names[frame.func].clone(),
                target: ra,
            }));
        }
        match (frame.resume, self.frames.last()) {
            (Some((f, b, i)), Some(top)) => {
                self.act = top.act;
                self.origin = top.ra_slot;
                Ok(Step::Resume(f, b, i))
            }
            _ => Ok(Step::Stop(Outcome::Completed(Outputs {
                r0: self.regs[0],
                globals: std::mem::take(&mut self.global_log),
            }))),
        }
    }
}

pub fn execute(ip: &InstrumentedProgram, input: &Input, budget: u64) -> (Trace, Outcome) {
    execute_observed(&ip.program, input, budget, &mut ())
}

/// Run `p` from its entry function. `budget` bounds the number of
/// non-shadow instructions executed.
pub fn execute_observed(p: &Program, input: &Input, budget: u64, obs: &mut dyn Observer) -> (Trace, Outcome) {
    let code = Code::new(p);
    let entry = code.by_name[p.entry.as_str()];
    let mut m = Machine {
        trace: Trace { functions: code.names.clone(), ..Trace::default() },
        code,
        regs: input.regs,
        sp: STACK_TOP,
        stack: Vec::with_capacity(256),
        heap: HashMap::new(),
        frames: Vec::new(),
        shadow: Vec::with_capacity(64),
        scratch: 0,
        globals: BTreeMap::new(),
        global_log: Vec::new(),
        decisions: input.decisions.clone().into_iter(),
        next_act: 1,
        act: 1,
        origin: 0,
        obs,
    };
    m.sp = STACK_TOP - WORD_SIZE as u64;
    m.poke(m.sp, SENTINEL_COOKIE);
    m.origin = m.sp;
    m.frames.push(Frame { func: entry, act: 1, ra_slot: m.sp, cookie: SENTINEL_COOKIE, resume: None });

    let (mut fi, mut bi, mut ii) = (entry, m.code.blocks[entry].2, 0usize);
    let mut steps = 0u64;
    let block_id = m.code.blocks[fi].1[bi].0;
    m.emit(Event::Block { act: m.act, func: fi, block: block_id });
    let outcome = loop {
        let (block_id, instrs) = m.code.blocks[fi].1[bi];
        let Some(ins) = instrs.get(ii) else {
            break Outcome::Fault { reason: format!("fell off the end of {}.b{block_id}", m.code.names[fi]) };
        };
        if !ins.is_shadow() {
            if steps >= budget {
                break Outcome::BudgetExhausted;
            }
            steps += 1;
        }
        m.obs.instr(fi, block_id, ii, ins);
        match m.step(fi, bi, ii, ins) {
            Step::Next => ii += 1,
            Step::Jump(b) => {
                bi = b;
                ii = 0;
                let id = m.code.blocks[fi].1[bi].0;
                m.emit(Event::Block { act: m.act, func: fi, block: id });
            }
            Step::Resume(f, b, i) => {
                let entering = i == 0;
                (fi, bi, ii) = (f, b, i);
                if entering {
                    let id = m.code.blocks[fi].1[bi].0;
                    m.emit(Event::Block { act: m.act, func: fi, block: id });
                }
            }
            Step::Stop(o) => break o,
        }
    };
    m.trace.final_shadow_depth = m.shadow.len();
    (m.trace, outcome)
}
