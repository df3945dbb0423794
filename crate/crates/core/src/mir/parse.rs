//! Text format.
//!
//! ```text
//! #entry main
//! #adversarial false
//! #global counter
//!
//! fn main {
//! b0:
//!   spadd -16
//!   store.sp 8, r1
//!   call helper
//!   spadd 16
//!   ret
//! }
//! ```
//!
//! Whitespace (including newlines) and `;` separate tokens only; every opcode
//! has a fixed arity, so `fn main { b0: halt }` is a complete program. `//`
//! starts a comment. Without `#entry`, the entry is `main` if present, else the
//! first function in the text.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{Block, BlockId, Function, Instr, Program, Reg};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Directive(Vec<String>),
    Word(String),
    Int(i128),
    Colon,
    Comma,
    LBrace,
    RBrace,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix('#') {
            let col = line.len() - trimmed.len() + 1;
            let body = rest.split("//").next().unwrap_or("");
            out.push(Spanned {
                tok: Tok::Directive(body.split_whitespace().map(str::to_owned).collect()),
                line: line_no,
                col,
            });
            continue;
        }
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let single = |tok| Spanned { tok, line: line_no, col };
            match c {
                ' ' | '\t' | '\r' | ';' => i += 1,
                '/' if chars.get(i + 1) == Some(&'/') => break,
                ':' => {
                    out.push(single(Tok::Colon));
                    i += 1;
                }
                ',' => {
                    out.push(single(Tok::Comma));
                    i += 1;
                }
                '{' => {
                    out.push(single(Tok::LBrace));
                    i += 1;
                }
                '}' => {
                    out.push(single(Tok::RBrace));
                    i += 1;
                }
                c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                    let start = i;
                    i += 1;
                    while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    let raw: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
                    let (neg, digits) = match raw.strip_prefix('-') {
                        Some(d) => (true, d),
                        None => (false, raw.as_str()),
                    };
                    let parsed = match digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
                        Some(hex) => i128::from_str_radix(hex, 16),
                        None => digits.parse::<i128>(),
                    };
                    let value = parsed.map_err(|_| ParseError {
                        line: line_no,
                        col,
                        message: format!("malformed integer `{raw}`"),
                    })?;
                    out.push(single(Tok::Int(if neg { -value } else { value })));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                        i += 1;
                    }
                    out.push(single(Tok::Word(chars[start..i].iter().collect())));
                }
                other => {
                    return Err(ParseError { line: line_no, col, message: format!("unexpected character `{other}`") });
                }
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    eof: (usize, usize),
}

fn label_id(word: &str) -> Option<BlockId> {
    let digits = word.strip_prefix('b')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks.get(self.pos).map_or(self.eof, |s| (s.line, s.col))
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError { line, col, message: message.into() })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn word(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn int(&mut self) -> Result<i128, ParseError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => self.err("expected integer"),
        }
    }

    fn i64(&mut self) -> Result<i64, ParseError> {
        let v = self.int()?;
        i64::try_from(v).or_else(|_| {
            self.pos -= 1;
            self.err("integer out of range")
        })
    }

    fn reg(&mut self) -> Result<Reg, ParseError> {
        let w = self.word("register")?;
        let reg = w
            .strip_prefix('r')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|d| d.parse::<u8>().ok())
            .and_then(Reg::new);
        match reg {
            Some(r) => Ok(r),
            None => {
                self.pos -= 1;
                self.err(format!("invalid register `{w}` (expected r0..r15)"))
            }
        }
    }

    fn block_ref(&mut self, refs: &mut Vec<(BlockId, (usize, usize))>) -> Result<BlockId, ParseError> {
        let at = self.here();
        let w = self.word("block label")?;
        match label_id(&w) {
            Some(id) => {
                refs.push((id, at));
                Ok(id)
            }
            None => {
                self.pos -= 1;
                self.err(format!("invalid block label `{w}`"))
            }
        }
    }

    fn comma(&mut self) -> Result<(), ParseError> {
        self.expect(Tok::Comma, "`,`")
    }

    fn at_label(&self) -> bool {
        matches!(self.peek(), Some(Tok::Word(_))) && self.peek_at(1) == Some(&Tok::Colon)
    }

    fn instr(
        &mut self,
        refs: &mut Vec<(BlockId, (usize, usize))>,
        calls: &mut Vec<(String, (usize, usize))>,
    ) -> Result<Instr, ParseError> {
        let op = self.word("instruction")?;
        let ins = match op.as_str() {
            "spadd" => Instr::SpAdd(self.i64()?),
            "spmov" => Instr::SpMov(self.reg()?),
            "movi" => {
                let r = self.reg()?;
                self.comma()?;
                let v = self.int()?;
                let v = i64::try_from(v).or_else(|_| u64::try_from(v).map(|u| u as i64));
                match v {
                    Ok(v) => Instr::MovI(r, v),
                    Err(_) => {
                        self.pos -= 1;
                        return self.err("integer out of range");
                    }
                }
            }
            "movr" => {
                let d = self.reg()?;
                self.comma()?;
                Instr::MovR(d, self.reg()?)
            }
            "lea.sp" => {
                let r = self.reg()?;
                self.comma()?;
                Instr::LeaSp(r, self.i64()?)
            }
            "binop" => {
                let d = self.reg()?;
                self.comma()?;
                Instr::BinOp(d, self.reg()?)
            }
            "store.sp" => {
                let off = self.i64()?;
                self.comma()?;
                Instr::StoreSp { off, src: self.reg()? }
            }
            "store.reg" => {
                let addr = self.reg()?;
                self.comma()?;
                Instr::StoreReg { addr, src: self.reg()? }
            }
            "store.global" => {
                let global = self.word("global name")?;
                self.comma()?;
                Instr::StoreGlobal { global, src: self.reg()? }
            }
            "load.sp" => {
                let dst = self.reg()?;
                self.comma()?;
                Instr::LoadSp { dst, off: self.i64()? }
            }
            "load.reg" => {
                let dst = self.reg()?;
                self.comma()?;
                Instr::LoadReg { dst, addr: self.reg()? }
            }
            "call" => {
                let at = self.here();
                let g = self.word("function name")?;
                calls.push((g.clone(), at));
                Instr::Call(g)
            }
            "icall" => Instr::ICall(self.reg()?),
            "ret" => Instr::Ret,
            "halt" => Instr::Halt,
            "br" => Instr::Br(self.block_ref(refs)?),
            "brc" => {
                let a = self.block_ref(refs)?;
                self.comma()?;
                Instr::Brc(a, self.block_ref(refs)?)
            }
            "corrupt" => {
                let depth = self.int()?;
                let depth = u32::try_from(depth).or_else(|_| {
                    self.pos -= 1;
                    self.err("frame depth out of range")
                })?;
                self.comma()?;
                let v = self.int()?;
                let value = u64::try_from(v).or_else(|_| i64::try_from(v).map(|s| s as u64));
                match value {
                    Ok(value) => Instr::Corrupt { depth, value },
                    Err(_) => {
                        self.pos -= 1;
                        return self.err("integer out of range");
                    }
                }
            }
            "unwind" => {
                let k = self.int()?;
                match u32::try_from(k) {
                    Ok(k) => Instr::Unwind(k),
                    Err(_) => {
                        self.pos -= 1;
                        return self.err("unwind count out of range");
                    }
                }
            }
            "spush" => Instr::SPush { height: self.i64()?, dead_scratch: false },
            "spush.dr" => Instr::SPush { height: self.i64()?, dead_scratch: true },
            "spop" => Instr::SPop,
            "rfpush" => Instr::RfPush(self.reg()?),
            "rfpop" => Instr::RfPop(self.reg()?),
            other => {
                self.pos -= 1;
                return self.err(format!("unknown instruction `{other}`"));
            }
        };
        Ok(ins)
    }

    fn function(&mut self, calls: &mut Vec<(String, (usize, usize))>) -> Result<Function, ParseError> {
        let name = self.word("function name")?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut order: Vec<BlockId> = Vec::new();
        let mut blocks: BTreeMap<BlockId, Block> = BTreeMap::new();
        let mut refs = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::RBrace) => {
                    self.pos += 1;
                    break;
                }
                None => return self.err(format!("unterminated function `{name}`")),
                _ => {}
            }
            if !self.at_label() {
                return self.err("expected block label `bN:`");
            }
            let w = self.word("block label")?;
            let Some(id) = label_id(&w) else {
                self.pos -= 1;
                return self.err(format!("invalid block label `{w}`"));
            };
            if blocks.contains_key(&id) {
                self.pos -= 1;
                return self.err(format!("duplicate block id b{id} in function `{name}`"));
            }
            self.expect(Tok::Colon, "`:`")?;
            let mut instrs = Vec::new();
            while matches!(self.peek(), Some(Tok::Word(_))) && !self.at_label() {
                instrs.push(self.instr(&mut refs, calls)?);
            }
            match self.peek() {
                Some(Tok::Word(_)) | Some(Tok::RBrace) => {}
                None => return self.err(format!("unterminated function `{name}`")),
                Some(_) => return self.err("expected instruction"),
            }
            order.push(id);
            blocks.insert(id, Block::new(id, instrs));
        }
        let Some(&entry_block) = order.first() else {
            return self.err(format!("function `{name}` has no blocks"));
        };
        for (target, (line, col)) in refs {
            if !blocks.contains_key(&target) {
                return Err(ParseError { line, col, message: format!("unknown block b{target}") });
            }
        }
        Ok(Function { name, blocks, entry_block })
    }
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = lex(text)?;
    let eof = (text.lines().count().max(1), 1);
    let mut p = Parser { toks, pos: 0, eof };
    let mut entry: Option<(String, (usize, usize))> = None;
    let mut adversarial = false;
    let mut globals = BTreeSet::new();
    let mut functions: BTreeMap<String, Function> = BTreeMap::new();
    let mut first: Option<String> = None;
    let mut calls = Vec::new();
    while let Some(tok) = p.peek().cloned() {
        match tok {
            Tok::Directive(words) => {
                let at = p.here();
                p.pos += 1;
                match words.as_slice() {
                    [d, name] if d == "entry" => entry = Some((name.clone(), at)),
                    [d, v] if d == "adversarial" => {
                        adversarial = match v.as_str() {
                            "true" => true,
                            "false" => false,
                            _ => {
                                p.pos -= 1;
                                return p.err("expected `#adversarial true|false`");
                            }
                        }
                    }
                    [d, name] if d == "global" => {
                        globals.insert(name.clone());
                    }
                    _ => {
                        p.pos -= 1;
                        return p.err(format!("unknown directive `#{}`", words.join(" ")));
                    }
                }
            }
            Tok::Word(w) if w == "fn" => {
                p.pos += 1;
                let at = p.here();
                let f = p.function(&mut calls)?;
                if functions.contains_key(&f.name) {
                    return Err(ParseError { line: at.0, col: at.1, message: format!("duplicate function `{}`", f.name) });
                }
                first.get_or_insert_with(|| f.name.clone());
                functions.insert(f.name.clone(), f);
            }
            _ => return p.err("expected `fn` or a `#` directive"),
        }
    }
    for (g, (line, col)) in calls {
        if !functions.contains_key(&g) {
            return Err(ParseError { line, col, message: format!("call to unknown function `{g}`") });
        }
    }
    let entry = match entry {
        Some((name, (line, col))) => {
            if !functions.contains_key(&name) {
                return Err(ParseError { line, col, message: format!("unknown entry function `{name}`") });
            }
            name
        }
        None if functions.contains_key("main") => "main".to_owned(),
        None => match first {
            Some(f) => f,
            None => return Err(ParseError { line: 1, col: 1, message: "program has no functions".into() }),
        },
    };
    let mut program = Program { functions, globals, entry, adversarial };
    program.refresh_globals();
    Ok(program)
}

/// Line of `fn function` or, when `block` is given, of that block's label.
pub fn locate(text: &str, function: &str, block: Option<BlockId>) -> Option<usize> {
    let toks = lex(text).ok()?;
    let mut i = 0;
    while i + 1 < toks.len() {
        if toks[i].tok == Tok::Word("fn".into()) && toks[i + 1].tok == Tok::Word(function.into()) {
            let Some(block) = block else { return Some(toks[i].line) };
            let label = Tok::Word(format!("b{block}"));
            for j in i + 2..toks.len().saturating_sub(1) {
                if toks[j].tok == Tok::RBrace && toks[j + 1].tok == Tok::Word("fn".into()) {
                    break;
                }
                if toks[j].tok == label && toks[j + 1].tok == Tok::Colon {
                    return Some(toks[j].line);
                }
            }
            return Some(toks[i].line);
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_program("fn main { b0: halt }").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions["main"].blocks.len(), 1);
        assert_eq!(p.entry, "main");
        assert!(!p.adversarial);
    }

    #[test]
    fn dangling_branch() {
        let err = parse_program("fn main { b0: br b9 }").unwrap_err();
        assert!(err.message.contains("unknown block b9"), "{err}");
        assert_eq!((err.line, err.col), (1, 18));
    }

    #[test]
    fn unknown_callee_and_duplicates() {
        let err = parse_program("fn main { b0: call nope\n ret }").unwrap_err();
        assert!(err.message.contains("unknown function `nope`"));
        let err = parse_program("fn main { b0: ret b0: ret }").unwrap_err();
        assert!(err.message.contains("duplicate block id b0"));
        let err = parse_program("fn f { b0: ret }\nfn f { b0: ret }").unwrap_err();
        assert!(err.message.contains("duplicate function `f`"));
        assert_eq!(err.line, 2);
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_program("fn main {\nb0:\n  movi r16, 1\n  ret\n}").unwrap_err();
        assert_eq!((err.line, err.col), (3, 8));
        let err = parse_program("fn main {\nb0:\n  frob r1\n}").unwrap_err();
        assert!(err.message.contains("unknown instruction `frob`"));
        let err = parse_program("#bogus 1\nfn main { b0: ret }").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn header_and_entry_defaults() {
        let p = parse_program("fn z { b0: ret }\nfn y { b0: ret }").unwrap();
        assert_eq!(p.entry, "z");
        let p = parse_program("#entry y\n#adversarial true\n#global g\nfn z { b0: ret }\nfn y { b0: corrupt 1, 0x41 ret }").unwrap();
        assert_eq!(p.entry, "y");
        assert!(p.adversarial);
        assert!(p.globals.contains("g"));
    }

    #[test]
    fn locate_blocks() {
        let text = "fn a {\nb0:\n  ret\n}\nfn b {\nb0:\n  br b3\nb3:\n  ret\n}\n";
        assert_eq!(locate(text, "b", None), Some(5));
        assert_eq!(locate(text, "b", Some(3)), Some(8));
        assert_eq!(locate(text, "a", Some(0)), Some(2));
    }
}
