//! Text format for [`Program`]. See `docs/ir-format.md` for the grammar.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{
    AddrSpace, BinOp, Block, BlockId, DataInit, DataLayout, DataObject, Function, Inst, IrError,
    Operand, Program, Reg, Region, Terminator, TripCount, Width,
};

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, ".entry {}", p.entry);
    let _ = writeln!(out, ".code {:#x}", p.layout.code_base);
    let _ = writeln!(
        out,
        ".stack {:#x} {:#x}",
        p.layout.stack.base, p.layout.stack.size
    );
    for d in &p.data {
        match &d.init {
            DataInit::Bytes(bytes) => {
                let _ = write!(out, ".rodata {} {:#x} ", d.name, d.addr);
                for b in bytes {
                    let _ = write!(out, "{b:02x}");
                }
                out.push('\n');
            }
            DataInit::Zeroed(n) => {
                let _ = writeln!(out, ".data {} {:#x} {}", d.name, d.addr, n);
            }
        }
    }
    for f in &p.functions {
        out.push('\n');
        print_function(&mut out, f);
    }
    out
}

fn op_text(op: &Operand) -> String {
    match op {
        Operand::Reg(r) => r.to_string(),
        Operand::Imm(v) => v.to_string(),
        Operand::Sym(s) => format!("@{s}"),
    }
}

fn list(ops: &[Operand]) -> String {
    ops.iter().map(op_text).collect::<Vec<_>>().join(", ")
}

fn print_function(out: &mut String, f: &Function) {
    let params: Vec<String> = f.params.iter().map(Reg::to_string).collect();
    let _ = writeln!(out, "func {}({}) {{", f.name, params.join(", "));
    let label = |b: &BlockId| f.blocks[b.index()].label.as_str();
    for b in &f.blocks {
        let _ = writeln!(out, "{}:", b.label);
        for inst in &b.insts {
            let line = match inst {
                Inst::Const { dst, value } => format!("{dst} = const {}", op_text(value)),
                Inst::Bin { op, dst, lhs, rhs } => format!(
                    "{dst} = {} {}, {}",
                    op.mnemonic(),
                    op_text(lhs),
                    op_text(rhs)
                ),
                Inst::Select {
                    dst,
                    pred,
                    if_true,
                    if_false,
                } => format!(
                    "{dst} = select {}, {}, {}",
                    op_text(pred),
                    op_text(if_true),
                    op_text(if_false)
                ),
                Inst::Load {
                    dst,
                    space,
                    width,
                    addr,
                } => format!(
                    "{dst} = load.{}.{} {}",
                    space.mnemonic(),
                    width.bits(),
                    op_text(addr)
                ),
                Inst::Store {
                    space,
                    width,
                    addr,
                    value,
                } => format!(
                    "store.{}.{} {}, {}",
                    space.mnemonic(),
                    width.bits(),
                    op_text(addr),
                    op_text(value)
                ),
                Inst::Call { dsts, callee, args } => {
                    let call = format!("call {callee}({})", list(args));
                    if dsts.is_empty() {
                        call
                    } else {
                        let d: Vec<String> = dsts.iter().map(Reg::to_string).collect();
                        format!("{} = {call}", d.join(", "))
                    }
                }
            };
            let _ = writeln!(out, "  {line}");
        }
        let term = match &b.term {
            Terminator::Br(t) => format!("br {}", label(t)),
            Terminator::CondBr {
                cond,
                if_true,
                if_false,
            } => format!(
                "cbr {}, {}, {}",
                op_text(cond),
                label(if_true),
                label(if_false)
            ),
            Terminator::Loop {
                header,
                exit,
                trips,
            } => {
                let trips = match trips {
                    TripCount::Fixed(n) => n.to_string(),
                    TripCount::Dyn(op) => format!("dyn({})", op_text(op)),
                };
                format!("loop {}, {} trips={trips}", label(header), label(exit))
            }
            Terminator::Ret(vals) if vals.is_empty() => "ret".to_string(),
            Terminator::Ret(vals) => format!("ret {}", list(vals)),
        };
        let _ = writeln!(out, "  {term}");
    }
    out.push_str("}\n");
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Reg(u32),
    Num(u64),
    Sym(String),
    Punct(char),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    col: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | '$')
}

fn parse_num(s: &str) -> Option<u64> {
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(&hex.replace('_', ""), 16).ok()
    } else {
        s.replace('_', "").parse().ok()
    }
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Token>, IrError> {
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |col: usize, msg: String| IrError::Syntax {
        line: lineno,
        col,
        msg,
    };
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == ';' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if matches!(c, ',' | '(' | ')' | '=' | '{' | '}' | ':') {
            toks.push(Token {
                tok: Tok::Punct(c),
                col,
            });
            i += 1;
            continue;
        }
        if c == '%' || c == '@' {
            let start = i + 1;
            let mut j = start;
            while j < chars.len() && is_word_char(chars[j]) {
                j += 1;
            }
            let body: String = chars[start..j].iter().collect();
            if body.is_empty() {
                return Err(err(col, format!("expected a name after `{c}`")));
            }
            let tok = if c == '%' {
                let n = body
                    .strip_prefix('r')
                    .and_then(|d| d.parse::<u32>().ok())
                    .ok_or_else(|| err(col, format!("malformed register `%{body}`")))?;
                Tok::Reg(n)
            } else {
                Tok::Sym(body)
            };
            toks.push(Token { tok, col });
            i = j;
            continue;
        }
        if is_word_char(c) {
            let mut j = i;
            while j < chars.len() && is_word_char(chars[j]) {
                j += 1;
            }
            let w: String = chars[i..j].iter().collect();
            let tok = if c.is_ascii_digit() {
                Tok::Num(parse_num(&w).ok_or_else(|| err(col, format!("malformed number `{w}`")))?)
            } else {
                Tok::Word(w)
            };
            toks.push(Token { tok, col });
            i = j;
            continue;
        }
        return Err(err(col, format!("unexpected character `{c}`")));
    }
    Ok(toks)
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    line_len: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> IrError {
        let col = self
            .toks
            .get(self.pos)
            .map_or(self.line_len + 1, |t| t.col);
        IrError::Syntax {
            line: self.line,
            col,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect_end(&self) -> Result<(), IrError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing tokens"))
        }
    }

    fn punct(&mut self, c: char) -> Result<(), IrError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected `{c}`"))),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(p)) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn word(&mut self) -> Result<&'a str, IrError> {
        match self.toks.get(self.pos).map(|t| &t.tok) {
            Some(Tok::Word(w)) => {
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.err("expected a name")),
        }
    }

    fn num(&mut self) -> Result<u64, IrError> {
        match self.peek() {
            Some(Tok::Num(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.err("expected a number")),
        }
    }

    fn reg(&mut self) -> Result<Reg, IrError> {
        match self.peek() {
            Some(Tok::Reg(r)) => {
                let r = Reg(*r);
                self.pos += 1;
                Ok(r)
            }
            _ => Err(self.err("expected a register")),
        }
    }

    fn operand(&mut self) -> Result<Operand, IrError> {
        let op = match self.peek() {
            Some(Tok::Reg(r)) => Operand::Reg(Reg(*r)),
            Some(Tok::Num(n)) => Operand::Imm(*n),
            Some(Tok::Sym(s)) => Operand::Sym(s.clone()),
            _ => return Err(self.err("expected an operand")),
        };
        self.pos += 1;
        Ok(op)
    }

    fn operands(&mut self, n: usize) -> Result<Vec<Operand>, IrError> {
        let mut ops = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                self.punct(',')?;
            }
            ops.push(self.operand()?);
        }
        Ok(ops)
    }

    /// Comma-separated operands up to `close` (consumed) or end of line.
    fn operand_list(&mut self, close: Option<char>) -> Result<Vec<Operand>, IrError> {
        let mut ops = Vec::new();
        let done = |c: &Self| match close {
            Some(ch) => matches!(c.peek(), Some(Tok::Punct(p)) if *p == ch),
            None => c.at_end(),
        };
        if !done(self) {
            loop {
                ops.push(self.operand()?);
                if !self.eat_punct(',') {
                    break;
                }
            }
        }
        if let Some(ch) = close {
            self.punct(ch)?;
        }
        Ok(ops)
    }
}

enum PendingTerm {
    Br(String),
    CondBr(Operand, String, String),
    Loop(String, String, TripCount),
    Ret(Vec<Operand>),
}

struct PendingBlock {
    label: String,
    line: usize,
    insts: Vec<Inst>,
    term: Option<(PendingTerm, usize)>,
}

struct PendingFunction {
    name: String,
    params: Vec<Reg>,
    blocks: Vec<PendingBlock>,
}

pub fn parse_program(text: &str) -> Result<Program, IrError> {
    let mut entry: Option<String> = None;
    let mut layout = DataLayout::default();
    let mut data: Vec<DataObject> = Vec::new();
    let mut functions: Vec<Function> = Vec::new();
    let mut current: Option<PendingFunction> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        if current.is_none() && raw.trim_start().starts_with(".rodata") {
            push_data(&mut data, parse_rodata(raw, lineno)?)?;
            continue;
        }
        let toks = tokenize(raw, lineno)?;
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor {
            toks: &toks,
            pos: 0,
            line: lineno,
            line_len: raw.len(),
        };

        if let Some(func) = current.as_mut() {
            if c.eat_punct('}') {
                c.expect_end()?;
                let done = current.take().expect("inside a function");
                functions.push(finish_function(done, lineno)?);
                continue;
            }
            if let (Some(Tok::Word(label)), Some(Tok::Punct(':'))) =
                (toks.first().map(|t| &t.tok), toks.get(1).map(|t| &t.tok))
            {
                if toks.len() != 2 {
                    c.pos = 2;
                    return Err(c.err("a label must be alone on its line"));
                }
                if let Some(prev) = func.blocks.last() {
                    if prev.term.is_none() {
                        return Err(IrError::Syntax {
                            line: lineno,
                            col: 1,
                            msg: format!("block `{}` has no terminator", prev.label),
                        });
                    }
                }
                func.blocks.push(PendingBlock {
                    label: label.clone(),
                    line: lineno,
                    insts: Vec::new(),
                    term: None,
                });
                continue;
            }
            let Some(block) = func.blocks.last_mut() else {
                return Err(c.err("instruction before the first block label"));
            };
            if block.term.is_some() {
                return Err(c.err(format!(
                    "instruction after the terminator of block `{}`",
                    block.label
                )));
            }
            parse_body_line(&mut c, block)?;
            continue;
        }

        let head = c.word()?;
        match head {
            ".entry" => {
                entry = Some(c.word()?.to_string());
                c.expect_end()?;
            }
            ".code" => {
                layout.code_base = c.num()?;
                c.expect_end()?;
            }
            ".stack" => {
                let base = c.num()?;
                let size = c.num()?;
                layout.stack = Region::new(base, size);
                c.expect_end()?;
            }
            ".data" => {
                let name = c.word()?.to_string();
                let addr = c.num()?;
                let size = c.num()?;
                c.expect_end()?;
                push_data(
                    &mut data,
                    DataObject {
                        name,
                        addr,
                        init: DataInit::Zeroed(size),
                    },
                )?;
            }
            "func" => {
                let name = c.word()?.to_string();
                c.punct('(')?;
                let mut params = Vec::new();
                if !c.eat_punct(')') {
                    loop {
                        params.push(c.reg()?);
                        if c.eat_punct(')') {
                            break;
                        }
                        c.punct(',')?;
                    }
                }
                c.punct('{')?;
                c.expect_end()?;
                if functions.iter().any(|f| f.name == name) {
                    return Err(IrError::DuplicateSymbol(name));
                }
                current = Some(PendingFunction {
                    name,
                    params,
                    blocks: Vec::new(),
                });
            }
            other => {
                c.pos = 0;
                return Err(c.err(format!("unknown directive `{other}`")));
            }
        }
    }

    if let Some(f) = current {
        return Err(IrError::Syntax {
            line: text.lines().count() + 1,
            col: 1,
            msg: format!("function `{}` is not closed", f.name),
        });
    }
    let entry = entry.ok_or_else(|| IrError::Syntax {
        line: 1,
        col: 1,
        msg: "missing `.entry` directive".into(),
    })?;
    let p = Program {
        functions,
        entry,
        data,
        layout,
    };
    p.validate()?;
    Ok(p)
}

/// `.rodata <name> <addr> [<hex bytes>]`, handled outside the tokenizer so
/// hex payloads need no quoting.
fn parse_rodata(raw: &str, lineno: usize) -> Result<DataObject, IrError> {
    let body = raw.split(';').next().unwrap_or("");
    let mut fields = Vec::new();
    let mut start = None;
    for (i, ch) in body.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                fields.push((s + 1, &body[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        fields.push((s + 1, &body[s..]));
    }
    let err = |col: usize, msg: &str| IrError::Syntax {
        line: lineno,
        col,
        msg: msg.into(),
    };
    let end_col = body.len() + 1;
    let &(name_col, name) = fields.get(1).ok_or_else(|| err(end_col, "expected a name"))?;
    if !name.chars().all(is_word_char) {
        return Err(err(name_col, "malformed name"));
    }
    let &(addr_col, addr) = fields.get(2).ok_or_else(|| err(end_col, "expected an address"))?;
    let addr = parse_num(addr).ok_or_else(|| err(addr_col, "malformed number"))?;
    let bytes = match fields.get(3) {
        None => Vec::new(),
        Some(&(col, hex)) => decode_hex(hex).ok_or_else(|| err(col, "malformed hex byte string"))?,
    };
    if let Some(&(col, _)) = fields.get(4) {
        return Err(err(col, "unexpected trailing tokens"));
    }
    Ok(DataObject {
        name: name.to_string(),
        addr,
        init: DataInit::Bytes(bytes),
    })
}

fn push_data(data: &mut Vec<DataObject>, d: DataObject) -> Result<(), IrError> {
    if data.iter().any(|x| x.name == d.name) {
        return Err(IrError::DuplicateSymbol(d.name));
    }
    data.push(d);
    Ok(())
}

fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

fn mem_mnemonic(c: &Cursor<'_>, w: &str, kind: &str) -> Result<(AddrSpace, Width), IrError> {
    let mut parts = w.split('.');
    let _ = parts.next();
    let space = match parts.next() {
        Some("main") => AddrSpace::Main,
        Some("spm") => AddrSpace::Spm,
        _ => return Err(c.err(format!("{kind} needs an address space: main or spm"))),
    };
    let width = parts
        .next()
        .and_then(|b| b.parse().ok())
        .and_then(Width::from_bits)
        .ok_or_else(|| c.err(format!("{kind} needs a width of 8, 16, 32 or 64")))?;
    if parts.next().is_some() {
        return Err(c.err(format!("malformed {kind} mnemonic `{w}`")));
    }
    Ok((space, width))
}

fn parse_body_line(c: &mut Cursor<'_>, block: &mut PendingBlock) -> Result<(), IrError> {
    // Definitions: `%rA[, %rB...] = ...`
    if matches!(c.peek(), Some(Tok::Reg(_))) {
        let mut dsts = vec![c.reg()?];
        while c.eat_punct(',') {
            dsts.push(c.reg()?);
        }
        c.punct('=')?;
        let op_pos = c.pos;
        let w = c.word()?;
        if w == "call" {
            let (callee, args) = parse_call(c)?;
            block.insts.push(Inst::Call { dsts, callee, args });
            return c.expect_end();
        }
        if dsts.len() != 1 {
            c.pos = op_pos;
            return Err(c.err("only `call` may define several registers"));
        }
        let dst = dsts[0];
        let inst = if w == "const" {
            Inst::Const {
                dst,
                value: c.operand()?,
            }
        } else if w == "select" {
            let mut ops = c.operands(3)?.into_iter();
            Inst::Select {
                dst,
                pred: ops.next().unwrap(),
                if_true: ops.next().unwrap(),
                if_false: ops.next().unwrap(),
            }
        } else if w.starts_with("load.") {
            c.pos = op_pos;
            let (space, width) = mem_mnemonic(c, w, "load")?;
            c.pos += 1;
            Inst::Load {
                dst,
                space,
                width,
                addr: c.operand()?,
            }
        } else if let Some(op) = BinOp::from_mnemonic(w) {
            let mut ops = c.operands(2)?.into_iter();
            Inst::Bin {
                op,
                dst,
                lhs: ops.next().unwrap(),
                rhs: ops.next().unwrap(),
            }
        } else {
            c.pos = op_pos;
            return Err(c.err(format!("unknown opcode `{w}`")));
        };
        block.insts.push(inst);
        return c.expect_end();
    }

    let op_pos = c.pos;
    let w = c.word()?;
    match w {
        "call" => {
            let (callee, args) = parse_call(c)?;
            block.insts.push(Inst::Call {
                dsts: Vec::new(),
                callee,
                args,
            });
        }
        "br" => {
            let t = c.word()?.to_string();
            block.term = Some((PendingTerm::Br(t), c.line));
        }
        "cbr" => {
            let cond = c.operand()?;
            c.punct(',')?;
            let t = c.word()?.to_string();
            c.punct(',')?;
            let f = c.word()?.to_string();
            block.term = Some((PendingTerm::CondBr(cond, t, f), c.line));
        }
        "loop" => {
            let header = c.word()?.to_string();
            c.punct(',')?;
            let exit = c.word()?.to_string();
            let key = c.word()?;
            if key != "trips" {
                c.pos -= 1;
                return Err(c.err("expected `trips=`"));
            }
            c.punct('=')?;
            let trips = match c.peek() {
                Some(Tok::Num(_)) => TripCount::Fixed(c.num()?),
                Some(Tok::Word(d)) if d == "dyn" => {
                    c.pos += 1;
                    c.punct('(')?;
                    let op = c.operand()?;
                    c.punct(')')?;
                    TripCount::Dyn(op)
                }
                _ => return Err(c.err("expected a trip count or `dyn(<operand>)`")),
            };
            block.term = Some((PendingTerm::Loop(header, exit, trips), c.line));
        }
        "ret" => {
            let vals = c.operand_list(None)?;
            block.term = Some((PendingTerm::Ret(vals), c.line));
        }
        _ if w.starts_with("store.") => {
            c.pos = op_pos;
            let (space, width) = mem_mnemonic(c, w, "store")?;
            c.pos += 1;
            let mut ops = c.operands(2)?.into_iter();
            block.insts.push(Inst::Store {
                space,
                width,
                addr: ops.next().unwrap(),
                value: ops.next().unwrap(),
            });
        }
        _ => {
            c.pos = op_pos;
            return Err(c.err(format!("unknown opcode `{w}`")));
        }
    }
    c.expect_end()
}

fn parse_call(c: &mut Cursor<'_>) -> Result<(String, Vec<Operand>), IrError> {
    let callee = c.word()?.to_string();
    c.punct('(')?;
    let args = c.operand_list(Some(')'))?;
    Ok((callee, args))
}

fn finish_function(f: PendingFunction, close_line: usize) -> Result<Function, IrError> {
    if f.blocks.is_empty() {
        return Err(IrError::Syntax {
            line: close_line,
            col: 1,
            msg: format!("function `{}` has no blocks", f.name),
        });
    }
    let mut ids = HashMap::new();
    for (i, b) in f.blocks.iter().enumerate() {
        if ids.insert(b.label.clone(), BlockId(i as u32)).is_some() {
            return Err(IrError::DuplicateSymbol(format!("{}:{}", f.name, b.label)));
        }
    }
    let resolve = |l: &str| {
        ids.get(l)
            .copied()
            .ok_or_else(|| IrError::UnresolvedReference(format!("{}:{l}", f.name)))
    };
    let mut blocks = Vec::with_capacity(f.blocks.len());
    for b in f.blocks {
        let Some((term, _)) = b.term else {
            return Err(IrError::Syntax {
                line: b.line,
                col: 1,
                msg: format!("block `{}` has no terminator", b.label),
            });
        };
        let term = match term {
            PendingTerm::Br(t) => Terminator::Br(resolve(&t)?),
            PendingTerm::CondBr(cond, t, e) => Terminator::CondBr {
                cond,
                if_true: resolve(&t)?,
                if_false: resolve(&e)?,
            },
            PendingTerm::Loop(h, e, trips) => Terminator::Loop {
                header: resolve(&h)?,
                exit: resolve(&e)?,
                trips,
            },
            PendingTerm::Ret(v) => Terminator::Ret(v),
        };
        blocks.push(Block {
            label: b.label,
            insts: b.insts,
            term,
        });
    }
    Ok(Function {
        name: f.name,
        params: f.params,
        blocks,
    })
}
