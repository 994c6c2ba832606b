//! Static and dynamic checks of the Ozone code rules.
//!
//! Control rules (C*) require a fixed control path. Memory rules (M*) keep
//! every access and every object inside the scratchpads. Trace rules (T*)
//! compare actual executions on sample inputs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::ir::{
    interpret, AddrSpace, BinOp, BlockId, Function, Inst, Operand, Program, Region, Terminator,
    TripCount, Width,
};
use crate::kernels::{footprint, FootprintError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    /// Conditional branch.
    C1,
    /// Loop with an input-dependent trip count.
    C2,
    /// Exit from a loop body other than through its loop-branch.
    C3,
    /// Indirect or unresolved control transfer.
    C4,
    /// Main-memory access.
    M1,
    /// Data object or stack outside the data scratchpad.
    M2,
    /// Code outside the instruction scratchpad.
    M3,
    /// Stack requirement exceeds the stack region, or is unbounded.
    M4,
    /// Address not provably inside the data scratchpad.
    M5,
    /// Dynamic traces differ.
    T1,
    /// Store address derived from a select differs between samples.
    T2,
    /// Sample execution failed.
    T3,
    /// Input-dependent scratchpad address (warning only).
    W1,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::C1 => "conditional branch",
            Rule::C2 => "input-dependent trip count",
            Rule::C3 => "early exit from loop",
            Rule::C4 => "indirect or unresolved control",
            Rule::M1 => "main-memory access",
            Rule::M2 => "object outside data scratchpad",
            Rule::M3 => "code outside instruction scratchpad",
            Rule::M4 => "stack bound",
            Rule::M5 => "address not bounded to data scratchpad",
            Rule::T1 => "trace divergence",
            Rule::T2 => "select-derived store address varies",
            Rule::T3 => "execution error",
            Rule::W1 => "input-dependent scratchpad address",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    pub func: String,
    /// Block label.
    pub block: Option<String>,
    /// Index within the block; the block length names the terminator.
    pub inst: Option<usize>,
    pub message: String,
}

impl Violation {
    fn at(rule: Rule, f: &Function, b: BlockId, inst: usize, message: impl Into<String>) -> Self {
        Violation {
            rule,
            func: f.name.clone(),
            block: Some(f.blocks[b.index()].label.clone()),
            inst: Some(inst),
            message: message.into(),
        }
    }

    fn global(rule: Rule, func: &str, message: impl Into<String>) -> Self {
        Violation {
            rule,
            func: func.to_string(),
            block: None,
            inst: None,
            message: message.into(),
        }
    }

    pub fn location(&self) -> String {
        match (&self.block, self.inst) {
            (Some(b), Some(i)) => format!("{}:{}:{}", self.func, b, i),
            (Some(b), None) => format!("{}:{}", self.func, b),
            _ => self.func.clone(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} at {}: {}", self.rule, self.rule.describe(), self.location(), self.message)
    }
}

/// Outcome of a verification pass. Passes iff there are no violations;
/// warnings never affect the verdict.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(mut self, other: VerifyReport) -> VerifyReport {
        self.violations.extend(other.violations);
        self.warnings.extend(other.warnings);
        self
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    /// `rule,severity,location,message` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rule,severity,location,message\n");
        let rows = self
            .violations
            .iter()
            .map(|v| (v, "error"))
            .chain(self.warnings.iter().map(|v| (v, "warning")));
        for (v, sev) in rows {
            out.push_str(&format!(
                "{},{},{},\"{}\"\n",
                v.rule,
                sev,
                v.location(),
                v.message.replace('"', "\"\"")
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for v in &self.violations {
            out.push_str(&format!("error: {v}\n"));
        }
        for v in &self.warnings {
            out.push_str(&format!("warning: {v}\n"));
        }
        out.push_str(&format!(
            "verdict: {} ({} violations, {} warnings)\n",
            if self.passed() { "PASS" } else { "FAIL" },
            self.violations.len(),
            self.warnings.len()
        ));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("{0} size {1:#x} is not a nonzero power of two")]
    NotPowerOfTwo(&'static str, u64),
    #[error("instruction and data scratchpads overlap")]
    Overlap,
    #[error("stack region is not inside the data scratchpad")]
    StackOutside,
    #[error("{0} extends past the 32-bit address space")]
    OutOfRange(&'static str),
}

/// Placement of the instruction and data scratchpads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpmLayout {
    pub ispm: Region,
    pub dspm: Region,
    pub stack: Region,
}

pub const ISPM_BASE: u64 = 0x1000_0000;
pub const DSPM_BASE: u64 = 0x2000_0000;

impl SpmLayout {
    pub fn new(ispm: Region, dspm: Region, stack: Region) -> Result<SpmLayout, LayoutError> {
        for (name, r) in [("ispm", ispm), ("dspm", dspm), ("stack", stack)] {
            if r.size == 0 || !r.size.is_power_of_two() {
                return Err(LayoutError::NotPowerOfTwo(name, r.size));
            }
            if r.end() > crate::ir::ADDRESS_LIMIT {
                return Err(LayoutError::OutOfRange(name));
            }
        }
        if ispm.overlaps(&dspm) {
            return Err(LayoutError::Overlap);
        }
        if !dspm.contains_region(&stack) {
            return Err(LayoutError::StackOutside);
        }
        Ok(SpmLayout { ispm, dspm, stack })
    }

    /// Scratchpads of the given sizes at the standard bases, with a stack of
    /// `stack` bytes at the top of the data scratchpad.
    pub fn with_sizes(ispm: u64, dspm: u64, stack: u64) -> Result<SpmLayout, LayoutError> {
        SpmLayout::new(
            Region::new(ISPM_BASE, ispm),
            Region::new(DSPM_BASE, dspm),
            Region::new(DSPM_BASE + dspm.saturating_sub(stack), stack),
        )
    }
}

impl Default for SpmLayout {
    /// 32 KiB instruction and 64 KiB data scratchpads, 8 KiB stack.
    fn default() -> Self {
        SpmLayout::with_sizes(0x8000, 0x1_0000, 0x2000).expect("default layout is valid")
    }
}

/// Natural loop of the loop-branch ending `latch`: the header plus every
/// block that reaches the latch without passing the header.
fn natural_loop(preds: &[Vec<BlockId>], header: BlockId, latch: BlockId) -> BTreeSet<BlockId> {
    let mut body = BTreeSet::from([header]);
    let mut stack = vec![latch];
    while let Some(b) = stack.pop() {
        if body.insert(b) {
            stack.extend(preds[b.index()].iter().copied());
        }
    }
    body
}

fn check_function_control(f: &Function, report: &mut VerifyReport) {
    let preds = f.predecessors();
    for (i, b) in f.blocks.iter().enumerate() {
        let id = BlockId(i as u32);
        let at = b.insts.len();
        match &b.term {
            Terminator::CondBr { .. } => report.violations.push(Violation::at(
                Rule::C1,
                f,
                id,
                at,
                "conditional branch on the control path",
            )),
            Terminator::Loop {
                header,
                exit,
                trips,
            } => {
                if let TripCount::Dyn(op) = trips {
                    report.violations.push(Violation::at(
                        Rule::C2,
                        f,
                        id,
                        at,
                        format!("trip count depends on {}", operand_text(op)),
                    ));
                }
                let body = natural_loop(&preds, *header, id);
                for m in &body {
                    let blk = &f.blocks[m.index()];
                    let mat = blk.insts.len();
                    if let Terminator::Ret(_) = blk.term {
                        report.violations.push(Violation::at(
                            Rule::C3,
                            f,
                            *m,
                            mat,
                            format!("return inside loop headed by `{}`", f.blocks[header.index()].label),
                        ));
                        continue;
                    }
                    for s in blk.term.successors() {
                        let own_exit = *m == id && s == *exit;
                        if !body.contains(&s) && !own_exit {
                            report.violations.push(Violation::at(
                                Rule::C3,
                                f,
                                *m,
                                mat,
                                format!(
                                    "edge to `{}` leaves loop headed by `{}`",
                                    f.blocks[s.index()].label,
                                    f.blocks[header.index()].label
                                ),
                            ));
                        }
                    }
                }
            }
            _ => {}
        }
    }
}

fn operand_text(op: &Operand) -> String {
    match op {
        Operand::Reg(r) => r.to_string(),
        Operand::Imm(v) => v.to_string(),
        Operand::Sym(s) => format!("@{s}"),
    }
}

/// Fixed control path rules for every function reachable from the entry.
pub fn verify_control(p: &Program) -> VerifyReport {
    let mut report = VerifyReport::default();
    if let Err(e) = p.validate() {
        report
            .violations
            .push(Violation::global(Rule::C4, &p.entry, e.to_string()));
        return report;
    }
    for f in p.reachable_functions() {
        check_function_control(f, &mut report);
    }
    report
}

/// Inclusive unsigned interval of possible register values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Iv {
    lo: u64,
    hi: u64,
}

impl Iv {
    const TOP: Iv = Iv { lo: 0, hi: u64::MAX };

    fn exact(v: u64) -> Iv {
        Iv { lo: v, hi: v }
    }

    fn join(self, o: Iv) -> Iv {
        Iv {
            lo: self.lo.min(o.lo),
            hi: self.hi.max(o.hi),
        }
    }

    fn as_const(self) -> Option<u64> {
        (self.lo == self.hi).then_some(self.lo)
    }

    /// All values with no bit above the highest bit of `hi`.
    fn bits_below(hi: u64) -> Iv {
        let hi = if hi == 0 { 0 } else { u64::MAX >> hi.leading_zeros() };
        Iv { lo: 0, hi }
    }
}

fn eval_bin(op: BinOp, a: Iv, b: Iv) -> Iv {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        return Iv::exact(op.eval(x, y));
    }
    match op {
        BinOp::Add => match (a.lo.checked_add(b.lo), a.hi.checked_add(b.hi)) {
            (Some(lo), Some(hi)) => Iv { lo, hi },
            _ => Iv::TOP,
        },
        BinOp::Sub => {
            if a.lo >= b.hi {
                Iv {
                    lo: a.lo - b.hi,
                    hi: a.hi - b.lo,
                }
            } else {
                Iv::TOP
            }
        }
        BinOp::Mul => match (a.lo.checked_mul(b.lo), a.hi.checked_mul(b.hi)) {
            (Some(lo), Some(hi)) => Iv { lo, hi },
            _ => Iv::TOP,
        },
        BinOp::And => Iv {
            lo: 0,
            hi: a.hi.min(b.hi),
        },
        BinOp::Or | BinOp::Xor => Iv::bits_below(a.hi.max(b.hi)),
        BinOp::Shl => match b.as_const() {
            Some(s) if a.hi.leading_zeros() as u64 >= (s & 63) => Iv {
                lo: a.lo << (s & 63),
                hi: a.hi << (s & 63),
            },
            _ => Iv::TOP,
        },
        BinOp::Shr => match b.as_const() {
            Some(s) => Iv {
                lo: a.lo >> (s & 63),
                hi: a.hi >> (s & 63),
            },
            None => Iv { lo: 0, hi: a.hi },
        },
        BinOp::CmpEq | BinOp::CmpLt => Iv { lo: 0, hi: 1 },
    }
}

struct Ranges<'a> {
    syms: &'a HashMap<&'a str, u64>,
}

impl Ranges<'_> {
    fn operand(&self, st: &[Iv], o: &Operand) -> Iv {
        match o {
            Operand::Reg(r) => st[r.0 as usize],
            Operand::Imm(v) => Iv::exact(*v),
            Operand::Sym(s) => self.syms.get(s.as_str()).map_or(Iv::TOP, |a| Iv::exact(*a)),
        }
    }

    fn step(&self, st: &mut [Iv], inst: &Inst) {
        match inst {
            Inst::Const { dst, value } => st[dst.0 as usize] = self.operand(st, value),
            Inst::Bin { op, dst, lhs, rhs } => {
                st[dst.0 as usize] = eval_bin(*op, self.operand(st, lhs), self.operand(st, rhs))
            }
            Inst::Select {
                dst,
                if_true,
                if_false,
                ..
            } => {
                st[dst.0 as usize] = self.operand(st, if_true).join(self.operand(st, if_false))
            }
            Inst::Load { dst, width, .. } => {
                st[dst.0 as usize] = match width {
                    Width::W64 => Iv::TOP,
                    w => Iv {
                        lo: 0,
                        hi: (1u64 << w.bits()) - 1,
                    },
                }
            }
            Inst::Store { .. } => {}
            Inst::Call { dsts, .. } => {
                for d in dsts {
                    st[d.0 as usize] = Iv::TOP;
                }
            }
        }
    }
}

/// Targets of back edges in a depth-first walk from the entry.
fn widen_points(f: &Function) -> HashSet<BlockId> {
    let n = f.blocks.len();
    let mut state = vec![0u8; n];
    let mut out = HashSet::new();
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    state[0] = 1;
    while let Some(&mut (b, ref mut k)) = stack.last_mut() {
        let succ = f.blocks[b].term.successors();
        if *k < succ.len() {
            let s = succ[*k].index();
            *k += 1;
            match state[s] {
                0 => {
                    state[s] = 1;
                    stack.push((s, 0));
                }
                1 => {
                    out.insert(BlockId(s as u32));
                }
                _ => {}
            }
        } else {
            state[b] = 2;
            stack.pop();
        }
    }
    out
}

fn check_function_addresses(
    f: &Function,
    syms: &HashMap<&str, u64>,
    dspm: Region,
    report: &mut VerifyReport,
) {
    let nregs = f.reg_bound() as usize;
    let ranges = Ranges { syms };
    let widen = widen_points(f);
    let mut entry = vec![Iv::exact(0); nregs];
    for p in &f.params {
        entry[p.0 as usize] = Iv::TOP;
    }
    let mut ins: Vec<Option<Vec<Iv>>> = vec![None; f.blocks.len()];
    ins[0] = Some(entry);
    let mut work: BTreeSet<usize> = BTreeSet::from([0]);
    while let Some(b) = work.pop_first() {
        let mut st = ins[b].clone().expect("queued blocks have a state");
        for inst in &f.blocks[b].insts {
            ranges.step(&mut st, inst);
        }
        for s in f.blocks[b].term.successors() {
            let si = s.index();
            let next = match &ins[si] {
                None => st.clone(),
                Some(old) => {
                    let joined: Vec<Iv> = old.iter().zip(&st).map(|(a, b)| a.join(*b)).collect();
                    if &joined == old {
                        continue;
                    }
                    if widen.contains(&s) {
                        old.iter()
                            .zip(&joined)
                            .map(|(o, j)| if o == j { *o } else { Iv::TOP })
                            .collect()
                    } else {
                        joined
                    }
                }
            };
            ins[si] = Some(next);
            work.insert(si);
        }
    }
    for (bi, b) in f.blocks.iter().enumerate() {
        let Some(mut st) = ins[bi].clone() else {
            continue;
        };
        for (ii, inst) in b.insts.iter().enumerate() {
            if let Inst::Load {
                space: AddrSpace::Spm,
                width,
                addr,
                ..
            }
            | Inst::Store {
                space: AddrSpace::Spm,
                width,
                addr,
                ..
            } = inst
            {
                let iv = ranges.operand(&st, addr);
                let len = width.bytes();
                if !(dspm.contains(iv.lo, len) && dspm.contains(iv.hi, len)) {
                    report.violations.push(Violation::at(
                        Rule::M5,
                        f,
                        BlockId(bi as u32),
                        ii,
                        format!(
                            "{}-byte access in [{:#x}, {:#x}] not within [{:#x}, {:#x})",
                            len,
                            iv.lo,
                            iv.hi,
                            dspm.base,
                            dspm.end()
                        ),
                    ));
                }
            }
            ranges.step(&mut st, inst);
        }
    }
}

/// Scratchpad confinement rules under `layout`.
pub fn verify_memory(p: &Program, layout: &SpmLayout) -> VerifyReport {
    let mut report = VerifyReport::default();
    if let Err(e) = p.validate() {
        report
            .violations
            .push(Violation::global(Rule::C4, &p.entry, e.to_string()));
        return report;
    }
    let reachable = p.reachable_functions();

    let mut referenced: BTreeSet<&str> = BTreeSet::new();
    for f in &reachable {
        for (bi, b) in f.blocks.iter().enumerate() {
            for (ii, inst) in b.insts.iter().enumerate() {
                if let Inst::Load {
                    space: AddrSpace::Main,
                    ..
                }
                | Inst::Store {
                    space: AddrSpace::Main,
                    ..
                } = inst
                {
                    report.violations.push(Violation::at(
                        Rule::M1,
                        f,
                        BlockId(bi as u32),
                        ii,
                        "access tagged main",
                    ));
                }
                for o in inst.operands() {
                    if let Operand::Sym(s) = o {
                        referenced.insert(s);
                    }
                }
            }
            for o in b.term.operands() {
                if let Operand::Sym(s) = o {
                    referenced.insert(s);
                }
            }
        }
    }
    for name in referenced {
        let Some(d) = p.data_object(name) else { continue };
        let r = d.region();
        if !layout.dspm.contains_region(&r) {
            report.violations.push(Violation::global(
                Rule::M2,
                &p.entry,
                format!(
                    "`{}` at [{:#x}, {:#x}) is not inside the data scratchpad",
                    d.name,
                    r.base,
                    r.end()
                ),
            ));
        } else if r.overlaps(&layout.stack) {
            report.violations.push(Violation::global(
                Rule::M2,
                &p.entry,
                format!("`{}` overlaps the stack region", d.name),
            ));
        }
    }
    if !layout.dspm.contains_region(&p.layout.stack) {
        report.violations.push(Violation::global(
            Rule::M2,
            &p.entry,
            "program stack is not inside the data scratchpad",
        ));
    }

    let code = p.code_region();
    if code.size > layout.ispm.size {
        report.violations.push(Violation::global(
            Rule::M3,
            &p.entry,
            format!(
                "code size {} bytes exceeds instruction scratchpad of {} bytes",
                code.size, layout.ispm.size
            ),
        ));
    } else if !layout.ispm.contains_region(&code) {
        report.violations.push(Violation::global(
            Rule::M3,
            &p.entry,
            format!("code placed at {:#x}, outside the instruction scratchpad", code.base),
        ));
    }

    match footprint(p) {
        Ok(fp) => {
            let avail = p.layout.stack.size.min(layout.stack.size);
            if fp.max_stack > avail {
                report.violations.push(Violation::global(
                    Rule::M4,
                    &p.entry,
                    format!("needs {} stack bytes, {} available", fp.max_stack, avail),
                ));
            }
        }
        Err(FootprintError::Recursion(name)) => report.violations.push(Violation::global(
            Rule::M4,
            &name,
            "recursive call chain has no stack bound",
        )),
        Err(e) => report
            .violations
            .push(Violation::global(Rule::M4, &p.entry, e.to_string())),
    }

    let syms: HashMap<&str, u64> = p.data.iter().map(|d| (d.name.as_str(), d.addr)).collect();
    for f in &reachable {
        check_function_addresses(f, &syms, layout.dspm, &mut report);
    }
    report
}

/// Runs `p` on every sample and compares the executions.
///
/// Fails on any trace difference, on any execution error, and when a store
/// whose address was computed from a `select` lands at different addresses
/// for different samples. Other input-dependent scratchpad addresses are
/// reported as warnings. Sampling cannot prove the absence of divergence.
pub fn verify_fixed_trace(p: &Program, samples: &[Vec<u64>]) -> VerifyReport {
    let mut report = VerifyReport::default();
    if samples.len() < 2 {
        report.violations.push(Violation::global(
            Rule::T3,
            &p.entry,
            "at least two sample inputs are required",
        ));
        return report;
    }
    let mut runs = Vec::new();
    for (i, x) in samples.iter().enumerate() {
        match interpret(p, x) {
            Ok(r) => runs.push((i, r)),
            Err(e) => report
                .violations
                .push(Violation::global(Rule::T3, &p.entry, format!("sample {i}: {e}"))),
        }
    }
    let Some((i0, first)) = runs.first() else {
        return report;
    };
    let loc = |e: &crate::ir::TraceEntry| {
        let f = &p.functions[e.func as usize];
        (f, BlockId(e.block), e.inst as usize)
    };
    let mut aligned = vec![first];
    let mut diverged: HashSet<(u32, u32, u32)> = HashSet::new();
    for (i, r) in &runs[1..] {
        if r.trace == first.trace {
            aligned.push(r);
            continue;
        }
        let pos = first
            .trace
            .iter()
            .zip(&r.trace)
            .position(|(a, b)| a != b)
            .unwrap_or(first.trace.len().min(r.trace.len()));
        let msg = format!(
            "samples {i0} and {i} diverge at step {pos} (lengths {} and {})",
            first.trace.len(),
            r.trace.len()
        );
        let at = first.trace.get(pos.saturating_sub(1)).or(first.trace.last());
        if let Some(e) = at {
            if !diverged.insert((e.func, e.block, e.inst)) {
                continue;
            }
        }
        report.violations.push(match at {
            Some(e) => {
                let (f, b, ii) = loc(e);
                Violation::at(Rule::T1, f, b, ii, msg)
            }
            None => Violation::global(Rule::T1, &p.entry, msg),
        });
    }
    let mut flagged: HashSet<(u32, u32, u32)> = HashSet::new();
    for (k, acc) in first.accesses.iter().enumerate() {
        let varies = aligned[1..].iter().any(|r| r.accesses[k].addr != acc.addr);
        if !varies {
            continue;
        }
        let key = (acc.at.func, acc.at.block, acc.at.inst);
        if !flagged.insert(key) {
            continue;
        }
        let derived = aligned.iter().any(|r| r.accesses[k].select_derived);
        let (f, b, ii) = loc(&acc.at);
        if acc.store && derived {
            report.violations.push(Violation::at(
                Rule::T2,
                f,
                b,
                ii,
                "store address computed from a select differs between samples",
            ));
        } else {
            report.warnings.push(Violation::at(
                Rule::W1,
                f,
                b,
                ii,
                format!(
                    "{} address differs between samples (fixed-latency scratchpad)",
                    if acc.store { "store" } else { "load" }
                ),
            ));
        }
    }
    report
}

/// Both static passes.
pub fn verify(p: &Program, layout: &SpmLayout) -> VerifyReport {
    verify_control(p).merge(verify_memory(p, layout))
}
