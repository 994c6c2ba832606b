//! Register-based intermediate representation for security-sensitive kernels.
//!
//! A [`Program`] is a set of functions plus a flat data layout. Functions are
//! lists of basic blocks; the first block is the entry block and every block
//! ends in exactly one [`Terminator`]. Virtual registers are unbounded and
//! hold 64-bit values with wrap-around arithmetic.
//!
//! The textual form is documented in `docs/ir-format.md` and handled by
//! [`parse_program`] / [`print_program`].

mod builder;
mod equiv;
pub(crate) mod exec;
mod interp;
mod text;

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

pub use builder::{sym, BlockRef, FunctionBuilder};
pub use equiv::structural_equal;
pub use exec::{ExecError, DEFAULT_STEP_CAP};
pub use interp::{interpret, interpret_with, Interpretation, MemAccess, TraceEntry};
pub use text::{parse_program, print_program};

/// Size in bytes of every encoded instruction, terminators included.
pub const INST_BYTES: u64 = 4;

/// Upper bound (exclusive) of the flat byte-addressable memory.
pub const ADDRESS_LIMIT: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u32);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%r{}", self.0)
    }
}

/// Index of a block within its function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Imm(u64),
    /// Address of a named data object.
    Sym(String),
}

impl Operand {
    pub fn reg(&self) -> Option<Reg> {
        match self {
            Operand::Reg(r) => Some(*r),
            _ => None,
        }
    }
}

impl From<Reg> for Operand {
    fn from(r: Reg) -> Self {
        Operand::Reg(r)
    }
}

impl From<u64> for Operand {
    fn from(v: u64) -> Self {
        Operand::Imm(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Xor,
    And,
    Or,
    Shl,
    Shr,
    CmpEq,
    /// Unsigned less-than.
    CmpLt,
}

impl BinOp {
    pub const ALL: [BinOp; 10] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Xor,
        BinOp::And,
        BinOp::Or,
        BinOp::Shl,
        BinOp::Shr,
        BinOp::CmpEq,
        BinOp::CmpLt,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Xor => "xor",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
            BinOp::CmpEq => "cmp-eq",
            BinOp::CmpLt => "cmp-lt",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    /// Shift amounts are taken modulo 64.
    #[inline]
    pub fn eval(self, a: u64, b: u64) -> u64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Xor => a ^ b,
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Shl => a << (b & 63),
            BinOp::Shr => a >> (b & 63),
            BinOp::CmpEq => (a == b) as u64,
            BinOp::CmpLt => (a < b) as u64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AddrSpace {
    Main,
    Spm,
}

impl AddrSpace {
    pub fn mnemonic(self) -> &'static str {
        match self {
            AddrSpace::Main => "main",
            AddrSpace::Spm => "spm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Width {
    W8,
    W16,
    W32,
    W64,
}

impl Width {
    pub fn bytes(self) -> u64 {
        match self {
            Width::W8 => 1,
            Width::W16 => 2,
            Width::W32 => 4,
            Width::W64 => 8,
        }
    }

    pub fn bits(self) -> u32 {
        self.bytes() as u32 * 8
    }

    pub fn from_bits(bits: u32) -> Option<Width> {
        match bits {
            8 => Some(Width::W8),
            16 => Some(Width::W16),
            32 => Some(Width::W32),
            64 => Some(Width::W64),
            _ => None,
        }
    }
}

/// The opcode set of the IR. Terminators are included so traces and latency
/// tables can talk about every executed instruction uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    Bin(BinOp),
    Select,
    Load,
    Store,
    Const,
    Call,
    Return,
    Branch,
    CondBranch,
    LoopBranch,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Inst {
    Const {
        dst: Reg,
        value: Operand,
    },
    Bin {
        op: BinOp,
        dst: Reg,
        lhs: Operand,
        rhs: Operand,
    },
    /// Conditional assignment: `dst = pred != 0 ? if_true : if_false`.
    Select {
        dst: Reg,
        pred: Operand,
        if_true: Operand,
        if_false: Operand,
    },
    /// Zero-extending little-endian load.
    Load {
        dst: Reg,
        space: AddrSpace,
        width: Width,
        addr: Operand,
    },
    Store {
        space: AddrSpace,
        width: Width,
        addr: Operand,
        value: Operand,
    },
    Call {
        dsts: Vec<Reg>,
        callee: String,
        args: Vec<Operand>,
    },
}

impl Inst {
    pub fn opcode(&self) -> Opcode {
        match self {
            Inst::Const { .. } => Opcode::Const,
            Inst::Bin { op, .. } => Opcode::Bin(*op),
            Inst::Select { .. } => Opcode::Select,
            Inst::Load { .. } => Opcode::Load,
            Inst::Store { .. } => Opcode::Store,
            Inst::Call { .. } => Opcode::Call,
        }
    }

    pub fn defs(&self) -> &[Reg] {
        match self {
            Inst::Const { dst, .. }
            | Inst::Bin { dst, .. }
            | Inst::Select { dst, .. }
            | Inst::Load { dst, .. } => std::slice::from_ref(dst),
            Inst::Store { .. } => &[],
            Inst::Call { dsts, .. } => dsts,
        }
    }

    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Inst::Const { value, .. } => vec![value],
            Inst::Bin { lhs, rhs, .. } => vec![lhs, rhs],
            Inst::Select {
                pred,
                if_true,
                if_false,
                ..
            } => vec![pred, if_true, if_false],
            Inst::Load { addr, .. } => vec![addr],
            Inst::Store { addr, value, .. } => vec![addr, value],
            Inst::Call { args, .. } => args.iter().collect(),
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        match self {
            Inst::Const { value, .. } => vec![value],
            Inst::Bin { lhs, rhs, .. } => vec![lhs, rhs],
            Inst::Select {
                pred,
                if_true,
                if_false,
                ..
            } => vec![pred, if_true, if_false],
            Inst::Load { addr, .. } => vec![addr],
            Inst::Store { addr, value, .. } => vec![addr, value],
            Inst::Call { args, .. } => args.iter_mut().collect(),
        }
    }

    pub fn defs_mut(&mut self) -> &mut [Reg] {
        match self {
            Inst::Const { dst, .. }
            | Inst::Bin { dst, .. }
            | Inst::Select { dst, .. }
            | Inst::Load { dst, .. } => std::slice::from_mut(dst),
            Inst::Store { .. } => &mut [],
            Inst::Call { dsts, .. } => dsts,
        }
    }

    pub fn uses(&self) -> impl Iterator<Item = Reg> + '_ {
        self.operands().into_iter().filter_map(Operand::reg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TripCount {
    Fixed(u64),
    /// Trip count read from an operand when the loop is entered: marks an
    /// input-dependent loop.
    Dyn(Operand),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Terminator {
    Br(BlockId),
    /// Jumps to `if_true` when `cond != 0`.
    CondBr {
        cond: Operand,
        if_true: BlockId,
        if_false: BlockId,
    },
    /// Counted back edge. Each execution bumps a hidden per-frame counter;
    /// control returns to `header` until the counter reaches the trip count,
    /// then the counter resets and control leaves through `exit`. The loop
    /// body therefore runs `trips` times (at least once).
    Loop {
        header: BlockId,
        exit: BlockId,
        trips: TripCount,
    },
    Ret(Vec<Operand>),
}

impl Terminator {
    pub fn opcode(&self) -> Opcode {
        match self {
            Terminator::Br(_) => Opcode::Branch,
            Terminator::CondBr { .. } => Opcode::CondBranch,
            Terminator::Loop { .. } => Opcode::LoopBranch,
            Terminator::Ret(_) => Opcode::Return,
        }
    }

    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            Terminator::Br(t) => vec![*t],
            Terminator::CondBr {
                if_true, if_false, ..
            } => vec![*if_true, *if_false],
            Terminator::Loop { header, exit, .. } => vec![*header, *exit],
            Terminator::Ret(_) => vec![],
        }
    }

    pub fn successors_mut(&mut self) -> Vec<&mut BlockId> {
        match self {
            Terminator::Br(t) => vec![t],
            Terminator::CondBr {
                if_true, if_false, ..
            } => vec![if_true, if_false],
            Terminator::Loop { header, exit, .. } => vec![header, exit],
            Terminator::Ret(_) => vec![],
        }
    }

    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Terminator::Br(_) => vec![],
            Terminator::CondBr { cond, .. } => vec![cond],
            Terminator::Loop { trips, .. } => match trips {
                TripCount::Fixed(_) => vec![],
                TripCount::Dyn(op) => vec![op],
            },
            Terminator::Ret(vals) => vals.iter().collect(),
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        match self {
            Terminator::Br(_) => vec![],
            Terminator::CondBr { cond, .. } => vec![cond],
            Terminator::Loop { trips, .. } => match trips {
                TripCount::Fixed(_) => vec![],
                TripCount::Dyn(op) => vec![op],
            },
            Terminator::Ret(vals) => vals.iter_mut().collect(),
        }
    }

    pub fn uses(&self) -> impl Iterator<Item = Reg> + '_ {
        self.operands().into_iter().filter_map(Operand::reg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub insts: Vec<Inst>,
    pub term: Terminator,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Reg>,
    /// `blocks[0]` is the entry block.
    pub blocks: Vec<Block>,
}

impl Function {
    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.index()]
    }

    /// Number of encoded instructions, terminators included.
    pub fn code_len(&self) -> u64 {
        self.blocks.iter().map(|b| b.insts.len() as u64 + 1).sum()
    }

    pub fn predecessors(&self) -> Vec<Vec<BlockId>> {
        let mut preds = vec![Vec::new(); self.blocks.len()];
        for (i, b) in self.blocks.iter().enumerate() {
            for s in b.term.successors() {
                if !preds[s.index()].contains(&BlockId(i as u32)) {
                    preds[s.index()].push(BlockId(i as u32));
                }
            }
        }
        preds
    }

    /// Blocks reachable from the entry block.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.blocks.len()];
        if self.blocks.is_empty() {
            return seen;
        }
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(b) = stack.pop() {
            for s in self.blocks[b].term.successors() {
                if !seen[s.index()] {
                    seen[s.index()] = true;
                    stack.push(s.index());
                }
            }
        }
        seen
    }

    /// Number of values returned by the first `ret` found.
    pub fn ret_arity(&self) -> usize {
        self.blocks
            .iter()
            .find_map(|b| match &b.term {
                Terminator::Ret(v) => Some(v.len()),
                _ => None,
            })
            .unwrap_or(0)
    }

    /// One past the highest register number mentioned anywhere.
    pub fn reg_bound(&self) -> u32 {
        let mut hi = 0;
        let mut see = |r: Reg| hi = hi.max(r.0 + 1);
        self.params.iter().copied().for_each(&mut see);
        for b in &self.blocks {
            for i in &b.insts {
                i.defs().iter().copied().for_each(&mut see);
                i.uses().for_each(&mut see);
            }
            b.term.uses().for_each(&mut see);
        }
        hi
    }

    pub fn contains_stores(&self) -> bool {
        self.blocks
            .iter()
            .flat_map(|b| &b.insts)
            .any(|i| matches!(i, Inst::Store { .. }))
    }

    pub fn callees(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().flat_map(|b| &b.insts).filter_map(|i| match i {
            Inst::Call { callee, .. } => Some(callee.as_str()),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub base: u64,
    pub size: u64,
}

impl Region {
    pub const fn new(base: u64, size: u64) -> Self {
        Region { base, size }
    }

    pub fn end(&self) -> u64 {
        self.base + self.size
    }

    pub fn contains(&self, addr: u64, len: u64) -> bool {
        addr >= self.base && addr.checked_add(len).is_some_and(|e| e <= self.end())
    }

    pub fn contains_region(&self, other: &Region) -> bool {
        self.contains(other.base, other.size)
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.base < other.end() && other.base < self.end()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataInit {
    /// Read-only table with explicit contents.
    Bytes(Vec<u8>),
    /// Zero-initialized writable storage of the given size.
    Zeroed(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataObject {
    pub name: String,
    pub addr: u64,
    pub init: DataInit,
}

impl DataObject {
    pub fn size(&self) -> u64 {
        match &self.init {
            DataInit::Bytes(b) => b.len() as u64,
            DataInit::Zeroed(n) => *n,
        }
    }

    pub fn region(&self) -> Region {
        Region::new(self.addr, self.size())
    }

    pub fn is_rodata(&self) -> bool {
        matches!(self.init, DataInit::Bytes(_))
    }
}

/// Placement of code and the stack region in the flat address space. Data
/// objects carry their own addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataLayout {
    pub code_base: u64,
    pub stack: Region,
}

impl Default for DataLayout {
    fn default() -> Self {
        DataLayout {
            code_base: 0x0040_0000,
            stack: Region::new(0x0080_0000, 0x1000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub functions: Vec<Function>,
    pub entry: String,
    pub data: Vec<DataObject>,
    pub layout: DataLayout,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("duplicate symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("unresolved reference `{0}`")]
    UnresolvedReference(String),
    #[error("invalid program: {0}")]
    Invalid(String),
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut Function> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn entry_function(&self) -> &Function {
        self.function(&self.entry)
            .expect("validated program has an entry function")
    }

    pub fn data_object(&self, name: &str) -> Option<&DataObject> {
        self.data.iter().find(|d| d.name == name)
    }

    /// Total encoded code size in bytes.
    pub fn code_bytes(&self) -> u64 {
        self.functions.iter().map(Function::code_len).sum::<u64>() * INST_BYTES
    }

    pub fn code_region(&self) -> Region {
        Region::new(self.layout.code_base, self.code_bytes())
    }

    /// Functions reachable through calls from the entry, entry first.
    pub fn reachable_functions(&self) -> Vec<&Function> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.entry.as_str()];
        while let Some(name) = stack.pop() {
            if !seen.insert(name) {
                continue;
            }
            if let Some(f) = self.function(name) {
                order.push(f);
                let mut callees: Vec<&str> = f.callees().collect();
                callees.reverse();
                stack.extend(callees);
            }
        }
        order
    }

    /// Checks every structural invariant of a well-formed program.
    pub fn validate(&self) -> Result<(), IrError> {
        let mut names = HashSet::new();
        for f in &self.functions {
            if !names.insert(f.name.as_str()) {
                return Err(IrError::DuplicateSymbol(f.name.clone()));
            }
        }
        let mut syms = HashSet::new();
        for d in &self.data {
            if !syms.insert(d.name.as_str()) || names.contains(d.name.as_str()) {
                return Err(IrError::DuplicateSymbol(d.name.clone()));
            }
        }
        if self.function(&self.entry).is_none() {
            return Err(IrError::UnresolvedReference(self.entry.clone()));
        }

        let mut regions: Vec<(String, Region)> = self
            .data
            .iter()
            .map(|d| (d.name.clone(), d.region()))
            .collect();
        regions.push(("<stack>".into(), self.layout.stack));
        regions.push(("<code>".into(), self.code_region()));
        for (name, r) in &regions {
            if r.end() > ADDRESS_LIMIT {
                return Err(IrError::Invalid(format!(
                    "`{name}` extends past the address limit"
                )));
            }
        }
        for (i, (a, ra)) in regions.iter().enumerate() {
            for (b, rb) in &regions[i + 1..] {
                if ra.size > 0 && rb.size > 0 && ra.overlaps(rb) {
                    return Err(IrError::Invalid(format!(
                        "address ranges of `{a}` and `{b}` overlap"
                    )));
                }
            }
        }

        let arity: HashMap<&str, (usize, usize)> = self
            .functions
            .iter()
            .map(|f| (f.name.as_str(), (f.params.len(), f.ret_arity())))
            .collect();

        for f in &self.functions {
            self.validate_function(f, &arity, &syms)?;
        }
        Ok(())
    }

    fn validate_function(
        &self,
        f: &Function,
        arity: &HashMap<&str, (usize, usize)>,
        syms: &HashSet<&str>,
    ) -> Result<(), IrError> {
        let ctx = |msg: String| IrError::Invalid(format!("function `{}`: {msg}", f.name));
        if f.blocks.is_empty() {
            return Err(ctx("no blocks".into()));
        }
        let mut params = HashSet::new();
        for p in &f.params {
            if !params.insert(*p) {
                return Err(ctx(format!("parameter {p} listed twice")));
            }
        }
        let mut labels = HashSet::new();
        for b in &f.blocks {
            if !labels.insert(b.label.as_str()) {
                return Err(IrError::DuplicateSymbol(format!("{}:{}", f.name, b.label)));
            }
        }
        let n = f.blocks.len() as u32;
        let ret_arity = f.ret_arity();
        let check_op = |op: &Operand| -> Result<(), IrError> {
            match op {
                Operand::Sym(s) if !syms.contains(s.as_str()) => {
                    Err(IrError::UnresolvedReference(s.clone()))
                }
                _ => Ok(()),
            }
        };
        for b in &f.blocks {
            for inst in &b.insts {
                for op in inst.operands() {
                    check_op(op)?;
                }
                if let Inst::Call { dsts, callee, args } = inst {
                    let Some(&(nparams, nrets)) = arity.get(callee.as_str()) else {
                        return Err(IrError::UnresolvedReference(callee.clone()));
                    };
                    if nparams != args.len() {
                        return Err(ctx(format!(
                            "call to `{callee}` passes {} arguments, expected {nparams}",
                            args.len()
                        )));
                    }
                    if nrets != dsts.len() {
                        return Err(ctx(format!(
                            "call to `{callee}` binds {} results, callee returns {nrets}",
                            dsts.len()
                        )));
                    }
                }
            }
            for op in b.term.operands() {
                check_op(op)?;
            }
            for s in b.term.successors() {
                if s.0 >= n {
                    return Err(ctx(format!("block `{}` jumps to a missing block", b.label)));
                }
            }
            match &b.term {
                Terminator::Ret(v) if v.len() != ret_arity => {
                    return Err(ctx("return statements disagree on value count".into()));
                }
                Terminator::Loop {
                    trips: TripCount::Fixed(0),
                    ..
                } => return Err(ctx(format!("block `{}` has a zero-trip loop", b.label))),
                _ => {}
            }
        }
        let reach = f.reachable();
        if let Some(i) = reach.iter().position(|r| !r) {
            return Err(ctx(format!(
                "block `{}` is unreachable from entry",
                f.blocks[i].label
            )));
        }
        Ok(())
    }
}
