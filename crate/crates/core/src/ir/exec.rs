//! Lowered program form and the execution engine shared by the reference
//! interpreter and the timing simulator.
//!
//! Lowering resolves labels, callees and symbols to indices and addresses so
//! the hot loop only touches flat arrays. Observers plug in through [`Hooks`];
//! the engine itself owns functional semantics and memory bounds.

use std::collections::HashMap;

use rustc_hash::FxHashMap;
use thiserror::Error;

use super::{
    AddrSpace, BinOp, DataInit, Inst, IrError, Opcode, Operand, Program, Terminator, TripCount,
    Width, ADDRESS_LIMIT, INST_BYTES,
};

pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("{len}-byte access at {addr:#x} is outside the address space")]
    OutOfBounds { addr: u64, len: u64 },
    #[error("step cap of {0} dynamic instructions exceeded")]
    StepCap(u64),
    #[error("entry function takes {expected} inputs, {got} supplied")]
    Arity { expected: usize, got: usize },
    #[error("{len}-byte scratchpad access at {addr:#x} falls outside the data scratchpad")]
    ScratchpadFault { addr: u64, len: u64 },
    #[error("main-memory access at {addr:#x} while in ozone mode")]
    MainMemoryInOzone { addr: u64 },
    #[error("instruction fetch at {addr:#x} falls outside the instruction scratchpad")]
    FetchFault { addr: u64 },
    #[error("watchdog expired after {0} cycles")]
    Watchdog(u64),
    #[error(transparent)]
    Invalid(#[from] IrError),
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Src {
    R(u32),
    I(u64),
}

#[derive(Clone, Debug)]
pub(crate) enum LInst {
    Const {
        dst: u32,
        v: Src,
    },
    Bin {
        op: BinOp,
        dst: u32,
        a: Src,
        b: Src,
    },
    Select {
        dst: u32,
        p: Src,
        t: Src,
        f: Src,
    },
    Load {
        dst: u32,
        space: AddrSpace,
        width: Width,
        addr: Src,
    },
    Store {
        space: AddrSpace,
        width: Width,
        addr: Src,
        val: Src,
    },
    Call {
        callee: u32,
        args: Box<[Src]>,
        dsts: Box<[u32]>,
    },
    Br {
        to: u32,
    },
    CondBr {
        c: Src,
        t: u32,
        f: u32,
    },
    Loop {
        slot: u32,
        header: u32,
        exit: u32,
        trips: Src,
    },
    Ret {
        vals: Box<[Src]>,
    },
}

pub(crate) struct LFunc {
    pub nregs: usize,
    pub params: Vec<u32>,
    pub code: Vec<LInst>,
    pub ops: Vec<Opcode>,
    /// (block, index within block) of every lowered instruction.
    pub loc: Vec<(u32, u32)>,
    pub base: u64,
    pub nslots: usize,
}

pub(crate) struct Lowered {
    pub funcs: Vec<LFunc>,
    pub entry: usize,
    pub image: Vec<(u64, Vec<u8>)>,
}

impl Lowered {
    pub fn new(p: &Program) -> Result<Lowered, IrError> {
        p.validate()?;
        let func_index: HashMap<&str, u32> = p
            .functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.as_str(), i as u32))
            .collect();
        let sym_addr: HashMap<&str, u64> =
            p.data.iter().map(|d| (d.name.as_str(), d.addr)).collect();
        let src = |op: &Operand| -> Src {
            match op {
                Operand::Reg(r) => Src::R(r.0),
                Operand::Imm(v) => Src::I(*v),
                Operand::Sym(s) => Src::I(sym_addr[s.as_str()]),
            }
        };

        let mut funcs = Vec::with_capacity(p.functions.len());
        let mut base = p.layout.code_base;
        for f in &p.functions {
            let mut starts = Vec::with_capacity(f.blocks.len());
            let mut n = 0u32;
            for b in &f.blocks {
                starts.push(n);
                n += b.insts.len() as u32 + 1;
            }
            let mut code = Vec::with_capacity(n as usize);
            let mut ops = Vec::with_capacity(n as usize);
            let mut loc = Vec::with_capacity(n as usize);
            let mut nslots = 0u32;
            for (bi, b) in f.blocks.iter().enumerate() {
                for (ii, inst) in b.insts.iter().enumerate() {
                    let l = match inst {
                        Inst::Const { dst, value } => LInst::Const {
                            dst: dst.0,
                            v: src(value),
                        },
                        Inst::Bin { op, dst, lhs, rhs } => LInst::Bin {
                            op: *op,
                            dst: dst.0,
                            a: src(lhs),
                            b: src(rhs),
                        },
                        Inst::Select {
                            dst,
                            pred,
                            if_true,
                            if_false,
                        } => LInst::Select {
                            dst: dst.0,
                            p: src(pred),
                            t: src(if_true),
                            f: src(if_false),
                        },
                        Inst::Load {
                            dst,
                            space,
                            width,
                            addr,
                        } => LInst::Load {
                            dst: dst.0,
                            space: *space,
                            width: *width,
                            addr: src(addr),
                        },
                        Inst::Store {
                            space,
                            width,
                            addr,
                            value,
                        } => LInst::Store {
                            space: *space,
                            width: *width,
                            addr: src(addr),
                            val: src(value),
                        },
                        Inst::Call { dsts, callee, args } => LInst::Call {
                            callee: func_index[callee.as_str()],
                            args: args.iter().map(src).collect(),
                            dsts: dsts.iter().map(|r| r.0).collect(),
                        },
                    };
                    code.push(l);
                    ops.push(inst.opcode());
                    loc.push((bi as u32, ii as u32));
                }
                let t = match &b.term {
                    Terminator::Br(t) => LInst::Br {
                        to: starts[t.index()],
                    },
                    Terminator::CondBr {
                        cond,
                        if_true,
                        if_false,
                    } => LInst::CondBr {
                        c: src(cond),
                        t: starts[if_true.index()],
                        f: starts[if_false.index()],
                    },
                    Terminator::Loop {
                        header,
                        exit,
                        trips,
                    } => {
                        nslots += 1;
                        LInst::Loop {
                            slot: nslots - 1,
                            header: starts[header.index()],
                            exit: starts[exit.index()],
                            trips: match trips {
                                TripCount::Fixed(n) => Src::I(*n),
                                TripCount::Dyn(op) => src(op),
                            },
                        }
                    }
                    Terminator::Ret(vals) => LInst::Ret {
                        vals: vals.iter().map(src).collect(),
                    },
                };
                code.push(t);
                ops.push(b.term.opcode());
                loc.push((bi as u32, b.insts.len() as u32));
            }
            funcs.push(LFunc {
                nregs: f.reg_bound() as usize,
                params: f.params.iter().map(|r| r.0).collect(),
                code,
                ops,
                loc,
                base,
                nslots: nslots as usize,
            });
            base += n as u64 * INST_BYTES;
        }
        let image = p
            .data
            .iter()
            .filter_map(|d| match &d.init {
                DataInit::Bytes(b) => Some((d.addr, b.clone())),
                DataInit::Zeroed(_) => None,
            })
            .collect();
        Ok(Lowered {
            funcs,
            entry: func_index[p.entry.as_str()] as usize,
            image,
        })
    }

    pub fn entry_arity(&self) -> usize {
        self.funcs[self.entry].params.len()
    }

    pub fn fresh_memory(&self) -> Memory {
        let mut m = Memory::default();
        for (addr, bytes) in &self.image {
            m.write_bytes(*addr, bytes);
        }
        m
    }
}

const PAGE_BITS: u32 = 12;
const PAGE: usize = 1 << PAGE_BITS;

/// Sparse little-endian byte memory. Never-written bytes read as zero.
#[derive(Default, Clone)]
pub(crate) struct Memory {
    pages: FxHashMap<u64, Box<[u8; PAGE]>>,
}

impl Memory {
    fn check(addr: u64, len: u64) -> Result<(), ExecError> {
        match addr.checked_add(len) {
            Some(end) if end <= ADDRESS_LIMIT => Ok(()),
            _ => Err(ExecError::OutOfBounds { addr, len }),
        }
    }

    fn page_mut(&mut self, addr: u64) -> &mut [u8; PAGE] {
        self.pages
            .entry(addr >> PAGE_BITS)
            .or_insert_with(|| Box::new([0u8; PAGE]))
    }

    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) {
        for (i, b) in bytes.iter().enumerate() {
            let a = addr + i as u64;
            self.page_mut(a)[a as usize & (PAGE - 1)] = *b;
        }
    }

    #[inline]
    pub fn read(&self, addr: u64, width: Width) -> Result<u64, ExecError> {
        let len = width.bytes();
        Self::check(addr, len)?;
        let off = addr as usize & (PAGE - 1);
        if off + len as usize <= PAGE {
            let Some(page) = self.pages.get(&(addr >> PAGE_BITS)) else {
                return Ok(0);
            };
            let mut buf = [0u8; 8];
            buf[..len as usize].copy_from_slice(&page[off..off + len as usize]);
            return Ok(u64::from_le_bytes(buf));
        }
        let mut v = 0u64;
        for i in 0..len {
            let a = addr + i;
            let b = self
                .pages
                .get(&(a >> PAGE_BITS))
                .map_or(0, |p| p[a as usize & (PAGE - 1)]);
            v |= (b as u64) << (8 * i);
        }
        Ok(v)
    }

    #[inline]
    pub fn write(&mut self, addr: u64, width: Width, value: u64) -> Result<(), ExecError> {
        let len = width.bytes();
        Self::check(addr, len)?;
        let bytes = value.to_le_bytes();
        let off = addr as usize & (PAGE - 1);
        if off + len as usize <= PAGE {
            self.page_mut(addr)[off..off + len as usize].copy_from_slice(&bytes[..len as usize]);
        } else {
            self.write_bytes(addr, &bytes[..len as usize]);
        }
        Ok(())
    }
}

/// Where the engine currently is.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Site {
    pub func: u32,
    pub pc: u32,
    pub addr: u64,
    pub op: Opcode,
}

/// Observer interface for execution events. Every executed instruction is
/// reported through `step` before it takes effect.
pub(crate) trait Hooks {
    /// Whether the engine should track select-derived register values.
    const TAINT: bool = false;

    fn step(&mut self, site: Site) -> Result<(), ExecError>;

    fn mem(
        &mut self,
        site: Site,
        space: AddrSpace,
        addr: u64,
        width: Width,
        store: bool,
        tainted: bool,
    ) -> Result<(), ExecError>;

    /// Conditional and loop branches only; `taken` means the `if_true` edge
    /// or the loop back edge.
    fn branch(&mut self, site: Site, taken: bool);
}

struct Frame {
    func: u32,
    pc: u32,
    regs: Vec<u64>,
    taint: Vec<bool>,
    counters: Vec<u64>,
    /// Caller registers receiving this frame's return values.
    ret_to: Box<[u32]>,
}

#[inline(always)]
fn val(regs: &[u64], s: Src) -> u64 {
    match s {
        Src::R(r) => regs[r as usize],
        Src::I(v) => v,
    }
}

#[inline(always)]
fn tnt(taint: &[bool], s: Src) -> bool {
    match s {
        Src::R(r) => taint[r as usize],
        Src::I(_) => false,
    }
}

/// Runs the entry function of `prog` on `inputs`.
pub(crate) fn execute<H: Hooks>(
    prog: &Lowered,
    inputs: &[u64],
    mem: &mut Memory,
    hooks: &mut H,
    step_cap: u64,
) -> Result<Vec<u64>, ExecError> {
    let expected = prog.entry_arity();
    if inputs.len() != expected {
        return Err(ExecError::Arity {
            expected,
            got: inputs.len(),
        });
    }
    let mut pool: Vec<Vec<u64>> = Vec::new();
    let new_frame = |pool: &mut Vec<Vec<u64>>, func: usize, ret_to: Box<[u32]>| {
        let f = &prog.funcs[func];
        let mut regs = pool.pop().unwrap_or_default();
        regs.clear();
        regs.resize(f.nregs, 0);
        Frame {
            func: func as u32,
            pc: 0,
            regs,
            taint: if H::TAINT {
                vec![false; f.nregs]
            } else {
                Vec::new()
            },
            counters: vec![0; f.nslots],
            ret_to,
        }
    };

    let mut cur = new_frame(&mut pool, prog.entry, Box::new([]));
    for (p, v) in prog.funcs[prog.entry].params.iter().zip(inputs) {
        cur.regs[*p as usize] = *v;
    }
    let mut stack: Vec<Frame> = Vec::new();
    let mut steps: u64 = 0;

    loop {
        let f = &prog.funcs[cur.func as usize];
        let pc = cur.pc;
        steps += 1;
        if steps > step_cap {
            return Err(ExecError::StepCap(step_cap));
        }
        let site = Site {
            func: cur.func,
            pc,
            addr: f.base + pc as u64 * INST_BYTES,
            op: f.ops[pc as usize],
        };
        hooks.step(site)?;
        match &f.code[pc as usize] {
            LInst::Const { dst, v } => {
                cur.regs[*dst as usize] = val(&cur.regs, *v);
                if H::TAINT {
                    cur.taint[*dst as usize] = tnt(&cur.taint, *v);
                }
                cur.pc += 1;
            }
            LInst::Bin { op, dst, a, b } => {
                let r = op.eval(val(&cur.regs, *a), val(&cur.regs, *b));
                if H::TAINT {
                    cur.taint[*dst as usize] = tnt(&cur.taint, *a) || tnt(&cur.taint, *b);
                }
                cur.regs[*dst as usize] = r;
                cur.pc += 1;
            }
            LInst::Select { dst, p, t, f } => {
                let r = if val(&cur.regs, *p) != 0 {
                    val(&cur.regs, *t)
                } else {
                    val(&cur.regs, *f)
                };
                if H::TAINT {
                    cur.taint[*dst as usize] = true;
                }
                cur.regs[*dst as usize] = r;
                cur.pc += 1;
            }
            LInst::Load {
                dst,
                space,
                width,
                addr,
            } => {
                let a = val(&cur.regs, *addr);
                let t = H::TAINT && tnt(&cur.taint, *addr);
                hooks.mem(site, *space, a, *width, false, t)?;
                cur.regs[*dst as usize] = mem.read(a, *width)?;
                if H::TAINT {
                    cur.taint[*dst as usize] = false;
                }
                cur.pc += 1;
            }
            LInst::Store {
                space,
                width,
                addr,
                val: v,
            } => {
                let a = val(&cur.regs, *addr);
                let t = H::TAINT && tnt(&cur.taint, *addr);
                hooks.mem(site, *space, a, *width, true, t)?;
                mem.write(a, *width, val(&cur.regs, *v))?;
                cur.pc += 1;
            }
            LInst::Call { callee, args, dsts } => {
                let mut callee_frame = new_frame(&mut pool, *callee as usize, dsts.clone());
                let params = &prog.funcs[*callee as usize].params;
                for (p, a) in params.iter().zip(args.iter()) {
                    callee_frame.regs[*p as usize] = val(&cur.regs, *a);
                    if H::TAINT {
                        callee_frame.taint[*p as usize] = tnt(&cur.taint, *a);
                    }
                }
                cur.pc += 1;
                stack.push(std::mem::replace(&mut cur, callee_frame));
            }
            LInst::Br { to } => cur.pc = *to,
            LInst::CondBr { c, t, f } => {
                let taken = val(&cur.regs, *c) != 0;
                hooks.branch(site, taken);
                cur.pc = if taken { *t } else { *f };
            }
            LInst::Loop {
                slot,
                header,
                exit,
                trips,
            } => {
                let limit = val(&cur.regs, *trips);
                let counter = &mut cur.counters[*slot as usize];
                *counter += 1;
                let taken = *counter < limit;
                if !taken {
                    *counter = 0;
                }
                hooks.branch(site, taken);
                cur.pc = if taken { *header } else { *exit };
            }
            LInst::Ret { vals } => {
                let out: Vec<u64> = vals.iter().map(|s| val(&cur.regs, *s)).collect();
                let Some(caller) = stack.pop() else {
                    return Ok(out);
                };
                let done = std::mem::replace(&mut cur, caller);
                for (i, d) in done.ret_to.iter().enumerate() {
                    cur.regs[*d as usize] = out[i];
                    if H::TAINT {
                        cur.taint[*d as usize] = tnt(&done.taint, vals[i]);
                    }
                }
                pool.push(done.regs);
            }
        }
    }
}
