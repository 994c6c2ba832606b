//! Random program generation shared by the property tests.
#![allow(dead_code)]

use ozone_core::ir::{
    sym, AddrSpace, BinOp, DataInit, DataLayout, DataObject, FunctionBuilder, Operand, Program,
    Reg, Region, Width,
};
use proptest::prelude::*;
use std::collections::VecDeque;

use ozone_core::ir::{Block, BlockId, Terminator};
use ozone_core::microsim::CacheConfig;

pub const NVARS: usize = 6;
pub const NPARAMS: usize = 4;
pub const BUF_ADDR: u64 = 0x2000_0000;
pub const BUF_LEN: u64 = 64;
pub const TABLE_ADDR: u64 = 0x2000_1000;

#[derive(Clone, Debug)]
pub enum Stmt {
    Bin(BinOp, usize, usize, usize),
    Imm(usize, u64),
    Select(usize, usize, usize, usize),
    Load(Width, usize, usize),
    Table(usize, usize),
    Store(Width, usize, usize),
    Call(usize, usize, usize),
    If(usize, Vec<Stmt>, Vec<Stmt>),
    Loop(u64, Vec<Stmt>),
}

#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub ifs: bool,
    pub loops: bool,
    pub calls: bool,
    pub stores: bool,
    /// Loops may appear inside conditional regions.
    pub loops_in_ifs: bool,
    /// Scratchpad buffer offsets are constants instead of input-derived.
    pub fixed_addrs: bool,
}

impl Shape {
    pub const ALL: Shape = Shape {
        ifs: true,
        loops: true,
        calls: true,
        stores: true,
        loops_in_ifs: true,
        fixed_addrs: false,
    };
    /// Every conditional is convertible.
    pub const CONVERTIBLE: Shape = Shape {
        loops_in_ifs: false,
        ..Shape::ALL
    };
    /// Convertible, and every buffer address is input-independent.
    pub const FIXED_ADDRS: Shape = Shape {
        loops_in_ifs: false,
        fixed_addrs: true,
        ..Shape::ALL
    };
    /// Programs that pass the control rules by construction.
    pub const FIXED: Shape = Shape {
        ifs: false,
        ..Shape::ALL
    };
}

fn var() -> impl Strategy<Value = usize> {
    0..NVARS
}

fn width() -> impl Strategy<Value = Width> {
    prop_oneof![
        Just(Width::W8),
        Just(Width::W16),
        Just(Width::W32),
        Just(Width::W64)
    ]
}

fn leaf(shape: Shape) -> BoxedStrategy<Stmt> {
    let ops = prop::sample::select(BinOp::ALL.to_vec());
    let mut options: Vec<BoxedStrategy<Stmt>> = vec![
        (ops, var(), var(), var())
            .prop_map(|(op, d, a, b)| Stmt::Bin(op, d, a, b))
            .boxed(),
        (var(), any::<u64>()).prop_map(|(d, v)| Stmt::Imm(d, v)).boxed(),
        (var(), var(), var(), var())
            .prop_map(|(d, p, a, b)| Stmt::Select(d, p, a, b))
            .boxed(),
        (width(), var(), var())
            .prop_map(|(w, d, a)| Stmt::Load(w, d, a))
            .boxed(),
        (var(), var()).prop_map(|(d, a)| Stmt::Table(d, a)).boxed(),
    ];
    if shape.stores {
        options.push(
            (width(), var(), var())
                .prop_map(|(w, a, v)| Stmt::Store(w, a, v))
                .boxed(),
        );
    }
    if shape.calls {
        options.push(
            (var(), var(), var())
                .prop_map(|(d, a, b)| Stmt::Call(d, a, b))
                .boxed(),
        );
    }
    prop::strategy::Union::new(options).boxed()
}

pub fn stmts(shape: Shape) -> BoxedStrategy<Vec<Stmt>> {
    let leaf = leaf(shape);
    if shape.ifs && shape.loops && !shape.loops_in_ifs {
        let ifs = leaf.prop_recursive(3, 30, 5, |inner| {
            let body = prop::collection::vec(inner, 0..5);
            (var(), body.clone(), body)
                .prop_map(|(c, t, f)| Stmt::If(c, t, f))
                .boxed()
        });
        let looped = (1u64..4, prop::collection::vec(ifs.clone(), 0..5))
            .prop_map(|(n, b)| Stmt::Loop(n, b));
        let top = prop_oneof![3 => ifs, 1 => looped];
        return prop::collection::vec(top, 1..12).boxed();
    }
    let tree = leaf.prop_recursive(3, 40, 6, move |inner| {
        let body = prop::collection::vec(inner.clone(), 0..5);
        let mut options: Vec<BoxedStrategy<Stmt>> = Vec::new();
        if shape.ifs {
            options.push(
                (var(), body.clone(), body.clone())
                    .prop_map(|(c, t, f)| Stmt::If(c, t, f))
                    .boxed(),
            );
        }
        if shape.loops {
            options.push(
                (1u64..4, body)
                    .prop_map(|(n, b)| Stmt::Loop(n, b))
                    .boxed(),
            );
        }
        if options.is_empty() {
            // no compound forms: fall back to the leaves
            return inner.boxed();
        }
        prop::strategy::Union::new(options).boxed()
    });
    prop::collection::vec(tree, 1..12).boxed()
}

struct Lower {
    b: FunctionBuilder,
    vars: [Reg; NVARS],
    n: usize,
    fixed_addrs: bool,
}

impl Lower {
    fn label(&mut self, what: &str) -> String {
        self.n += 1;
        format!("{what}{}", self.n)
    }

    /// Address `base + (v & mask)` computed into a fresh register.
    fn addr(&mut self, base: &str, v: usize, mask: u64) -> Reg {
        let m = self.b.and(self.vars[v], mask);
        self.b.add(sym(base), m)
    }

    /// Buffer address; constant offset `8 * v` under `fixed_addrs`.
    fn buf_addr(&mut self, v: usize, w: Width) -> Reg {
        if self.fixed_addrs {
            self.b.add(sym("buf"), (v as u64 * 8) & (BUF_LEN - w.bytes()))
        } else {
            self.addr("buf", v, BUF_LEN - w.bytes())
        }
    }

    fn stmts(&mut self, body: &[Stmt]) {
        for s in body {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        let v = self.vars;
        match s {
            Stmt::Bin(op, d, a, b) => self.b.bin_into(v[*d], *op, v[*a], v[*b]),
            Stmt::Imm(d, x) => self.b.mov(v[*d], *x),
            Stmt::Select(d, p, a, b) => {
                let r = self.b.select(v[*p], v[*a], v[*b]);
                self.b.mov(v[*d], r);
            }
            Stmt::Load(w, d, a) => {
                let addr = self.buf_addr(*a, *w);
                self.b.load_into(v[*d], AddrSpace::Spm, *w, addr);
            }
            Stmt::Table(d, a) => {
                let addr = self.addr("tab", *a, 0xff);
                self.b.load_into(v[*d], AddrSpace::Spm, Width::W8, addr);
            }
            Stmt::Store(w, a, x) => {
                let addr = self.buf_addr(*a, *w);
                self.b.store(AddrSpace::Spm, *w, addr, v[*x]);
            }
            Stmt::Call(d, a, b) => {
                self.b.call_into(
                    "helper",
                    vec![Operand::Reg(v[*a]), Operand::Reg(v[*b])],
                    vec![v[*d]],
                );
            }
            Stmt::If(c, t, f) => {
                let cond = self.b.and(v[*c], 1);
                let lt = self.label("then");
                let lf = self.label("else");
                let lj = self.label("join");
                let bt = self.b.block(lt);
                let bj = self.b.block(lj);
                let bf = if f.is_empty() { bj } else { self.b.block(lf) };
                self.b.cbr(cond, bt, bf);
                self.b.switch_to(bt);
                self.stmts(t);
                self.b.br(bj);
                if !f.is_empty() {
                    self.b.switch_to(bf);
                    self.stmts(f);
                    self.b.br(bj);
                }
                self.b.switch_to(bj);
            }
            Stmt::Loop(n, body) => {
                let lh = self.label("loop");
                let le = self.label("exit");
                let bh = self.b.block(lh);
                let be = self.b.block(le);
                self.b.br(bh);
                self.b.switch_to(bh);
                self.stmts(body);
                self.b.loop_fixed(bh, be, *n);
                self.b.switch_to(be);
            }
        }
    }
}

fn table() -> Vec<u8> {
    (0..256u32).map(|i| (i.wrapping_mul(167) ^ 0x5a) as u8).collect()
}

/// Layout placing everything inside the default scratchpads.
pub fn spm_layout() -> DataLayout {
    DataLayout {
        code_base: 0x1000_0000,
        stack: Region::new(0x2000_e000, 0x2000),
    }
}

/// Builds `main(p0..p3) -> (v0..v5)` from `body`, with a pure `helper`.
pub fn build(body: &[Stmt]) -> Program {
    build_with(body, false)
}

pub fn build_with(body: &[Stmt], fixed_addrs: bool) -> Program {
    let mut b = FunctionBuilder::new("main");
    let params = b.params(NPARAMS);
    let mut vars = [Reg(0); NVARS];
    for (i, slot) in vars.iter_mut().enumerate() {
        *slot = if i < NPARAMS {
            params[i]
        } else {
            b.konst(i as u64 * 0x9e37_79b9)
        };
    }
    let mut l = Lower {
        b,
        vars,
        n: 0,
        fixed_addrs,
    };
    l.stmts(body);
    let outs = vars.iter().map(|r| Operand::Reg(*r)).collect();
    l.b.ret(outs);
    let main = l.b.finish();

    let mut h = FunctionBuilder::new("helper");
    let hp = h.params(2);
    let x = h.mul(hp[0], 0x2545_f491_4f6c_dd1d_u64);
    let y = h.xor(x, hp[1]);
    let z = h.shr(y, 7);
    h.ret(vec![z.into()]);

    Program {
        functions: vec![main, h.finish()],
        entry: "main".into(),
        data: vec![
            DataObject {
                name: "buf".into(),
                addr: BUF_ADDR,
                init: DataInit::Zeroed(BUF_LEN),
            },
            DataObject {
                name: "tab".into(),
                addr: TABLE_ADDR,
                init: DataInit::Bytes(table()),
            },
        ],
        layout: spm_layout(),
    }
}

pub fn program(shape: Shape) -> impl Strategy<Value = Program> {
    stmts(shape).prop_map(move |s| build_with(&s, shape.fixed_addrs))
}

pub fn inputs() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(any::<u64>(), NPARAMS)
}

/// Brute-force LRU: one most-recent-first list of line numbers per set.
pub struct RefLru {
    pub sets: Vec<VecDeque<u64>>,
    pub assoc: usize,
    pub line: u64,
}

impl RefLru {
    pub fn new(c: &CacheConfig) -> RefLru {
        RefLru {
            sets: vec![VecDeque::new(); (c.size / (c.assoc * c.line)) as usize],
            assoc: c.assoc as usize,
            line: c.line,
        }
    }

    pub fn access(&mut self, addr: u64) -> bool {
        let line = addr / self.line;
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(line % n) as usize];
        if let Some(i) = set.iter().position(|&t| t == line) {
            set.remove(i);
            set.push_front(line);
            true
        } else {
            if set.len() == self.assoc {
                set.pop_back();
            }
            set.push_front(line);
            false
        }
    }
}

/// Replaces the terminator of `block` with a conditional branch into a small
/// diamond that then continues with the original terminator.
pub fn inject_branch(p: &Program, block: usize) -> Program {
    let mut q = p.clone();
    let f = q.function_mut(&p.entry).unwrap();
    let block = block % f.blocks.len();
    let n = f.blocks.len() as u32;
    let original = std::mem::replace(
        &mut f.blocks[block].term,
        Terminator::CondBr {
            cond: Operand::Reg(Reg(0)),
            if_true: BlockId(n),
            if_false: BlockId(n + 1),
        },
    );
    f.blocks.push(Block {
        label: "inj_t".into(),
        insts: vec![],
        term: original,
    });
    f.blocks.push(Block {
        label: "inj_f".into(),
        insts: vec![],
        term: Terminator::Br(BlockId(n)),
    });
    q
}
