use super::{
    AddrSpace, BinOp, Block, BlockId, Function, Inst, Operand, Reg, Terminator, TripCount, Width,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockRef(usize);

impl BlockRef {
    pub fn id(self) -> BlockId {
        BlockId(self.0 as u32)
    }
}

/// Incremental constructor for [`Function`]s, used by the kernel catalog
/// and by tests. Registers are allocated fresh; `*_into` emitters write to
/// an existing register, which is how loop-carried variables are expressed.
pub struct FunctionBuilder {
    name: String,
    params: Vec<Reg>,
    blocks: Vec<(String, Vec<Inst>, Option<Terminator>)>,
    cur: usize,
    next_reg: u32,
}

impl FunctionBuilder {
    /// Starts a function whose entry block is labelled `entry`.
    pub fn new(name: impl Into<String>) -> Self {
        FunctionBuilder {
            name: name.into(),
            params: Vec::new(),
            blocks: vec![("entry".into(), Vec::new(), None)],
            cur: 0,
            next_reg: 0,
        }
    }

    pub fn param(&mut self) -> Reg {
        let r = self.reg();
        self.params.push(r);
        r
    }

    pub fn params(&mut self, n: usize) -> Vec<Reg> {
        (0..n).map(|_| self.param()).collect()
    }

    pub fn reg(&mut self) -> Reg {
        self.next_reg += 1;
        Reg(self.next_reg - 1)
    }

    pub fn entry(&self) -> BlockRef {
        BlockRef(0)
    }

    /// Creates an empty block without switching to it.
    pub fn block(&mut self, label: impl Into<String>) -> BlockRef {
        self.blocks.push((label.into(), Vec::new(), None));
        BlockRef(self.blocks.len() - 1)
    }

    pub fn switch_to(&mut self, b: BlockRef) {
        self.cur = b.0;
    }

    pub fn current(&self) -> BlockRef {
        BlockRef(self.cur)
    }

    pub fn emit(&mut self, inst: Inst) {
        let blk = &mut self.blocks[self.cur];
        assert!(
            blk.2.is_none(),
            "emitting into terminated block `{}`",
            blk.0
        );
        blk.1.push(inst);
    }

    pub fn konst(&mut self, value: impl Into<Operand>) -> Reg {
        let dst = self.reg();
        self.emit(Inst::Const {
            dst,
            value: value.into(),
        });
        dst
    }

    /// `dst = value` (a `const` with a register or immediate source).
    pub fn mov(&mut self, dst: Reg, value: impl Into<Operand>) {
        self.emit(Inst::Const {
            dst,
            value: value.into(),
        });
    }

    pub fn bin(&mut self, op: BinOp, lhs: impl Into<Operand>, rhs: impl Into<Operand>) -> Reg {
        let dst = self.reg();
        self.bin_into(dst, op, lhs, rhs);
        dst
    }

    pub fn bin_into(
        &mut self,
        dst: Reg,
        op: BinOp,
        lhs: impl Into<Operand>,
        rhs: impl Into<Operand>,
    ) {
        self.emit(Inst::Bin {
            op,
            dst,
            lhs: lhs.into(),
            rhs: rhs.into(),
        });
    }

    pub fn add(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> Reg {
        self.bin(BinOp::Add, a, b)
    }
    pub fn sub(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> Reg {
        self.bin(BinOp::Sub, a, b)
    }
    pub fn mul(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> Reg {
        self.bin(BinOp::Mul, a, b)
    }
    pub fn xor(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> Reg {
        self.bin(BinOp::Xor, a, b)
    }
    pub fn and(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> Reg {
        self.bin(BinOp::And, a, b)
    }
    pub fn or(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> Reg {
        self.bin(BinOp::Or, a, b)
    }
    pub fn shl(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> Reg {
        self.bin(BinOp::Shl, a, b)
    }
    pub fn shr(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> Reg {
        self.bin(BinOp::Shr, a, b)
    }
    pub fn cmp_eq(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> Reg {
        self.bin(BinOp::CmpEq, a, b)
    }
    pub fn cmp_lt(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> Reg {
        self.bin(BinOp::CmpLt, a, b)
    }

    pub fn select(
        &mut self,
        pred: impl Into<Operand>,
        if_true: impl Into<Operand>,
        if_false: impl Into<Operand>,
    ) -> Reg {
        let dst = self.reg();
        self.select_into(dst, pred, if_true, if_false);
        dst
    }

    pub fn select_into(
        &mut self,
        dst: Reg,
        pred: impl Into<Operand>,
        if_true: impl Into<Operand>,
        if_false: impl Into<Operand>,
    ) {
        self.emit(Inst::Select {
            dst,
            pred: pred.into(),
            if_true: if_true.into(),
            if_false: if_false.into(),
        });
    }

    pub fn load(&mut self, space: AddrSpace, width: Width, addr: impl Into<Operand>) -> Reg {
        let dst = self.reg();
        self.load_into(dst, space, width, addr);
        dst
    }

    pub fn load_into(&mut self, dst: Reg, space: AddrSpace, width: Width, addr: impl Into<Operand>) {
        self.emit(Inst::Load {
            dst,
            space,
            width,
            addr: addr.into(),
        });
    }

    pub fn store(
        &mut self,
        space: AddrSpace,
        width: Width,
        addr: impl Into<Operand>,
        value: impl Into<Operand>,
    ) {
        self.emit(Inst::Store {
            space,
            width,
            addr: addr.into(),
            value: value.into(),
        });
    }

    pub fn call(&mut self, callee: &str, args: Vec<Operand>, nret: usize) -> Vec<Reg> {
        let dsts: Vec<Reg> = (0..nret).map(|_| self.reg()).collect();
        self.call_into(callee, args, dsts.clone());
        dsts
    }

    pub fn call_into(&mut self, callee: &str, args: Vec<Operand>, dsts: Vec<Reg>) {
        self.emit(Inst::Call {
            dsts,
            callee: callee.into(),
            args,
        });
    }

    fn terminate(&mut self, t: Terminator) {
        let blk = &mut self.blocks[self.cur];
        assert!(blk.2.is_none(), "block `{}` terminated twice", blk.0);
        blk.2 = Some(t);
    }

    pub fn br(&mut self, to: BlockRef) {
        self.terminate(Terminator::Br(to.id()));
    }

    pub fn cbr(&mut self, cond: impl Into<Operand>, if_true: BlockRef, if_false: BlockRef) {
        self.terminate(Terminator::CondBr {
            cond: cond.into(),
            if_true: if_true.id(),
            if_false: if_false.id(),
        });
    }

    pub fn loop_fixed(&mut self, header: BlockRef, exit: BlockRef, trips: u64) {
        self.terminate(Terminator::Loop {
            header: header.id(),
            exit: exit.id(),
            trips: TripCount::Fixed(trips),
        });
    }

    pub fn loop_dyn(&mut self, header: BlockRef, exit: BlockRef, trips: impl Into<Operand>) {
        self.terminate(Terminator::Loop {
            header: header.id(),
            exit: exit.id(),
            trips: TripCount::Dyn(trips.into()),
        });
    }

    pub fn ret(&mut self, vals: Vec<Operand>) {
        self.terminate(Terminator::Ret(vals));
    }

    /// # Panics
    /// If any block lacks a terminator.
    pub fn finish(self) -> Function {
        let blocks = self
            .blocks
            .into_iter()
            .map(|(label, insts, term)| {
                let term = term.unwrap_or_else(|| panic!("block `{label}` has no terminator"));
                Block { label, insts, term }
            })
            .collect();
        Function {
            name: self.name,
            params: self.params,
            blocks,
        }
    }
}

/// Shorthand for a symbol operand.
pub fn sym(name: &str) -> Operand {
    Operand::Sym(name.to_string())
}
