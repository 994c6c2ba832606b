use std::collections::HashMap;

use super::{Block, Function, Inst, Operand, Program, Reg, Terminator, TripCount};

/// Register correspondence being built while comparing two functions. Must
/// stay a bijection.
#[derive(Default)]
struct RegMap {
    fwd: HashMap<Reg, Reg>,
    back: HashMap<Reg, Reg>,
}

impl RegMap {
    fn bind(&mut self, a: Reg, b: Reg) -> bool {
        match (self.fwd.get(&a), self.back.get(&b)) {
            (None, None) => {
                self.fwd.insert(a, b);
                self.back.insert(b, a);
                true
            }
            (Some(x), Some(y)) => *x == b && *y == a,
            _ => false,
        }
    }

    fn operand(&mut self, a: &Operand, b: &Operand) -> bool {
        match (a, b) {
            (Operand::Reg(x), Operand::Reg(y)) => self.bind(*x, *y),
            (Operand::Imm(x), Operand::Imm(y)) => x == y,
            (Operand::Sym(x), Operand::Sym(y)) => x == y,
            _ => false,
        }
    }

    fn operands(&mut self, a: &[&Operand], b: &[&Operand]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| self.operand(x, y))
    }

    fn regs(&mut self, a: &[Reg], b: &[Reg]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| self.bind(*x, *y))
    }
}

fn same_shape(a: &Inst, b: &Inst) -> bool {
    match (a, b) {
        (Inst::Const { .. }, Inst::Const { .. }) | (Inst::Select { .. }, Inst::Select { .. }) => {
            true
        }
        (Inst::Bin { op: x, .. }, Inst::Bin { op: y, .. }) => x == y,
        (
            Inst::Load {
                space: s1,
                width: w1,
                ..
            },
            Inst::Load {
                space: s2,
                width: w2,
                ..
            },
        )
        | (
            Inst::Store {
                space: s1,
                width: w1,
                ..
            },
            Inst::Store {
                space: s2,
                width: w2,
                ..
            },
        ) => s1 == s2 && w1 == w2,
        (Inst::Call { callee: x, .. }, Inst::Call { callee: y, .. }) => x == y,
        _ => false,
    }
}

fn terminators_match(map: &mut RegMap, a: &Terminator, b: &Terminator) -> bool {
    let shape = match (a, b) {
        (Terminator::Br(x), Terminator::Br(y)) => x == y,
        (
            Terminator::CondBr {
                if_true: t1,
                if_false: f1,
                ..
            },
            Terminator::CondBr {
                if_true: t2,
                if_false: f2,
                ..
            },
        ) => t1 == t2 && f1 == f2,
        (
            Terminator::Loop {
                header: h1,
                exit: e1,
                trips: n1,
            },
            Terminator::Loop {
                header: h2,
                exit: e2,
                trips: n2,
            },
        ) => {
            h1 == h2
                && e1 == e2
                && match (n1, n2) {
                    (TripCount::Fixed(x), TripCount::Fixed(y)) => x == y,
                    (TripCount::Dyn(_), TripCount::Dyn(_)) => true,
                    _ => false,
                }
        }
        (Terminator::Ret(x), Terminator::Ret(y)) => x.len() == y.len(),
        _ => false,
    };
    shape && map.operands(&a.operands(), &b.operands())
}

fn blocks_match(map: &mut RegMap, a: &Block, b: &Block) -> bool {
    if a.insts.len() != b.insts.len() {
        return false;
    }
    for (x, y) in a.insts.iter().zip(&b.insts) {
        if !same_shape(x, y)
            || !map.operands(&x.operands(), &y.operands())
            || !map.regs(x.defs(), y.defs())
        {
            return false;
        }
    }
    terminators_match(map, &a.term, &b.term)
}

fn functions_match(a: &Function, b: &Function) -> bool {
    if a.name != b.name || a.blocks.len() != b.blocks.len() {
        return false;
    }
    let mut map = RegMap::default();
    map.regs(&a.params, &b.params)
        && a.blocks
            .iter()
            .zip(&b.blocks)
            .all(|(x, y)| blocks_match(&mut map, x, y))
}

/// True iff the two programs are identical up to a per-function bijective
/// renaming of virtual registers. Block labels are not significant; block
/// order and edges are.
pub fn structural_equal(a: &Program, b: &Program) -> bool {
    a.entry == b.entry
        && a.data == b.data
        && a.layout == b.layout
        && a.functions.len() == b.functions.len()
        && a.functions
            .iter()
            .zip(&b.functions)
            .all(|(x, y)| functions_match(x, y))
}
